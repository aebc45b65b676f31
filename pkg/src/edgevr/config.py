"""JSON run configuration: dataset sources, throughput regime, trainer and baseline blocks."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError as SchemaError, model_validator

from .env import EnvConfig
from .errors import ConfigurationError
from .media import MediaFactors, VideoGenSpec, generate_video, load_video
from .net import TraceGenSpec, generate_trace, load_trace
from .pipeline import DeviceSpeeds
from .rl.network import NetConfig
from .rl.trainer import TrainConfig
from .seeding import child_seed

DEFAULT_REGIME_SCALES = {"low": 0.4, "medium": 1.0, "high": 2.5}


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class VideoSource(_Block):
    files: list[str] = Field(default_factory=list)
    count: int = Field(3, ge=0)
    gop_count: int = Field(60, ge=2)
    level_count: int = Field(4, ge=1)
    base_bitrate_bits: float = Field(2.0e7, gt=0)
    level_growth: float = Field(1.5, gt=1)
    psnr_base_db: float = 48.0
    psnr_step_db: float = Field(1.2, gt=0)
    temporal_jitter: float = Field(0.1, ge=0)
    gop_duration_s: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _nonempty(self):
        if not self.files and self.count == 0:
            raise ValueError("videos: give files or a positive count")
        return self


class TraceSource(_Block):
    files: list[str] = Field(default_factory=list)
    loop: bool = True
    count: int = Field(4, ge=0)
    duration_s: float = Field(120.0, gt=0)
    sample_interval_s: float = Field(0.1, gt=0)
    mean_bps: float = Field(1.5e8, gt=0)
    log_std: float = Field(0.3, ge=0)
    blockage_prob: float = Field(0.02, ge=0, le=1)
    blockage_factor: float = Field(0.2, ge=0, le=1)

    @model_validator(mode="after")
    def _nonempty(self):
        if not self.files and self.count == 0:
            raise ValueError("traces: give files or a positive count")
        return self


class EnvBlock(_Block):
    videos: VideoSource = Field(default_factory=VideoSource)
    traces: TraceSource = Field(default_factory=TraceSource)
    user_count: int = Field(2, ge=1)
    gop_count: int = Field(20, ge=2)
    alpha: float = 2.1
    beta: float = 0.6
    headset_decode_bps: float = 0.2e9
    headset_render_bps: float = 9.4e9
    ecu_decode_bps: float = 7.5e9
    ecu_render_bps: float = 20.0e9
    buffer_max_s: float = 4.0
    h0_rebuffer_s: float = 2.0
    h1_range_db: tuple[float, float] = (1.09, 2.99)
    lookahead: int = Field(5, ge=0)
    video_assignment: Literal["round_robin", "random"] = "round_robin"
    random_start: bool = True
    random_trace_offset: bool = True
    throughput_scale_bps: float = Field(1.0e9, gt=0)
    time_scale_s: float = Field(1.0, gt=0)
    size_scale_bits: Optional[float] = None


class NetBlock(_Block):
    trunk: Literal["conv", "dense"] = "conv"
    conv_channels: int = 4
    conv_kernel: int = 3
    hidden: int = 64
    stage_hidden: int = 32
    head_init_scale: float = 0.01


class TrainBlock(_Block):
    gamma: float = 0.99
    clip_eps: float = 0.2
    dual_clip: float = 3.0
    entropy_weight: float = 0.01
    n_policy: int = 80
    n_aux: int = 6
    n_update: int = 4
    dual_step: float = 0.01
    mu0_init: float = 0.1
    mu1_init: float = 0.1
    learning_rate: float = 3e-4
    batch_size: Optional[int] = None
    rounds: int = 300
    reward_scale: float = 0.02
    normalize_advantages: bool = True
    max_grad_norm: Optional[float] = 0.5
    net: NetBlock = Field(default_factory=NetBlock)


class PolicyBlock(_Block):
    name: str = "bba"
    params: dict = Field(default_factory=dict)


class RunConfig(_Block):
    seed: int = Field(0, ge=0, lt=2**64)
    regime: str = "medium"
    regime_scales: dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_REGIME_SCALES))
    out: Optional[str] = None
    env: EnvBlock = Field(default_factory=EnvBlock)
    train: TrainBlock = Field(default_factory=TrainBlock)
    policy: PolicyBlock = Field(default_factory=PolicyBlock)

    @model_validator(mode="after")
    def _regime_known(self):
        if self.regime not in self.regime_scales:
            raise ValueError(f"regime {self.regime!r} not in regime_scales {sorted(self.regime_scales)}")
        if any(v <= 0 for v in self.regime_scales.values()):
            raise ValueError("regime scales must be positive")
        return self

    @property
    def regime_scale(self) -> float:
        return self.regime_scales[self.regime]

    def with_overrides(self, **updates) -> "RunConfig":
        data = self.model_dump()
        data.update({k: v for k, v in updates.items() if v is not None})
        return parse_config(data)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def load_config(path, base_dir=None) -> RunConfig:
    """Parse and validate a run config; relative data paths resolve against the file's folder."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    cfg = parse_config(raw)
    base = Path(base_dir) if base_dir is not None else path.parent
    env = cfg.env
    env.videos.files = [str(_resolve(base, f)) for f in env.videos.files]
    env.traces.files = [str(_resolve(base, f)) for f in env.traces.files]
    return cfg


def parse_config(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except SchemaError as exc:
        raise ConfigurationError(f"invalid config: {exc}") from exc


def _resolve(base: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else base / p


def _check_exists(files) -> None:
    missing = [f for f in files if not Path(f).is_file()]
    if missing:
        raise ConfigurationError(f"missing data files: {missing}")


def build_videos(block: VideoSource, seed: int):
    _check_exists(block.files)
    videos, factors = [], []
    for f in block.files:
        ladder, fac = load_video(f)
        videos.append(ladder)
        factors.append(fac)
    for i in range(block.count if not block.files else 0):
        spec = VideoGenSpec(
            gop_count=block.gop_count,
            level_count=block.level_count,
            base_bitrate_bits=block.base_bitrate_bits,
            level_growth=block.level_growth,
            psnr_base_db=block.psnr_base_db,
            psnr_step_db=block.psnr_step_db,
            temporal_jitter=block.temporal_jitter,
            gop_duration_s=block.gop_duration_s,
            seed=child_seed(seed, "video", i),
            name=f"video{i}",
        )
        videos.append(generate_video(spec))
    return videos, factors


def build_traces(block: TraceSource, seed: int):
    _check_exists(block.files)
    traces = [load_trace(f, loop=block.loop) for f in block.files]
    for i in range(block.count if not block.files else 0):
        spec = TraceGenSpec(
            duration_s=block.duration_s,
            sample_interval_s=block.sample_interval_s,
            mean_bps=block.mean_bps,
            log_std=block.log_std,
            blockage_prob=block.blockage_prob,
            blockage_factor=block.blockage_factor,
            seed=child_seed(seed, "trace", i),
            loop=block.loop,
            name=f"trace{i}",
        )
        traces.append(generate_trace(spec))
    return traces


def build_env_config(cfg: RunConfig, regime: str | None = None) -> EnvConfig:
    """Materialize datasets and apply the regime's pointwise throughput multiplier.

    Dataset seeds depend only on the root seed, so every regime replays the
    same trace shapes at different scales.
    """
    e = cfg.env
    scale = cfg.regime_scales[regime] if regime is not None else cfg.regime_scale
    videos, file_factors = build_videos(e.videos, cfg.seed)
    factors = MediaFactors(e.alpha, e.beta)
    if file_factors and any(f != file_factors[0] for f in file_factors):
        raise ConfigurationError("video files disagree on alpha/beta")
    if file_factors:
        factors = file_factors[0]
    traces = [t.scaled(scale) for t in build_traces(e.traces, cfg.seed)]
    speeds = DeviceSpeeds(e.headset_decode_bps, e.headset_render_bps, e.ecu_decode_bps, e.ecu_render_bps)
    try:
        return EnvConfig(
            videos=videos,
            traces=traces,
            user_count=e.user_count,
            gop_count=e.gop_count,
            factors=factors,
            speeds=speeds,
            buffer_max_s=e.buffer_max_s,
            h0_rebuffer_s=e.h0_rebuffer_s,
            h1_range_db=e.h1_range_db,
            lookahead=e.lookahead,
            video_assignment=e.video_assignment,
            random_start=e.random_start,
            random_trace_offset=e.random_trace_offset,
            throughput_scale_bps=e.throughput_scale_bps,
            time_scale_s=e.time_scale_s,
            size_scale_bits=e.size_scale_bits,
        )
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def build_train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train.model_dump()
    net = NetConfig(**t.pop("net"))
    try:
        return TrainConfig(seed=child_seed(cfg.seed, "train"), net=net, **t)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def interface_hash(env: EnvConfig) -> str:
    """Digest of everything that fixes a network's input/output contract.

    Traces and video content are excluded so a checkpoint can be evaluated
    under any throughput regime.
    """
    key = {
        "user_count": env.user_count,
        "level_count": env.level_count,
        "feature_count": env.feature_count,
        "lookahead": env.lookahead,
        "gop_count": env.gop_count,
        "gop_duration_s": env.gop_duration_s,
        "buffer_max_s": env.buffer_max_s,
        "throughput_scale_bps": env.throughput_scale_bps,
        "time_scale_s": env.time_scale_s,
        "size_scale_bits": env.size_scale_bits,
    }
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()
