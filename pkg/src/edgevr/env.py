"""Multi-user episodic streaming environment with a gym-style reset/step contract.

All users are stepped together on GoP index ``m``; their wall clocks diverge.
The ECU is shared once per step among the users whose current GoP uses it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ProtocolError, ValidationError
from .media import MediaFactors, QualityLadder, render_complexity_bits
from .net import ThroughputTrace
from .pipeline import (
    DeviceSpeeds,
    GopTimings,
    PlaybackState,
    advance_buffer,
    allocate_ecu,
    gop_timings,
)
from .placement import PLACEMENT_COUNT, PlacementState
from .qoe import (
    DualCoefficients,
    EpisodeMetrics,
    QoeTargets,
    avq,
    lagrangian_qoe,
    qv,
    rt,
    step_reward,
)

# column layout of one user's observation row
THROUGHPUT, DECODE, TRANSMIT, RENDER, LEVEL, BUFFER = range(6)
FUTURE = 6


def feature_width(lookahead: int) -> int:
    return FUTURE + lookahead + 1


@dataclass(frozen=True)
class EnvConfig:
    videos: tuple[QualityLadder, ...]
    traces: tuple[ThroughputTrace, ...]
    user_count: int = 6
    gop_count: int = 20
    factors: MediaFactors = MediaFactors()
    speeds: DeviceSpeeds = DeviceSpeeds()
    buffer_max_s: float = 4.0
    h0_rebuffer_s: float = 2.0
    h1_range_db: tuple[float, float] = (1.09, 2.99)
    lookahead: int = 5
    video_assignment: str = "round_robin"
    random_start: bool = True
    random_trace_offset: bool = True
    throughput_scale_bps: float = 1.0e9
    time_scale_s: float = 1.0
    size_scale_bits: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "videos", tuple(self.videos))
        object.__setattr__(self, "traces", tuple(self.traces))
        object.__setattr__(self, "h1_range_db", tuple(float(x) for x in self.h1_range_db))
        if self.user_count < 1:
            raise ValidationError("user_count must be >= 1")
        if self.gop_count < 2:
            raise ValidationError("episode gop_count must be >= 2")
        if not self.videos or not self.traces:
            raise ValidationError("need at least one video and one trace")
        levels = {v.level_count for v in self.videos}
        if len(levels) != 1:
            raise ValidationError(f"all videos must share a level count, got {sorted(levels)}")
        durations = {v.gop_duration_s for v in self.videos}
        if len(durations) != 1:
            raise ValidationError("all videos must share a GoP duration")
        short = [v.name or str(i) for i, v in enumerate(self.videos) if v.gop_count < self.gop_count]
        if short:
            raise ValidationError(f"videos shorter than the episode: {short}")
        if not self.buffer_max_s >= self.gop_duration_s:
            raise ValidationError("buffer_max_s must hold at least one GoP")
        lo, hi = self.h1_range_db
        if not (0 <= lo <= hi):
            raise ValidationError("h1_range_db must satisfy 0 <= lo <= hi")
        if self.h0_rebuffer_s < 0:
            raise ValidationError("h0_rebuffer_s must be non-negative")
        if self.lookahead < 0:
            raise ValidationError("lookahead must be >= 0")
        if self.video_assignment not in ("round_robin", "random"):
            raise ValidationError("video_assignment must be 'round_robin' or 'random'")
        if not (self.throughput_scale_bps > 0 and self.time_scale_s > 0):
            raise ValidationError("normalization scales must be positive")
        if self.size_scale_bits is not None and not self.size_scale_bits > 0:
            raise ValidationError("size_scale_bits must be positive")

    @property
    def level_count(self) -> int:
        return self.videos[0].level_count

    @property
    def gop_duration_s(self) -> float:
        return self.videos[0].gop_duration_s

    @property
    def feature_count(self) -> int:
        return feature_width(self.lookahead)

    @property
    def size_scale(self) -> float:
        if self.size_scale_bits is not None:
            return self.size_scale_bits
        return float(max(v.compressed_bits[:, -1].max() for v in self.videos))


@dataclass(frozen=True, eq=False)
class Observation:
    features: np.ndarray  # (N, F), normalized, fed to networks
    raw: np.ndarray  # (N, F), physical units
    gop_index: int
    level_count: int
    buffer_max_s: float

    @property
    def user_count(self) -> int:
        return self.features.shape[0]

    @property
    def buffer_s(self) -> np.ndarray:
        return self.raw[:, BUFFER]


@dataclass(frozen=True, eq=False)
class JointAction:
    levels: np.ndarray
    placements: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "levels", np.asarray(self.levels, dtype=np.int64).reshape(-1))
        object.__setattr__(
            self, "placements", np.asarray([int(p) for p in np.ravel(self.placements)], dtype=np.int64)
        )

    def validate(self, user_count: int, level_count: int) -> None:
        for fld, arr, hi in (("levels", self.levels, level_count),
                             ("placements", self.placements, PLACEMENT_COUNT)):
            if arr.shape != (user_count,):
                raise ProtocolError(f"{fld} must have shape ({user_count},), got {arr.shape}")
            bad = np.flatnonzero((arr < 0) | (arr >= hi))
            if bad.size:
                u = int(bad[0])
                raise ProtocolError(f"user {u}: {fld[:-1]} {int(arr[u])} outside [0, {hi})")


@dataclass
class StepResult:
    observation: Observation
    rewards: np.ndarray
    done: bool
    info: dict


@dataclass
class UserEpisode:
    video_index: int
    video_start: int
    trace_index: int
    trace_offset_s: float


class StreamingEnv:
    """Synchronized multi-user environment.

    ``duals`` may be reassigned between episodes; it is fixed within one so
    that per-step rewards telescope.
    """

    def __init__(self, config: EnvConfig, duals: DualCoefficients | None = None):
        self.config = config
        self.duals = duals or DualCoefficients()
        self._size_scale = config.size_scale
        self._done = True
        self._obs: Observation | None = None

    # -- episode lifecycle -------------------------------------------------

    def reset(self, seed: int) -> Observation:
        cfg = self.config
        rng = np.random.default_rng(seed)
        n = cfg.user_count
        lo, hi = cfg.h1_range_db
        h1 = float(rng.uniform(lo, hi)) if hi > lo else lo
        self.targets = QoeTargets(cfg.h0_rebuffer_s, h1)

        self.users: list[UserEpisode] = []
        for u in range(n):
            if cfg.video_assignment == "round_robin":
                vi = u % len(cfg.videos)
            else:
                vi = int(rng.integers(len(cfg.videos)))
            video = cfg.videos[vi]
            span = video.gop_count - cfg.gop_count
            start = int(rng.integers(span + 1)) if cfg.random_start and span > 0 else 0
            ti = int(rng.integers(len(cfg.traces)))
            trace = cfg.traces[ti]
            offset = float(rng.uniform(0.0, trace.duration_s)) if cfg.random_trace_offset else 0.0
            self.users.append(UserEpisode(vi, start, ti, offset))

        self.states = [PlaybackState(0.0, 0.0, 0, cfg.buffer_max_s) for _ in range(n)]
        self.metrics = [EpisodeMetrics() for _ in range(n)]
        self.last_timings = [GopTimings() for _ in range(n)]
        self.last_levels = np.zeros(n, dtype=np.int64)
        self.qoe_initial = np.array([lagrangian_qoe(m, self.duals, self.targets) for m in self.metrics])
        self.qoe = self.qoe_initial.copy()
        self.m = 0
        self._done = False
        self._obs = self._observe()
        return self._obs

    @property
    def done(self) -> bool:
        return self._done

    def video_name(self, user: int) -> str:
        vi = self.users[user].video_index
        return self.config.videos[vi].name or f"video{vi}"

    def step(self, action: JointAction) -> StepResult:
        if self._done:
            raise ProtocolError("step() called on a finished episode; call reset()")
        cfg = self.config
        n = cfg.user_count
        action.validate(n, cfg.level_count)
        levels, places = action.levels, action.placements

        gops = [u.video_start + self.m for u in self.users]
        ladders = [cfg.videos[u.video_index] for u in self.users]
        dec_bits = [ladders[i].bits(gops[i], int(levels[i])) for i in range(n)]
        ren_bits = [render_complexity_bits(ladders[i], cfg.factors, gops[i], int(levels[i])) for i in range(n)]
        alloc = allocate_ecu([PlacementState(int(p)) for p in places], dec_bits, ren_bits, cfg.speeds)

        timings, qualities = [], []
        rewards = np.zeros(n)
        for i, user in enumerate(self.users):
            state = self.states[i]
            trace = cfg.traces[user.trace_index]
            raw_t = gop_timings(
                ladders[i], cfg.factors, cfg.speeds, trace, gops[i], int(levels[i]),
                PlacementState(int(places[i])), float(alloc.decode_share_bps[i]),
                float(alloc.render_share_bps[i]), user.trace_offset_s + state.clock_s,
            )
            self.states[i], t = advance_buffer(state, raw_t, cfg.gop_duration_s)
            q = ladders[i].quality(gops[i], int(levels[i]))
            self.metrics[i].record(q, t.rebuffer_s)
            now = lagrangian_qoe(self.metrics[i], self.duals, self.targets)
            rewards[i] = step_reward(self.qoe[i], now)
            self.qoe[i] = now
            timings.append(t)
            qualities.append(q)

        self.last_timings = timings
        self.last_levels = levels.copy()
        self.m += 1
        self._done = self.m >= cfg.gop_count
        self._obs = self._observe()
        info = {
            "timings": timings,
            "quality_db": np.array(qualities),
            "rebuffer_s": np.array([t.rebuffer_s for t in timings]),
            "gop_index": self.m - 1,
        }
        return StepResult(self._obs, rewards, self._done, info)

    # -- observation -------------------------------------------------------

    def _observe(self) -> Observation:
        cfg = self.config
        n, k = cfg.user_count, cfg.lookahead
        raw = np.zeros((n, feature_width(k)))
        top = max(cfg.level_count - 1, 1)
        for i, user in enumerate(self.users):
            t = self.last_timings[i]
            raw[i, THROUGHPUT] = t.throughput_bps
            raw[i, DECODE] = t.decode_s
            raw[i, TRANSMIT] = t.transmit_s
            raw[i, RENDER] = t.render_s
            raw[i, LEVEL] = self.last_levels[i] if self.m > 0 else 0.0
            raw[i, BUFFER] = self.states[i].buffer_s
            video = cfg.videos[user.video_index]
            for j in range(k):
                if self.m + j < cfg.gop_count:
                    raw[i, FUTURE + j] = video.compressed_bits[user.video_start + self.m + j, -1]
            raw[i, FUTURE + k] = cfg.gop_count - self.m

        scale = np.ones(raw.shape[1])
        scale[THROUGHPUT] = cfg.throughput_scale_bps
        scale[[DECODE, TRANSMIT, RENDER]] = cfg.time_scale_s
        scale[LEVEL] = top
        scale[BUFFER] = cfg.buffer_max_s
        scale[FUTURE:FUTURE + k] = self._size_scale
        scale[FUTURE + k] = cfg.gop_count
        return Observation(raw / scale, raw, self.m, cfg.level_count, cfg.buffer_max_s)

    @property
    def observation(self) -> Observation:
        if self._obs is None:
            raise ProtocolError("environment has not been reset")
        return self._obs

    # -- end of episode ----------------------------------------------------

    def episode_summary(self) -> list[dict]:
        """Per-user AVQ / QV / RT and final Lagrangian QoE."""
        out = []
        for i, m in enumerate(self.metrics):
            out.append({
                "user": i,
                "video": self.video_name(i),
                "avq_db": avq(m),
                "qv_db": qv(m) if m.count >= 2 else 0.0,
                "rt_s": rt(m),
                "qoe": float(self.qoe[i]),
            })
        return out


@dataclass
class Transition:
    observation: Observation
    action: JointAction
    rewards: np.ndarray
    next_observation: Observation
    done: bool
    info: dict
    value_target: np.ndarray | None = None


@dataclass
class EpisodeResult:
    seed: int
    metrics: list[EpisodeMetrics]
    summary: list[dict]
    targets: QoeTargets
    transitions: list[Transition] = field(default_factory=list)

    @property
    def mean_qoe(self) -> float:
        return float(np.mean([s["qoe"] for s in self.summary]))

    @property
    def mean_rt(self) -> float:
        return float(np.mean([s["rt_s"] for s in self.summary]))

    @property
    def mean_qv(self) -> float:
        return float(np.mean([s["qv_db"] for s in self.summary]))

    @property
    def mean_avq(self) -> float:
        return float(np.mean([s["avq_db"] for s in self.summary]))


Policy = Callable[[Observation], JointAction]


def run_episode(policy: Policy, env: StreamingEnv | EnvConfig, seed: int) -> EpisodeResult:
    """Roll one full episode; the policy is reseeded from ``seed`` if it supports it."""
    if isinstance(env, EnvConfig):
        env = StreamingEnv(env)
    if hasattr(policy, "reset"):
        policy.reset(seed)
    obs = env.reset(seed)
    transitions = []
    while not env.done:
        action = policy(obs)
        res = env.step(action)
        transitions.append(Transition(obs, action, res.rewards, res.observation, res.done, res.info))
        obs = res.observation
    return EpisodeResult(seed, env.metrics, env.episode_summary(), env.targets, transitions)


def write_trajectory(result: EpisodeResult, fh) -> None:
    """JSON lines: one record per step with observation, action, reward and timings."""
    for m, tr in enumerate(result.transitions):
        rec = {
            "seed": result.seed,
            "step": m,
            "observation": tr.observation.raw.tolist(),
            "levels": tr.action.levels.tolist(),
            "placements": tr.action.placements.tolist(),
            "rewards": [float(r) for r in tr.rewards],
            "done": tr.done,
            "timings": [
                {k: float(v) for k, v in t.__dict__.items()} for t in tr.info["timings"]
            ],
        }
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def make_action(levels: Sequence[int], placements: Sequence) -> JointAction:
    return JointAction(np.asarray(levels), np.asarray([int(PlacementState.parse(p)) for p in placements]))
