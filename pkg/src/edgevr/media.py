"""Multi-layer video model: per-GoP rate/quality ladders and payload sizes.

A ladder row ``m`` lists, for every cumulative layer count ``level``, the
compressed GoP size in bits and the viewport PSNR in dB.  Tiles and viewport
masks are already folded into these numbers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, InvalidRequestError, ParseError, ValidationError
from .placement import PlacementState

LADDER_HEADER = ("gop", "level", "bits", "psnr_db")
PEAK_SQUARED = 255.0**2


@dataclass(frozen=True)
class MediaFactors:
    """Size factors applied when the ECU decodes (``beta``) and renders (``alpha``)."""

    alpha: float = 2.1
    beta: float = 0.6

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 2.0):
            raise ValidationError(f"alpha must be >= 2, got {self.alpha}")
        if not (0.0 < self.beta < 1.0):
            raise ValidationError(f"beta must lie in (0, 1), got {self.beta}")


@dataclass(frozen=True, eq=False)
class QualityLadder:
    compressed_bits: np.ndarray
    psnr_db: np.ndarray
    gop_duration_s: float = 1.0
    name: str = ""

    def __post_init__(self):
        bits = np.array(self.compressed_bits, dtype=np.float64)
        psnr = np.array(self.psnr_db, dtype=np.float64)
        if bits.ndim != 2 or bits.shape != psnr.shape or bits.size == 0:
            raise ValidationError(
                f"bits and psnr must be equal-shape non-empty M x L matrices, "
                f"got {bits.shape} and {psnr.shape}"
            )
        for label, arr in (("compressed_bits", bits), ("psnr_db", psnr)):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ValidationError(f"{label} entries must be finite and positive")
            if arr.shape[1] > 1 and np.any(np.diff(arr, axis=1) <= 0):
                raise ValidationError(f"{label} must increase strictly with level")
        if not (math.isfinite(self.gop_duration_s) and self.gop_duration_s > 0):
            raise ValidationError("gop_duration_s must be positive")
        bits.setflags(write=False)
        psnr.setflags(write=False)
        object.__setattr__(self, "compressed_bits", bits)
        object.__setattr__(self, "psnr_db", psnr)

    @property
    def gop_count(self) -> int:
        return self.compressed_bits.shape[0]

    @property
    def level_count(self) -> int:
        return self.compressed_bits.shape[1]

    def check_index(self, gop: int, level: int) -> None:
        if not (0 <= gop < self.gop_count):
            raise InvalidRequestError(f"gop {gop} outside [0, {self.gop_count})")
        if not (0 <= level < self.level_count):
            raise InvalidRequestError(f"level {level} outside [0, {self.level_count})")

    def bits(self, gop: int, level: int) -> float:
        self.check_index(gop, level)
        return float(self.compressed_bits[gop, level])

    def quality(self, gop: int, level: int) -> float:
        self.check_index(gop, level)
        return float(self.psnr_db[gop, level])

    def __eq__(self, other):
        if not isinstance(other, QualityLadder):
            return NotImplemented
        return (
            self.gop_duration_s == other.gop_duration_s
            and np.array_equal(self.compressed_bits, other.compressed_bits)
            and np.array_equal(self.psnr_db, other.psnr_db)
        )

    __hash__ = None


def decode_complexity_bits(ladder: QualityLadder, gop: int, level: int) -> float:
    """Decoding work for a GoP, in bits; equal to its compressed size."""
    return ladder.bits(gop, level)


def render_complexity_bits(
    ladder: QualityLadder, factors: MediaFactors, gop: int, level: int
) -> float:
    """Rendering work for a GoP, in bits; the decoded size ``d / beta``."""
    return ladder.bits(gop, level) / factors.beta


def payload_bits(
    ladder: QualityLadder,
    factors: MediaFactors,
    gop: int,
    level: int,
    placement: PlacementState,
) -> float:
    """Bits sent over the air for a GoP, given where it gets processed."""
    d = ladder.bits(gop, level)
    placement = PlacementState(placement)
    if placement is PlacementState.HEADSET:
        return d
    if placement is PlacementState.ECU_DECODE:
        return d / factors.beta
    return factors.alpha * d / factors.beta


def psnr_from_mse(mse: float) -> float:
    if not mse > 0:
        raise DomainError(f"mse must be positive, got {mse}")
    return 10.0 * math.log10(PEAK_SQUARED / mse)


@dataclass(frozen=True)
class VideoGenSpec:
    """Parameters of the synthetic ladder generator.

    ``temporal_jitter`` is the log-std of a per-GoP size multiplier, and also
    scales the per-entry PSNR noise (kept below half a level step).
    """

    gop_count: int = 60
    level_count: int = 7
    base_bitrate_bits: float = 2.0e7
    level_growth: float = 1.5
    psnr_base_db: float = 48.0
    psnr_step_db: float = 1.2
    temporal_jitter: float = 0.1
    gop_duration_s: float = 1.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.gop_count < 1 or self.level_count < 1:
            raise ValidationError("gop_count and level_count must be positive")
        if not self.base_bitrate_bits > 0:
            raise ValidationError("base_bitrate_bits must be positive")
        if not self.level_growth > 1:
            raise ValidationError("level_growth must exceed 1")
        if not self.psnr_step_db > 0:
            raise ValidationError("psnr_step_db must be positive")
        if not self.psnr_base_db > 0:
            raise ValidationError("psnr_base_db must be positive")
        if not (0.0 <= self.temporal_jitter <= 0.5):
            raise ValidationError("temporal_jitter must lie in [0, 0.5]")
        if not self.gop_duration_s > 0:
            raise ValidationError("gop_duration_s must be positive")


def generate_video(spec: VideoGenSpec) -> QualityLadder:
    rng = np.random.default_rng(spec.seed)
    m, n_levels = spec.gop_count, spec.level_count
    levels = np.arange(n_levels, dtype=np.float64)
    sigma = spec.temporal_jitter

    size_noise = rng.standard_normal(m)
    psnr_noise = rng.standard_normal((m, n_levels))
    scale = np.exp(sigma * size_noise - 0.5 * sigma**2) if sigma > 0 else np.ones(m)
    bits = spec.base_bitrate_bits * scale[:, None] * spec.level_growth ** levels[None, :]

    # offsets bounded by 0.45 step keep each row strictly increasing
    bound = 0.45 * spec.psnr_step_db
    offsets = np.clip(sigma * spec.psnr_step_db * psnr_noise, -bound, bound)
    psnr = spec.psnr_base_db + spec.psnr_step_db * levels[None, :] + offsets
    return QualityLadder(bits, psnr, spec.gop_duration_s, name=spec.name)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_video(path, ladder: QualityLadder, factors: MediaFactors | None = None) -> None:
    """Write ``gop,level,bits,psnr_db`` rows plus a JSON sidecar with metadata."""
    path = Path(path)
    factors = factors or MediaFactors()
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LADDER_HEADER)
        for g in range(ladder.gop_count):
            for lvl in range(ladder.level_count):
                writer.writerow(
                    [g, lvl, repr(float(ladder.compressed_bits[g, lvl])),
                     repr(float(ladder.psnr_db[g, lvl]))]
                )
    meta = {
        "gop_count": ladder.gop_count,
        "level_count": ladder.level_count,
        "gop_duration_s": ladder.gop_duration_s,
        "alpha": factors.alpha,
        "beta": factors.beta,
        "name": ladder.name,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_video(path) -> tuple[QualityLadder, MediaFactors]:
    path = Path(path)
    side = _sidecar(path)
    if not side.exists():
        raise ParseError(side, None, "missing metadata sidecar")
    try:
        meta = json.loads(side.read_text())
        m, n_levels = int(meta["gop_count"]), int(meta["level_count"])
        dt = float(meta["gop_duration_s"])
        factors = MediaFactors(float(meta["alpha"]), float(meta["beta"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(side, None, f"bad metadata: {exc}") from exc
    if m < 1 or n_levels < 1:
        raise ParseError(side, None, "gop_count and level_count must be positive")

    bits = np.full((m, n_levels), np.nan)
    psnr = np.full((m, n_levels), np.nan)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LADDER_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(LADDER_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(path, lineno, f"expected 4 fields, got {len(row)}")
            try:
                g, lvl = int(row[0]), int(row[1])
                b, q = float(row[2]), float(row[3])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc
            if not (0 <= g < m and 0 <= lvl < n_levels):
                raise ParseError(path, lineno, f"index ({g}, {lvl}) outside {m}x{n_levels}")
            if not np.isnan(bits[g, lvl]):
                raise ParseError(path, lineno, f"duplicate row for ({g}, {lvl})")
            bits[g, lvl], psnr[g, lvl] = b, q
    if np.isnan(bits).any():
        raise ParseError(path, None, "ladder has missing (gop, level) rows")
    try:
        ladder = QualityLadder(bits, psnr, dt, name=str(meta.get("name", "")))
    except ValidationError as exc:
        raise ParseError(path, None, str(exc)) from exc
    return ladder, factors
