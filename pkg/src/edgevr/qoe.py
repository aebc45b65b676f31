"""QoE metrics, the Lagrangian objective, per-step rewards and dual updates."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DomainError, ParseError, ValidationError

METRICS_HEADER = ("episode", "user", "video", "avq_db", "qv_db", "rt_s", "qoe")


@dataclass(frozen=True)
class QoeTargets:
    h0_rebuffer_s: float = 2.0
    h1_quality_var_db: float = 2.0

    def __post_init__(self):
        if not (self.h0_rebuffer_s >= 0 and self.h1_quality_var_db >= 0):
            raise ValidationError("QoE targets must be non-negative")


@dataclass(frozen=True)
class DualCoefficients:
    """Lagrange multipliers for the rebuffering and quality-variation constraints."""

    mu0: float = 0.1
    mu1: float = 0.1
    step: float = 0.01

    def __post_init__(self):
        if not (self.mu0 >= 0 and self.mu1 >= 0):
            raise ValidationError("dual coefficients must be non-negative")
        if not self.step >= 0:
            raise ValidationError("dual step must be non-negative")


@dataclass
class EpisodeMetrics:
    """Running per-user sums over the GoPs played so far."""

    quality_sum: float = 0.0
    variation_sum: float = 0.0
    rebuffer_sum: float = 0.0
    count: int = 0
    last_quality: float | None = None
    qualities: list[float] = field(default_factory=list)
    rebuffers: list[float] = field(default_factory=list)

    def record(self, quality: float, rebuffer_s: float) -> None:
        if rebuffer_s < 0:
            raise ValidationError("rebuffer time must be non-negative")
        if self.last_quality is not None:
            self.variation_sum += abs(quality - self.last_quality)
        self.quality_sum += quality
        self.rebuffer_sum += rebuffer_s
        self.count += 1
        self.last_quality = quality
        self.qualities.append(quality)
        self.rebuffers.append(rebuffer_s)


def avq(metrics: EpisodeMetrics) -> float:
    if metrics.count < 1:
        raise DomainError("average quality needs at least one GoP")
    return metrics.quality_sum / metrics.count


def qv(metrics: EpisodeMetrics) -> float:
    if metrics.count < 2:
        raise DomainError("quality variation needs at least two GoPs")
    return metrics.variation_sum / (metrics.count - 1)


def rt(metrics: EpisodeMetrics) -> float:
    if metrics.count < 1:
        raise DomainError("rebuffering time needs at least one GoP")
    return metrics.rebuffer_sum


def lagrangian_qoe(
    metrics: EpisodeMetrics, coeffs: DualCoefficients, targets: QoeTargets
) -> float:
    """Quality plus dual-weighted constraint slacks, over the GoPs played so far.

    Before any GoP the quality and variation terms are taken as 0; before the
    second GoP the variation term is 0.
    """
    q = metrics.quality_sum / metrics.count if metrics.count >= 1 else 0.0
    v = metrics.variation_sum / (metrics.count - 1) if metrics.count >= 2 else 0.0
    s = metrics.rebuffer_sum
    return (
        q
        + coeffs.mu0 * (targets.h0_rebuffer_s - s)
        + coeffs.mu1 * (targets.h1_quality_var_db - v)
    )


def step_reward(qoe_prev: float, qoe_now: float) -> float:
    return qoe_now - qoe_prev


def update_duals(
    coeffs: DualCoefficients,
    episode_rt: float,
    episode_qv: float,
    targets: QoeTargets,
) -> DualCoefficients:
    """Projected dual ascent: raise a multiplier while its constraint is violated."""
    lam = coeffs.step
    mu0 = max(0.0, coeffs.mu0 + lam * (episode_rt - targets.h0_rebuffer_s))
    mu1 = max(0.0, coeffs.mu1 + lam * (episode_qv - targets.h1_quality_var_db))
    return DualCoefficients(mu0, mu1, lam)


@dataclass(frozen=True)
class MetricsRow:
    episode: int
    user: int
    video: str
    avq_db: float
    qv_db: float
    rt_s: float
    qoe: float


def write_metrics_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow(
                [int(r.episode), int(r.user), r.video]
                + [repr(float(x)) for x in (r.avq_db, r.qv_db, r.rt_s, r.qoe)]
            )


def read_metrics_csv(path) -> list[MetricsRow]:
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(METRICS_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                rows.append(
                    MetricsRow(int(rec[0]), int(rec[1]), rec[2], float(rec[3]),
                               float(rec[4]), float(rec[5]), float(rec[6]))
                )
            except (IndexError, ValueError) as exc:
                raise ParseError(path, lineno, str(exc)) from exc
    return rows
