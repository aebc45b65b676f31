"""Throughput traces and exact transmission-time computation.

A trace is a zero-order hold: sample ``i`` holds on ``[i*dt, (i+1)*dt)``.
Looping traces repeat with period ``len(rates) * dt``; non-looping traces
hold their last sample forever.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError, StarvationError, ValidationError

TRACE_HEADER = ("t_s", "rate_bps")


@dataclass(frozen=True, eq=False)
class ThroughputTrace:
    sample_interval_s: float
    rates_bps: np.ndarray
    loop: bool = True
    name: str = ""

    def __post_init__(self):
        rates = np.array(self.rates_bps, dtype=np.float64).reshape(-1)
        if not (math.isfinite(self.sample_interval_s) and self.sample_interval_s > 0):
            raise ValidationError("sample_interval_s must be positive")
        if rates.size == 0:
            raise ValidationError("trace needs at least one sample")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ValidationError("rates must be finite and non-negative")
        if not np.any(rates > 0):
            raise ValidationError("trace needs at least one positive rate")
        rates.setflags(write=False)
        object.__setattr__(self, "rates_bps", rates)
        cum = np.concatenate([[0.0], np.cumsum(rates * self.sample_interval_s)])
        cum.setflags(write=False)
        object.__setattr__(self, "_cum", cum)

    @property
    def duration_s(self) -> float:
        return self.rates_bps.size * self.sample_interval_s

    @property
    def period_bits(self) -> float:
        return float(self._cum[-1])

    def __eq__(self, other):
        if not isinstance(other, ThroughputTrace):
            return NotImplemented
        return (
            self.sample_interval_s == other.sample_interval_s
            and self.loop == other.loop
            and np.array_equal(self.rates_bps, other.rates_bps)
        )

    __hash__ = None

    def scaled(self, factor: float) -> "ThroughputTrace":
        return ThroughputTrace(self.sample_interval_s, self.rates_bps * factor, self.loop, self.name)

    def rate_at(self, t: float) -> float:
        n = self.rates_bps.size
        i = int(math.floor(t / self.sample_interval_s))
        if self.loop:
            i %= n
        else:
            i = min(max(i, 0), n - 1)
        return float(self.rates_bps[i])

    def cumulative_bits(self, t: float) -> float:
        """Bits deliverable on ``[0, t]``."""
        if t <= 0:
            return 0.0
        dt, n, cum = self.sample_interval_s, self.rates_bps.size, self._cum
        if self.loop:
            periods = math.floor(t / self.duration_s)
            rem = t - periods * self.duration_s
            base = periods * cum[-1]
        else:
            if t >= self.duration_s:
                return float(cum[-1] + (t - self.duration_s) * self.rates_bps[-1])
            rem, base = t, 0.0
        i = min(int(rem // dt), n - 1)
        return float(base + cum[i] + (rem - i * dt) * self.rates_bps[i])

    def time_for_bits(self, target: float) -> float:
        """Earliest ``t`` with ``cumulative_bits(t) == target``."""
        if target <= 0:
            return 0.0
        dt, cum, rates = self.sample_interval_s, self._cum, self.rates_bps
        total = cum[-1]
        if self.loop:
            k = max(math.ceil(target / total) - 1, 0)
            rem = target - k * total
            if rem > total:
                k, rem = k + 1, rem - total
            offset = k * self.duration_s
        else:
            if target > total:
                if rates[-1] <= 0:
                    raise StarvationError(
                        f"trace ends after {self.duration_s:g} s with zero rate; "
                        f"{target - total:g} bits undeliverable"
                    )
                return self.duration_s + (target - total) / rates[-1]
            rem, offset = target, 0.0
        if rem <= 0:
            return offset
        # first boundary reaching rem; the segment before it has positive rate
        idx = int(np.searchsorted(cum, rem, side="left"))
        idx = min(max(idx, 1), rates.size)
        seg = idx - 1
        return offset + seg * dt + (rem - cum[seg]) / rates[seg]


def integrate(trace: ThroughputTrace, start_s: float, end_s: float) -> float:
    """Bits deliverable on ``[start_s, end_s]``, walking segments exactly."""
    if end_s <= start_s:
        return 0.0
    dt, n, rates = trace.sample_interval_s, trace.rates_bps.size, trace.rates_bps
    if trace.loop and end_s - start_s > 2 * trace.duration_s:
        return trace.cumulative_bits(end_s) - trace.cumulative_bits(start_s)
    total, t = 0.0, start_s
    while t < end_s:
        i = int(math.floor(t / dt))
        seg_end = (i + 1) * dt
        if seg_end <= t:  # float rounding at a boundary
            i += 1
            seg_end = (i + 1) * dt
        if not trace.loop and i >= n - 1:
            total += (end_s - t) * rates[-1]
            break
        stop = min(seg_end, end_s)
        total += (stop - t) * rates[i % n]
        t = stop
    return total


def transmit(trace: ThroughputTrace, start_s: float, payload_bits: float) -> tuple[float, float]:
    """Send ``payload_bits`` starting at ``start_s``; return ``(end_s, duration_s)``."""
    if payload_bits < 0 or not math.isfinite(payload_bits):
        raise DomainError(f"payload must be finite and >= 0, got {payload_bits}")
    if start_s < 0:
        raise DomainError(f"start time must be >= 0, got {start_s}")
    if payload_bits == 0:
        return start_s, 0.0
    # finishing inside the current sample needs no cumulative lookup, which would
    # cost an ulp of the bits delivered so far
    rate = trace.rate_at(start_s)
    dt = trace.sample_interval_s
    if rate > 0 and (trace.loop or start_s < trace.duration_s):
        boundary = (math.floor(start_s / dt) + 1) * dt
        if payload_bits <= rate * (boundary - start_s):
            end = start_s + payload_bits / rate
            return end, end - start_s
    end = trace.time_for_bits(trace.cumulative_bits(start_s) + payload_bits)
    end = max(end, start_s)
    return end, end - start_s


def expected_rate(trace: ThroughputTrace, start_s: float, end_s: float) -> float:
    """Time-averaged rate over ``[start_s, end_s]``."""
    if not end_s > start_s:
        raise DomainError(f"window must have end > start, got [{start_s}, {end_s}]")
    return (trace.cumulative_bits(end_s) - trace.cumulative_bits(start_s)) / (end_s - start_s)


@dataclass(frozen=True)
class TraceGenSpec:
    """Log-normal rate samples around ``mean_bps`` with random blockage drops."""

    duration_s: float = 120.0
    sample_interval_s: float = 0.1
    mean_bps: float = 1.0e9
    log_std: float = 0.3
    blockage_prob: float = 0.02
    blockage_factor: float = 0.2
    seed: int = 0
    loop: bool = True
    name: str = ""

    def __post_init__(self):
        if not self.mean_bps > 0:
            raise ValidationError("mean_bps must be positive")
        if not self.sample_interval_s > 0 or not self.duration_s >= self.sample_interval_s:
            raise ValidationError("need duration_s >= sample_interval_s > 0")
        if not self.log_std >= 0:
            raise ValidationError("log_std must be non-negative")
        if not (0.0 <= self.blockage_prob <= 1.0):
            raise ValidationError("blockage_prob must lie in [0, 1]")
        if not (0.0 < self.blockage_factor < 1.0):
            raise ValidationError("blockage_factor must lie in (0, 1)")


def generate_trace(spec: TraceGenSpec) -> ThroughputTrace:
    rng = np.random.default_rng(spec.seed)
    n = max(int(round(spec.duration_s / spec.sample_interval_s)), 1)
    z = rng.standard_normal(n)
    blocked = rng.random(n) < spec.blockage_prob
    s = spec.log_std
    rates = spec.mean_bps * np.exp(s * z - 0.5 * s * s) if s > 0 else np.full(n, spec.mean_bps)
    rates = np.where(blocked, rates * spec.blockage_factor, rates)
    return ThroughputTrace(spec.sample_interval_s, rates, spec.loop, spec.name)


def save_trace(trace: ThroughputTrace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for i, r in enumerate(trace.rates_bps):
            writer.writerow([repr(i * float(trace.sample_interval_s)), repr(float(r))])


def load_trace(path, loop: bool = True, sample_interval_s: float | None = None) -> ThroughputTrace:
    """Read a ``t_s,rate_bps`` CSV with uniformly spaced rows starting at 0."""
    path = Path(path)
    times, rates = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(TRACE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(path, lineno, f"expected 2 fields, got {len(row)}")
            try:
                t, r = float(row[0]), float(row[1])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc
            if not (math.isfinite(r) and r >= 0):
                raise ParseError(path, lineno, f"rate must be finite and >= 0, got {row[1]}")
            times.append((lineno, t))
            rates.append(r)
    if not rates:
        raise ParseError(path, None, "no samples")
    if times[0][1] != 0.0:
        raise ParseError(path, times[0][0], "first sample must be at t_s = 0")
    if sample_interval_s is None:
        if len(times) < 2:
            raise ParseError(path, None, "cannot infer sample interval from one row")
        sample_interval_s = times[1][1] - times[0][1]
    if not sample_interval_s > 0:
        raise ParseError(path, times[1][0], "timestamps must increase")
    for i, (lineno, t) in enumerate(times):
        if abs(t - i * sample_interval_s) > 1e-9 * max(1.0, abs(t)):
            raise ParseError(path, lineno, f"non-uniform timestamp {t}")
    try:
        return ThroughputTrace(sample_interval_s, np.array(rates), loop, name=path.stem)
    except ValidationError as exc:
        raise ParseError(path, None, str(exc)) from exc
