"""Per-GoP delivery pipeline: ECU sharing, compute/transmit timing, playback buffer."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ValidationError
from .media import (
    MediaFactors,
    QualityLadder,
    decode_complexity_bits,
    payload_bits,
    render_complexity_bits,
)
from .net import ThroughputTrace, expected_rate, transmit
from .placement import PlacementState

__all__ = [
    "PlacementState",
    "DeviceSpeeds",
    "PlaybackState",
    "GopTimings",
    "EcuAllocation",
    "allocate_ecu",
    "gop_timings",
    "advance_buffer",
    "dump_timings",
]


def _pos(x: float) -> float:
    return x if x > 0.0 else 0.0


@dataclass(frozen=True)
class DeviceSpeeds:
    """Decode/render throughput of one headset and of the shared ECU, in bits/s."""

    headset_decode_bps: float = 0.2e9
    headset_render_bps: float = 9.4e9
    ecu_decode_bps: float = 7.5e9
    ecu_render_bps: float = 20.0e9

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class PlaybackState:
    buffer_s: float = 0.0
    clock_s: float = 0.0
    gop_index: int = 0
    buffer_max_s: float = 4.0

    def __post_init__(self):
        if not self.buffer_max_s > 0:
            raise ValidationError("buffer_max_s must be positive")
        if not (0.0 <= self.buffer_s <= self.buffer_max_s):
            raise ValidationError(
                f"buffer {self.buffer_s} outside [0, {self.buffer_max_s}]"
            )


@dataclass(frozen=True)
class GopTimings:
    decode_s: float = 0.0
    render_s: float = 0.0
    transmit_s: float = 0.0
    wait_s: float = 0.0
    rebuffer_s: float = 0.0
    throughput_bps: float = 0.0  # mean channel rate during transmission, 0 if none

    @property
    def preparation_s(self) -> float:
        return self.decode_s + self.render_s + self.transmit_s


@dataclass(frozen=True, eq=False)
class EcuAllocation:
    decode_share_bps: np.ndarray
    render_share_bps: np.ndarray


def _proportional(capacity: float, demand: np.ndarray, eligible: np.ndarray) -> np.ndarray:
    share = np.zeros(demand.shape)
    if not eligible.any():
        return share
    d = np.where(eligible, demand, 0.0)
    total = math.fsum(d)
    if total > 0:
        share = capacity * (d / total)
    else:
        share[eligible] = capacity / eligible.sum()
    # nudge down the largest share until the exact sum fits the capacity
    while math.fsum(share) > capacity:
        k = int(np.argmax(share))
        share[k] = np.nextafter(share[k], 0.0)
    return share


def allocate_ecu(
    placements: Sequence[PlacementState],
    decode_bits: Sequence[float],
    render_bits: Sequence[float],
    speeds: DeviceSpeeds,
) -> EcuAllocation:
    """Split ECU capacity among users in proportion to their complexity bits.

    Decode capacity goes to users decoding on the ECU (full or decode-only),
    render capacity only to users rendering there too.
    """
    places = np.array([int(p) for p in placements])
    dec = np.asarray(decode_bits, dtype=np.float64)
    ren = np.asarray(render_bits, dtype=np.float64)
    if np.any(dec < 0) or np.any(ren < 0):
        raise ValidationError("demands must be non-negative")
    uses_decode = places != PlacementState.HEADSET
    uses_render = places == PlacementState.ECU_FULL
    return EcuAllocation(
        _proportional(speeds.ecu_decode_bps, dec, uses_decode),
        _proportional(speeds.ecu_render_bps, ren, uses_render),
    )


def _compute_time(work_bits: float, speed_bps: float, where: str) -> float:
    if work_bits == 0:
        return 0.0
    if not speed_bps > 0:
        raise ConfigurationError(f"{where} placement has no allocated {where} share")
    return work_bits / speed_bps


def gop_timings(
    ladder: QualityLadder,
    factors: MediaFactors,
    speeds: DeviceSpeeds,
    trace: ThroughputTrace,
    gop: int,
    level: int,
    placement: PlacementState,
    decode_share_bps: float,
    render_share_bps: float,
    request_time_s: float,
) -> GopTimings:
    """Decode, render and transmit times for one GoP.

    Compute finishes before transmission starts, so the trace is integrated
    from ``request_time_s + decode + render``.
    """
    placement = PlacementState(placement)
    dec_bits = decode_complexity_bits(ladder, gop, level)
    ren_bits = render_complexity_bits(ladder, factors, gop, level)
    if placement is PlacementState.ECU_FULL:
        decode = _compute_time(dec_bits, decode_share_bps, "ECU decode")
        render = _compute_time(ren_bits, render_share_bps, "ECU render")
    elif placement is PlacementState.ECU_DECODE:
        decode = _compute_time(dec_bits, decode_share_bps, "ECU decode")
        render = ren_bits / speeds.headset_render_bps
    else:
        decode = dec_bits / speeds.headset_decode_bps
        render = ren_bits / speeds.headset_render_bps

    start = request_time_s + decode + render
    end, duration = transmit(trace, start, payload_bits(ladder, factors, gop, level, placement))
    rate = expected_rate(trace, start, end) if duration > 0 else 0.0
    return GopTimings(decode, render, duration, throughput_bps=rate)


def advance_buffer(
    state: PlaybackState, timings: GopTimings, gop_duration_s: float
) -> tuple[PlaybackState, GopTimings]:
    """Apply one GoP to the playback buffer; fills in wait and rebuffer times."""
    prep = timings.decode_s + timings.render_s + timings.transmit_s
    left = _pos(state.buffer_s - prep)
    wait = _pos(left + gop_duration_s - state.buffer_max_s)
    rebuffer = _pos(prep - state.buffer_s)
    buffer = _pos(left + gop_duration_s - wait)
    # guard the last ulp so the state invariant holds exactly
    buffer = min(buffer, state.buffer_max_s)
    new_state = replace(
        state,
        buffer_s=buffer,
        clock_s=state.clock_s + prep + wait,
        gop_index=state.gop_index + 1,
    )
    return new_state, replace(timings, wait_s=wait, rebuffer_s=rebuffer)


def dump_timings(records, fh) -> None:
    """Write ``(user, gop, GopTimings)`` records as JSON lines."""
    for user, gop, t in records:
        fh.write(json.dumps({"user": user, "gop": gop, **asdict(t)}, sort_keys=True) + "\n")
