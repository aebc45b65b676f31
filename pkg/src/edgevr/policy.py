"""Non-learning baselines behind a common ``policy(observation) -> decision`` interface."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import JointAction, Observation
from .errors import ValidationError
from .placement import PLACEMENT_COUNT, PlacementState


@dataclass(frozen=True, eq=False)
class PolicyDecision(JointAction):
    """A joint action, plus per-user log-probabilities for learned policies."""

    log_prob_rate: np.ndarray | None = None
    log_prob_placement: np.ndarray | None = None


@dataclass(frozen=True)
class BbaParams:
    reservoir_s: float = 1.0
    cushion_s: float = 3.0
    placement: PlacementState = PlacementState.ECU_FULL

    def __post_init__(self):
        object.__setattr__(self, "placement", PlacementState.parse(self.placement))
        if not (0 < self.reservoir_s < self.cushion_s):
            raise ValidationError("need 0 < reservoir < cushion")

    def check(self, buffer_max_s: float) -> None:
        if self.cushion_s > buffer_max_s:
            raise ValidationError(f"cushion {self.cushion_s} exceeds buffer max {buffer_max_s}")


def bba_level(buffer_s: float, level_count: int, reservoir_s: float, cushion_s: float) -> int:
    """Linear buffer-to-level rate map, rounded down."""
    top = level_count - 1
    if buffer_s <= reservoir_s:
        return 0
    if buffer_s >= cushion_s:
        return top
    x = top * (buffer_s - reservoir_s) / (cushion_s - reservoir_s)
    return min(int(math.floor(x + 1e-9)), top)


def bba_decide(observation: Observation, params: BbaParams) -> PolicyDecision:
    params.check(observation.buffer_max_s)
    levels = [
        bba_level(float(b), observation.level_count, params.reservoir_s, params.cushion_s)
        for b in observation.buffer_s
    ]
    return PolicyDecision(levels, [int(params.placement)] * observation.user_count)


def fixed_decide(level: int, placement, user_count: int, level_count: int) -> PolicyDecision:
    if not (0 <= level < level_count):
        raise ValidationError(f"level {level} outside [0, {level_count})")
    place = PlacementState.parse(placement)
    return PolicyDecision([level] * user_count, [int(place)] * user_count)


def random_decide(rng: np.random.Generator, user_count: int, level_count: int) -> PolicyDecision:
    levels = rng.integers(level_count, size=user_count)
    places = rng.integers(PLACEMENT_COUNT, size=user_count)
    return PolicyDecision(levels, places)


class BbaPolicy:
    def __init__(self, params: BbaParams | None = None):
        self.params = params or BbaParams()

    def __call__(self, observation: Observation) -> PolicyDecision:
        return bba_decide(observation, self.params)


class FixedPolicy:
    def __init__(self, level: int, placement=PlacementState.HEADSET):
        self.level = level
        self.placement = PlacementState.parse(placement)

    def __call__(self, observation: Observation) -> PolicyDecision:
        return fixed_decide(self.level, self.placement, observation.user_count, observation.level_count)


class RandomPolicy:
    """Uniform over levels and placements; ``reset(seed)`` restarts the stream."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self, episode_seed: int) -> None:
        self.rng = np.random.default_rng([self.seed, episode_seed])

    def __call__(self, observation: Observation) -> PolicyDecision:
        return random_decide(self.rng, observation.user_count, observation.level_count)


def make_policy(name: str, params: dict | None = None, seed: int = 0):
    """Build a baseline by name: ``bba``, ``fixed`` or ``random``."""
    params = dict(params or {})
    if name == "bba":
        return BbaPolicy(BbaParams(**params))
    if name == "fixed":
        return FixedPolicy(int(params.get("level", 0)), params.get("placement", "headset"))
    if name == "random":
        return RandomPolicy(int(params.get("seed", seed)))
    raise ValidationError(f"unknown policy {name!r}")
