"""Trace-driven multi-user edge-assisted 360° video streaming simulator with
constrained multitask reinforcement learning for joint rate adaptation and
decode/render placement."""

from .env import EnvConfig, JointAction, Observation, StreamingEnv, run_episode
from .errors import EdgeVRError
from .media import MediaFactors, QualityLadder
from .net import ThroughputTrace, transmit
from .pipeline import DeviceSpeeds, PlaybackState
from .placement import PlacementState
from .qoe import DualCoefficients, QoeTargets

__version__ = "0.1.0"

__all__ = [
    "DeviceSpeeds",
    "DualCoefficients",
    "EdgeVRError",
    "EnvConfig",
    "JointAction",
    "MediaFactors",
    "Observation",
    "PlacementState",
    "PlaybackState",
    "QoeTargets",
    "QualityLadder",
    "StreamingEnv",
    "ThroughputTrace",
    "run_episode",
    "transmit",
]
