"""Learned controllers: actor/critic networks, losses and the training loop."""

from .network import ActorCritic, ArchitectureKind, NetConfig, parameter_count
from .trainer import AgentPolicy, TrainConfig, TrainResult, composite_loss, evaluate, train

__all__ = [
    "ActorCritic",
    "AgentPolicy",
    "ArchitectureKind",
    "NetConfig",
    "TrainConfig",
    "TrainResult",
    "composite_loss",
    "evaluate",
    "parameter_count",
    "train",
]
