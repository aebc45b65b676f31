"""Versioned JSON checkpoints of a trained actor/critic."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from ..qoe import DualCoefficients
from .network import ActorCritic, ArchitectureKind, NetConfig

FORMAT_VERSION = 1


def save_checkpoint(
    path,
    model: ActorCritic,
    duals: DualCoefficients,
    config_hash: str,
    train_config: dict | None = None,
) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind.value,
        "user_count": model.n,
        "feature_count": model.f,
        "level_count": model.levels,
        "net": model.config.to_dict(),
        "config_hash": config_hash,
        "duals": {"mu0": duals.mu0, "mu1": duals.mu1, "step": duals.step},
        "train_config": train_config or {},
        # repr-exact floats so a reload reproduces the network bit for bit
        "params": {
            k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
            for k, v in model.params.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path, expected_hash: str | None = None) -> tuple[ActorCritic, DualCoefficients, dict]:
    """Rebuild the model; refuses a checkpoint trained against another interface."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version!r}")
    if expected_hash is not None and doc["config_hash"] != expected_hash:
        raise ConfigurationError(
            f"{path}: checkpoint config hash {doc['config_hash'][:12]} does not match "
            f"the current config {expected_hash[:12]}; user count, level count or "
            "observation layout differ"
        )
    model = ActorCritic(
        doc["user_count"], doc["feature_count"], doc["level_count"],
        ArchitectureKind(doc["kind"]), NetConfig(**doc["net"]),
    )
    params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    missing = set(model.params) - set(params)
    if missing:
        raise ConfigurationError(f"{path}: missing parameters {sorted(missing)}")
    model.load_params(params)
    d = doc["duals"]
    return model, DualCoefficients(d["mu0"], d["mu1"], d["step"]), doc
