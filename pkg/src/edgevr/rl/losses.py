"""PPO-family loss terms and their analytic derivatives.

Surrogate terms (``loss_clip``, ``loss_dual_clip``) are objectives to be
maximized; value, auxiliary and KL terms are losses to be minimized.  All
functions work elementwise on numpy arrays.
"""

from __future__ import annotations

import numpy as np

from .network import ArchitectureKind, one_hot


def advantage(r, v_s, v_s_next, gamma: float, done=False):
    """One-step TD advantage; terminal steps bootstrap from 0."""
    v_next = np.where(np.asarray(done), 0.0, v_s_next)
    return np.asarray(r) + gamma * v_next - np.asarray(v_s)


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Return-to-go along axis 0 of a ``(T, ...)`` reward array."""
    out = np.zeros_like(rewards, dtype=np.float64)
    acc = np.zeros(rewards.shape[1:])
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def ratio_joint(new_logp_rate, old_logp_rate, new_logp_place, old_logp_place):
    """Per-user product of placement and rate probability ratios, in log space."""
    return np.exp((new_logp_rate - old_logp_rate) + (new_logp_place - old_logp_place))


def ratio_split(new_logp_rate, old_logp_rate, new_logp_place, old_logp_place):
    return np.exp(new_logp_rate - old_logp_rate), np.exp(new_logp_place - old_logp_place)


def loss_clip(rho, adv, eps: float):
    rho, adv = np.asarray(rho, dtype=np.float64), np.asarray(adv, dtype=np.float64)
    return np.minimum(rho * adv, np.clip(rho, 1.0 - eps, 1.0 + eps) * adv)


def loss_dual_clip(rho, adv, eps: float, c: float):
    """Clipped surrogate, additionally floored at ``c * adv`` where ``adv < 0``."""
    if not c > 1:
        raise ValueError(f"dual-clip constant must exceed 1, got {c}")
    adv = np.asarray(adv, dtype=np.float64)
    single = loss_clip(rho, adv, eps)
    return np.where(adv < 0, np.maximum(single, c * adv), single)


def dual_clip_grad(rho, adv, eps: float, c: float):
    """Derivative of ``loss_dual_clip`` with respect to ``rho``."""
    rho, adv = np.asarray(rho, dtype=np.float64), np.asarray(adv, dtype=np.float64)
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - eps, 1.0 + eps) * adv
    single = np.minimum(unclipped, clipped)
    g = np.where(unclipped <= clipped, adv, 0.0)
    floored = (adv < 0) & (c * adv > single)
    return np.where(floored, 0.0, g)


def loss_value(v_pred, v_targ) -> float:
    """Half mean squared error over every batch and user entry."""
    d = np.asarray(v_pred, dtype=np.float64) - np.asarray(v_targ, dtype=np.float64)
    return 0.5 * float(np.mean(d * d))


def loss_value_grad(v_pred, v_targ):
    d = np.asarray(v_pred, dtype=np.float64) - np.asarray(v_targ, dtype=np.float64)
    return d / d.size


loss_aux = loss_value
loss_aux_grad = loss_value_grad


def entropy(logp):
    """Entropy of each categorical row, given log-probabilities on the last axis."""
    return -(np.exp(logp) * logp).sum(axis=-1)


def entropy_grad_logits(logp):
    """d entropy / d logits for a softmax head."""
    p = np.exp(logp)
    return -p * (logp + entropy(logp)[..., None])


def kl(p_old, logp_new):
    """KL(old || new) per row; ``p_old`` are probabilities, ``logp_new`` log-probabilities."""
    p_old = np.asarray(p_old, dtype=np.float64)
    safe = np.where(p_old > 0, p_old, 1.0)
    return (p_old * (np.log(safe) - logp_new)).sum(axis=-1)


def kl_grad_logits(p_old, logp_new):
    """d KL(old || softmax(z)) / dz."""
    return np.exp(logp_new) - np.asarray(p_old)


def log_prob_grad_logits(logp, idx):
    """d log p[idx] / d logits, for integer choices ``idx`` on the last axis."""
    return one_hot(np.asarray(idx), logp.shape[-1]) - np.exp(logp)


def loss_joint(
    kind,
    old_rate_probs,
    new_rate_logp,
    old_place_probs,
    new_place_logp,
    aux_pred,
    v_targ,
) -> dict:
    """Behavioral-cloning KL terms plus the auxiliary value loss.

    The joint-head actor sums both KL terms with one auxiliary loss; cascade
    stages each carry their own KL and their own copy of the auxiliary loss.
    Heads that do not exist (fixed placement) pass ``None``.
    """
    kind = ArchitectureKind(kind)
    kl_rate = float(np.mean(kl(old_rate_probs, new_rate_logp)))
    kl_place = float(np.mean(kl(old_place_probs, new_place_logp))) if old_place_probs is not None else 0.0
    aux = loss_aux(aux_pred, v_targ)
    aux_copies = 2 if kind.is_cascade else 1
    total = kl_rate + kl_place + aux_copies * aux
    return {"total": total, "kl_rate": kl_rate, "kl_place": kl_place, "aux": aux, "aux_copies": aux_copies}
