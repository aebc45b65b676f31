"""Four-phase constrained training loop: rollout, dual update, dual-clip PPO, auxiliary phase."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..env import EnvConfig, JointAction, Observation, StreamingEnv
from ..errors import TrainingDivergence, ValidationError
from ..policy import PolicyDecision
from ..qoe import DualCoefficients, QoeTargets, avq, qv, rt, update_duals
from ..seeding import child_seed
from . import losses as L
from .network import ActorCritic, ArchitectureKind, NetConfig

log = logging.getLogger(__name__)

LOSS_TERMS = frozenset({"clip", "dual_clip", "entropy", "value", "aux", "kl"})
TRAIN_LOG_HEADER = ("round", "phase", "loss", "entropy", "mu0", "mu1", "mean_qoe")


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    dual_clip: float = 3.0
    entropy_weight: float = 0.01
    n_policy: int = 80
    n_aux: int = 6
    n_update: int = 4
    dual_step: float = 0.01
    mu0_init: float = 0.1
    mu1_init: float = 0.1
    learning_rate: float = 3e-4
    batch_size: int | None = None  # None: the whole buffer
    rounds: int = 100
    reward_scale: float = 0.02
    normalize_advantages: bool = True
    max_grad_norm: float | None = 0.5
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if isinstance(self.net, dict):
            object.__setattr__(self, "net", NetConfig(**self.net))
        if not (0 < self.clip_eps < 1):
            raise ValidationError("clip_eps must lie in (0, 1)")
        if not self.dual_clip > 1:
            raise ValidationError("dual_clip must exceed 1")
        if min(self.n_policy, self.n_aux, self.n_update, self.rounds) < 1:
            raise ValidationError("iteration counts must be >= 1")
        if not (0 <= self.gamma <= 1):
            raise ValidationError("gamma must lie in [0, 1]")
        if self.learning_rate < 0 or self.entropy_weight < 0 or self.dual_step < 0:
            raise ValidationError("learning_rate, entropy_weight and dual_step must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if not self.reward_scale > 0:
            raise ValidationError("reward_scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, keys, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.keys = list(keys)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, max_norm: float | None = None) -> float:
        norm = math.sqrt(sum(float((grads[k] ** 2).sum()) for k in self.keys))
        scale = 1.0
        if max_norm is not None and norm > max_norm:
            scale = max_norm / (norm + 1e-12)
        self.t += 1
        b1, b2 = self.betas
        for k in self.keys:
            g = grads[k] * scale
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1**self.t)
            vhat = self.v[k] / (1 - b2**self.t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return norm


@dataclass
class Batch:
    obs: np.ndarray  # (B, N, F)
    levels: np.ndarray  # (B, N)
    placements: np.ndarray  # (B, N)
    old_logp_rate: np.ndarray  # (B, N)
    old_logp_place: np.ndarray  # (B, N)
    value_target: np.ndarray  # (B, N)
    advantage: np.ndarray | None = None  # (B, N)
    old_rate_probs: np.ndarray | None = None  # (B, N, L)
    old_place_probs: np.ndarray | None = None  # (B, N, 3)

    def __len__(self) -> int:
        return self.obs.shape[0]

    def subset(self, idx) -> "Batch":
        def pick(a):
            return None if a is None else a[idx]

        return Batch(*(pick(getattr(self, f)) for f in self.__dataclass_fields__))


class RolloutBuffer:
    """Per-episode transition storage; cleared after every update round."""

    def __init__(self):
        self.clear()

    def clear(self) -> None:
        self.episodes: list[dict] = []

    def add_episode(self, steps: list[dict], gamma: float) -> None:
        rewards = np.array([s["rewards"] for s in steps])
        targets = L.discounted_returns(rewards, gamma)
        if not np.all(np.isfinite(targets)):
            raise TrainingDivergence("non-finite value target")
        for s, vt in zip(steps, targets):
            s["value_target"] = vt
        self.episodes.append({"steps": steps})

    def __len__(self) -> int:
        return sum(len(e["steps"]) for e in self.episodes)

    def _stack(self, key):
        return np.array([s[key] for e in self.episodes for s in e["steps"]])

    def batch(self) -> Batch:
        return Batch(
            obs=self._stack("obs"),
            levels=self._stack("levels"),
            placements=self._stack("placements"),
            old_logp_rate=self._stack("logp_rate"),
            old_logp_place=self._stack("logp_place"),
            value_target=self._stack("value_target"),
        )

    def next_obs_and_done(self):
        return self._stack("next_obs"), self._stack("done")

    def rewards(self):
        return self._stack("rewards")


def _first_action(model: ActorCritic, batch: Batch):
    if model.first_stage == "rate":
        return batch.levels
    if model.first_stage == "place":
        return batch.placements
    return None


def composite_loss(
    model: ActorCritic,
    batch: Batch,
    terms: dict[str, float],
    clip_eps: float = 0.2,
    dual_clip: float = 3.0,
) -> tuple[float, dict, dict]:
    """Weighted sum of loss terms and its exact parameter gradient.

    ``terms`` maps any of ``clip``, ``dual_clip``, ``entropy`` (objectives,
    entering with a minus sign), ``value``, ``aux`` and ``kl`` (losses) to a
    weight.  Returns ``(loss, grads, stats)``.
    """
    unknown = set(terms) - LOSS_TERMS
    if unknown:
        raise ValidationError(f"unknown loss terms: {sorted(unknown)}")
    out = model.forward(batch.obs, _first_action(model, batch))
    b, n = batch.levels.shape
    count = b * n
    rate_logp, place_logp = out["rate_logp"], out["place_logp"]
    d_rate = np.zeros_like(rate_logp)
    d_place = np.zeros_like(place_logp) if place_logp is not None else None
    d_aux = d_value = None
    total, stats = 0.0, {}

    new_lr = np.take_along_axis(rate_logp, batch.levels[..., None], -1)[..., 0]
    if place_logp is not None:
        new_lp = np.take_along_axis(place_logp, batch.placements[..., None], -1)[..., 0]
    else:
        new_lp = np.zeros_like(new_lr)

    for surrogate in ("clip", "dual_clip"):
        w = terms.get(surrogate, 0.0)
        if not w:
            continue
        adv = batch.advantage

        def obj_and_grad(rho):
            if surrogate == "clip":
                val = L.loss_clip(rho, adv, clip_eps)
                g = np.where(rho * adv <= np.clip(rho, 1 - clip_eps, 1 + clip_eps) * adv, adv, 0.0)
            else:
                val = L.loss_dual_clip(rho, adv, clip_eps, dual_clip)
                g = L.dual_clip_grad(rho, adv, clip_eps, dual_clip)
            return val, g * rho / count  # d mean / d log-prob

        if model.kind.is_cascade:
            rho_e, rho_p = L.ratio_split(new_lr, batch.old_logp_rate, new_lp, batch.old_logp_place)
            val_e, ge = obj_and_grad(rho_e)
            val_p, gp = obj_and_grad(rho_p)
            obj = float(val_e.mean() + val_p.mean())
            d_rate -= w * ge[..., None] * L.log_prob_grad_logits(rate_logp, batch.levels)
            d_place -= w * gp[..., None] * L.log_prob_grad_logits(place_logp, batch.placements)
            stats["ratio_mean"] = float(np.mean(rho_e * rho_p))
        else:
            rho = L.ratio_joint(new_lr, batch.old_logp_rate, new_lp, batch.old_logp_place)
            val, g = obj_and_grad(rho)
            obj = float(val.mean())
            d_rate -= w * g[..., None] * L.log_prob_grad_logits(rate_logp, batch.levels)
            if place_logp is not None:
                d_place -= w * g[..., None] * L.log_prob_grad_logits(place_logp, batch.placements)
            stats["ratio_mean"] = float(np.mean(rho))
        stats[surrogate] = obj
        total -= w * obj

    ent = L.entropy(rate_logp) + (L.entropy(place_logp) if place_logp is not None else 0.0)
    stats["entropy"] = float(np.mean(ent))
    w = terms.get("entropy", 0.0)
    if w:
        total -= w * stats["entropy"]
        d_rate -= w * L.entropy_grad_logits(rate_logp) / count
        if place_logp is not None:
            d_place -= w * L.entropy_grad_logits(place_logp) / count

    w = terms.get("kl", 0.0)
    if w:
        kl_r = L.kl(batch.old_rate_probs, rate_logp)
        kl_val = float(np.mean(kl_r))
        d_rate += w * L.kl_grad_logits(batch.old_rate_probs, rate_logp) / count
        if place_logp is not None:
            kl_val += float(np.mean(L.kl(batch.old_place_probs, place_logp)))
            d_place += w * L.kl_grad_logits(batch.old_place_probs, place_logp) / count
        stats["kl"] = kl_val
        total += w * kl_val

    w = terms.get("value", 0.0)
    if w:
        stats["value"] = L.loss_value(out["value"], batch.value_target)
        total += w * stats["value"]
        d_value = w * L.loss_value_grad(out["value"], batch.value_target)

    w = terms.get("aux", 0.0)
    if w:
        stats["aux"] = L.loss_aux(out["aux"], batch.value_target)
        total += w * stats["aux"]
        d_aux = w * L.loss_aux_grad(out["aux"], batch.value_target)

    grads = model.backward(out, d_rate=d_rate, d_place=d_place, d_aux=d_aux, d_value=d_value)
    return total, grads, stats


class AgentPolicy:
    """Adapts a network to the ``policy(observation)`` interface."""

    def __init__(self, model: ActorCritic, greedy: bool = True, seed: int = 0):
        self.model, self.greedy, self.seed = model, greedy, seed
        self.rng = np.random.default_rng(seed)
        self.last: dict | None = None

    def reset(self, episode_seed: int) -> None:
        self.rng = np.random.default_rng([self.seed, episode_seed])

    def __call__(self, observation: Observation) -> PolicyDecision:
        res = self.model.act(observation.features, self.rng, greedy=self.greedy)
        self.last = res
        return PolicyDecision(res["levels"], res["placements"], res["logp_rate"], res["logp_place"])


@dataclass
class TrainResult:
    model: ActorCritic
    duals: DualCoefficients
    log: list[dict]
    episode_stats: list[dict]


def _rollout(env: StreamingEnv, policy: AgentPolicy, seed: int, reward_scale: float):
    policy.reset(seed)
    obs = env.reset(seed)
    steps = []
    while not env.done:
        decision = policy(obs)
        res = env.step(JointAction(decision.levels, decision.placements))
        steps.append({
            "obs": obs.features,
            "next_obs": res.observation.features,
            "levels": decision.levels,
            "placements": decision.placements,
            "logp_rate": decision.log_prob_rate,
            "logp_place": decision.log_prob_placement,
            "rewards": res.rewards * reward_scale,
            "done": res.done,
        })
        obs = res.observation
    return steps


def _minibatches(size: int, batch_size: int | None, rng: np.random.Generator, count: int):
    for _ in range(count):
        if batch_size is None or batch_size >= size:
            yield slice(None)
        else:
            yield rng.choice(size, batch_size, replace=False)


def train(
    env_config: EnvConfig,
    config: TrainConfig,
    kind: ArchitectureKind | str = ArchitectureKind.MTRC,
    model: ActorCritic | None = None,
    progress=None,
) -> TrainResult:
    """Run ``config.rounds`` rounds of the training loop.

    Each round collects ``n_update`` episodes (updating the duals after every
    episode), then runs ``n_policy`` dual-clip PPO steps and ``n_aux`` pairs of
    (value, joint) auxiliary steps.
    """
    kind = ArchitectureKind(kind)
    if model is None:
        model = ActorCritic(
            env_config.user_count, env_config.feature_count, env_config.level_count,
            kind, config.net, seed=child_seed(config.seed, "init"),
        )
    env = StreamingEnv(env_config, DualCoefficients(config.mu0_init, config.mu1_init, config.dual_step))
    policy = AgentPolicy(model, greedy=False, seed=child_seed(config.seed, "policy"))
    batch_rng = np.random.default_rng(child_seed(config.seed, "minibatch"))
    actor_opt = Adam(model.actor_keys(), config.learning_rate)
    critic_opt = Adam(model.critic_keys(), config.learning_rate)
    buffer = RolloutBuffer()
    train_log: list[dict] = []
    episode_stats: list[dict] = []
    episode = 0

    def record(rnd, phase, loss, entropy, qoe):
        if not math.isfinite(loss):
            raise TrainingDivergence(f"round {rnd} {phase}: loss is {loss}")
        train_log.append({
            "round": rnd, "phase": phase, "loss": float(loss), "entropy": float(entropy),
            "mu0": env.duals.mu0, "mu1": env.duals.mu1, "mean_qoe": qoe,
        })

    for rnd in range(config.rounds):
        qoes = []
        for _ in range(config.n_update):
            seed = child_seed(config.seed, "episode", episode)
            steps = _rollout(env, policy, seed, config.reward_scale)
            buffer.add_episode(steps, config.gamma)
            mean_rt = float(np.mean([rt(m) for m in env.metrics]))
            mean_qv = float(np.mean([qv(m) for m in env.metrics]))
            qoes.append(float(np.mean(env.qoe)))
            episode_stats.append({
                "episode": episode, "round": rnd, "rt_s": mean_rt, "qv_db": mean_qv,
                "avq_db": float(np.mean([avq(m) for m in env.metrics])), "qoe": qoes[-1],
                "mu0": env.duals.mu0, "mu1": env.duals.mu1,
            })
            env.duals = update_duals(env.duals, mean_rt, mean_qv, env.targets)
            episode += 1
        mean_qoe = float(np.mean(qoes))

        batch = buffer.batch()
        next_obs, done = buffer.next_obs_and_done()
        v_s = model.forward(batch.obs)["value"]
        v_next = model.forward(next_obs)["value"]
        adv = L.advantage(buffer.rewards(), v_s, v_next, config.gamma, done[:, None])
        if config.normalize_advantages and adv.size > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        batch.advantage = adv

        policy_terms = {"dual_clip": 1.0, "entropy": config.entropy_weight, "value": 1.0}
        for idx in _minibatches(len(batch), config.batch_size, batch_rng, config.n_policy):
            loss, grads, stats = composite_loss(
                model, batch.subset(idx), policy_terms, config.clip_eps, config.dual_clip
            )
            record(rnd, "policy", loss, stats["entropy"], mean_qoe)
            actor_opt.step(model.params, grads, config.max_grad_norm)
            critic_opt.step(model.params, grads, config.max_grad_norm)

        # behavioral-cloning reference: the policy as it stands before the auxiliary phase
        first = _first_action(model, batch)
        out = model.forward(batch.obs, first)
        batch.old_rate_probs = np.exp(out["rate_logp"])
        batch.old_place_probs = np.exp(out["place_logp"]) if out["place_logp"] is not None else None
        joint_terms = {"kl": 1.0, "aux": 2.0 if kind.is_cascade else 1.0}
        for idx in _minibatches(len(batch), config.batch_size, batch_rng, config.n_aux):
            sub = batch.subset(idx)
            loss, grads, stats = composite_loss(model, sub, {"value": 1.0})
            record(rnd, "aux_value", loss, stats["entropy"], mean_qoe)
            critic_opt.step(model.params, grads, config.max_grad_norm)
            loss, grads, stats = composite_loss(model, sub, joint_terms)
            record(rnd, "aux_joint", loss, stats["entropy"], mean_qoe)
            actor_opt.step(model.params, grads, config.max_grad_norm)

        buffer.clear()
        if progress is not None:
            progress(rnd, env.duals, mean_qoe)
        log.debug("round %d mean_qoe %.3f mu0 %.3f mu1 %.3f", rnd, mean_qoe, env.duals.mu0, env.duals.mu1)

    return TrainResult(model, env.duals, train_log, episode_stats)


def write_train_log(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAIN_LOG_HEADER)
        for r in rows:
            writer.writerow([r["round"], r["phase"]] + [repr(float(r[k])) for k in TRAIN_LOG_HEADER[2:]])


def evaluate(
    policy,
    env_config: EnvConfig,
    seeds,
    duals: DualCoefficients | None = None,
) -> list:
    """Run one episode per seed with fixed duals; returns the episode results."""
    from ..env import run_episode

    env = StreamingEnv(env_config, duals)
    return [run_episode(policy, env, int(s)) for s in seeds]
