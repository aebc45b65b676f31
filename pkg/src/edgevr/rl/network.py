"""Actor/critic networks with hand-written forward and backward passes.

Both networks share a layout: a 1-D convolution over each user's feature row
(kernel shared by all users), a dense layer over the stacked users, then
per-user linear heads.  Activations are tanh.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from ..errors import ValidationError
from ..placement import PLACEMENT_COUNT, PlacementState


class ArchitectureKind(str, Enum):
    MTRC = "mtrc"  # joint heads on one trunk
    R1C2 = "r1c2"  # rate first, placement conditioned on the sampled rate
    C1R2 = "c1r2"  # placement first, rate conditioned on the sampled placement
    ECU_R = "ecur"  # rate only, everything processed on the ECU
    HEADSET_R = "headsetr"  # rate only, everything processed on the headset

    @property
    def is_cascade(self) -> bool:
        return self in (ArchitectureKind.R1C2, ArchitectureKind.C1R2)

    @property
    def fixed_placement(self) -> PlacementState | None:
        if self is ArchitectureKind.ECU_R:
            return PlacementState.ECU_FULL
        if self is ArchitectureKind.HEADSET_R:
            return PlacementState.HEADSET
        return None


@dataclass(frozen=True)
class NetConfig:
    trunk: str = "conv"  # "conv" or "dense"
    conv_channels: int = 4
    conv_kernel: int = 3
    hidden: int = 64
    stage_hidden: int = 32
    head_init_scale: float = 0.01

    def __post_init__(self):
        if self.trunk not in ("conv", "dense"):
            raise ValidationError("trunk must be 'conv' or 'dense'")
        if min(self.conv_channels, self.conv_kernel, self.hidden, self.stage_hidden) < 1:
            raise ValidationError("layer sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def one_hot(idx: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros(idx.shape + (width,))
    np.put_along_axis(out, idx[..., None].astype(np.int64), 1.0, axis=-1)
    return out


class ActorCritic:
    """Actor (policy heads + auxiliary value head) and a separate critic.

    Parameters live in ``self.params`` keyed by name; actor names start with
    ``a_`` and critic names with ``c_``.
    """

    def __init__(
        self,
        user_count: int,
        feature_count: int,
        level_count: int,
        kind: ArchitectureKind | str = ArchitectureKind.MTRC,
        config: NetConfig | None = None,
        seed: int = 0,
    ):
        self.kind = ArchitectureKind(kind)
        self.config = config or NetConfig()
        self.n, self.f, self.levels = user_count, feature_count, level_count
        if self.config.trunk == "conv" and self.config.conv_kernel > feature_count:
            raise ValidationError("conv kernel wider than the feature row")
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        self._init_trunk("a_", rng)
        self._init_trunk("c_", rng)
        self._init_heads(rng)

    # -- construction ------------------------------------------------------

    @property
    def trunk_width(self) -> int:
        c = self.config
        if c.trunk == "conv":
            return self.n * (self.f - c.conv_kernel + 1) * c.conv_channels
        return self.n * self.f

    def _dense(self, name, fan_in, fan_out, rng, scale=1.0):
        self.params[name + "w"] = rng.standard_normal((fan_in, fan_out)) * scale / np.sqrt(fan_in)
        self.params[name + "b"] = np.zeros(fan_out)

    def _init_trunk(self, prefix, rng):
        c = self.config
        if c.trunk == "conv":
            self.params[prefix + "conv_w"] = rng.standard_normal((c.conv_channels, c.conv_kernel)) / np.sqrt(c.conv_kernel)
            self.params[prefix + "conv_b"] = np.zeros(c.conv_channels)
        self._dense(prefix + "dense_", self.trunk_width, c.hidden, rng)

    def _init_heads(self, rng):
        c, n, h = self.config, self.n, self.config.hidden
        s = c.head_init_scale
        self._dense("a_aux_", h, n, rng)
        self._dense("c_value_", h, n, rng)
        if self.kind is ArchitectureKind.R1C2:
            self._dense("a_rate_", h, n * self.levels, rng, s)
            self._dense("a_stage2_", h + n * self.levels, c.stage_hidden, rng)
            self._dense("a_place_", c.stage_hidden, n * PLACEMENT_COUNT, rng, s)
        elif self.kind is ArchitectureKind.C1R2:
            self._dense("a_place_", h, n * PLACEMENT_COUNT, rng, s)
            self._dense("a_stage2_", h + n * PLACEMENT_COUNT, c.stage_hidden, rng)
            self._dense("a_rate_", c.stage_hidden, n * self.levels, rng, s)
        else:
            self._dense("a_rate_", h, n * self.levels, rng, s)
            if self.kind is ArchitectureKind.MTRC:
                self._dense("a_place_", h, n * PLACEMENT_COUNT, rng, s)

    @property
    def has_placement_head(self) -> bool:
        return self.kind.fixed_placement is None

    @property
    def first_stage(self) -> str | None:
        return {"r1c2": "rate", "c1r2": "place"}.get(self.kind.value)

    def actor_keys(self) -> list[str]:
        return [k for k in self.params if k.startswith("a_")]

    def critic_keys(self) -> list[str]:
        return [k for k in self.params if k.startswith("c_")]

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            arr = np.asarray(params[k], dtype=np.float64)
            if arr.shape != v.shape:
                raise ValidationError(f"parameter {k}: shape {arr.shape} != {v.shape}")
            self.params[k] = arr.copy()

    # -- trunk -------------------------------------------------------------

    def _trunk_forward(self, x, prefix):
        p, c = self.params, self.config
        b = x.shape[0]
        cache = {}
        if c.trunk == "conv":
            j = self.f - c.conv_kernel + 1
            patches = np.stack([x[..., t:t + j] for t in range(c.conv_kernel)], axis=-1)
            act = np.tanh(patches @ p[prefix + "conv_w"].T + p[prefix + "conv_b"])
            flat = act.reshape(b, -1)
            cache.update(patches=patches, conv_act=act)
        else:
            flat = x.reshape(b, -1)
        h = np.tanh(flat @ p[prefix + "dense_w"] + p[prefix + "dense_b"])
        cache.update(flat=flat, h=h)
        return h, cache

    def _trunk_backward(self, dh, cache, prefix, grads):
        p, c = self.params, self.config
        dpre = dh * (1.0 - cache["h"] ** 2)
        grads[prefix + "dense_w"] += cache["flat"].T @ dpre
        grads[prefix + "dense_b"] += dpre.sum(axis=0)
        if c.trunk == "conv":
            dflat = dpre @ p[prefix + "dense_w"].T
            act = cache["conv_act"]
            dconv = dflat.reshape(act.shape) * (1.0 - act**2)
            grads[prefix + "conv_w"] += np.einsum("bnjc,bnjk->ck", dconv, cache["patches"])
            grads[prefix + "conv_b"] += dconv.sum(axis=(0, 1, 2))

    # -- forward -----------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (self.n, self.f):
            raise ValidationError(f"observation shape {x.shape[1:]} != {(self.n, self.f)}")
        return x

    def forward(self, x, first_action=None) -> dict:
        """Run actor and critic on a batch ``(B, N, F)`` (or one ``(N, F)`` row).

        Cascades need the stage-1 action ``(B, N)`` to evaluate stage 2; it is
        treated as a constant input.
        """
        x = self._check_input(x)
        p, b, n = self.params, x.shape[0], self.n
        h, tcache = self._trunk_forward(x, "a_")
        hc, ccache = self._trunk_forward(x, "c_")
        out = {"x": x, "a_trunk": tcache, "c_trunk": ccache}
        out["aux"] = h @ p["a_aux_w"] + p["a_aux_b"]
        out["value"] = hc @ p["c_value_w"] + p["c_value_b"]

        if self.kind.is_cascade:
            first = self.first_stage
            second = "place" if first == "rate" else "rate"
            width1 = self.levels if first == "rate" else PLACEMENT_COUNT
            width2 = PLACEMENT_COUNT if first == "rate" else self.levels
            out[first + "_logits"] = (h @ p[f"a_{first}_w"] + p[f"a_{first}_b"]).reshape(b, n, width1)
            if first_action is None:
                out[second + "_logits"] = None
                out[first + "_logp"] = log_softmax(out[first + "_logits"])
                out[second + "_logp"] = None
                return out
            a1 = np.asarray(first_action).reshape(b, n)
            z = np.concatenate([h, one_hot(a1, width1).reshape(b, -1)], axis=1)
            g2 = np.tanh(z @ p["a_stage2_w"] + p["a_stage2_b"])
            out[second + "_logits"] = (g2 @ p[f"a_{second}_w"] + p[f"a_{second}_b"]).reshape(b, n, width2)
            out.update(stage2_in=z, stage2_act=g2)
        else:
            out["rate_logits"] = (h @ p["a_rate_w"] + p["a_rate_b"]).reshape(b, n, self.levels)
            if self.has_placement_head:
                out["place_logits"] = (h @ p["a_place_w"] + p["a_place_b"]).reshape(b, n, PLACEMENT_COUNT)
            else:
                out["place_logits"] = None
        for head in ("rate", "place"):
            z = out.get(head + "_logits")
            out[head + "_logp"] = log_softmax(z) if z is not None else None
        return out

    def probabilities(self, x, first_action=None):
        out = self.forward(x, first_action)
        rate = np.exp(out["rate_logp"]) if out["rate_logp"] is not None else None
        place = np.exp(out["place_logp"]) if out["place_logp"] is not None else None
        return rate, place, out["aux"], out["value"]

    # -- backward ----------------------------------------------------------

    def backward(self, out: dict, d_rate=None, d_place=None, d_aux=None, d_value=None) -> dict:
        """Parameter gradients given loss gradients w.r.t. the network outputs.

        ``d_rate``/``d_place`` are gradients w.r.t. logits ``(B, N, ·)``;
        ``d_aux``/``d_value`` w.r.t. the value outputs ``(B, N)``.
        """
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        b = out["x"].shape[0]
        h = out["a_trunk"]["h"]
        dh = np.zeros_like(h)

        if d_value is not None:
            hc = out["c_trunk"]["h"]
            dv = np.asarray(d_value).reshape(b, -1)
            grads["c_value_w"] += hc.T @ dv
            grads["c_value_b"] += dv.sum(axis=0)
            self._trunk_backward(dv @ p["c_value_w"].T, out["c_trunk"], "c_", grads)

        if d_aux is not None:
            da = np.asarray(d_aux).reshape(b, -1)
            grads["a_aux_w"] += h.T @ da
            grads["a_aux_b"] += da.sum(axis=0)
            dh += da @ p["a_aux_w"].T

        head_grads = {"rate": d_rate, "place": d_place}
        if self.kind.is_cascade:
            first = self.first_stage
            second = "place" if first == "rate" else "rate"
            d2 = head_grads[second]
            if d2 is not None:
                g2 = out["stage2_act"]
                d2 = np.asarray(d2).reshape(b, -1)
                grads[f"a_{second}_w"] += g2.T @ d2
                grads[f"a_{second}_b"] += d2.sum(axis=0)
                dpre = (d2 @ p[f"a_{second}_w"].T) * (1.0 - g2**2)
                grads["a_stage2_w"] += out["stage2_in"].T @ dpre
                grads["a_stage2_b"] += dpre.sum(axis=0)
                # the one-hot stage-1 action is a constant input: only the trunk part flows back
                dh += (dpre @ p["a_stage2_w"].T)[:, : h.shape[1]]
            heads = [first]
        else:
            heads = ["rate", "place"] if self.has_placement_head else ["rate"]
        for head in heads:
            d = head_grads[head]
            if d is None:
                continue
            d = np.asarray(d).reshape(b, -1)
            grads[f"a_{head}_w"] += h.T @ d
            grads[f"a_{head}_b"] += d.sum(axis=0)
            dh += d @ p[f"a_{head}_w"].T

        if np.any(dh):
            self._trunk_backward(dh, out["a_trunk"], "a_", grads)
        return grads

    # -- acting ------------------------------------------------------------

    def act(self, x, rng: np.random.Generator | None = None, greedy: bool = False) -> dict:
        """Choose a joint action for one observation ``(N, F)``.

        Returns levels, placements, their log-probabilities and the full
        per-head distributions the choice was drawn from.
        """
        if not greedy and rng is None:
            raise ValidationError("sampling requires an rng")

        def choose(logp):
            probs = np.exp(logp[0])
            if greedy:
                return probs.argmax(axis=-1)
            u = rng.random(probs.shape[0])
            idx = (np.cumsum(probs, axis=-1) < u[:, None]).sum(axis=-1)
            return np.minimum(idx, probs.shape[-1] - 1)

        out = self.forward(x)
        chosen = {}
        if self.kind.is_cascade:
            first = self.first_stage
            second = "place" if first == "rate" else "rate"
            chosen[first] = choose(out[first + "_logp"])
            out = self.forward(x, chosen[first][None])
            chosen[second] = choose(out[second + "_logp"])
        else:
            chosen["rate"] = choose(out["rate_logp"])
            if self.has_placement_head:
                chosen["place"] = choose(out["place_logp"])

        res = {"levels": chosen["rate"], "rate_probs": np.exp(out["rate_logp"][0])}
        res["logp_rate"] = np.take_along_axis(out["rate_logp"][0], chosen["rate"][:, None], -1)[:, 0]
        if "place" in chosen:
            res["placements"] = chosen["place"]
            res["place_probs"] = np.exp(out["place_logp"][0])
            res["logp_place"] = np.take_along_axis(out["place_logp"][0], chosen["place"][:, None], -1)[:, 0]
        else:
            res["placements"] = np.full(self.n, int(self.kind.fixed_placement))
            res["place_probs"] = None
            res["logp_place"] = np.zeros(self.n)
        res["value"] = out["value"][0]
        return res


def parameter_count(model: ActorCritic) -> int:
    return int(sum(v.size for v in model.params.values()))
