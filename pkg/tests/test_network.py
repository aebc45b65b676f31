import numpy as np
import pytest

from edgevr.errors import ValidationError
from edgevr.rl.network import ActorCritic, ArchitectureKind, NetConfig, log_softmax, one_hot, parameter_count
from edgevr.rl.trainer import composite_loss

from gradcheck import LOSS_TERMS, check_gradient, near_kink, random_instance

KINDS = list(ArchitectureKind)


@pytest.fixture
def x(rng):
    return rng.normal(size=(5, 2, 10))


class TestHelpers:
    def test_log_softmax_normalized(self, rng):
        z = rng.normal(size=(3, 7)) * 50
        np.testing.assert_allclose(np.exp(log_softmax(z)).sum(-1), 1.0)

    def test_one_hot(self):
        np.testing.assert_array_equal(one_hot(np.array([[2, 0]]), 3), [[[0, 0, 1], [1, 0, 0]]])


class TestForward:
    @pytest.mark.parametrize("kind", KINDS)
    def test_shapes(self, kind, x):
        m = ActorCritic(2, 10, 4, kind)
        first = np.zeros((5, 2), dtype=int) if kind.is_cascade else None
        out = m.forward(x, first)
        assert out["rate_logp"].shape == (5, 2, 4)
        assert out["aux"].shape == out["value"].shape == (5, 2)
        if kind.fixed_placement is None:
            assert out["place_logp"].shape == (5, 2, 3)
        else:
            assert out["place_logp"] is None

    def test_single_observation(self, x):
        m = ActorCritic(2, 10, 4)
        assert m.forward(x[0])["value"].shape == (1, 2)

    def test_shape_mismatch(self, x):
        with pytest.raises(ValidationError):
            ActorCritic(3, 10, 4).forward(x)

    @pytest.mark.parametrize("kind", KINDS)
    def test_zero_heads_are_uniform(self, kind, x):
        m = ActorCritic(2, 10, 4, kind)
        for k in m.params:
            if k.startswith(("a_rate_", "a_place_")):
                m.params[k] = np.zeros_like(m.params[k])
        first = np.ones((5, 2), dtype=int) if kind.is_cascade else None
        rate, place, _, _ = m.probabilities(x, first)
        np.testing.assert_allclose(rate, 0.25)
        if place is not None:
            np.testing.assert_allclose(place, 1 / 3)

    @pytest.mark.parametrize("kind", [ArchitectureKind.R1C2, ArchitectureKind.C1R2])
    def test_stage_two_depends_on_stage_one(self, kind, x):
        m = ActorCritic(2, 10, 4, kind, NetConfig(head_init_scale=1.0), seed=3)
        second = "place_logp" if kind is ArchitectureKind.R1C2 else "rate_logp"
        a = m.forward(x, np.zeros((5, 2), dtype=int))[second]
        b = m.forward(x, np.ones((5, 2), dtype=int))[second]
        assert not np.allclose(a, b)

    def test_cascade_without_first_action_gives_first_stage(self, x):
        out = ActorCritic(2, 10, 4, "r1c2").forward(x)
        assert out["rate_logp"] is not None and out["place_logp"] is None

    def test_dense_trunk(self, x):
        m = ActorCritic(2, 10, 4, config=NetConfig(trunk="dense"))
        assert "a_conv_w" not in m.params and m.forward(x)["value"].shape == (5, 2)

    def test_kernel_too_wide(self):
        with pytest.raises(ValidationError):
            ActorCritic(2, 3, 4, config=NetConfig(conv_kernel=5))

    def test_separate_actor_and_critic(self):
        m = ActorCritic(2, 10, 4)
        assert set(m.actor_keys()).isdisjoint(m.critic_keys())
        assert set(m.actor_keys()) | set(m.critic_keys()) == set(m.params)
        assert parameter_count(m) == sum(v.size for v in m.params.values())

    def test_load_params_checks_shapes(self):
        m = ActorCritic(2, 10, 4)
        bad = m.copy_params()
        bad["a_rate_w"] = np.zeros((1, 1))
        with pytest.raises(ValidationError):
            m.load_params(bad)


class TestAct:
    @pytest.mark.parametrize("kind", KINDS)
    def test_greedy_is_argmax_and_deterministic(self, kind, x):
        m = ActorCritic(2, 10, 4, kind, NetConfig(head_init_scale=1.0), seed=1)
        a = m.act(x[0], greedy=True)
        b = m.act(x[0], greedy=True)
        assert a["levels"].tolist() == b["levels"].tolist()
        assert a["levels"].tolist() == a["rate_probs"].argmax(-1).tolist()
        if kind.fixed_placement is not None:
            assert set(a["placements"].tolist()) == {int(kind.fixed_placement)}
            assert np.all(a["logp_place"] == 0)

    def test_sampling_frequencies(self, x):
        m = ActorCritic(1, 10, 4, "mtrc", NetConfig(head_init_scale=1.0), seed=2)
        rng = np.random.default_rng(0)
        draws = np.array([m.act(x[0, :1], rng)["levels"][0] for _ in range(20000)])
        probs = m.act(x[0, :1], greedy=True)["rate_probs"][0]
        np.testing.assert_allclose(np.bincount(draws, minlength=4) / draws.size, probs, atol=0.015)

    def test_sampling_needs_rng(self, x):
        with pytest.raises(ValidationError):
            ActorCritic(2, 10, 4).act(x[0])

    def test_logp_matches_distribution(self, x):
        m = ActorCritic(2, 10, 4, "c1r2", NetConfig(head_init_scale=1.0), seed=4)
        a = m.act(x[0], np.random.default_rng(1))
        np.testing.assert_allclose(np.exp(a["logp_rate"]), a["rate_probs"][np.arange(2), a["levels"]])
        np.testing.assert_allclose(np.exp(a["logp_place"]), a["place_probs"][np.arange(2), a["placements"]])


class TestGradients:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("term", LOSS_TERMS)
    def test_finite_differences(self, kind, term):
        rng = np.random.default_rng(hash((kind.value, term)) % 2**32)
        for _ in range(3):
            model, batch = random_instance(rng, kind)
            while near_kink(model, batch):
                model, batch = random_instance(rng, kind)
            assert check_gradient(model, batch, term, rng, coords=3) < 1e-4

    def test_cascade_placement_loss_skips_rate_head(self, rng):
        model, batch = random_instance(rng, ArchitectureKind.R1C2)
        out = model.forward(batch.obs, batch.levels)
        d_place = rng.normal(size=out["place_logp"].shape)
        grads = model.backward(out, d_rate=None, d_place=d_place)
        assert not grads["a_rate_w"].any() and not grads["a_rate_b"].any()
        assert grads["a_stage2_w"].any() and grads["a_dense_w"].any()

    def test_cascade_action_is_constant_input(self, rng):
        # the one-hot rows of the stage-2 weights only receive gradient for the chosen action
        model, batch = random_instance(rng, ArchitectureKind.R1C2)
        out = model.forward(batch.obs, batch.levels)
        grads = model.backward(out, d_place=rng.normal(size=out["place_logp"].shape))
        hidden = model.config.hidden
        onehot_rows = grads["a_stage2_w"][hidden:].reshape(model.n, model.levels, -1)
        used = np.zeros((model.n, model.levels), dtype=bool)
        for row in batch.levels:
            used[np.arange(model.n), row] = True
        assert not onehot_rows[~used].any()

    def test_value_loss_touches_only_critic(self, rng):
        model, batch = random_instance(rng, ArchitectureKind.MTRC)
        _, grads, _ = composite_loss(model, batch, {"value": 1.0})
        assert all(not grads[k].any() for k in model.actor_keys())
        assert any(grads[k].any() for k in model.critic_keys())

    def test_policy_losses_touch_only_actor(self, rng):
        model, batch = random_instance(rng, ArchitectureKind.C1R2)
        _, grads, _ = composite_loss(model, batch, {"dual_clip": 1.0, "entropy": 0.01, "kl": 1.0, "aux": 1.0})
        assert all(not grads[k].any() for k in model.critic_keys())
