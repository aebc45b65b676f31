import csv

import numpy as np
import pytest

from edgevr.env import EnvConfig, StreamingEnv
from edgevr.errors import TrainingDivergence, ValidationError
from edgevr.media import QualityLadder
from edgevr.net import ThroughputTrace
from edgevr.qoe import DualCoefficients
from edgevr.rl import ActorCritic, AgentPolicy, ArchitectureKind, TrainConfig, composite_loss, evaluate, train
from edgevr.rl.trainer import Adam, RolloutBuffer, write_train_log

from gradcheck import random_instance

SMALL = dict(rounds=1, n_policy=3, n_aux=2, n_update=2)


def bandit_config(levels=4):
    """One user, two GoPs, infinite link: reward grows with the level and nothing else matters."""
    vals = np.tile(np.arange(1, levels + 1, dtype=float), (2, 1))
    return EnvConfig([QualityLadder(vals, vals.copy())], [ThroughputTrace(1.0, [1e12])],
                     user_count=1, gop_count=2, h1_range_db=(0, 0), h0_rebuffer_s=0)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(clip_eps=0), dict(dual_clip=1.0), dict(n_aux=0), dict(gamma=1.5),
                                    dict(learning_rate=-1), dict(batch_size=0), dict(reward_scale=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            TrainConfig(**kw)

    def test_net_from_dict(self):
        assert TrainConfig(net={"hidden": 7}).net.hidden == 7


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = {"w": np.array([1.0, -2.0, 3.0])}
        Adam(["w"], 0.1).step(p, {"w": np.array([5.0, -0.01, 0.0])})
        np.testing.assert_allclose(p["w"], [0.9, -1.9, 3.0], atol=1e-6)

    def test_only_owned_keys(self):
        p = {"a": np.ones(2), "b": np.ones(2)}
        Adam(["a"], 0.1).step(p, {"a": np.ones(2), "b": np.ones(2)})
        assert np.all(p["b"] == 1)

    def test_clipping_reports_norm(self):
        p = {"w": np.zeros(2)}
        assert Adam(["w"], 0.1).step(p, {"w": np.array([3.0, 4.0])}, max_norm=0.5) == pytest.approx(5.0)

    def test_minimizes_quadratic(self):
        p = {"w": np.array([4.0, -3.0])}
        opt = Adam(["w"], 0.05)
        for _ in range(2000):
            opt.step(p, {"w": 2 * p["w"]})
        np.testing.assert_allclose(p["w"], 0, atol=1e-2)


class TestRolloutBuffer:
    def test_value_targets_are_discounted_returns(self):
        buf = RolloutBuffer()
        steps = [{"obs": np.zeros((1, 3)), "next_obs": np.zeros((1, 3)), "levels": np.array([0]),
                  "placements": np.array([0]), "logp_rate": np.zeros(1), "logp_place": np.zeros(1),
                  "rewards": np.array([r]), "done": i == 2} for i, r in enumerate([1.0, 2.0, 4.0])]
        buf.add_episode(steps, 0.5)
        np.testing.assert_allclose(buf.batch().value_target[:, 0], [3.0, 4.0, 4.0])
        assert buf.next_obs_and_done()[1].tolist() == [False, False, True]


class TestCompositeLoss:
    @pytest.mark.parametrize("kind", list(ArchitectureKind))
    def test_on_policy_ratio_is_one(self, kind, rng):
        model, batch = random_instance(rng, kind)
        first = batch.levels if model.first_stage == "rate" else batch.placements if model.first_stage == "place" else None
        out = model.forward(batch.obs, first)
        batch.old_logp_rate = np.take_along_axis(out["rate_logp"], batch.levels[..., None], -1)[..., 0]
        if out["place_logp"] is not None:
            batch.old_logp_place = np.take_along_axis(out["place_logp"], batch.placements[..., None], -1)[..., 0]
        else:
            batch.old_logp_place = np.zeros_like(batch.old_logp_rate)
        loss, _, stats = composite_loss(model, batch, {"clip": 1.0})
        assert stats["ratio_mean"] == pytest.approx(1.0)
        surrogates = 2 if kind.is_cascade else 1
        assert loss == pytest.approx(-surrogates * batch.advantage.mean())

    def test_unknown_term(self, rng):
        model, batch = random_instance(rng, ArchitectureKind.MTRC)
        with pytest.raises(ValidationError):
            composite_loss(model, batch, {"bogus": 1.0})

    def test_entropy_ascent_tends_to_uniform(self, rng):
        model, batch = random_instance(rng, ArchitectureKind.MTRC)
        opt = Adam(model.actor_keys(), 0.02)
        start = composite_loss(model, batch, {"entropy": 1.0})[2]["entropy"]
        for _ in range(400):
            _, grads, stats = composite_loss(model, batch, {"entropy": 1.0})
            opt.step(model.params, grads)
        top = np.log(model.levels) + np.log(3)
        assert start < stats["entropy"] and stats["entropy"] == pytest.approx(top, abs=0.02)


class TestTrain:
    def test_log_rows_per_round(self, env_config):
        cfg = TrainConfig(**{**SMALL, "rounds": 2})
        res = train(env_config, cfg)
        phases = [r["phase"] for r in res.log]
        assert len(phases) == 2 * (3 + 2 * 2)
        assert phases[:7] == ["policy"] * 3 + ["aux_value", "aux_joint"] * 2
        assert len(res.episode_stats) == 4

    def test_zero_learning_rate_freezes_params(self, env_config):
        model = ActorCritic(env_config.user_count, env_config.feature_count, env_config.level_count, seed=0)
        before = model.copy_params()
        train(env_config, TrainConfig(**SMALL, learning_rate=0.0), model=model)
        for k, v in before.items():
            np.testing.assert_array_equal(model.params[k], v)

    def test_deterministic(self, env_config):
        a = train(env_config, TrainConfig(**SMALL, seed=5), "c1r2")
        b = train(env_config, TrainConfig(**SMALL, seed=5), "c1r2")
        assert a.log == b.log
        for k in a.model.params:
            np.testing.assert_array_equal(a.model.params[k], b.model.params[k])

    def test_duals_updated_each_episode(self, env_config):
        res = train(env_config, TrainConfig(**SMALL, dual_step=0.05))
        mus = [(s["mu0"], s["mu1"]) for s in res.episode_stats]
        assert mus[0] == (0.1, 0.1) and len(set(mus)) > 1

    def test_nan_guard(self, env_config):
        model = ActorCritic(env_config.user_count, env_config.feature_count, env_config.level_count, seed=0)
        model.params["c_value_b"][...] = np.nan
        with pytest.raises(TrainingDivergence, match="round 0 policy"):
            train(env_config, TrainConfig(**SMALL), model=model)

    @pytest.mark.slow
    def test_bandit_learns_top_level(self):
        cfg = bandit_config()
        res = train(cfg, TrainConfig(rounds=200, mu0_init=0, mu1_init=0, dual_step=0, seed=1))
        obs = StreamingEnv(cfg).reset(0)
        rate_probs = res.model.probabilities(obs.features)[0]
        assert rate_probs[0, 0, -1] >= 0.95

    def test_write_log(self, env_config, tmp_path):
        res = train(env_config, TrainConfig(**SMALL))
        write_train_log(res.log, tmp_path / "log.csv")
        rows = list(csv.reader((tmp_path / "log.csv").open()))
        assert rows[0] == ["round", "phase", "loss", "entropy", "mu0", "mu1", "mean_qoe"]
        assert len(rows) == 1 + len(res.log)


class TestAgentPolicy:
    def test_evaluate_greedy_is_seed_stable(self, env_config):
        model = ActorCritic(env_config.user_count, env_config.feature_count, env_config.level_count, seed=0)
        a = evaluate(AgentPolicy(model), env_config, [1, 2], DualCoefficients())
        b = evaluate(AgentPolicy(model), env_config, [1, 2], DualCoefficients())
        assert [r.summary for r in a] == [r.summary for r in b]

    def test_reset_replays_samples(self, env_config):
        model = ActorCritic(env_config.user_count, env_config.feature_count, env_config.level_count, seed=0)
        pol = AgentPolicy(model, greedy=False, seed=3)
        obs = StreamingEnv(env_config).reset(0)
        pol.reset(0)
        first = [pol(obs).levels.tolist() for _ in range(10)]
        pol.reset(0)
        assert first == [pol(obs).levels.tolist() for _ in range(10)]
