"""Acceptance gate: each test prints one PASS/FAIL line and then asserts the same verdict."""

import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from edgevr.cli import main as cli_main
from edgevr.config import RunConfig, build_env_config, build_train_config
from edgevr.env import EnvConfig, JointAction, StreamingEnv, run_episode
from edgevr.media import QualityLadder
from edgevr.net import ThroughputTrace, expected_rate, transmit
from edgevr.pipeline import GopTimings, PlaybackState, advance_buffer
from edgevr.policy import BbaPolicy, BbaParams, FixedPolicy, RandomPolicy
from edgevr.qoe import DualCoefficients, update_duals
from edgevr.rl import AgentPolicy, ArchitectureKind, evaluate, train
from edgevr.rl import losses as L
from edgevr.seeding import child_seed

from gradcheck import LOSS_TERMS, check_gradient, near_kink, random_instance
from oracles import fine_transmit_end, micro_buffer


@pytest.fixture
def verdict(capsys):
    def emit(number: int, name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def test_buffer_dynamics_against_micro_steps(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    n = 1200
    bmax = rng.uniform(1.0, 6.0, n)
    gop = rng.uniform(0.1, 1.0, n) * bmax
    b = rng.uniform(0.0, 1.0, n) * bmax
    # decode, render and transmit times; snapped to the 1 ms grid so preparation is representable
    dpt = np.round(rng.exponential(0.4, (n, 3)), 3)
    prep = dpt.sum(axis=1)
    ob, os_, ow = micro_buffer(b, prep, gop, bmax)
    err = np.zeros((n, 3))
    for i in range(n):
        s, t = advance_buffer(PlaybackState(b[i], buffer_max_s=bmax[i]), GopTimings(*dpt[i]), gop[i])
        err[i] = abs(s.buffer_s - ob[i]), abs(t.rebuffer_s - os_[i]), abs(t.wait_s - ow[i])
    elapsed = time.perf_counter() - t0
    worst = err.max(axis=0)
    ok = bool(worst.max() < 2e-3 and elapsed < 10.0 and (os_ > 0).any() and (ow > 0).any())
    verdict(1, "buffer dynamics", ok,
            f"{n} instances, max |dB'| {worst[0]:.2e} |dS| {worst[1]:.2e} |dWait| {worst[2]:.2e}, {elapsed:.1f}s")


def test_transmission_integral_against_fine_steps(verdict):
    rng = np.random.default_rng(202)
    n = 1000
    worst_end = worst_rate = 0.0
    for k in range(n):
        samples = int(rng.integers(1, 30))
        interval = float(rng.choice([0.005, 0.01, 0.02]))
        rates = rng.uniform(1e7, 2e9, samples)
        rates[rng.random(samples) < 0.15] = 0.0
        rates[int(rng.integers(samples))] = rng.uniform(5e8, 2e9)
        rates[-1] = max(rates[-1], 1e7)  # a one-shot trace holds its last rate forever
        loop = bool(k % 2)
        tr = ThroughputTrace(interval, rates, loop=loop)
        start = float(rng.uniform(0.0, 2.0))
        payload = float(rng.uniform(1e5, 5e7))
        end, dur = transmit(tr, start, payload)
        oracle = fine_transmit_end(rates, interval, loop, start, payload, horizon_s=dur + 0.01)
        worst_end = max(worst_end, abs(end - oracle) / oracle)
        worst_rate = max(worst_rate, abs(expected_rate(tr, start, end) * dur - payload) / payload)
    ok = worst_end < 1e-6 and worst_rate < 1e-9
    verdict(2, "transmission integral", ok,
            f"{n} traces, end-time rel err {worst_end:.2e}, rate x duration rel err {worst_rate:.2e}")


def test_loss_gradients_by_finite_differences(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    kinds = list(ArchitectureKind)
    networks, resampled, worst = 120, 0, {t: 0.0 for t in LOSS_TERMS}
    for i in range(networks):
        model, batch = random_instance(rng, kinds[i % len(kinds)])
        while near_kink(model, batch):
            resampled += 1
            model, batch = random_instance(rng, kinds[i % len(kinds)])
        for term in LOSS_TERMS:
            worst[term] = max(worst[term], check_gradient(model, batch, term, rng, coords=4, h=1e-5))
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    ok = top < 1e-4 and elapsed < 60.0
    detail = ", ".join(f"{t} {e:.1e}" for t, e in worst.items())
    verdict(3, "loss gradients", ok, f"{networks} networks ({resampled} resampled near clip corners), "
            f"max rel err {detail}, {elapsed:.1f}s")


def test_dual_clip_algebra_on_grid(verdict):
    eps, c = 0.2, 3.0
    rho, adv = np.meshgrid(np.linspace(0.0, 10.0, 1001), np.linspace(-5.0, 5.0, 1001))
    dual = L.loss_dual_clip(rho, adv, eps, c)
    single = L.loss_clip(rho, adv, eps)
    pos, neg = adv >= 0, adv < 0
    same = bool(np.array_equal(dual[pos], single[pos]))
    floor = bool(np.all(dual[neg] >= c * adv[neg]))
    hand = float(L.loss_dual_clip(10.0, -1.0, eps, c))
    ok = same and floor and hand == pytest.approx(-3.0)
    verdict(4, "dual-clip algebra", ok,
            f"{rho.size} grid points, equal for A>=0: {same}, floor for A<0: {floor}, hand case {hand}")


def _stall_env(h0=2.0, h1_range=(1.09, 2.99), rate_bps=2.5e7):
    """One user on a constant link; at the default slow rate the top level stalls on every GoP."""
    gops = 12
    bits = np.tile([1e6, 3e7], (gops, 1))
    psnr = np.tile([40.0, 46.0], (gops, 1))
    return EnvConfig([QualityLadder(bits, psnr)], [ThroughputTrace(1.0, [rate_bps])], user_count=1, gop_count=gops,
                     h0_rebuffer_s=h0, h1_range_db=h1_range, random_start=False, random_trace_offset=False)


def _controller_run(policy, cfg, updates=20):
    env = StreamingEnv(cfg, DualCoefficients(0.1, 0.1, 0.01))
    history = [(env.duals.mu0, env.duals.mu1)]
    for i in range(updates):
        res = run_episode(policy, env, i)
        env.duals = update_duals(env.duals, res.mean_rt, res.mean_qv, env.targets)
        history.append((env.duals.mu0, env.duals.mu1))
    return np.array(history), res


def _decreases_to_zero_and_stays(seq):
    hit = int(np.argmax(seq == 0.0)) if (seq == 0.0).any() else None
    return hit is not None and bool(np.all(np.diff(seq[:hit + 1]) < 0)) and bool(np.all(seq[hit:] == 0.0))


def test_dual_controller(verdict):
    top = FixedPolicy(1, "headset")
    probe = run_episode(top, _stall_env(), 0)
    # H0 at half the realized rebuffering time puts the fixed policy at RT = 2 H0
    hist_rt, res_rt = _controller_run(top, _stall_env(h0=probe.mean_rt / 2))
    up0 = bool(np.all(np.diff(hist_rt[:, 0]) > 0))
    # only the start-up GoP stalls, for well under a millisecond
    hist_idle, res_idle = _controller_run(FixedPolicy(0, "ecu_full"), _stall_env(rate_bps=1e10))
    down0 = res_idle.mean_rt < 1e-3 and _decreases_to_zero_and_stays(hist_idle[:, 0])

    def alternate(obs):
        return JointAction([obs.gop_index % 2] * obs.user_count, [2] * obs.user_count)

    # alternating between 40 and 46 dB gives QV = 6 = 2 H1
    fast = _stall_env(h1_range=(3.0, 3.0), rate_bps=1e10)
    hist_qv, res_qv = _controller_run(alternate, fast)
    up1 = res_qv.mean_qv == pytest.approx(6.0) and bool(np.all(np.diff(hist_qv[:, 1]) > 0))
    down1 = res_idle.mean_qv == 0.0 and _decreases_to_zero_and_stays(hist_idle[:, 1])
    ok = up0 and down0 and up1 and down1
    verdict(5, "dual controller", ok,
            f"mu0 rises {hist_rt[0, 0]:.3f}->{hist_rt[-1, 0]:.3f} at RT=2H0, falls to 0 at RT={res_idle.mean_rt:.1e}: {down0}; "
            f"mu1 rises {hist_qv[0, 1]:.3f}->{hist_qv[-1, 1]:.3f} at QV=2H1, falls to 0 at QV=0: {down1}")


def test_rewards_telescope(verdict, videos, traces):
    rng = np.random.default_rng(606)
    worst = 0.0
    for k in range(100):
        cfg = EnvConfig(videos, traces, user_count=int(rng.integers(1, 5)), gop_count=int(rng.integers(2, 30)))
        duals = DualCoefficients(float(rng.uniform(0, 2)), float(rng.uniform(0, 2)))
        env = StreamingEnv(cfg, duals)
        res = run_episode(RandomPolicy(k), env, int(rng.integers(2**32)))
        total = np.sum([t.rewards for t in res.transitions], axis=0)
        expect = env.qoe - env.qoe_initial
        worst = max(worst, float(np.max(np.abs(total - expect) / np.maximum(np.abs(expect), 1e-12))))
    ok = worst < 1e-9
    verdict(6, "telescoping reward", ok, f"100 episodes, max rel err {worst:.2e}")


EVAL_EPISODES = 50


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["mtrc", "r1c2", "c1r2"])
def test_training_smoke(verdict, kind):
    cfg = RunConfig()
    env_cfg = build_env_config(cfg)
    train_cfg = build_train_config(cfg)
    assert (env_cfg.user_count, env_cfg.level_count, env_cfg.gop_count, train_cfg.rounds) == (2, 4, 20, 300)
    t0 = time.perf_counter()
    result = train(env_cfg, train_cfg, kind)
    elapsed = time.perf_counter() - t0
    seeds = [child_seed(cfg.seed, "eval", i) for i in range(EVAL_EPISODES)]
    agent = evaluate(AgentPolicy(result.model, greedy=True), env_cfg, seeds, result.duals)
    rand = evaluate(RandomPolicy(child_seed(cfg.seed, "random")), env_cfg, seeds, result.duals)
    q_agent = np.array([r.mean_qoe for r in agent])
    q_rand = np.array([r.mean_qoe for r in rand])
    p = float(stats.ttest_ind(q_agent, q_rand, equal_var=False, alternative="greater").pvalue)
    mean_rt = float(np.mean([r.mean_rt for r in agent]))
    limit = env_cfg.h0_rebuffer_s + 0.5
    ok = p < 0.01 and mean_rt <= limit and elapsed < 15 * 60
    verdict(7, f"training smoke {kind}", ok,
            f"QoE {q_agent.mean():.3f} vs random {q_rand.mean():.3f}, Welch p={p:.1e}, "
            f"mean RT {mean_rt:.3f}s <= {limit}s, trained in {elapsed:.0f}s")


def _baselines():
    out = {f"bba-{p}": (lambda p=p: BbaPolicy(BbaParams(placement=p))) for p in ("ecu_full", "ecu_decode", "headset")}
    out["random"] = lambda: RandomPolicy(7)
    out.update({f"fixed{lv}-{p}": (lambda lv=lv, p=p: FixedPolicy(lv, p))
                for lv, p in ((0, "headset"), (1, "ecu_full"), (2, "ecu_decode"), (3, "ecu_full"))})
    return out


def test_baselines_improve_with_throughput(verdict):
    cfg = RunConfig()
    regimes = ("low", "medium", "high")
    envs = {r: build_env_config(cfg, r) for r in regimes}
    seeds = [child_seed(cfg.seed, "episode", i) for i in range(EVAL_EPISODES)]
    failures, lines = [], []
    for name, make in _baselines().items():
        rts, psnrs = [], []
        for r in regimes:
            res = evaluate(make(), envs[r], seeds)
            rts.append(float(np.mean([x.mean_rt for x in res])))
            psnrs.append(float(np.mean([x.mean_avq for x in res])))
        if not (rts[0] >= rts[1] >= rts[2] and psnrs[0] <= psnrs[1] <= psnrs[2]):
            failures.append(name)
        lines.append(f"{name} RT {rts[0]:.2f}/{rts[1]:.2f}/{rts[2]:.2f}")
    verdict(8, "baseline regime trend", not failures,
            f"{len(lines)} policies; failures {failures}; " + "; ".join(lines))


TINY = {
    "seed": 11,
    "env": {"user_count": 2, "gop_count": 6,
            "videos": {"count": 2, "gop_count": 12}, "traces": {"count": 2, "duration_s": 20.0}},
    "train": {"rounds": 2, "n_policy": 4, "n_aux": 2, "n_update": 2},
}


def _run_all_commands(root: Path, config: Path) -> list[Path]:
    def cli(*argv):
        assert cli_main([str(a) for a in argv]) == 0

    cli("gen", "video", "--config", config, "--count", 2, "--out", root / "gen")
    cli("gen", "trace", "--config", config, "--count", 2, "--out", root / "gen")
    cli("simulate", "--config", config, "--policy", "random", "--episodes", 5, "--out", root / "random")
    cli("simulate", "--config", config, "--policy", "bba", "--episodes", 5, "--regime", "low", "--out", root / "bba")
    cli("train", "--config", config, "--arch", "c1r2", "--out", root / "train")
    cli("eval", "--config", config, "--checkpoint", root / "train" / "checkpoint.json", "--episodes", 5,
        "--out", root / "eval")
    cli("report", root / "random" / "metrics.csv", root / "bba" / "metrics.csv", root / "eval" / "metrics.csv",
        "--out", root / "report")
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_commands_are_deterministic(verdict, tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps(TINY))
    first = _run_all_commands(tmp_path / "a", config)
    second = _run_all_commands(tmp_path / "b", config)
    csvs = [p for p in first if p.suffix == ".csv"]
    differing = [str(p) for p in first if not filecmp.cmp(tmp_path / "a" / p, tmp_path / "b" / p, shallow=False)]
    ok = first == second and not differing and len(csvs) >= 9
    verdict(9, "determinism", ok, f"{len(first)} output files ({len(csvs)} CSV), differing: {differing}")
