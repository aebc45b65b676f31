"""Command-line front end: gen, simulate, train, eval and report.

Exit codes: 0 success, 1 user error (bad config, data or arguments),
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import report as rep
from .config import (
    RunConfig,
    build_env_config,
    build_train_config,
    interface_hash,
    load_config,
)
from .env import StreamingEnv, run_episode, write_trajectory
from .errors import EdgeVRError
from .media import MediaFactors, VideoGenSpec, generate_video, save_video
from .net import TraceGenSpec, generate_trace, save_trace
from .policy import make_policy
from .qoe import DualCoefficients, MetricsRow, write_metrics_csv
from .rl.checkpoint import load_checkpoint, save_checkpoint
from .rl.network import ArchitectureKind
from .rl.trainer import AgentPolicy, train, write_train_log
from .seeding import child_seed

log = logging.getLogger("edgevr")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, episodes: bool = False) -> None:
    p.add_argument("--config", type=Path, help="run config JSON (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="root seed, overrides the config")
    p.add_argument("--out", type=Path, help="output directory, overrides the config")
    p.add_argument("--regime", help="throughput regime tag, overrides the config")
    if episodes:
        p.add_argument("--episodes", type=int, default=50)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edgevr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="synthesize video ladders or throughput traces")
    g.add_argument("kind", choices=["video", "trace"])
    _common(g)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--gop-count", type=int)
    g.add_argument("--level-count", type=int)
    g.add_argument("--base-bits", type=float)
    g.add_argument("--level-growth", type=float)
    g.add_argument("--duration", type=float)
    g.add_argument("--interval", type=float)
    g.add_argument("--mean-bps", type=float)
    g.add_argument("--log-std", type=float)
    g.add_argument("--blockage-prob", type=float)
    g.add_argument("--blockage-factor", type=float)

    s = sub.add_parser("simulate", help="run a baseline or checkpoint and write metrics")
    _common(s, episodes=True)
    s.add_argument("--policy", help="bba | fixed | random | checkpoint:<path>")
    s.add_argument("--trajectory", action="store_true", help="also write a JSON-lines trajectory log")

    t = sub.add_parser("train", help="train an actor/critic and write a checkpoint")
    _common(t)
    t.add_argument("--arch", default="mtrc", choices=[k.value for k in ArchitectureKind])
    t.add_argument("--rounds", type=int, help="override the configured round count")

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    _common(e, episodes=True)
    e.add_argument("--checkpoint", type=Path)
    e.add_argument("--policy", help="checkpoint:<path> (alternative to --checkpoint)")

    r = sub.add_parser("report", help="aggregate metric CSVs into mean ± std tables")
    r.add_argument("files", nargs="+", type=Path)
    r.add_argument("--out", type=Path)
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(seed=args.seed, regime=getattr(args, "regime", None))
    return cfg


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    out = args.out or (Path(cfg.out) if cfg is not None and cfg.out else Path("."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _episode_seeds(cfg: RunConfig, count: int, tag: str) -> list[int]:
    if count < 1:
        raise UsageError("--episodes must be >= 1")
    return [child_seed(cfg.seed, tag, i) for i in range(count)]


def _metrics_rows(results, env: StreamingEnv) -> list[MetricsRow]:
    rows = []
    for ep, res in enumerate(results):
        for u, s in enumerate(res.summary):
            rows.append(MetricsRow(ep, u, s["video"], s["avq_db"], s["qv_db"], s["rt_s"], s["qoe"]))
    return rows


def _run_episodes(policy, env_cfg, duals, seeds, trajectory_path=None):
    env = StreamingEnv(env_cfg, duals)
    results = []
    fh = trajectory_path.open("w") if trajectory_path else None
    try:
        for s in seeds:
            res = run_episode(policy, env, s)
            if fh:
                write_trajectory(res, fh)
            results.append(res)
    finally:
        if fh:
            fh.close()
    return results, env


def _checkpoint_policy(path, env_cfg):
    model, duals, doc = load_checkpoint(path, expected_hash=interface_hash(env_cfg))
    return AgentPolicy(model, greedy=True), duals, doc


def cmd_gen(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    written = []
    if args.kind == "video":
        v = cfg.env.videos
        for i in range(args.count):
            spec = VideoGenSpec(
                gop_count=args.gop_count or v.gop_count,
                level_count=args.level_count or v.level_count,
                base_bitrate_bits=args.base_bits or v.base_bitrate_bits,
                level_growth=args.level_growth or v.level_growth,
                psnr_base_db=v.psnr_base_db,
                psnr_step_db=v.psnr_step_db,
                temporal_jitter=v.temporal_jitter,
                gop_duration_s=v.gop_duration_s,
                seed=child_seed(cfg.seed, "video", i),
                name=f"video{i}",
            )
            path = out / f"video{i}.csv"
            save_video(path, generate_video(spec), MediaFactors(cfg.env.alpha, cfg.env.beta))
            written.append(path)
    else:
        t = cfg.env.traces

        def pick(flag, default):
            return default if flag is None else flag

        for i in range(args.count):
            spec = TraceGenSpec(
                duration_s=pick(args.duration, t.duration_s),
                sample_interval_s=pick(args.interval, t.sample_interval_s),
                mean_bps=pick(args.mean_bps, t.mean_bps),
                log_std=pick(args.log_std, t.log_std),
                blockage_prob=pick(args.blockage_prob, t.blockage_prob),
                blockage_factor=pick(args.blockage_factor, t.blockage_factor),
                seed=child_seed(cfg.seed, "trace", i),
                loop=t.loop,
                name=f"trace{i}",
            )
            path = out / f"trace{i}.csv"
            save_trace(generate_trace(spec), path)
            written.append(path)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    env_cfg = build_env_config(cfg)
    out = _out_dir(args, cfg)
    name = args.policy or cfg.policy.name
    if name.startswith("checkpoint:"):
        policy, duals, _ = _checkpoint_policy(name.split(":", 1)[1], env_cfg)
        label = "checkpoint"
    else:
        policy = make_policy(name, cfg.policy.params if name == cfg.policy.name else {},
                             seed=child_seed(cfg.seed, "policy"))
        duals = DualCoefficients(cfg.train.mu0_init, cfg.train.mu1_init, cfg.train.dual_step)
        label = name
    seeds = _episode_seeds(cfg, args.episodes, "episode")
    traj = out / "trajectory.jsonl" if args.trajectory else None
    results, env = _run_episodes(policy, env_cfg, duals, seeds, traj)
    path = out / "metrics.csv"
    write_metrics_csv(_metrics_rows(results, env), path)
    rep.write_meta(path, policy=label, regime=cfg.regime, seed=cfg.seed, episodes=args.episodes)
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.rounds is not None:
        if args.rounds < 1:
            raise UsageError("--rounds must be >= 1")
        cfg.train.rounds = args.rounds
    env_cfg = build_env_config(cfg)
    train_cfg = build_train_config(cfg)
    out = _out_dir(args, cfg)

    def progress(rnd, duals, qoe):
        log.info("round %d/%d mean_qoe %.3f mu0 %.4f mu1 %.4f", rnd + 1, train_cfg.rounds, qoe, duals.mu0, duals.mu1)

    result = train(env_cfg, train_cfg, args.arch, progress=progress)
    ckpt = out / "checkpoint.json"
    save_checkpoint(ckpt, result.model, result.duals, interface_hash(env_cfg),
                    {"run_config": json.loads(cfg.to_json()), "arch": args.arch})
    write_train_log(result.log, out / "train_log.csv")
    print(ckpt)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    path = args.checkpoint
    if path is None and args.policy and args.policy.startswith("checkpoint:"):
        path = Path(args.policy.split(":", 1)[1])
    if path is None:
        raise UsageError("eval needs --checkpoint <path> or --policy checkpoint:<path>")
    env_cfg = build_env_config(cfg)
    policy, duals, doc = _checkpoint_policy(path, env_cfg)
    out = _out_dir(args, cfg)
    seeds = _episode_seeds(cfg, args.episodes, "episode")
    results, env = _run_episodes(policy, env_cfg, duals, seeds)
    mpath = out / "metrics.csv"
    write_metrics_csv(_metrics_rows(results, env), mpath)
    rep.write_meta(mpath, policy=doc["kind"], regime=cfg.regime, seed=cfg.seed, episodes=args.episodes)
    print(mpath)
    return EXIT_OK


def cmd_report(args) -> int:
    missing = [str(f) for f in args.files if not f.is_file()]
    if missing:
        raise UsageError(f"missing metric files: {missing}")
    rows = rep.build_report(args.files)
    print(rep.format_report(rows))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        rep.write_report_csv(rows, args.out / "report.csv")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (EdgeVRError, UsageError, OSError) as exc:
        print(f"edgevr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"edgevr {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
