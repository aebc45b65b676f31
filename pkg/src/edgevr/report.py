"""Aggregate metric CSVs into mean ± std tables by policy and regime, and by video."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .errors import ParseError
from .qoe import MetricsRow, read_metrics_csv

METRICS = ("avq_db", "qv_db", "rt_s", "qoe")
REPORT_HEADER = ("table", "policy", "regime", "video", "episodes", "rows") + tuple(
    f"{m}_{s}" for m in METRICS for s in ("mean", "std")
)


def meta_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".meta.json")


def write_meta(csv_path, **meta) -> None:
    meta_path(csv_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_meta(csv_path) -> dict:
    p = meta_path(csv_path)
    if not p.is_file():
        return {"policy": Path(csv_path).stem, "regime": "unknown"}
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(p, exc.lineno, exc.msg) from exc


def mean_std(values) -> tuple[float, float]:
    """Exact-arithmetic mean and population standard deviation, rounded once."""
    xs = [Fraction(float(v)) for v in values]
    n = len(xs)
    mu = sum(xs) / n
    var = sum((x - mu) ** 2 for x in xs) / n
    return float(mu), math.sqrt(float(var))


@dataclass(frozen=True)
class ReportRow:
    table: str
    policy: str
    regime: str
    video: str
    episodes: int
    rows: int
    stats: dict  # metric -> (mean, std)


def _episode_means(rows: list[MetricsRow]) -> dict[int, dict[str, float]]:
    """Average each metric over the users of every episode."""
    by_ep: dict[int, list[MetricsRow]] = defaultdict(list)
    for r in rows:
        by_ep[r.episode].append(r)
    return {
        ep: {m: float(sum(Fraction(getattr(r, m)) for r in rs) / len(rs)) for m in METRICS}
        for ep, rs in sorted(by_ep.items())
    }


def _row(table, policy, regime, video, rows) -> ReportRow:
    per_ep = _episode_means(rows)
    stats = {m: mean_std([e[m] for e in per_ep.values()]) for m in METRICS}
    return ReportRow(table, policy, regime, video, len(per_ep), len(rows), stats)


def build_report(files) -> list[ReportRow]:
    grouped: dict[tuple[str, str], list[MetricsRow]] = defaultdict(list)
    for f in files:
        meta = read_meta(f)
        grouped[(str(meta.get("policy", "")), str(meta.get("regime", "")))].extend(read_metrics_csv(f))
    out = []
    for (policy, regime), rows in sorted(grouped.items()):
        out.append(_row("regime", policy, regime, "*", rows))
    for (policy, regime), rows in sorted(grouped.items()):
        by_video: dict[str, list[MetricsRow]] = defaultdict(list)
        for r in rows:
            by_video[r.video].append(r)
        for video, vrows in sorted(by_video.items()):
            out.append(_row("video", policy, regime, video, vrows))
    return out


def write_report_csv(rows: list[ReportRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in rows:
            vals = [repr(float(x)) for m in METRICS for x in r.stats[m]]
            w.writerow([r.table, r.policy, r.regime, r.video, r.episodes, r.rows] + vals)


def format_report(rows: list[ReportRow]) -> str:
    lines = []
    for table, title in (("regime", "By policy and regime"), ("video", "By video")):
        sel = [r for r in rows if r.table == table]
        if not sel:
            continue
        lines.append(title)
        lines.append(f"{'policy':<16}{'regime':<10}{'video':<12}{'eps':>5}  "
                     f"{'PSNR (dB)':>16}{'QV (dB)':>16}{'RT (s)':>16}{'QoE':>16}")
        for r in sel:
            cells = "".join(f"{r.stats[m][0]:>9.3f} ±{r.stats[m][1]:>5.2f}" for m in METRICS)
            lines.append(f"{r.policy:<16}{r.regime:<10}{r.video:<12}{r.episodes:>5}  {cells}")
        lines.append("")
    return "\n".join(lines)
