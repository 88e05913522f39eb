"""Aggregate episode logs into per-policy, per-segment comparison tables."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .episode_log import find_logs, read_episode_log
from .metrics import (ate, improvement, path_svg, security,
                      trimmed_mean_improvement)
from .trainer import resolved_model


@dataclass(frozen=True)
class LogRow:
    """Metrics of one episode log."""

    path: Path
    algorithm: str
    mode: str
    segments: tuple
    episode: int
    ate_mean: float
    ate_std: float
    security: float
    proximity_steps: int
    collisions: int
    steps: int
    reached_terminal: bool


def analyze_log(path: str | Path, model_cache: dict | None = None) -> LogRow:
    log = read_episode_log(path)
    cache = model_cache if model_cache is not None else {}
    key = log.config_hash
    if key not in cache:
        cache[key] = resolved_model(log.header["config"])
    model = cache[key]
    trail = np.asarray(log.trail, dtype=float)
    err = ate(model, trail)
    sec = security([st["wall_distance"] for st in log.steps],
                   [st["collided"] for st in log.steps])
    return LogRow(
        path=Path(path), algorithm=log.header["algorithm"],
        mode=log.header.get("mode", "train"),
        segments=tuple(log.header["segments"]), episode=log.header["episode"],
        ate_mean=err.mean_mm, ate_std=err.std_mm, security=sec.score,
        proximity_steps=sec.proximity_steps, collisions=sec.collision_steps,
        steps=len(log.steps), reached_terminal=log.end["reached_terminal"],
    )


def analyze_dir(directory: str | Path) -> list:
    cache: dict = {}
    rows = []
    for path in find_logs(directory):
        rows.append(analyze_log(path, cache))
    if not rows:
        raise ValueError(f"no episode logs under {directory}")
    return rows


def group_rows(rows) -> dict:
    """(algorithm, segments) -> list of rows."""
    groups: dict = {}
    for row in rows:
        groups.setdefault((row.algorithm, row.segments), []).append(row)
    return groups


@dataclass(frozen=True)
class GroupSummary:
    algorithm: str
    segments: tuple
    episodes: int
    ate_mean: float
    ate_std: float
    security_mean: float
    collisions_mean: float
    steps_mean: float
    success_rate: float


def summarize_group(key, rows) -> GroupSummary:
    algorithm, segments = key
    ates = [r.ate_mean for r in rows]
    return GroupSummary(
        algorithm=algorithm, segments=segments, episodes=len(rows),
        ate_mean=float(np.mean(ates)), ate_std=float(np.std(ates)),
        security_mean=float(np.mean([r.security for r in rows])),
        collisions_mean=float(np.mean([r.collisions for r in rows])),
        steps_mean=float(np.mean([r.steps for r in rows])),
        success_rate=float(np.mean([r.reached_terminal for r in rows])),
    )


def text_table(summaries) -> str:
    header = ["policy", "segments", "eps", "ATE mm", "+/-", "security",
              "collisions", "steps", "success"]
    rows = [header]
    for s in summaries:
        rows.append([
            s.algorithm, "+".join(s.segments) or "all", str(s.episodes),
            f"{s.ate_mean:.3f}", f"{s.ate_std:.3f}", f"{s.security_mean:.4f}",
            f"{s.collisions_mean:.2f}", f"{s.steps_mean:.1f}",
            f"{s.success_rate:.2f}",
        ])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def csv_table(summaries) -> str:
    lines = ["policy,segments,episodes,ate_mean_mm,ate_std_mm,security,"
             "collisions_mean,steps_mean,success_rate"]
    for s in summaries:
        lines.append(",".join([
            s.algorithm, "+".join(s.segments) or "all", str(s.episodes),
            f"{s.ate_mean:.6f}", f"{s.ate_std:.6f}", f"{s.security_mean:.6f}",
            f"{s.collisions_mean:.6f}", f"{s.steps_mean:.6f}",
            f"{s.success_rate:.6f}",
        ]))
    return "\n".join(lines) + "\n"


def improvement_summary(summaries, baseline: str = "ppo",
                        treated: str = "hi-ppo") -> dict | None:
    """Per-segment-group error reduction of `treated` over `baseline`.

    Returns both trimming conventions when >= 3 shared groups exist: dropping
    the extreme improvements, and dropping the groups with extreme baseline
    error.
    """
    base = {s.segments: s for s in summaries if s.algorithm == baseline}
    trea = {s.segments: s for s in summaries if s.algorithm == treated}
    shared = [k for k in base if k in trea]
    if not shared:
        return None
    rows = []
    for k in shared:
        rows.append({
            "segments": "+".join(k) or "all",
            "baseline_ate": base[k].ate_mean,
            "treated_ate": trea[k].ate_mean,
            "improvement": improvement(base[k].ate_mean, trea[k].ate_mean),
        })
    out = {
        "baseline": baseline, "treated": treated, "rows": rows,
        "mean_improvement": float(np.mean([r["improvement"] for r in rows])),
    }
    if len(rows) >= 3:
        out["trimmed_by_improvement"] = trimmed_mean_improvement(
            [r["improvement"] for r in rows])
        by_base = sorted(rows, key=lambda r: r["baseline_ate"])
        out["trimmed_by_baseline_error"] = float(
            np.mean([r["improvement"] for r in by_base[1:-1]]))
    return out


def write_report(logs_dir: str | Path, out_dir: str | Path,
                 svg: bool = True) -> dict:
    """Analyze all logs and write table/CSV/JSON (and SVG paths) to out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = analyze_dir(logs_dir)
    groups = group_rows(rows)
    summaries = [summarize_group(k, v) for k, v in sorted(groups.items())]
    table = text_table(summaries)
    (out / "report.txt").write_text(table + "\n")
    (out / "report.csv").write_text(csv_table(summaries))
    imp = improvement_summary(summaries)
    payload = {
        "rows": [vars(r) | {"path": str(r.path), "segments": list(r.segments)}
                 for r in rows],
        "groups": [vars(s) | {"segments": list(s.segments)} for s in summaries],
        "improvement": imp,
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2, default=str) + "\n")
    svg_paths = []
    if svg:
        cache: dict = {}
        for key, group in sorted(groups.items()):
            algorithm, segments = key
            best = min(group, key=lambda r: r.ate_mean)
            log = read_episode_log(best.path)
            if log.config_hash not in cache:
                cache[log.config_hash] = resolved_model(log.header["config"])
            model = cache[log.config_hash]
            center = model.sample_centerline(2.0)
            name = f"path_{algorithm}_{'-'.join(segments) or 'all'}.svg"
            content = path_svg({"centerline": center,
                                algorithm: np.asarray(log.trail)},
                               f"{algorithm} on {'+'.join(segments) or 'all'}")
            (out / name).write_text(content)
            svg_paths.append(out / name)
    return {"rows": rows, "summaries": summaries, "improvement": imp,
            "table": table, "svg_paths": svg_paths}
