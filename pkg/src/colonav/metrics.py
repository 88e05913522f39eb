"""Evaluation metrics: trajectory error, navigation security, comparisons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ColonModel

PROXIMITY_D_MM = 5.0
PROXIMITY_WEIGHT = 0.3
COLLISION_WEIGHT = 0.7


@dataclass(frozen=True)
class TrajectoryError:
    mean_mm: float
    std_mm: float
    n_points: int


def ate(model: ColonModel, trail: np.ndarray) -> TrajectoryError:
    """Mean and population std of tip-to-centerline distances over a trail."""
    pts = np.atleast_2d(np.asarray(trail, dtype=float))
    if pts.size == 0 or len(pts) == 0:
        raise ValueError("empty trail")
    _, dist, _ = model.nearest(pts)
    return TrajectoryError(float(np.mean(dist)), float(np.std(dist)), len(pts))


@dataclass(frozen=True)
class SecurityScore:
    score: float
    proximity_steps: int
    collision_steps: int
    n_steps: int


def security(wall_distances, collisions, d_mm: float = PROXIMITY_D_MM,
             proximity_weight: float = PROXIMITY_WEIGHT,
             collision_weight: float = COLLISION_WEIGHT) -> SecurityScore:
    """1 minus the weighted rate of close-wall steps and collision steps.

    A collided step counts in both tallies; the score floors at 0 in theory
    only (weights sum to 1, so the raw value already lies in [0, 1]).
    """
    wall = np.asarray(wall_distances, dtype=float)
    col = np.asarray(collisions, dtype=bool)
    if wall.shape != col.shape or wall.ndim != 1:
        raise ValueError("wall_distances and collisions must be 1-d and equal length")
    n = len(wall)
    if n == 0:
        raise ValueError("empty step record")
    f = int(np.sum(wall < d_mm))
    c = int(np.sum(col))
    score = 1.0 - (proximity_weight * f / n + collision_weight * c / n)
    return SecurityScore(float(score), f, c, n)


def security_from_records(records, d_mm: float = PROXIMITY_D_MM) -> SecurityScore:
    """Security over per-step records carrying wall_distance and collided."""
    wall = [r.wall_distance for r in records]
    col = [r.collided for r in records]
    return security(wall, col, d_mm)


# ---------------------------------------------------------------------------
# cross-run comparison
# ---------------------------------------------------------------------------

def improvement(baseline: float, treated: float) -> float:
    """Relative error reduction: positive means `treated` is better (smaller)."""
    if baseline == 0:
        raise ValueError("baseline error is zero")
    return (baseline - treated) / baseline


def trimmed_mean_improvement(improvements) -> float:
    """Mean after dropping the single highest and single lowest value."""
    vals = sorted(float(v) for v in improvements)
    if len(vals) < 3:
        raise ValueError("need at least 3 values to trim both extremes")
    return float(np.mean(vals[1:-1]))


@dataclass(frozen=True)
class SegmentComparison:
    segment: str
    baseline_ate_mm: float
    treated_ate_mm: float
    improvement: float


@dataclass(frozen=True)
class ComparisonReport:
    segments: tuple[SegmentComparison, ...]
    mean_improvement: float
    trimmed_mean_improvement: float


def compare(segment_names, baseline_ate, treated_ate) -> ComparisonReport:
    """Per-segment error reduction plus plain and trimmed means."""
    if not (len(segment_names) == len(baseline_ate) == len(treated_ate)):
        raise ValueError("length mismatch")
    rows = tuple(
        SegmentComparison(name, float(b), float(t), improvement(b, t))
        for name, b, t in zip(segment_names, baseline_ate, treated_ate)
    )
    imps = [r.improvement for r in rows]
    return ComparisonReport(rows, float(np.mean(imps)),
                            trimmed_mean_improvement(imps))


# ---------------------------------------------------------------------------
# SVG plotting (keeps reports dependency-free)
# ---------------------------------------------------------------------------

def path_svg(paths: dict[str, np.ndarray], title: str,
             width: int = 640, height: int = 640) -> str:
    """Top-down (x, y) view of 3D paths, equal-aspect, as an SVG string."""
    colors = ["#888888", "#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    pad = 30
    pts = np.vstack([np.atleast_2d(np.asarray(p, dtype=float))[:, :2]
                     for p in paths.values()])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-9)

    def sxy(p):
        x = pad + (width - 2 * pad) * (p[0] - lo[0]) / span
        y = height - pad - (height - 2 * pad) * (p[1] - lo[1]) / span
        return f"{x:.1f},{y:.1f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    for k, (name, path) in enumerate(paths.items()):
        color = colors[k % len(colors)]
        coords = np.atleast_2d(np.asarray(path, dtype=float))[:, :2]
        pts_s = " ".join(sxy(p) for p in coords)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{pts_s}"/>')
        parts.append(f'<text x="{pad}" y="{38 + 14 * k}" fill="{color}" '
                     f'font-family="sans-serif" font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def polyline_svg(series: dict[str, list[float]], title: str,
                 width: int = 640, height: int = 360) -> str:
    """Simple multi-series line chart as a standalone SVG string."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    pad = 44
    all_vals = [v for vals in series.values() for v in vals if np.isfinite(v)]
    if not all_vals:
        all_vals = [0.0, 1.0]
    lo, hi = min(all_vals), max(all_vals)
    if hi - lo < 1e-12:
        hi = lo + 1.0
    n_max = max((len(v) for v in series.values()), default=1)

    def sx(i):
        return pad + (width - 2 * pad) * (i / max(n_max - 1, 1))

    def sy(v):
        return height - pad - (height - 2 * pad) * ((v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="#444"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="#444"/>',
        f'<text x="{pad - 6}" y="{sy(hi):.1f}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{hi:.3g}</text>',
        f'<text x="{pad - 6}" y="{sy(lo):.1f}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{lo:.3g}</text>',
    ]
    for k, (name, vals) in enumerate(series.items()):
        color = colors[k % len(colors)]
        pts = " ".join(f"{sx(i):.1f},{sy(v):.1f}" for i, v in enumerate(vals))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * k}" fill="{color}" '
                     f'font-family="sans-serif" font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
