"""Evaluation metrics for generated palettes.

Color-space metrics (Div, Multi, CHO, BC) work on the Cartesian embedding of
CIELCh, i.e. CIELAB points (L, C*cos h, C*sin h); convex hulls over an angular
coordinate would be ill-defined. Emotion metrics (ES, JS) compare against the
clip's emotion vector through a palette-emotion provider.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from scipy.spatial import ConvexHull, QhullError

from .colorlab import LchColor, Palette, canonical_order, ciede2000
from .emotion import (
    cosine_similarity,
    heuristic_palette_emotion,
    js_divergence,
    to_distribution,
)
from .errors import DataError, UsageError
from .losses import optimal_assignment

HULL_EPSILON = 1.0
MIN_HULL_SAMPLES = 1000

BC_BINS = 8
BC_RANGES = ((0.0, 100.0), (0.0, 150.0), (0.0, 360.0))


@dataclass(frozen=True)
class MetricReport:
    div: Optional[float]
    multi: Optional[float]
    cho: Optional[float]
    bc: Optional[float]
    es: Optional[float]
    js: Optional[float]


def palette_div(p: Palette) -> float:
    """Mean pairwise CIEDE2000 over all unordered color pairs."""
    n = len(p)
    if n < 2:
        raise UsageError("diversity needs at least 2 colors")
    total = sum(ciede2000(a, b) for a, b in itertools.combinations(p.colors, 2))
    return total / (n * (n - 1) / 2)


def _assigned_mean_de(p1: Palette, p2: Palette) -> float:
    """Optimal-assignment mean dE00; unequal lengths are compared on the
    min length after canonical ordering."""
    c1, c2 = list(p1.colors), list(p2.colors)
    if len(c1) != len(c2):
        n = min(len(c1), len(c2))
        c1 = list(canonical_order(p1).colors)[:n]
        c2 = list(canonical_order(p2).colors)[:n]
    cost = np.array([[ciede2000(a, b) for b in c2] for a in c1])
    assignment = optimal_assignment(cost)
    return assignment.total_cost / len(c1)


def multimodality(palettes) -> float:
    """Mean assigned dE00 over unordered palette pairs from one clip."""
    palettes = list(palettes)
    if len(palettes) < 2:
        raise UsageError("multimodality needs at least 2 palettes")
    pairs = list(itertools.combinations(palettes, 2))
    return sum(_assigned_mean_de(a, b) for a, b in pairs) / len(pairs)


# -- convex hull overlap -------------------------------------------------------


def _lab_points(p: Palette) -> np.ndarray:
    h = np.radians([c.h for c in p.colors])
    c = np.array([c.c for c in p.colors])
    l = np.array([c.l for c in p.colors])
    return np.column_stack([l, c * np.cos(h), c * np.sin(h)])


class _HullBody:
    """Point-membership oracle for a palette's hull; degenerate (rank < 3)
    point sets become their hull Minkowski-expanded by HULL_EPSILON."""

    def __init__(self, points: np.ndarray):
        self.points = points
        rank = np.linalg.matrix_rank(points - points.mean(axis=0), tol=1e-9)
        self.degenerate = rank < 3
        if not self.degenerate:
            try:
                hull = ConvexHull(points)
                self.equations = hull.equations
            except QhullError:
                self.degenerate = True
        if self.degenerate:
            self._subsets = self._projection_subsets(points)
            self.bbox_min = points.min(axis=0) - HULL_EPSILON
            self.bbox_max = points.max(axis=0) + HULL_EPSILON
        else:
            self.bbox_min = points.min(axis=0)
            self.bbox_max = points.max(axis=0)

    @staticmethod
    def _projection_subsets(points):
        # Nearest point on a rank<=2 hull lies in a simplex of <= 3 vertices;
        # precompute projections for every subset of that size.
        subsets = []
        n = len(points)
        for size in (1, 2, 3):
            for idx in itertools.combinations(range(n), size):
                p0 = points[idx[0]]
                basis = points[list(idx[1:])] - p0  # (size-1, 3)
                if basis.size:
                    gram = basis @ basis.T
                    ginv = np.linalg.pinv(gram)
                else:
                    ginv = None
                subsets.append((p0, basis, ginv))
        return subsets

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Vectorized membership for query points x of shape (m, 3)."""
        if not self.degenerate:
            # hull.equations rows are (normal, offset) with inside <= 0
            values = x @ self.equations[:, :3].T + self.equations[:, 3]
            return values.max(axis=1) <= 1e-9
        best = np.full(x.shape[0], np.inf)
        for p0, basis, ginv in self._subsets:
            d = x - p0
            if basis.size == 0:
                dist2 = (d**2).sum(axis=1)
                best = np.minimum(best, dist2)
                continue
            lam = (d @ basis.T) @ ginv  # (m, k-1)
            valid = (lam >= -1e-9).all(axis=1) & (lam.sum(axis=1) <= 1.0 + 1e-9)
            proj = p0 + lam @ basis
            dist2 = ((x - proj) ** 2).sum(axis=1)
            best = np.where(valid, np.minimum(best, dist2), best)
        return best <= HULL_EPSILON**2


def convex_hull_overlap(p1: Palette, p2: Palette, samples: int = 100_000, seed: int = 0) -> float:
    """Monte Carlo IoU of the two palettes' hulls in Cartesian Lab space."""
    if samples < MIN_HULL_SAMPLES:
        raise UsageError(f"need at least {MIN_HULL_SAMPLES} samples, got {samples}")
    body1 = _HullBody(_lab_points(p1))
    body2 = _HullBody(_lab_points(p2))
    lo = np.minimum(body1.bbox_min, body2.bbox_min)
    hi = np.maximum(body1.bbox_max, body2.bbox_max)
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, size=(samples, 3))
    in1 = body1.contains(x)
    in2 = body2.contains(x)
    union = np.count_nonzero(in1 | in2)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(in1 & in2) / union)


# -- histogram similarity --------------------------------------------------------


def _histogram(p: Palette) -> np.ndarray:
    hist = np.zeros((BC_BINS, BC_BINS, BC_BINS))
    for color in p.colors:
        idx = []
        for value, (lo, hi) in zip(color.as_tuple(), BC_RANGES):
            frac = (value - lo) / (hi - lo)
            idx.append(min(BC_BINS - 1, int(frac * BC_BINS)))
        hist[tuple(idx)] += 1.0 / len(p)
    return hist


def bhattacharyya(p1: Palette, p2: Palette) -> float:
    """Sum over bins of sqrt(p*q) on 8x8x8 (L, C, h) histograms; in [0, 1]."""
    return float(np.sqrt(_histogram(p1) * _histogram(p2)).sum())


def emotion_similarity(music_ev, palette: Palette, provider=heuristic_palette_emotion) -> float:
    """Cosine similarity between the clip's emotion vector and the palette's."""
    return cosine_similarity(music_ev, provider(palette))


# -- evaluation driver -------------------------------------------------------------


@dataclass(frozen=True)
class EvalItem:
    clip_id: str
    features: np.ndarray
    music_emotion: np.ndarray
    gt_palette: Optional[Palette] = None


CSV_COLUMNS = ("clip_id", "div", "multi", "cho", "bc", "es", "js")


def evaluate(
    items,
    model,
    k: int,
    seed: int,
    sigma: Optional[float] = None,
    hull_samples: int = 100_000,
    provider=heuristic_palette_emotion,
    compare_to_gt: bool = False,
):
    """Generate ``k`` palettes per clip and score them.

    Returns ``(rows, report)``: one dict per clip (ascending clip id) plus the
    aggregate MetricReport. With ``k == 1`` the cross-sample metrics (multi,
    cho, bc) are reported absent. ``compare_to_gt`` switches cho/bc to compare
    each generation against the ground-truth palette instead of within-clip
    pairs. Deterministic given (items, model, k, seed, sigma).
    """
    items = sorted(items, key=lambda it: it.clip_id)
    if not items:
        raise DataError("cannot evaluate an empty dataset")
    if k < 1:
        raise UsageError("k must be >= 1")
    if sigma is None:
        sigma = model.config.noise_sigma
    if compare_to_gt and any(it.gt_palette is None for it in items):
        raise DataError("compare_to_gt requires a ground-truth palette per clip")

    rows = []
    for clip_index, item in enumerate(items):
        palettes = []
        for j in range(k):
            gen = torch.Generator().manual_seed(seed + 100_000 * clip_index + j)
            palettes.append(model.generate(item.features, sigma, gen))

        div = float(np.mean([palette_div(p) for p in palettes]))
        es = float(np.mean([emotion_similarity(item.music_emotion, p, provider) for p in palettes]))
        music_dist = to_distribution(item.music_emotion)
        js = float(
            np.mean([js_divergence(music_dist, to_distribution(provider(p))) for p in palettes])
        )

        multi = cho = bc = None
        if compare_to_gt:
            pairs = [(p, item.gt_palette) for p in palettes]
        else:
            pairs = list(itertools.combinations(palettes, 2))
        if k >= 2:
            multi = multimodality(palettes)
        if pairs and (k >= 2 or compare_to_gt):
            cho = float(
                np.mean(
                    [
                        convex_hull_overlap(
                            a, b, samples=hull_samples, seed=seed + 7_000_000 + 997 * clip_index + i
                        )
                        for i, (a, b) in enumerate(pairs)
                    ]
                )
            )
            bc = float(np.mean([bhattacharyya(a, b) for a, b in pairs]))

        rows.append(
            {
                "clip_id": item.clip_id,
                "div": div,
                "multi": multi,
                "cho": cho,
                "bc": bc,
                "es": es,
                "js": js,
            }
        )

    def agg(name):
        values = [row[name] for row in rows if row[name] is not None]
        return float(np.mean(values)) if values else None

    report = MetricReport(
        div=agg("div"), multi=agg("multi"), cho=agg("cho"), bc=agg("bc"),
        es=agg("es"), js=agg("js"),
    )
    return rows, report


def write_metrics_csv(path, rows, report: MetricReport) -> None:
    """Fixed column order, one row per clip, aggregate row last; absent
    metrics serialize as empty fields."""

    def fmt(value):
        return "" if value is None else repr(value)

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join([row["clip_id"]] + [fmt(row[c]) for c in CSV_COLUMNS[1:]]) + "\n")
        fh.write(
            ",".join(["aggregate"] + [fmt(getattr(report, c)) for c in CSV_COLUMNS[1:]]) + "\n"
        )
