"""Training objectives: assignment-based color distance, hue diversity,
emotion consistency, stop supervision and their weighted total.

All losses are torch-based. Public entry points accept palettes as
LchColor sequences or as ``(N, 3)`` tensors of (L, C, h); tensor inputs keep
their dtype and stay on the autograd tape, everything else is evaluated in
float64 and returned as a plain float.

The optimal color arrangement comes from a Hungarian solver. The chosen
permutation is treated as a constant during backprop: gradients flow through
the selected pairwise color differences only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .colorlab import LchColor
from .emotion import HEURISTIC_SCORE_SHIFT, OCTANT_ANGLES_DEG
from .errors import UsageError

_POW25_7 = 25.0 ** 7


@dataclass(frozen=True)
class LossWeights:
    lambda_color: float = 1.0
    lambda_diversity: float = 0.1
    lambda_emotion: float = 0.5
    lambda_stop: float = 0.2

    def __post_init__(self):
        for name in ("lambda_color", "lambda_diversity", "lambda_emotion", "lambda_stop"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")


@dataclass(frozen=True)
class Assignment:
    permutation: tuple
    total_cost: float


def _as_lch_tensor(colors, dtype=torch.float64) -> torch.Tensor:
    if isinstance(colors, torch.Tensor):
        if colors.ndim != 2 or colors.shape[-1] != 3:
            raise UsageError(f"expected (N, 3) LCh tensor, got {tuple(colors.shape)}")
        return colors
    rows = [(c.l, c.c, c.h) for c in colors]
    return torch.tensor(rows, dtype=dtype)


def lch_to_lab_t(lch: torch.Tensor) -> torch.Tensor:
    h = torch.deg2rad(lch[..., 2])
    return torch.stack(
        [lch[..., 0], lch[..., 1] * torch.cos(h), lch[..., 1] * torch.sin(h)], dim=-1
    )


def ciede2000_t(lch1: torch.Tensor, lch2: torch.Tensor) -> torch.Tensor:
    """Differentiable (a.e.) CIEDE2000 over LCh tensors, broadcasting on the
    leading dimensions. Matches colorlab.ciede2000 to float precision."""
    lab1, lab2 = lch_to_lab_t(lch1), lch_to_lab_t(lch2)
    l1, a1, b1 = lab1.unbind(-1)
    l2, a2, b2 = lab2.unbind(-1)

    def safe_hypot(x, y):
        # hypot's backward is NaN at the origin even behind a where-mask;
        # substitute x=1 there (the value is forced back to 0).
        zero = (x == 0) & (y == 0)
        r = torch.hypot(torch.where(zero, torch.ones_like(x), x), y)
        return torch.where(zero, torch.zeros_like(r), r)

    def safe_hue_deg(y, x):
        # atan2 gradient is likewise undefined at the origin.
        zero = (x == 0) & (y == 0)
        h = torch.rad2deg(torch.atan2(y, torch.where(zero, torch.ones_like(x), x))) % 360.0
        return torch.where(zero, torch.zeros_like(h), h)

    c1 = safe_hypot(a1, b1)
    c2 = safe_hypot(a2, b2)
    c_bar = 0.5 * (c1 + c2)
    c_bar7 = c_bar ** 7
    g = 0.5 * (1.0 - torch.sqrt(c_bar7 / (c_bar7 + _POW25_7)))
    a1p, a2p = (1.0 + g) * a1, (1.0 + g) * a2
    c1p = safe_hypot(a1p, b1)
    c2p = safe_hypot(a2p, b2)

    h1p = safe_hue_deg(b1, a1p)
    h2p = safe_hue_deg(b2, a2p)

    dlp = l2 - l1
    dcp = c2p - c1p

    dh = h2p - h1p
    dh = torch.where(dh > 180.0, dh - 360.0, dh)
    dh = torch.where(dh < -180.0, dh + 360.0, dh)
    chroma_prod = c1p * c2p
    dh = torch.where(chroma_prod == 0.0, torch.zeros_like(dh), dh)
    dbig_hp = 2.0 * torch.sqrt(chroma_prod + 1e-30) * torch.sin(torch.deg2rad(dh) / 2.0)

    l_bar = 0.5 * (l1 + l2)
    cp_bar = 0.5 * (c1p + c2p)

    hsum = h1p + h2p
    hdiff = torch.abs(h1p - h2p)
    hp_bar = torch.where(
        chroma_prod == 0.0,
        hsum,
        torch.where(
            hdiff <= 180.0,
            0.5 * hsum,
            torch.where(hsum < 360.0, 0.5 * (hsum + 360.0), 0.5 * (hsum - 360.0)),
        ),
    )

    rad = torch.deg2rad
    t = (
        1.0
        - 0.17 * torch.cos(rad(hp_bar - 30.0))
        + 0.24 * torch.cos(rad(2.0 * hp_bar))
        + 0.32 * torch.cos(rad(3.0 * hp_bar + 6.0))
        - 0.20 * torch.cos(rad(4.0 * hp_bar - 63.0))
    )
    dtheta = 30.0 * torch.exp(-(((hp_bar - 275.0) / 25.0) ** 2))
    cp_bar7 = cp_bar ** 7
    rc = 2.0 * torch.sqrt(cp_bar7 / (cp_bar7 + _POW25_7))
    lm50 = (l_bar - 50.0) ** 2
    sl = 1.0 + 0.015 * lm50 / torch.sqrt(20.0 + lm50)
    sc = 1.0 + 0.045 * cp_bar
    sh = 1.0 + 0.015 * cp_bar * t
    rt = -torch.sin(rad(2.0 * dtheta)) * rc

    fl = dlp / sl
    fc = dcp / sc
    fh = dbig_hp / sh
    # The sum is >= 0 mathematically (|rt| <= 2); clamp guards float dust so
    # identical inputs give exactly zero.
    return torch.sqrt(torch.clamp(fl * fl + fc * fc + fh * fh + rt * fc * fh, min=0.0))


def pairwise_ciede2000_t(gt: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
    """Cost matrix: entry (i, j) = dE00(gt_i, pred_j)."""
    return ciede2000_t(gt[:, None, :], pred[None, :, :])


def _hungarian_min_cost(cost: np.ndarray) -> float:
    """O(n^3) Hungarian (potentials form); returns the minimal total cost."""
    perm = _hungarian_perm(cost)
    return float(sum(cost[i, perm[i]] for i in range(cost.shape[0])))


def _hungarian_perm(cost: np.ndarray) -> list:
    n = cost.shape[0]
    INF = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    way = [0] * (n + 1)
    p = [0] * (n + 1)  # p[j] = row matched to column j (1-based)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0, delta, j1 = p[j0], INF, 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            p[j0] = p[way[j0]]
            j0 = way[j0]
    perm = [0] * n
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm


def optimal_assignment(cost) -> Assignment:
    """Globally minimal-cost bijection rows -> columns.

    Ties are broken toward the lexicographically smallest permutation by
    fixing rows in order to the smallest column that still allows an optimal
    completion (checked with Hungarian sub-solves).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
        raise UsageError(f"cost matrix must be square and non-empty, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise UsageError("cost matrix contains non-finite entries")
    n = c.shape[0]

    opt = _hungarian_min_cost(c)
    tol = 1e-9 * max(1.0, abs(opt))
    perm = []
    free_cols = list(range(n))
    running = 0.0
    for i in range(n):
        for idx, j in enumerate(free_cols):
            rest_rows = list(range(i + 1, n))
            rest_cols = free_cols[:idx] + free_cols[idx + 1 :]
            rest = c[np.ix_(rest_rows, rest_cols)] if rest_rows else np.zeros((0, 0))
            rest_cost = _hungarian_min_cost(rest) if rest.size else 0.0
            if running + c[i, j] + rest_cost <= opt + tol:
                perm.append(j)
                running += c[i, j]
                free_cols.pop(idx)
                break
        else:  # pragma: no cover - guarded by the Hungarian optimum
            raise AssertionError("no feasible completion found")
    total = float(sum(c[i, perm[i]] for i in range(n)))
    return Assignment(tuple(perm), total)


def color_distance_loss(pred, gt):
    """Mean CIEDE2000 between ground truth and optimally arranged predictions."""
    pred_t = _as_lch_tensor(pred)
    gt_t = _as_lch_tensor(gt, dtype=pred_t.dtype).to(pred_t.dtype)
    if pred_t.shape[0] != gt_t.shape[0]:
        raise UsageError(
            f"prediction and ground truth must match in length "
            f"({pred_t.shape[0]} vs {gt_t.shape[0]})"
        )
    cost = pairwise_ciede2000_t(gt_t, pred_t)
    assignment = optimal_assignment(cost.detach().cpu().double().numpy())
    idx = torch.as_tensor(assignment.permutation, dtype=torch.long)
    loss = cost[torch.arange(cost.shape[0]), idx].mean()
    return loss if isinstance(pred, torch.Tensor) else float(loss)


def diversity_loss(pred, circular: bool = False):
    """Negative mean pairwise hue gap; hues normalized to [0, 1] (h/360).

    ``circular=True`` measures gaps around the hue circle instead of on the
    line, i.e. min(|dh|, 1-|dh|).
    """
    pred_t = _as_lch_tensor(pred)
    n = pred_t.shape[0]
    if n < 2:
        raise UsageError("diversity loss needs at least 2 colors")
    h = pred_t[:, 2] / 360.0
    diff = torch.abs(h[:, None] - h[None, :])
    if circular:
        diff = torch.minimum(diff, 1.0 - diff)
    total = diff.sum()  # diagonal is zero; off-diagonal counted both ways
    loss = -total / (n * (n - 1))
    return loss if isinstance(pred, torch.Tensor) else float(loss)


def _cosine_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    na = torch.linalg.vector_norm(a)
    nb = torch.linalg.vector_norm(b)
    if float(na.detach()) == 0.0 or float(nb.detach()) == 0.0:
        raise UsageError("cosine similarity undefined for a zero-norm vector")
    return torch.dot(a, b) / (na * nb)


def emotion_consistency_loss(e_music, e_pred, e_gt):
    """2 - cos(E_music, E_pred) - cos(E_pred, E_gt); in [0, 4]."""
    tensor_in = isinstance(e_pred, torch.Tensor)
    ep = e_pred if tensor_in else torch.as_tensor(np.asarray(e_pred, dtype=np.float64))
    em = torch.as_tensor(np.asarray(e_music, dtype=np.float64)).to(ep.dtype)
    eg = torch.as_tensor(np.asarray(e_gt, dtype=np.float64)).to(ep.dtype)
    loss = 2.0 - _cosine_t(em, ep) - _cosine_t(ep, eg)
    return loss if tensor_in else float(loss)


def palette_emotion_t(lch: torch.Tensor) -> torch.Tensor:
    """Differentiable twin of emotion.heuristic_palette_emotion on an (N, 3)
    LCh tensor; identical formula, identical constants."""
    l, c, h = lch.unbind(-1)
    hr = torch.deg2rad(h)
    v = l.mean() / 50.0 - 1.0 + 0.3 * (torch.cos(hr) * c / 150.0).mean()
    a = c.mean() / 75.0 - 1.0
    angles = torch.deg2rad(torch.tensor(OCTANT_ANGLES_DEG, dtype=lch.dtype, device=lch.device))
    scores = torch.relu(v * torch.cos(angles) + a * torch.sin(angles))
    return scores + HEURISTIC_SCORE_SHIFT


def stop_loss(stop_logits, n_gt: int):
    """Mean binary cross-entropy of the stop head against (0, ..., 0, 1)."""
    tensor_in = isinstance(stop_logits, torch.Tensor)
    logits = stop_logits if tensor_in else torch.as_tensor(
        np.asarray(stop_logits, dtype=np.float64)
    )
    if logits.ndim != 1 or logits.shape[0] != n_gt + 1:
        raise UsageError(f"expected {n_gt + 1} stop logits, got {tuple(logits.shape)}")
    target = torch.zeros_like(logits)
    target[-1] = 1.0
    loss = torch.nn.functional.binary_cross_entropy_with_logits(logits, target)
    return loss if tensor_in else float(loss)


def total_loss(parts, weights: LossWeights):
    """lambda-weighted sum of (color, diversity, emotion, stop) parts."""
    color, diversity, emotion, stop = parts
    out = (
        weights.lambda_color * color
        + weights.lambda_diversity * diversity
        + weights.lambda_emotion * emotion
        + weights.lambda_stop * stop
    )
    return out if isinstance(out, torch.Tensor) else float(out)
