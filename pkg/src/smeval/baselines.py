"""Pixel-wise comparison measures: F-beta and its weighted form (Fbw), plus threshold-sweep curves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .maps import ConfusionCounts, MapError, as_binary, as_gray, check_same_shape

ROC = "roc"
PR = "precision-recall"


class Curve(NamedTuple):
    points: np.ndarray  # (n, 2) array of (x, y)
    kind: str


@dataclass(frozen=True)
class FbwParams:
    beta_sq: float = 1.0
    dependency_sigma: float = 5.0
    dependency_kernel_radius: int = 3
    importance_decay: float = 5.0

    def __post_init__(self):
        for name in ("beta_sq", "dependency_sigma", "dependency_kernel_radius", "importance_decay"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def f_beta(counts: ConfusionCounts, beta_sq: float = 1.0) -> float:
    if beta_sq <= 0:
        raise ValueError(f"beta_sq must be positive, got {beta_sq}")
    tp, _, fp, fn = counts
    if tp == 0:
        return 0.0
    p = tp / (tp + fp)
    r = tp / (tp + fn)
    return (1.0 + beta_sq) * p * r / (beta_sq * p + r)


def _sweep(sm, gt, num_thresholds: int):
    """True/false positive counts at thresholds ``j / (num_thresholds - 1)``."""
    sm = as_gray(sm)
    gt = as_binary(gt)
    check_same_shape(sm, gt)
    if num_thresholds < 2:
        raise ValueError("num_thresholds must be >= 2")
    n_fg = int(np.count_nonzero(gt))
    n_bg = gt.size - n_fg
    if n_fg == 0 or n_bg == 0:
        raise MapError("curves need a ground truth with both foreground and background")
    t = np.arange(num_thresholds) / (num_thresholds - 1)
    fg_vals = np.sort(sm[gt])
    bg_vals = np.sort(sm[~gt])
    # count of values >= t
    tp = n_fg - np.searchsorted(fg_vals, t, side="left")
    fp = n_bg - np.searchsorted(bg_vals, t, side="left")
    return tp, fp, n_fg, n_bg


def roc_curve(sm, gt, num_thresholds: int = 256) -> Curve:
    tp, fp, n_fg, n_bg = _sweep(sm, gt, num_thresholds)
    pts = np.column_stack([fp / n_bg, tp / n_fg])
    pts = np.vstack([[0.0, 0.0], pts, [1.0, 1.0]])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    return Curve(pts[order], ROC)


def pr_curve(sm, gt, num_thresholds: int = 256) -> Curve:
    """Recall/precision points of the threshold sweep, sorted by recall.

    Thresholds that select no pixel at all get precision 1.
    """
    tp, fp, n_fg, _ = _sweep(sm, gt, num_thresholds)
    predicted = tp + fp
    precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    pts = np.column_stack([tp / n_fg, precision])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    return Curve(pts[order], PR)


def auc(curve: Curve) -> float:
    if curve.kind != ROC:
        raise ValueError(f"auc needs a roc curve, got {curve.kind!r}")
    x, y = curve.points[:, 0], curve.points[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def average_precision(curve: Curve, num_recall_points: int = 11) -> float:
    """Mean interpolated precision over an evenly spaced recall grid.

    Interpolated precision at recall r is the best precision among operating
    points with recall >= r.  Operating points with zero recall are left out;
    they carry no information about the foreground (and the no-prediction
    points have precision 1 only by convention).
    """
    if curve.kind != PR:
        raise ValueError(f"average_precision needs a precision-recall curve, got {curve.kind!r}")
    if num_recall_points < 2:
        raise ValueError("num_recall_points must be >= 2")
    pts = curve.points[curve.points[:, 0] > 0]
    if pts.size == 0:
        return 0.0
    order = np.argsort(pts[:, 0], kind="stable")
    recall, precision = pts[order, 0], pts[order, 1]
    # running max from the right: best precision at recall >= recall[i]
    best = np.maximum.accumulate(precision[::-1])[::-1]
    # j / (n - 1) matches recalls such as tp / pos exactly; linspace can overshoot by one ulp
    grid = np.arange(num_recall_points) / (num_recall_points - 1)
    idx = np.searchsorted(recall, grid, side="left")
    interp = np.where(idx < recall.size, best[np.minimum(idx, recall.size - 1)], 0.0)
    return float(interp.mean())


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Normalised, truncated 2-D Gaussian of size ``2 * radius + 1``."""
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    g[g < np.finfo(np.float64).eps * g.max()] = 0.0
    return g / g.sum()


def _nearest_offsets(max_sq: int) -> list:
    lim = math.isqrt(max_sq)
    offs = [(dr, dc) for dr in range(-lim, lim + 1) for dc in range(-lim, lim + 1)
            if dr * dr + dc * dc <= max_sq]
    # equal distances resolve to the lowest (row, col)
    return sorted(offs, key=lambda o: (o[0] ** 2 + o[1] ** 2, o[0], o[1]))


def _propagate_fg_errors(err: np.ndarray, gt: np.ndarray, radius: int) -> np.ndarray:
    """Give every background pixel near the foreground the error of its nearest foreground pixel.

    Only background pixels within ``radius`` (Chebyshev) of the foreground
    can reach a foreground pixel through the dependency kernel, so the rest
    are left at zero.  Ties go to the lowest (row, col).
    """
    h, w = gt.shape
    out = np.where(gt, err, 0.0)
    near = ndimage.binary_dilation(gt, structure=np.ones((2 * radius + 1,) * 2, bool)) & ~gt
    rows, cols = np.nonzero(near)
    if rows.size == 0:
        return out
    for dr, dc in _nearest_offsets(2 * radius * radius):
        if rows.size == 0:
            break
        rr, cc = rows + dr, cols + dc
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        hit = np.zeros(rows.size, bool)
        hit[ok] = gt[rr[ok], cc[ok]]
        out[rows[hit], cols[hit]] = err[rr[hit], cc[hit]]
        rows, cols = rows[~hit], cols[~hit]
    return out


def fbw(sm, gt, params: FbwParams | None = None) -> float:
    """Weighted F-beta: pixel errors reweighted by neighbourhood dependency and location importance.

    Foreground errors are replaced by their Gaussian-smoothed value where that
    is smaller (background pixels contribute the error of their nearest
    foreground pixel to the smoothing); background errors grow with distance
    from the foreground as ``2 - exp(ln(0.5) / decay * d)``.
    """
    params = params or FbwParams()
    sm = as_gray(sm)
    gt = as_binary(gt)
    check_same_shape(sm, gt)
    n_fg = int(np.count_nonzero(gt))
    if n_fg == 0:
        raise MapError("fbw needs a ground truth with at least one foreground pixel")
    radius = int(params.dependency_kernel_radius)

    err = np.abs(sm - gt)
    et = _propagate_fg_errors(err, gt, radius)
    kernel = gaussian_kernel(params.dependency_sigma, radius)
    smoothed = ndimage.correlate(et, kernel, mode="constant", cval=0.0)
    dependent = np.where(gt & (smoothed < err), smoothed, err)

    dist = ndimage.distance_transform_edt(~gt)
    importance = np.where(gt, 1.0, 2.0 - np.exp(math.log(0.5) / params.importance_decay * dist))
    ew = dependent * importance

    tp_w = n_fg - float(ew[gt].sum())
    fp_w = float(ew[~gt].sum())
    recall = 1.0 - float(ew[gt].mean())
    precision = tp_w / (tp_w + fp_w) if tp_w + fp_w > 0 else 0.0
    denom = params.beta_sq * precision + recall
    if denom <= 0 or precision <= 0 or recall <= 0:
        return 0.0
    return (1.0 + params.beta_sq) * precision * recall / denom
