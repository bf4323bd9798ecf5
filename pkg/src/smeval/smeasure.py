"""Structure-measure: region-aware plus object-aware structural similarity.

The region term splits the image at the ground-truth foreground centroid
(recursively, for more than four blocks), scores every block with a
constant-free SSIM and weights the blocks by the share of foreground they
hold.  The object term compares foreground and background distributions of
the prediction against the ideal uniform 1 / uniform 0 of the ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .maps import MapError, as_binary, as_gray, check_same_shape, foreground_centroid

WEIGHTINGS = ("foreground", "area")

# equality tolerance for the means of two constant blocks
CONSTANT_MEAN_TOL = 1e-8


@dataclass(frozen=True)
class SMeasureParams:
    alpha: float = 0.5
    lam: float = 0.5
    k_blocks: int = 4
    weighting: str = "foreground"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        block_depth(self.k_blocks)
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")


class Block(NamedTuple):
    """Half-open pixel rectangle ``[r0, r1) x [c0, c1)`` with its weight."""

    r0: int
    r1: int
    c0: int
    c1: int
    weight: float

    @property
    def area(self) -> int:
        return (self.r1 - self.r0) * (self.c1 - self.c0)


class BlockPartition(NamedTuple):
    blocks: list

    @property
    def weights(self) -> list:
        return [b.weight for b in self.blocks]


class ObjectScores(NamedTuple):
    o_fg: float
    o_bg: float
    mu: float

    @property
    def score(self) -> float:
        return self.mu * self.o_fg + (1.0 - self.mu) * self.o_bg


def block_depth(k_blocks: int) -> int:
    """Number of recursive four-way splits needed for ``k_blocks`` blocks."""
    if not isinstance(k_blocks, (int, np.integer)) or k_blocks < 4:
        raise ValueError(f"k_blocks must be a power of 4 (>= 4), got {k_blocks!r}")
    depth, k = 0, int(k_blocks)
    while k > 1:
        if k % 4:
            raise ValueError(f"k_blocks must be a power of 4 (>= 4), got {k_blocks!r}")
        k //= 4
        depth += 1
    return depth


def _cut(center: float, size: int) -> int:
    # The cut falls right after the pixel holding the centroid: the first part
    # gets round(center + 1) rows/cols.  Clamped so both parts are non-empty
    # whenever the block is at least two pixels wide.
    cut = int(round(center + 1.0))
    if size < 2:
        return size
    return min(max(cut, 1), size - 1)


def _split(gt: np.ndarray, r0: int, r1: int, c0: int, c1: int) -> list:
    cr, cc = foreground_centroid(gt[r0:r1, c0:c1])
    rm = r0 + _cut(cr, r1 - r0)
    cm = c0 + _cut(cc, c1 - c0)
    quads = [(r0, rm, c0, cm), (r0, rm, cm, c1), (rm, r1, c0, cm), (rm, r1, cm, c1)]
    return [q for q in quads if q[1] > q[0] and q[3] > q[2]]


def partition_blocks(gt, k_blocks: int = 4, weighting: str = "foreground") -> BlockPartition:
    """Centroid-anchored recursive partition of the image into at most ``k_blocks`` blocks.

    Blocks that a one-pixel-wide parent cannot produce are dropped, so fewer
    than ``k_blocks`` blocks come back for very small images.
    """
    gt = as_binary(gt)
    depth = block_depth(k_blocks)
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    h, w = gt.shape
    rects = [(0, h, 0, w)]
    for _ in range(depth):
        rects = [q for rect in rects for q in _split(gt, *rect)]

    total_fg = int(np.count_nonzero(gt))
    blocks = []
    for r0, r1, c0, c1 in rects:
        if weighting == "foreground" and total_fg > 0:
            wk = np.count_nonzero(gt[r0:r1, c0:c1]) / total_fg
        else:
            wk = (r1 - r0) * (c1 - c0) / gt.size
        blocks.append(Block(r0, r1, c0, c1, float(wk)))
    return BlockPartition(blocks)


def _moments(v: np.ndarray) -> tuple[float, np.ndarray, bool]:
    m = float(v.mean())
    constant = bool(v.max() == v.min())
    return m, (np.zeros_like(v) if constant else v - m), constant


def ssim_block(x, y) -> float:
    """Constant-free SSIM of two equally sized blocks, in [-1, 1].

    With the stabilising constants dropped the SSIM product collapses to
    ``4 mx my sxy / ((mx^2 + my^2) (sx^2 + sy^2))``.  Where that is 0/0 or
    otherwise undefined the block is scored 1 if the blocks agree and 0 if
    they do not.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size == 0 or x.size != y.size:
        raise MapError(f"ssim_block needs equal non-empty inputs, got {x.size} and {y.size}")
    n = x.size
    mx, dx, const_x = _moments(x)
    my, dy, const_y = _moments(y)
    if const_x and const_y:
        return 1.0 if abs(mx - my) <= CONSTANT_MEAN_TOL else 0.0
    var_x = float(dx @ dx) / (n - 1)
    var_y = float(dy @ dy) / (n - 1)
    cov = float(dx @ dy) / (n - 1)
    num = 4.0 * mx * my * cov
    den = (mx * mx + my * my) * (var_x + var_y)
    if den == 0.0:
        return 1.0 if num == 0.0 and np.array_equal(x, y) else 0.0
    return min(1.0, max(-1.0, num / den))


def region_score(sm, gt, k_blocks: int = 4, weighting: str = "foreground") -> float:
    sm = as_gray(sm)
    gt = as_binary(gt)
    check_same_shape(sm, gt)
    gt_f = gt.astype(np.float64)
    total = 0.0
    for b in partition_blocks(gt, k_blocks, weighting).blocks:
        if b.weight == 0.0:
            continue
        total += b.weight * ssim_block(sm[b.r0:b.r1, b.c0:b.c1], gt_f[b.r0:b.r1, b.c0:b.c1])
    return total


def object_component(values, lam: float) -> float:
    """Similarity of a region to the ideal all-ones region: ``2m / (m^2 + 1 + 2 lam s)``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    n = v.size
    if n == 0:
        raise MapError("object_component needs a non-empty region")
    m = float(v.mean())
    s = 0.0
    if n > 1 and v.max() != v.min():
        d = v - m
        s = math.sqrt(float(d @ d) / (n - 1))
    return 2.0 * m / (m * m + 1.0 + 2.0 * lam * s)


def object_score(sm, gt, lam: float = 0.5) -> ObjectScores:
    sm = as_gray(sm)
    gt = as_binary(gt)
    check_same_shape(sm, gt)
    n_fg = int(np.count_nonzero(gt))
    if n_fg == 0 or n_fg == gt.size:
        raise MapError("object_score needs a ground truth with both foreground and background")
    o_fg = object_component(sm[gt], lam)
    o_bg = object_component(1.0 - sm[~gt], lam)
    return ObjectScores(o_fg=o_fg, o_bg=o_bg, mu=n_fg / gt.size)


def structure_measure(sm, gt, params: SMeasureParams | None = None) -> float:
    """Structure-measure of a gray prediction against a binary ground truth, in [0, 1]."""
    params = params or SMeasureParams()
    sm = as_gray(sm)
    gt = as_binary(gt)
    check_same_shape(sm, gt)
    n_fg = int(np.count_nonzero(gt))
    if n_fg == 0:
        return 1.0 - float(sm.mean())
    if n_fg == gt.size:
        return float(sm.mean())
    s_o = object_score(sm, gt, params.lam).score
    s_r = region_score(sm, gt, params.k_blocks, params.weighting)
    s = params.alpha * s_o + (1.0 - params.alpha) * s_r
    return min(1.0, max(0.0, s))
