"""Map loading and the pixel statistics shared by all measures.

Gray maps are 2-D ``float64`` arrays with values in [0, 1]; binary maps are
2-D ``bool`` arrays (True = foreground).  Everything here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError


class MapError(ValueError):
    """Raised for unreadable images and malformed or mismatched maps."""


class ConfusionCounts(NamedTuple):
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class RegionStats:
    mean: float
    stddev: float
    covariance: Optional[float] = None


def as_gray(values) -> np.ndarray:
    sm = np.asarray(values, dtype=np.float64)
    if sm.ndim != 2 or sm.size == 0:
        raise MapError(f"gray map must be a non-empty 2-D array, got shape {sm.shape}")
    if not np.all((sm >= 0.0) & (sm <= 1.0)):
        raise MapError("gray map values must lie in [0, 1]")
    return sm


def as_binary(values) -> np.ndarray:
    gt = np.asarray(values)
    if gt.ndim != 2 or gt.size == 0:
        raise MapError(f"binary map must be a non-empty 2-D array, got shape {gt.shape}")
    if gt.dtype != np.bool_:
        gt = gt > 0.5
    return gt


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MapError(f"dimension mismatch: {a.shape} vs {b.shape}")


def read_raster(path) -> np.ndarray:
    """Decode an image file to a 2-D uint8 array (colour converted by BT.601 luma)."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("L", "1", "P", "LA", "RGB", "RGBA", "CMYK", "YCbCr"):
                # BT.601 luma for colour inputs
                img = img.convert("L")
            elif img.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise MapError(f"{path}: only 8-bit rasters are supported (mode {img.mode})")
            else:
                img = img.convert("L")
            arr = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise MapError(f"{path}: no such file") from exc
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise MapError(f"{path}: cannot decode image ({exc})") from exc
    if arr.ndim != 2 or arr.size == 0:
        raise MapError(f"{path}: zero-size image")
    return arr


def load_gray_map(path) -> np.ndarray:
    """Load an 8-bit raster as a gray map, each byte ``p`` mapped to ``p / 255``."""
    return read_raster(path).astype(np.float64) / 255.0


def load_binary_map(path, threshold: float = 0.5) -> np.ndarray:
    return load_gray_map(path) >= threshold


def save_map(path, m: np.ndarray) -> None:
    """Write a gray or binary map as an 8-bit PNG (or whatever the suffix says)."""
    m = np.asarray(m)
    if m.dtype == np.bool_:
        data = np.where(m, 255, 0).astype(np.uint8)
    else:
        data = np.rint(np.clip(m, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    check_same_shape(pred, gt)
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp=tp, tn=gt.size - tp - fp - fn, fp=fp, fn=fn)


def threshold_map(sm: np.ndarray, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise MapError(f"threshold must lie in [0, 1], got {t}")
    return np.asarray(sm) >= t


def foreground_centroid(gt: np.ndarray) -> tuple[float, float]:
    """Mean (row, col) of the foreground pixels; the image center if there are none."""
    gt = np.asarray(gt, dtype=bool)
    h, w = gt.shape
    rows, cols = np.nonzero(gt)
    if rows.size == 0:
        return (h - 1) / 2.0, (w - 1) / 2.0
    return float(rows.mean()), float(cols.mean())


def invert(m: np.ndarray) -> np.ndarray:
    return 1.0 - np.asarray(m, dtype=np.float64)


def region_stats(values: Sequence[float], partner: Optional[Sequence[float]] = None) -> RegionStats:
    """Mean, standard deviation and (optionally) covariance, all with the n-1 divisor.

    A single sample has zero spread by definition.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    n = x.size
    if n == 0:
        raise MapError("region_stats needs at least one value")
    mx = x.mean()
    dx = x - mx
    var = float(dx @ dx) / (n - 1) if n > 1 else 0.0
    cov = None
    if partner is not None:
        y = np.asarray(partner, dtype=np.float64).ravel()
        if y.size != n:
            raise MapError(f"length mismatch: {n} vs {y.size}")
        cov = float(dx @ (y - y.mean())) / (n - 1) if n > 1 else 0.0
    return RegionStats(mean=float(mx), stddev=float(np.sqrt(var)), covariance=cov)
