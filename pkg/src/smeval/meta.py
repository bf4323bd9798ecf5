"""Meta-measures: protocols that score an evaluation measure itself.

1. application ranking   -- agreement with an application's preference order
2. generic vs. state of the art -- how often a content-blind map beats the models
3. ground-truth switch   -- how often a wrong GT raises a good map's score
4. annotation errors     -- rank stability under slightly perturbed GTs
5. rank distance         -- where one measure's favourite sits under another

Every random draw comes from a generator seeded with ``(seed, index)`` so a
serial and a parallel run give identical results.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .maps import as_binary

Measure = Callable[[np.ndarray, np.ndarray], float]

PERTURB_MODES = ("dilate", "erode", "open", "close", "mixed")
TIE_POLICIES = ("strict", "count")


class MetaError(ValueError):
    pass


class ConstantRankWarning(UserWarning):
    """Spearman's rho is undefined for an all-tied ranking; 0 is used instead."""


@dataclass
class ScoreMatrix:
    image_ids: list
    model_ids: list
    scores: np.ndarray

    def __post_init__(self):
        self.image_ids = [str(i) for i in self.image_ids]
        self.model_ids = [str(m) for m in self.model_ids]
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(len(self.image_ids), len(self.model_ids))
        if len(set(self.image_ids)) != len(self.image_ids):
            raise MetaError("duplicate image ids in score matrix")
        if len(set(self.model_ids)) != len(self.model_ids):
            raise MetaError("duplicate model ids in score matrix")
        if not np.all(np.isfinite(self.scores)):
            raise MetaError("score matrix has missing or non-finite entries")

    def row(self, image_id: str) -> np.ndarray:
        return self.scores[self.image_ids.index(image_id)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", *self.model_ids])
        for image_id, row in zip(self.image_ids, self.scores):
            writer.writerow([image_id, *(format(float(v), ".17g") for v in row)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "ScoreMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or len(rows[0]) < 2:
            raise MetaError("score CSV needs a header with at least one model column")
        header, body = rows[0], [r for r in rows[1:] if r]
        image_ids, scores = [], []
        for lineno, r in enumerate(body, start=2):
            if len(r) != len(header):
                raise MetaError(f"score CSV line {lineno}: expected {len(header)} fields, got {len(r)}")
            image_ids.append(r[0])
            try:
                scores.append([float(v) for v in r[1:]])
            except ValueError as exc:
                raise MetaError(f"score CSV line {lineno}: {exc}") from exc
        return cls(image_ids, header[1:], np.array(scores).reshape(len(image_ids), len(header) - 1))

    @classmethod
    def read_csv(cls, path) -> "ScoreMatrix":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


@dataclass
class MetaResult:
    mm_id: int
    value: float
    seed: int = 0
    per_image: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mm_id": self.mm_id,
            "value": self.value,
            "seed": self.seed,
            "extra": self.extra,
            "warnings": self.warnings,
            "per_image": self.per_image,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def rank_scores(scores: Sequence[float]) -> np.ndarray:
    """Rank 1 = highest score; tied scores share their average rank."""
    return rankdata(-np.asarray(scores, dtype=np.float64), method="average")


def rank_matrix(matrix: ScoreMatrix) -> np.ndarray:
    return np.vstack([rank_scores(row) for row in matrix.scores]) if matrix.image_ids else np.empty((0, 0))


def _rho(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    if a.size != b.size:
        raise MetaError(f"rank vectors differ in length: {a.size} vs {b.size}")
    if a.size < 2:
        raise MetaError("spearman_rho needs at least two ranked items")
    da, db = a - a.mean(), b - b.mean()
    ssa, ssb = float(da @ da), float(db @ db)
    if ssa == 0.0 or ssb == 0.0:
        return 0.0, True
    return float(np.clip((da @ db) / math.sqrt(ssa * ssb), -1.0, 1.0)), False


def spearman_rho(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson correlation of two (tie-averaged) rank vectors.

    An all-tied vector has no defined correlation: 0 is returned and a
    :class:`ConstantRankWarning` is issued.
    """
    rho, constant = _rho(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    if constant:
        warnings.warn("constant rank vector; spearman_rho taken as 0", ConstantRankWarning, stacklevel=2)
    return rho


def _check_ids(a: ScoreMatrix, b: ScoreMatrix) -> None:
    if a.image_ids != b.image_ids:
        raise MetaError("image ids differ between score matrices")
    if a.model_ids != b.model_ids:
        raise MetaError("model ids differ between score matrices")


def mm1_application_ranking(measure_scores: ScoreMatrix, application_scores: ScoreMatrix) -> MetaResult:
    """Mean over images of 1 - rho(rank by measure, rank by application output quality)."""
    _check_ids(measure_scores, application_scores)
    per_image, warned = [], []
    for image_id, m_row, a_row in zip(measure_scores.image_ids, measure_scores.scores, application_scores.scores):
        rho, constant = _rho(rank_scores(m_row), rank_scores(a_row))
        if constant:
            warned.append(image_id)
        per_image.append({"image_id": image_id, "value": 1.0 - rho})
    if not per_image:
        raise MetaError("no images to rank")
    value = float(np.mean([p["value"] for p in per_image]))
    return MetaResult(1, value, per_image=per_image,
                      warnings=[f"constant ranking on image {i}" for i in warned])


def gaussian_baseline_map(width: int, height: int, sigma_frac: float = 0.25) -> np.ndarray:
    """Centered isotropic Gaussian with peak 1 and sigma = sigma_frac * min(width, height)."""
    if width < 1 or height < 1:
        raise MetaError("gaussian map needs positive dimensions")
    sigma = sigma_frac * min(width, height)
    r = np.arange(height, dtype=np.float64) - (height - 1) / 2.0
    c = np.arange(width, dtype=np.float64) - (width - 1) / 2.0
    g = np.exp(-(r[:, None] ** 2 + c[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.max()


def mm2_generic_vs_sota(sota_scores: ScoreMatrix, generic_scores: Sequence[float] | Mapping[str, float]) -> MetaResult:
    """Count images where the generic map beats the mean score of the real models."""
    if isinstance(generic_scores, Mapping):
        if set(generic_scores) != set(sota_scores.image_ids):
            raise MetaError("generic scores and score matrix cover different images")
        generic = np.array([generic_scores[i] for i in sota_scores.image_ids], dtype=np.float64)
    else:
        generic = np.asarray(generic_scores, dtype=np.float64)
        if generic.size != len(sota_scores.image_ids):
            raise MetaError("one generic score per image is required")
    means = sota_scores.scores.mean(axis=1)
    wins = generic > means
    per_image = [{"image_id": i, "generic": float(g), "sota_mean": float(m), "generic_wins": bool(w)}
                 for i, g, m, w in zip(sota_scores.image_ids, generic, means, wins)]
    count = int(wins.sum())
    n = len(per_image)
    return MetaResult(2, float(count), per_image=per_image,
                      extra={"count": count, "images": n, "percent": 100.0 * count / n if n else 0.0})


def _better(a: float, b: float, ties: str) -> bool:
    return a > b if ties == "strict" else a >= b


def mm3_gt_switch(measure: Measure, sms: Sequence[np.ndarray], gts: Sequence[np.ndarray],
                  gt_index: Optional[Sequence[int]] = None, switches_per_image: int = 100,
                  good_fraction: float = 0.418, seed: int = 0, cutoff: Optional[float] = None,
                  ties: str = "strict") -> MetaResult:
    """Percentage of (good map, wrong GT) trials where the wrong GT scores higher.

    ``gt_index[i]`` names the GT of ``sms[i]`` (default: the same position).
    Good maps are the top ``good_fraction`` by their own score, or those
    scoring at least ``cutoff`` when a cutoff is given.  Wrong GTs are drawn
    without replacement among same-sized GTs; when fewer than
    ``switches_per_image`` are available all of them are used.  With
    ``ties="count"`` an equal score also counts as an error.
    """
    if ties not in TIE_POLICIES:
        raise MetaError(f"ties must be one of {TIE_POLICIES}")
    gts = [as_binary(g) for g in gts]
    if len(gts) < 2:
        raise MetaError("ground-truth switching needs at least two images")
    gt_index = list(range(len(sms))) if gt_index is None else list(gt_index)
    if len(gt_index) != len(sms):
        raise MetaError("gt_index must name one GT per map")

    own = np.array([measure(sm, gts[g]) for sm, g in zip(sms, gt_index)], dtype=np.float64)
    if cutoff is None:
        n_good = int(round(good_fraction * len(sms)))
        order = sorted(range(len(sms)), key=lambda i: (-own[i], i))
        good = sorted(order[:n_good])
    else:
        good = [i for i in range(len(sms)) if own[i] >= cutoff]
    if not good:
        raise MetaError("no 'good' maps selected; raise good_fraction or lower the cutoff")

    per_image, trials, errors = [], 0, 0
    for i in good:
        sm = np.asarray(sms[i])
        candidates = [j for j in range(len(gts)) if j != gt_index[i]]
        fitting = [j for j in candidates if gts[j].shape == sm.shape]
        excluded = len(candidates) - len(fitting)
        rng = np.random.default_rng([seed, i])
        if len(fitting) > switches_per_image:
            picked = sorted(rng.choice(fitting, size=switches_per_image, replace=False).tolist())
        else:
            picked = fitting
        errs = int(sum(_better(measure(sm, gts[j]), own[i], ties) for j in picked))
        trials += len(picked)
        errors += errs
        per_image.append({"map_index": i, "gt_index": gt_index[i], "own_score": float(own[i]),
                          "switches": len(picked), "errors": int(errs), "excluded_by_size": excluded})
    value = 100.0 * errors / trials if trials else 0.0
    return MetaResult(3, value, seed=seed, per_image=per_image,
                      extra={"good_maps": len(good), "total_maps": len(sms), "trials": trials,
                             "errors": errors, "ties": ties,
                             "selection": "cutoff" if cutoff is not None else "fraction",
                             "good_fraction": good_fraction, "cutoff": cutoff})


def disk(radius: int) -> np.ndarray:
    ax = np.arange(-radius, radius + 1)
    return ax[:, None] ** 2 + ax[None, :] ** 2 <= radius * radius


def _dilate(m, se):
    return ndimage.binary_dilation(m, structure=se, border_value=0)


def _erode(m, se):
    # outside the image counts as foreground: the frame is not an annotation edge
    return ndimage.binary_erosion(m, structure=se, border_value=1)


_OPS = {
    "dilate": _dilate,
    "erode": _erode,
    "open": lambda m, se: _dilate(_erode(m, se), se),
    "close": lambda m, se: _erode(_dilate(m, se), se),
}


def perturb_gt(gt, radius: int = 2, mode: str = "mixed", seed=0) -> np.ndarray:
    """Morphologically perturb a GT with a disk of the given radius.

    ``mixed`` dilates or erodes each 8-connected foreground component,
    chosen by a coin flip from ``seed``.
    """
    gt = as_binary(gt)
    if radius < 1:
        raise MetaError(f"perturbation radius must be >= 1, got {radius}")
    if mode not in PERTURB_MODES:
        raise MetaError(f"mode must be one of {PERTURB_MODES}, got {mode!r}")
    se = disk(radius)
    if mode != "mixed":
        return _OPS[mode](gt, se)
    labels, n = ndimage.label(gt, structure=np.ones((3, 3), bool))
    rng = np.random.default_rng(seed)
    flips = rng.integers(0, 2, size=n)
    out = np.zeros_like(gt)
    for k in range(1, n + 1):
        op = _dilate if flips[k - 1] else _erode
        out |= op(labels == k, se)
    return out


def structure_change(gt, perturbed, radius: int = 1) -> int:
    """Pixels of the GT/perturbed difference map that survive an erosion of ``radius``.

    Thin slivers vanish; surviving mass marks a change in the GT's structure.
    """
    diff = as_binary(gt) ^ as_binary(perturbed)
    if radius < 1:
        return int(diff.sum())
    return int(ndimage.binary_erosion(diff, structure=disk(radius), border_value=0).sum())


def mm4_annotation_robustness(measure: Measure, sms_per_image: Sequence[Sequence[np.ndarray]],
                              gts: Sequence[np.ndarray], radius: int = 2, mode: str = "mixed",
                              seed: int = 0, change_radius: int = 1,
                              image_ids: Optional[Sequence[str]] = None) -> MetaResult:
    """Mean 1 - rho between model rankings against the GT and against a perturbed GT."""
    if len(sms_per_image) != len(gts):
        raise MetaError("one list of maps per GT is required")
    image_ids = [str(i) for i in range(len(gts))] if image_ids is None else [str(i) for i in image_ids]
    per_image, warned = [], []
    for idx, (maps, gt) in enumerate(zip(sms_per_image, gts)):
        if len(maps) < 2:
            raise MetaError(f"image {image_ids[idx]}: at least two models are needed")
        gt = as_binary(gt)
        pert = perturb_gt(gt, radius, mode, seed=[seed, idx])
        before = rank_scores([measure(sm, gt) for sm in maps])
        after = rank_scores([measure(sm, pert) for sm in maps])
        rho, constant = _rho(before, after)
        if constant:
            warned.append(image_ids[idx])
        per_image.append({"image_id": image_ids[idx], "value": 1.0 - rho,
                          "structure_change": structure_change(gt, pert, change_radius),
                          "changed_pixels": int((gt ^ pert).sum())})
    if not per_image:
        raise MetaError("no images")
    value = float(np.mean([p["value"] for p in per_image]))
    return MetaResult(4, value, seed=seed, per_image=per_image,
                      extra={"radius": radius, "mode": mode, "change_radius": change_radius},
                      warnings=[f"constant ranking on image {i}" for i in warned])


def mm5_rank_distance(ranks_a, ranks_b, image_ids: Optional[Sequence[str]] = None,
                      model_ids: Optional[Sequence[str]] = None) -> MetaResult:
    """Per image, where measure B ranks measure A's top model: distance = |rank_B - 1|."""
    ra = np.atleast_2d(np.asarray(ranks_a, dtype=np.float64))
    rb = np.atleast_2d(np.asarray(ranks_b, dtype=np.float64))
    if ra.shape != rb.shape:
        raise MetaError(f"rank tables differ in shape: {ra.shape} vs {rb.shape}")
    n_img, n_mod = ra.shape
    image_ids = [str(i) for i in range(n_img)] if image_ids is None else [str(i) for i in image_ids]
    model_ids = [str(m) for m in range(n_mod)] if model_ids is None else [str(m) for m in model_ids]
    if len(image_ids) != n_img or len(model_ids) != n_mod:
        raise MetaError("id lists do not match the rank tables")
    per_image = []
    for image_id, a, b in zip(image_ids, ra, rb):
        top_a, top_b = int(np.argmin(a)), int(np.argmin(b))
        per_image.append({"image_id": image_id, "distance": float(abs(b[top_a] - 1.0)),
                          "top_a": model_ids[top_a], "top_b": model_ids[top_b]})
    dists = [p["distance"] for p in per_image]
    values, counts = np.unique(dists, return_counts=True) if dists else ([], [])
    histogram = [{"distance": float(v), "images": int(c)} for v, c in zip(values, counts)]
    candidates = [p["image_id"] for p in per_image if p["distance"] > 0]
    return MetaResult(5, float(np.mean(dists)) if dists else 0.0, per_image=per_image,
                      extra={"histogram": histogram, "candidates": candidates, "models": n_mod})


def select_study_pairs(mm5_result: MetaResult, sms: Mapping[str, Mapping[str, str]],
                       gts: Mapping[str, str], max_pairs: int = 50, min_distance: float = 1,
                       seed: int = 0) -> list:
    """Seeded sample of images whose rank distance is at least ``min_distance``.

    Each entry pairs measure A's and measure B's top map for one image with
    its GT; the list is the stimulus manifest for a human comparison study.
    """
    qualifying = [p for p in mm5_result.per_image if p["distance"] >= min_distance]
    if not qualifying:
        raise MetaError("no qualifying images")
    if len(qualifying) > max_pairs:
        rng = np.random.default_rng(seed)
        keep = sorted(rng.choice(len(qualifying), size=max_pairs, replace=False).tolist())
        qualifying = [qualifying[k] for k in keep]
    pairs = []
    for p in qualifying:
        image_id = p["image_id"]
        pairs.append({"image_id": image_id, "distance": p["distance"],
                      "model_a": p["top_a"], "map_a": str(sms[image_id][p["top_a"]]),
                      "model_b": p["top_b"], "map_b": str(sms[image_id][p["top_b"]]),
                      "gt": str(gts[image_id])})
    return pairs
