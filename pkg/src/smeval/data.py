"""Dataset manifests and batch scoring."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines
from .maps import MapError, read_raster, check_same_shape, confusion_counts, threshold_map
from .meta import ScoreMatrix
from .smeasure import SMeasureParams, structure_measure

MEASURES = ("s", "fbeta", "fbw", "ap", "auc")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ImageEntry:
    id: str
    gt: Path
    maps: dict
    app_scores: Optional[dict] = None


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    images: tuple
    root: Path

    @property
    def model_ids(self) -> list:
        return sorted(self.images[0].maps) if self.images else []

    @property
    def has_app_scores(self) -> bool:
        return bool(self.images) and all(e.app_scores is not None for e in self.images)


def load_manifest(path) -> DatasetManifest:
    """Read a JSON manifest; relative paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot read manifest ({exc})") from exc
    root = path.resolve().parent
    if not isinstance(raw, dict) or not isinstance(raw.get("images"), list):
        raise ManifestError(f"{path}: manifest needs an 'images' list")

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else root / p

    entries, problems = [], []
    seen = set()
    for k, item in enumerate(raw["images"]):
        try:
            image_id = str(item["id"])
            gt = resolve(item["gt"])
            maps = {str(m): resolve(p) for m, p in item["maps"].items()}
        except (KeyError, TypeError, AttributeError) as exc:
            raise ManifestError(f"{path}: image #{k} is missing a field ({exc})") from exc
        if image_id in seen:
            problems.append(f"duplicate image id {image_id!r}")
        seen.add(image_id)
        for p in [gt, *maps.values()]:
            if not p.is_file():
                problems.append(f"image {image_id!r}: missing file {p}")
        app = item.get("app_scores")
        if app is not None:
            app = {str(m): float(v) for m, v in app.items()}
            if set(app) != set(maps):
                problems.append(f"image {image_id!r}: app_scores models differ from maps")
        entries.append(ImageEntry(image_id, gt, maps, app))

    if entries:
        models = set(entries[0].maps)
        for e in entries[1:]:
            if set(e.maps) != models:
                gaps = sorted(models.symmetric_difference(e.maps))
                problems.append(f"image {e.id!r}: model set differs (mismatched: {', '.join(gaps)})")
    if not entries:
        problems.append("manifest lists no images")
    if problems:
        raise ManifestError(f"{path}: " + "; ".join(problems))
    return DatasetManifest(str(raw.get("name", path.stem)), tuple(entries), root)


@dataclass(frozen=True)
class RunConfig:
    measures: tuple = MEASURES
    s_params: SMeasureParams = field(default_factory=SMeasureParams)
    fbw_params: baselines.FbwParams = field(default_factory=baselines.FbwParams)
    thresholds: int = 256
    ap_points: int = 11
    fbeta_threshold: float = 0.5
    gt_threshold: float = 0.5
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if not self.measures:
            raise ValueError("at least one measure must be selected")
        unknown = [m for m in self.measures if m not in MEASURES]
        if unknown:
            raise ValueError(f"unknown measures {unknown}; choose from {MEASURES}")
        if self.thresholds < 2:
            raise ValueError("thresholds must be >= 2")

    def echo(self) -> dict:
        d = asdict(self)
        d["measures"] = list(self.measures)
        d.pop("jobs")
        return d


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("SMEVAL_JOBS", "1")))
    except ValueError:
        return 1


def score(measure: str, sm: np.ndarray, gt: np.ndarray, config: RunConfig) -> float:
    check_same_shape(sm, gt)
    if measure == "s":
        return structure_measure(sm, gt, config.s_params)
    if measure == "fbeta":
        pred = threshold_map(sm, config.fbeta_threshold)
        return baselines.f_beta(confusion_counts(pred, gt), config.fbw_params.beta_sq)
    if measure == "fbw":
        return baselines.fbw(sm, gt, config.fbw_params)
    if measure == "ap":
        return baselines.average_precision(baselines.pr_curve(sm, gt, config.thresholds), config.ap_points)
    if measure == "auc":
        return baselines.auc(baselines.roc_curve(sm, gt, config.thresholds))
    raise ValueError(f"unknown measure {measure!r}")


def measure_fn(measure: str, config: RunConfig):
    """``f(sm, gt) -> float`` for the meta-measures; accepts 8-bit arrays as well."""
    def f(sm, gt):
        sm = np.asarray(sm)
        if sm.dtype == np.uint8:
            sm = sm / 255.0
        return score(measure, sm, gt, config)
    f.__name__ = f"measure_{measure}"
    return f


def evaluate_entry(entry: ImageEntry, config: RunConfig) -> dict:
    """Score every model map of one image; failures are captured, never raised."""
    t0 = time.perf_counter()
    out = {"id": entry.id, "scores": {m: {} for m in config.measures}, "errors": []}
    try:
        gt = read_raster(entry.gt) / 255.0 >= config.gt_threshold
    except MapError as exc:
        out["errors"].append(str(exc))
        out["seconds"] = time.perf_counter() - t0
        return out
    for model, path in sorted(entry.maps.items()):
        try:
            sm = read_raster(path) / 255.0
            check_same_shape(sm, gt)
        except MapError as exc:
            out["errors"].append(f"model {model}: {exc}")
            continue
        for measure in config.measures:
            try:
                out["scores"][measure][model] = score(measure, sm, gt, config)
            except MapError as exc:
                out["errors"].append(f"model {model}, measure {measure}: {exc}")
    out["seconds"] = time.perf_counter() - t0
    return out


def _evaluate_star(args):
    return evaluate_entry(*args)


def evaluate_manifest(manifest: DatasetManifest, config: RunConfig) -> tuple[dict, list, dict]:
    """Score a whole manifest.

    Returns ``(matrices, failures, seconds)``: one :class:`ScoreMatrix` per
    measure holding only the images whose row is complete, the per-image
    failure messages, and wall time per image.
    """
    jobs = [(e, config) for e in manifest.images]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_evaluate_star, jobs, chunksize=max(1, len(jobs) // (4 * config.jobs))))
    else:
        results = [evaluate_entry(*j) for j in jobs]
    results.sort(key=lambda r: r["id"])

    models = manifest.model_ids
    matrices = {}
    for measure in config.measures:
        rows = [(r["id"], [r["scores"][measure][m] for m in models]) for r in results
                if len(r["scores"][measure]) == len(models)]
        matrices[measure] = ScoreMatrix([i for i, _ in rows], models,
                                        np.array([s for _, s in rows]).reshape(len(rows), len(models)))
    failures = [{"image_id": r["id"], "errors": r["errors"]} for r in results if r["errors"]]
    seconds = {r["id"]: r["seconds"] for r in results}
    return matrices, failures, seconds


def load_image_maps(manifest: DatasetManifest, gt_threshold: float = 0.5):
    """All GTs (bool) and model maps (uint8) of a manifest, in manifest order."""
    gts, maps = [], []
    for e in manifest.images:
        gts.append(read_raster(e.gt) / 255.0 >= gt_threshold)
        maps.append([read_raster(e.maps[m]) for m in manifest.model_ids])
    return gts, maps
