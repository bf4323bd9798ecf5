"""Command line entry point: ``smeval eval|rank|meta|perturb|pairs``.

Exit codes: 0 success, 1 configuration or manifest error, 2 some images failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import report
from .baselines import FbwParams
from .data import (MEASURES, ManifestError, RunConfig, default_jobs, evaluate_manifest, load_image_maps,
                   load_manifest, measure_fn)
from .maps import MapError, load_binary_map, save_map
from .meta import (PERTURB_MODES, TIE_POLICIES, MetaError, ScoreMatrix, gaussian_baseline_map,
                   mm1_application_ranking, mm2_generic_vs_sota, mm3_gt_switch, mm4_annotation_robustness,
                   mm5_rank_distance, perturb_gt, rank_matrix, select_study_pairs, structure_change)
from .smeasure import WEIGHTINGS, SMeasureParams

log = logging.getLogger("smeval")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class UsageError(ValueError):
    pass


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _safe_name(image_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", image_id)


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _config(args) -> RunConfig:
    measures = tuple(m.strip() for m in args.measures.split(",") if m.strip())
    return RunConfig(
        measures=measures,
        s_params=SMeasureParams(alpha=args.alpha, lam=args.lam, k_blocks=args.k_blocks, weighting=args.weighting),
        fbw_params=FbwParams(beta_sq=args.beta_sq),
        thresholds=args.thresholds,
        seed=args.seed,
        jobs=args.jobs,
    )


def _means(matrices: dict) -> dict:
    return {name: {m: float(v) for m, v in zip(mat.model_ids, mat.scores.mean(axis=0))} if mat.image_ids else {}
            for name, mat in matrices.items()}


def cmd_eval(args) -> int:
    config = _config(args)
    manifest = load_manifest(args.manifest)
    out = _out_dir(args)
    matrices, failures, seconds = evaluate_manifest(manifest, config)
    for name, mat in matrices.items():
        mat.write_csv(out / f"scores_{name}.csv")
    means = _means(matrices)
    _dump(out / "summary.json", {
        "dataset": manifest.name,
        "seed": config.seed,
        "config": config.echo(),
        "models": manifest.model_ids,
        "images": {name: len(mat.image_ids) for name, mat in matrices.items()},
        "model_means": means,
        "failures": failures,
    })
    # timing varies run to run, so it lives outside the reproducible summary
    _dump(out / "timing.json", {"seconds_per_image": seconds})
    report.write_model_means(out / "model_means.csv", means)
    if args.plot and all(means.values()):
        report.plot_model_means(out / "model_means.png", means, manifest.name)
    for f in failures:
        log.warning("image %s: %s", f["image_id"], "; ".join(f["errors"]))
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_rank(args) -> int:
    try:
        mat = ScoreMatrix.read_csv(args.score_csv)
    except OSError as exc:
        raise UsageError(f"cannot read {args.score_csv}: {exc}") from exc
    if args.by == "image":
        ranks = rank_matrix(mat)
        rows = [[i, *(format(float(r), ".17g") for r in row)] for i, row in zip(mat.image_ids, ranks)]
        header = ["image_id", *mat.model_ids]
    else:
        means = mat.scores.mean(axis=0) if mat.image_ids else np.zeros(len(mat.model_ids))
        order = sorted(range(len(mat.model_ids)), key=lambda k: (-means[k], mat.model_ids[k]))
        header = ["rank", "model", "mean_score"]
        rows = [[pos + 1, mat.model_ids[k], format(float(means[k]), ".17g")] for pos, k in enumerate(order)]
    text = ",".join(header) + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _app_matrix(manifest, image_ids) -> ScoreMatrix:
    if not manifest.has_app_scores:
        raise UsageError("meta-measure 1 needs 'app_scores' for every image in the manifest")
    by_id = {e.id: e for e in manifest.images}
    models = manifest.model_ids
    return ScoreMatrix(list(image_ids), models,
                       np.array([[by_id[i].app_scores[m] for m in models] for i in image_ids]).reshape(-1, len(models)))


def _run_mm(mm: int, name: str, config: RunConfig, args, manifest, matrices, loaded):
    fn = measure_fn(name, config)
    if mm == 1:
        mat = matrices[name]
        return mm1_application_ranking(mat, _app_matrix(manifest, mat.image_ids))
    if mm == 2:
        mat = matrices[name]
        gts = dict(zip([e.id for e in manifest.images], loaded()[0]))
        generic = {}
        for i in mat.image_ids:
            h, w = gts[i].shape
            generic[i] = fn(gaussian_baseline_map(w, h, args.sigma_frac), gts[i])
        res = mm2_generic_vs_sota(mat, generic)
        res.extra["sigma_frac"] = args.sigma_frac
        return res
    if mm == 3:
        gts, maps = loaded()
        sms = [sm for per_image in maps for sm in per_image]
        gt_index = [k for k, per_image in enumerate(maps) for _ in per_image]
        return mm3_gt_switch(fn, sms, gts, gt_index, switches_per_image=args.switches,
                             good_fraction=args.good_fraction, seed=config.seed, cutoff=args.cutoff,
                             ties=args.ties)
    if mm == 4:
        gts, maps = loaded()
        return mm4_annotation_robustness(fn, maps, gts, radius=args.radius, mode=args.mode, seed=config.seed,
                                         change_radius=args.change_radius,
                                         image_ids=[e.id for e in manifest.images])
    raise UsageError(f"unknown meta-measure {mm}")


def cmd_meta(args) -> int:
    config = _config(args)
    manifest = load_manifest(args.manifest)
    out = _out_dir(args)
    mm = args.mm
    if mm == "5" and len(config.measures) != 2:
        raise UsageError("meta-measure 5 compares exactly two measures: --measures A,B")

    cache = {}

    def loaded():
        if "maps" not in cache:
            cache["maps"] = load_image_maps(manifest)
        return cache["maps"]

    failures = []
    matrices = {}
    if mm in ("1", "2", "5", "table"):
        matrices, failures, _ = evaluate_manifest(manifest, config)

    header = {"dataset": manifest.name, "seed": config.seed, "config": config.echo()}
    if mm == "5":
        a, b = config.measures
        common = [i for i in matrices[a].image_ids if i in set(matrices[b].image_ids)]
        ra = rank_matrix(matrices[a])[[matrices[a].image_ids.index(i) for i in common]]
        rb = rank_matrix(matrices[b])[[matrices[b].image_ids.index(i) for i in common]]
        res = mm5_rank_distance(ra, rb, common, matrices[a].model_ids)
        res.seed = config.seed
        res.extra.update({"measure_a": a, "measure_b": b})
        _dump(out / "mm5.json", {**header, "results": {f"{a}_vs_{b}": res.to_dict()}, "failures": failures})
        report.write_histogram(out / "mm5_histogram.csv", res.extra["histogram"])
        if args.plot and res.extra["histogram"]:
            report.plot_rank_histogram(out / "mm5_histogram.png", res.extra["histogram"], a, b)
    elif mm == "table":
        table, results = {}, {}
        for name in config.measures:
            r1, r2, r3 = (_run_mm(k, name, config, args, manifest, matrices, loaded) for k in (1, 2, 3))
            results[name] = {"mm1": r1.to_dict(), "mm2": r2.to_dict(), "mm3": r3.to_dict()}
            table[name] = {"MM1": r1.value, "MM2(%)": r2.extra["percent"], "MM3(%)": r3.value}
        _dump(out / "table.json", {**header, "table": table, "results": results, "failures": failures})
        report.write_meta_table(out / "table.csv", table)
        if args.plot:
            report.plot_meta_table(out / "table.png", table)
    else:
        k = int(mm)
        results = {}
        for name in config.measures:
            res = _run_mm(k, name, config, args, manifest, matrices, loaded)
            res.seed = config.seed
            results[name] = res.to_dict()
        _dump(out / f"mm{k}.json", {**header, "results": results, "failures": failures})
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_perturb(args) -> int:
    if args.radius < 1:
        raise UsageError("--radius must be >= 1")
    manifest = load_manifest(args.manifest)
    out = _out_dir(args)
    records, failures = [], []
    for idx, entry in enumerate(manifest.images):
        try:
            gt = load_binary_map(entry.gt)
        except MapError as exc:
            failures.append({"image_id": entry.id, "errors": [str(exc)]})
            continue
        pert = perturb_gt(gt, args.radius, args.mode, seed=[args.seed, idx])
        name = f"{_safe_name(entry.id)}.png"
        try:
            save_map(out / name, pert)
        except OSError as exc:
            raise UsageError(f"cannot write {out / name}: {exc}") from exc
        records.append({"image_id": entry.id, "file": name, "mode": args.mode, "radius": args.radius,
                        "seed": [args.seed, idx], "changed_pixels": int((gt ^ pert).sum()),
                        "structure_change": structure_change(gt, pert, args.change_radius)})
    _dump(out / "provenance.json", {"dataset": manifest.name, "seed": args.seed, "mode": args.mode,
                                    "radius": args.radius, "change_radius": args.change_radius,
                                    "images": records, "failures": failures})
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_pairs(args) -> int:
    manifest = load_manifest(args.manifest)
    try:
        a = ScoreMatrix.read_csv(args.scores_a)
        b = ScoreMatrix.read_csv(args.scores_b)
    except OSError as exc:
        raise UsageError(f"cannot read score CSV: {exc}") from exc
    if a.image_ids != b.image_ids or a.model_ids != b.model_ids:
        raise UsageError("the two score CSVs must list the same images and models")
    res = mm5_rank_distance(rank_matrix(a), rank_matrix(b), a.image_ids, a.model_ids)
    sms = {e.id: e.maps for e in manifest.images}
    gts = {e.id: e.gt for e in manifest.images}
    missing = [i for i in a.image_ids if i not in sms]
    if missing:
        raise UsageError(f"images not in manifest: {', '.join(missing)}")
    pairs = select_study_pairs(res, sms, gts, max_pairs=args.max_pairs, min_distance=args.min_distance,
                               seed=args.seed)
    doc = {"dataset": manifest.name, "seed": args.seed, "max_pairs": args.max_pairs,
           "min_distance": args.min_distance, "histogram": res.extra["histogram"], "pairs": pairs}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _add_measure_flags(p):
    p.add_argument("--manifest", required=True, help="dataset manifest (JSON)")
    p.add_argument("--measures", default=",".join(MEASURES), help=f"comma list from {', '.join(MEASURES)}")
    p.add_argument("--alpha", type=float, default=0.5, help="object/region mix of the S-measure")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5, help="dispersion weight of the object term")
    p.add_argument("--k-blocks", type=int, default=4, help="number of region blocks (power of 4)")
    p.add_argument("--weighting", choices=WEIGHTINGS, default="foreground", help="region block weights")
    p.add_argument("--beta-sq", type=float, default=1.0, help="beta^2 for F-beta and Fbw")
    p.add_argument("--thresholds", type=int, default=256, help="threshold count for AP/AUC sweeps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes (default $SMEVAL_JOBS or 1)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot", action="store_true", help="also render PNG figures next to the CSV output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smeval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="score every model map of a manifest")
    _add_measure_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", help="rank models from a score CSV")
    p.add_argument("score_csv")
    p.add_argument("--by", choices=("image", "model"), default="image")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("meta", help="run a meta-measure")
    _add_measure_flags(p)
    p.add_argument("--mm", required=True, choices=("1", "2", "3", "4", "5", "table"))
    p.add_argument("--sigma-frac", type=float, default=0.25, help="MM2 generic Gaussian width")
    p.add_argument("--switches", type=int, default=100, help="MM3 wrong GTs per good map")
    p.add_argument("--good-fraction", type=float, default=0.418, help="MM3 share of maps deemed good")
    p.add_argument("--cutoff", type=float, default=None, help="MM3 absolute good-map cutoff instead of a fraction")
    p.add_argument("--ties", choices=TIE_POLICIES, default="strict", help="MM3: does an equal score count as error")
    p.add_argument("--radius", type=int, default=2, help="MM4 perturbation disk radius")
    p.add_argument("--mode", choices=PERTURB_MODES, default="mixed", help="MM4 perturbation")
    p.add_argument("--change-radius", type=int, default=1, help="MM4 erosion radius of the change map")
    p.set_defaults(func=cmd_meta)

    p = sub.add_parser("perturb", help="write morphologically perturbed GTs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--mode", choices=PERTURB_MODES, default="mixed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--change-radius", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("pairs", help="select map pairs for a human comparison study")
    p.add_argument("--scores-a", required=True)
    p.add_argument("--scores-b", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--max-pairs", type=int, default=50)
    p.add_argument("--min-distance", type=float, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output JSON (default stdout)")
    p.set_defaults(func=cmd_pairs)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (UsageError, ManifestError, MetaError, MapError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    log.info("done in %.2fs", time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
