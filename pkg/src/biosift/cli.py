"""Command-line entry point: the full pipeline as subcommands.

Defaults mirror the production constants: 200 m matching and dedup
radius, IoU threshold 0.5, review batches of K = 100. Every subcommand
that writes files also writes a ``.manifest.json`` beside its primary
output recording flags and input/output digests.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import fusion, metrics, mining, power, simulate
from .detections import (
    Detection,
    dedup_sites,
    read_detections,
    read_inventory,
    write_detections,
    write_inventory,
)
from .errors import BiosiftError
from .geom import GeoPoint, OrientedBox
from .manifest import write_manifest

MATCH_M = 200.0
DEDUP_M = 200.0
IOU_THRESHOLD = 0.5
K = 100


class _SubParser(argparse.ArgumentParser):
    """Subcommand parser that always shows flag defaults in --help."""

    def __init__(self, *a, **kw):
        kw.setdefault("formatter_class", argparse.ArgumentDefaultsHelpFormatter)
        super().__init__(*a, **kw)


def _flags(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _add_containment(p):
    p.add_argument(
        "--containment",
        choices=fusion.CONTAINMENT_MODES,
        default="center_in",
        help="part-in-site rule (default: %(default)s)",
    )


def _split_classes(dets):
    sites = [d for d in dets if d.cls == "site"]
    parts = [d for d in dets if d.cls != "site"]
    return sites, parts


def cmd_fit_prior(args):
    tanks, piles, joint = _read_counts_csv(args.counts)
    if args.kind == "empirical":
        prior = fusion.fit_empirical_prior(tanks, piles, smoothing=args.smoothing, cap=args.cap)
    elif args.kind == "poisson":
        prior = fusion.fit_poisson_prior(tanks, piles, cap=args.cap)
    else:
        prior = fusion.fit_bivariate_poisson_prior(joint, cap=args.cap)
    prior.save(args.out)
    write_manifest("fit-prior", _flags(args), [args.counts], [args.out])
    print(f"wrote {args.kind} prior to {args.out}")


def _read_counts_csv(path):
    """Per-site ``site_id,n_tanks,n_piles`` rows -> marginal and joint histograms."""
    tanks: dict[int, float] = {}
    piles: dict[int, float] = {}
    pairs = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            nt, npi = int(row["n_tanks"]), int(row["n_piles"])
            tanks[nt] = tanks.get(nt, 0) + 1
            piles[npi] = piles.get(npi, 0) + 1
            pairs.append((nt, npi))
    size_t = max(tanks, default=0) + 1
    size_p = max(piles, default=0) + 1
    joint = np.zeros((size_t, size_p))
    for nt, npi in pairs:
        joint[nt, npi] += 1
    return tanks, piles, joint


def cmd_rescore(args):
    dets = read_detections(args.detections)
    prior = fusion.CountPrior.load(args.prior) if args.prior else fusion.CountPrior.uniform()
    sites, parts = _split_classes(dets)
    rescored = fusion.rescore_region(sites, parts, prior, containment=args.containment)
    fused_dets = [
        Detection(
            id=site.id,
            cls=site.cls,
            score=min(max(score, 0.0), 1.0),
            box=site.box,
            tile_id=site.tile_id,
            crs=site.crs,
        )
        for site, score in rescored
    ]
    write_detections(fused_dets, args.out)
    scores_path = Path(args.out).with_suffix(Path(args.out).suffix + ".scores.csv")
    with open(scores_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "baseline_score", "fused_score"])
        for site, score in rescored:
            writer.writerow([site.id, repr(site.score), repr(score)])
    write_manifest(
        "rescore",
        _flags(args),
        [args.detections] + ([args.prior] if args.prior else []),
        [args.out, scores_path],
    )
    print(f"rescored {len(rescored)} sites -> {args.out}")


def cmd_eval(args):
    dets = read_detections(args.detections)
    sites, _ = _split_classes(dets)
    if not args.no_dedup:
        sites = dedup_sites(sites, radius=args.dedup_m)
    gts = read_inventory(args.ground_truth)
    ap = metrics.ap_dist(sites, gts, threshold=args.match_m)
    mr = metrics.max_recall_at_full_precision(sites, gts, threshold=args.match_m)
    report = metrics.match_by_distance(sites, gts, threshold=args.match_m)
    result = {
        "ap_dist": ap,
        "max_recall_at_full_precision": mr,
        "tp": report.n_tp,
        "fp": report.n_fp,
        "duplicates": report.n_duplicate,
        "gt": report.n_gt,
        "precision": report.precision,
        "recall": report.recall,
    }
    if args.gt_boxes:
        gt_dets = read_detections(args.gt_boxes)
        by_class = {cls: [] for cls in ("site", "tank", "pile")}
        for g in gt_dets:
            by_class[g.cls].append(g.box)
        res = metrics.mean_ap(dets, by_class, iou_threshold=args.iou_threshold)
        result["ap50_per_class"] = res.per_class
        result["map50"] = res.mean
        if res.skipped_classes:
            result["map50_skipped_classes"] = list(res.skipped_classes)
    print(json.dumps(result, sort_keys=True))


def cmd_pr_curve(args):
    dets = read_detections(args.detections)
    sites, _ = _split_classes(dets)
    if not args.no_dedup:
        sites = dedup_sites(sites, radius=args.dedup_m)
    gts = read_inventory(args.ground_truth)
    curve = metrics.pr_curve(sites, gts, threshold=args.match_m)
    metrics.write_pr_csv(curve, args.out)
    write_manifest("pr-curve", _flags(args), [args.detections, args.ground_truth], [args.out])
    print(f"ap={curve.ap:.6f} ({len(curve.points)} cutoffs) -> {args.out}")


def cmd_mine(args):
    dets = read_detections(args.detections)
    prior = fusion.CountPrior.load(args.prior) if args.prior else fusion.CountPrior.uniform()
    sites, parts = _split_classes(dets)
    rescored = fusion.rescore_region(sites, parts, prior, containment=args.containment)
    known = read_inventory(args.known) if args.known else []
    batch = mining.build_review_batch(
        rescored,
        known,
        k=args.k,
        threshold=args.match_m,
        dedup_radius=args.dedup_m,
        iteration=args.iteration,
    )
    extras = {}
    for det, _ in batch.candidates:
        ev = fusion.extract_evidence(det, parts, containment=args.containment)
        extras[det.id] = {
            "baseline_score": det.score,
            "tank_mode": fusion.poisson_binomial(ev.p_t).mode,
            "pile_mode": fusion.poisson_binomial(ev.p_p).mode,
        }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / f"batch-{args.iteration}.jsonl"
    mining.write_batch(batch, out, extras=extras)
    write_manifest(
        "mine",
        _flags(args),
        [args.detections] + ([args.prior] if args.prior else []) + ([args.known] if args.known else []),
        [out],
    )
    print(f"wrote {len(batch.candidates)} candidates -> {out}")


def cmd_apply_verdicts(args):
    records = mining.read_batch_records(args.batch)
    by_id = {d.id: d for d in read_detections(args.detections)} if args.detections else {}
    candidates = []
    for rec in records:
        cid = rec["candidate_id"]
        det = by_id.get(cid)
        if det is None:
            # batch records carry enough geometry to stand in for the source
            det = Detection(
                id=cid,
                cls="site",
                score=float(rec.get("baseline_score") or min(max(rec["fused_score"], 0.0), 1.0)),
                box=OrientedBox(GeoPoint(float(rec["cx"]), float(rec["cy"])), 1.0, 1.0, 0.0),
                tile_id=str(rec.get("tile_id", "")),
                crs=str(rec.get("crs", "")),
            )
        candidates.append((det, float(rec["fused_score"])))
    batch = mining.ReviewBatch(
        iteration=args.iteration, candidates=tuple(candidates), k=max(len(candidates), 1)
    )
    verdicts = mining.read_verdicts(args.verdicts)
    verdicts = [v for v in verdicts if v.candidate_id in {c[0].id for c in candidates}]
    ledgers = mining.read_ledgers(args.ledger) if Path(args.ledger).exists() else []
    if ledgers:
        prev = ledgers[-1]
    else:
        prev = mining.IterationLedger.initial(
            known_db_size=args.known_db_size,
            background_tiles=args.background_tiles,
            annotated_tiles=args.annotated_tiles,
        )
        mining.append_ledger(prev, args.ledger)
    hard, confirmed, ledger = mining.apply_verdicts(
        batch, verdicts, prev, annotated_tiles=args.annotated_tiles
    )
    mining.append_ledger(ledger, args.ledger)
    outputs = [args.ledger]
    if args.hard_negatives_out:
        mining.write_hard_negative_tiles(hard, args.hard_negatives_out)
        outputs.append(args.hard_negatives_out)
    if args.confirmed_out:
        write_inventory(confirmed, args.confirmed_out)
        outputs.append(args.confirmed_out)
    write_manifest("apply-verdicts", _flags(args), [args.batch, args.verdicts], outputs)
    print(
        json.dumps(
            {
                "iteration": ledger.iteration,
                "confirmed": len(confirmed),
                "hard_negatives": len(hard),
                "alpha": ledger.alpha,
            }
        )
    )


def cmd_regress(args):
    features = power.read_features_csv(args.features)
    fit = power.fit_linear(features, with_intercept=not args.no_intercept)
    power.write_fit(fit, args.out)
    outputs = [args.out]
    result = {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "n": fit.n}
    if args.aggregate:
        result["aggregate_kw"] = power.aggregate_power(fit, features)
    write_manifest("regress", _flags(args), [args.features], outputs)
    print(json.dumps(result, sort_keys=True))


def cmd_simulate(args):
    if args.config:
        scenario = simulate.Scenario.load(args.config)
        if args.seed is not None:
            scenario = simulate.Scenario(
                seed=args.seed,
                region_width_m=scenario.region_width_m,
                region_height_m=scenario.region_height_m,
                n_sites=scenario.n_sites,
                count_prior=scenario.count_prior,
                detector=scenario.detector,
            )
    else:
        scenario = simulate.standard_scenario(seed=args.seed if args.seed is not None else 42)
    gts, dets = simulate.generate(scenario)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    det_path = out_dir / "detections.jsonl"
    gt_path = out_dir / "ground_truth.geojson"
    cfg_path = out_dir / "scenario.json"
    write_detections(dets, det_path)
    write_inventory(gts, gt_path, crs=simulate.DEFAULT_CRS)
    scenario.save(cfg_path)
    write_manifest(
        "simulate",
        _flags(args),
        [args.config] if args.config else [],
        [det_path, gt_path, cfg_path],
    )
    print(f"wrote {len(gts)} sites, {len(dets)} detections -> {out_dir}")


def cmd_serve(args):
    import uvicorn

    from .triage import create_app

    host, _, port = args.listen.rpartition(":")
    app = create_app(
        batch_dir=args.batch_dir,
        verdict_log=args.verdict_log,
        chips_dir=args.chips_dir,
        token=args.token,
        map_url_template=args.map_url_template,
        ui_dir=args.ui_dir,
    )
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))


def cmd_report(args):
    dets = read_detections(args.detections)
    sites, _ = _split_classes(dets)
    if not args.no_dedup:
        sites = dedup_sites(sites, radius=args.dedup_m)
    gts = read_inventory(args.ground_truth)
    external = read_inventory(args.external_db) if args.external_db else []
    report = metrics.region_report(
        sites, gts, external, threshold=args.match_m, region=args.region
    )
    sys.stdout.write(metrics.format_region_table([report]))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biosift",
        description="Post-detection analytics for bio-digester site detectors.",
    )
    sub = parser.add_subparsers(
        dest="command", required=True, parser_class=_SubParser
    )

    p = sub.add_parser("fit-prior", help="fit a part-count prior from per-site counts")
    p.add_argument("--counts", required=True, help="CSV with site_id,n_tanks,n_piles")
    p.add_argument("--kind", choices=("empirical", "poisson", "bivariate"), default="empirical", help="fitting method")
    p.add_argument("--cap", type=int, default=fusion.DEFAULT_CAP, help="largest count kept in the table")
    p.add_argument("--smoothing", type=float, default=fusion.DEFAULT_SMOOTHING, help="probability floor for empirical marginals")
    p.add_argument("--out", required=True, help="prior output file")
    p.set_defaults(func=cmd_fit_prior)

    p = sub.add_parser("rescore", help="fuse site scores with part evidence")
    p.add_argument("--detections", required=True, help="detections file (all classes)")
    p.add_argument("--prior", help="prior file; omitted = uniform weights (identity)")
    _add_containment(p)
    p.add_argument("--out", required=True, help="rescored detections output")
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("eval", help="distance metrics (and optional IoU AP) vs ground truth")
    p.add_argument("--detections", required=True, help="detections file")
    p.add_argument("--ground-truth", required=True, help="site inventory (GeoJSON)")
    p.add_argument("--match-m", type=float, default=MATCH_M, help="distance matching threshold, meters")
    p.add_argument("--dedup-m", type=float, default=DEDUP_M, help="site dedup radius, meters")
    p.add_argument("--no-dedup", action="store_true", help="evaluate without deduplicating sites")
    p.add_argument("--gt-boxes", help="per-class GT boxes (detections format, scores ignored)")
    p.add_argument("--iou-threshold", type=float, default=IOU_THRESHOLD, help="IoU threshold for box AP")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pr-curve", help="precision-recall samples as CSV")
    p.add_argument("--detections", required=True, help="detections file")
    p.add_argument("--ground-truth", required=True, help="site inventory (GeoJSON)")
    p.add_argument("--match-m", type=float, default=MATCH_M, help="distance matching threshold, meters")
    p.add_argument("--dedup-m", type=float, default=DEDUP_M, help="site dedup radius, meters")
    p.add_argument("--no-dedup", action="store_true", help="evaluate without deduplicating sites")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_pr_curve)

    p = sub.add_parser("mine", help="build a top-K review batch of unexplained detections")
    p.add_argument("--detections", required=True, help="detections file (all classes)")
    p.add_argument("--prior", help="prior file for rescoring (omitted = uniform)")
    p.add_argument("--known", help="known-site inventory (GeoJSON)")
    p.add_argument("--k", type=int, default=K, help="review batch size")
    p.add_argument("--match-m", type=float, default=MATCH_M, help="known-site exclusion radius, meters")
    p.add_argument("--dedup-m", type=float, default=DEDUP_M, help="candidate dedup radius, meters")
    p.add_argument("--iteration", type=int, default=1, help="mining iteration index")
    _add_containment(p)
    p.add_argument("--out-dir", required=True, help="directory for batch-<iteration>.jsonl")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("apply-verdicts", help="fold reviewed verdicts into the dataset state")
    p.add_argument("--batch", required=True, help="review batch file")
    p.add_argument("--verdicts", required=True, help="verdict log file")
    p.add_argument("--detections", help="original detections (for full candidate geometry)")
    p.add_argument("--ledger", required=True, help="ledger JSONL; appended in place")
    p.add_argument("--iteration", type=int, default=1, help="mining iteration index")
    p.add_argument("--known-db-size", type=int, default=0, help="initial database size (first iteration only)")
    p.add_argument("--background-tiles", type=int, default=mining.DEFAULT_ANNOTATED_TILES, help="initial background tiles (first iteration only)")
    p.add_argument("--annotated-tiles", type=int, default=mining.DEFAULT_ANNOTATED_TILES, help="annotated tile count for the dilution ratio")
    p.add_argument("--hard-negatives-out", help="tile-id list output")
    p.add_argument("--confirmed-out", help="confirmed-site inventory output (GeoJSON)")
    p.set_defaults(func=cmd_apply_verdicts)

    p = sub.add_parser("regress", help="least squares of power against tank area")
    p.add_argument("--features", required=True, help="CSV site_id,tank_area_m2,power_kw")
    p.add_argument("--no-intercept", action="store_true", help="fit through the origin")
    p.add_argument("--aggregate", action="store_true", help="also report summed clamped predictions")
    p.add_argument("--out", required=True, help="fit output file")
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--config", help="scenario JSON; omitted = standard scenario")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the triage review service")
    p.add_argument("--batch-dir", required=True, help="directory holding batch-<iteration>.jsonl files")
    p.add_argument("--verdict-log", required=True, help="append-only verdict log")
    p.add_argument("--chips-dir", help="static image chips served at /chips/")
    p.add_argument("--listen", default="127.0.0.1:8080", help="host:port to bind")
    p.add_argument("--token", help="shared token required in X-Auth-Token")
    p.add_argument("--map-url-template", help="fallback map link with {x}/{y} placeholders")
    p.add_argument("--ui-dir", help="static review UI to serve at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="regional TP/GT/recall and correct/total/precision table")
    p.add_argument("--detections", required=True, help="detections file")
    p.add_argument("--ground-truth", required=True, help="reference database (GeoJSON)")
    p.add_argument("--external-db", help="human-confirmed sites outside the reference DB")
    p.add_argument("--region", default="", help="label for the table row")
    p.add_argument("--match-m", type=float, default=MATCH_M, help="distance matching threshold, meters")
    p.add_argument("--dedup-m", type=float, default=DEDUP_M, help="site dedup radius, meters")
    p.add_argument("--no-dedup", action="store_true", help="evaluate without deduplicating sites")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except BiosiftError as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "OSError", "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
