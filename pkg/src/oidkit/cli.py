"""Command line entry point: ``oidkit <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 infeasible search.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import augment, ensembling, evaluation, io, loss, sampling, scaling
from .errors import DataError, InfeasibleError
from .labelspace import EXPANSION_MODES, LabelHierarchy, expand_detections, expand_ground_truth
from .labelspace import load_hierarchy

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 2, 3, 4

DEFAULT_NMS_GRID = [round(0.3 + 0.05 * i, 2) for i in range(9)]


def _hierarchy(args, labels=()) -> LabelHierarchy:
    if args.hierarchy:
        return load_hierarchy(io.read_json(args.hierarchy))
    return LabelHierarchy.flat(labels)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    dets = io.read_detections(args.detections)
    gts = io.read_ground_truth(args.ground_truth)
    h = _hierarchy(args, [x.label for x in (*dets, *gts)])
    if args.flat:
        report = evaluation.evaluate_flat(dets, gts, args.iou)
    else:
        report = evaluation.hierarchical_map(dets, gts, h, args.iou)
    if args.output:
        io.write_ap_table(evaluation.per_label_table(report), args.output)
    for label, ap, n in evaluation.per_label_table(report):
        print(f"{label}\tAP={ap:.6f}\tNumGT={n}")
    print(f"mAP: {report.mAP:.6f} over {len(report.ap)} labels")
    return EXIT_OK


def _load_runs(manifest_path: Path):
    doc = io.read_json(manifest_path)
    base = manifest_path.parent
    runs, subsets = [], {}
    for m in doc.get("models", []):
        try:
            mid, det_csv, ap_csv = m["id"], m["detections_csv"], m["ap_csv"]
        except KeyError as e:
            raise DataError(f"{manifest_path}: model entry missing {e}") from None
        runs.append(ensembling.ModelRun(
            mid,
            tuple(io.read_detections(base / det_csv)),
            io.read_ap_table(base / ap_csv),
        ))
        if "expert_subset" in m:
            subsets[mid] = set(m["expert_subset"])
    if not runs:
        raise DataError(f"{manifest_path}: no models listed")
    return runs, subsets, float(doc.get("alpha", 0.1))


def cmd_ensemble(args) -> int:
    runs, subsets, alpha = _load_runs(Path(args.manifest))
    if args.alpha is not None:
        alpha = args.alpha
    if subsets:
        experts = [r for r in runs if r.model_id in subsets]
        kept = set(ensembling.expert_consensus(experts, subsets))
        runs = [
            r if r.model_id not in subsets else
            ensembling.ModelRun(r.model_id, tuple(d for d in r.detections if d in kept),
                                r.per_category_ap)
            for r in runs
        ]
    if args.classifier:
        scores = {(d.image_id, d.label, d.box.key()): d.score
                  for d in io.read_detections(args.classifier)}
        runs = [ensembling.ModelRun(r.model_id,
                                    tuple(ensembling.classifier_reweight(r.detections, scores)),
                                    r.per_category_ap) for r in runs]
    wt = ensembling.weight_table(runs, alpha)
    labels = {d.label for r in runs for d in r.detections}
    table = {l: args.default_nms for l in labels}
    if args.thresholds:
        table.update(io.read_thresholds(args.thresholds))
    tt = ensembling.ThresholdTable(table, args.default_nms)
    fused = ensembling.fuse(runs, wt, tt)
    io.write_detections(fused, args.output, oi_order=args.oi_order)
    print(f"fused {sum(len(r.detections) for r in runs)} detections from {len(runs)} "
          f"models into {len(fused)}")
    return EXIT_OK


def cmd_nms_search(args) -> int:
    dets = io.read_detections(args.detections)
    gts = io.read_ground_truth(args.ground_truth)
    h = _hierarchy(args, [x.label for x in (*dets, *gts)])
    if args.grid:
        grid = _floats(args.grid)
    else:
        grid = [g for g in DEFAULT_NMS_GRID
                if not (args.mode == ensembling.INVERSE_SQUARE and abs(g - args.default) < 1e-12)]
    tt = ensembling.search_nms_thresholds(dets, gts, h, args.default, grid, args.mode,
                                          args.lam, args.iou, jobs=args.jobs)
    rows = [(l, f"{t:.6f}") for l, t in sorted(tt.thresholds.items())]
    io.write_csv(args.output, ("LabelName", "Threshold"), rows)
    for l, t in rows:
        print(f"{l}\t{t}")
    return EXIT_OK


def cmd_sample(args) -> int:
    gts = io.read_ground_truth(args.ground_truth)
    index = sampling.build_index(gts)
    stream = sampling.sample_epoch(index, args.n, args.seed)
    io.write_csv(args.draws, ("Category", "ImageID"), stream.draws)
    hist = sampling.exposure_histogram(stream, index)
    if args.histogram:
        io.write_csv(args.histogram, ("Category", "Draws", "Instances"),
                     ((c, n, sampling.instance_counts(gts).get(c, 0))
                      for c, n in sorted(hist.items())))
    print(f"{args.n} draws over {len(index)} categories (seed {args.seed})")
    return EXIT_OK


def cmd_scale_search(args) -> int:
    doc = io.read_json(args.grid) if args.grid else {}
    grid = {k: doc.get(k, v) for k, v in scaling.default_grid().items()}
    target = float(doc.get("target", scaling.DEFAULT_TARGET))
    tol = float(doc.get("tol", scaling.DEFAULT_TOL))
    oracle = scaling.resolve_oracle(args.oracle)
    try:
        records = scaling.grid_scan(oracle, grid, target, tol)
    finally:
        if isinstance(oracle, scaling.ExecOracle):
            oracle.close()
    if args.output:
        io.write_csv(args.output, ("Depth", "Width", "Resolution", "Constraint", "Feasible",
                                   "Score"),
                     ((*(f"{v:.6f}" for v in r.triple.as_tuple()), f"{r.constraint:.9f}",
                       int(r.feasible), "" if r.score is None else f"{r.score:.12f}")
                      for r in records))
    best = scaling.best_of_scan(records, target)
    print("base triple: depth={:.6f} width={:.6f} resolution={:.6f} constraint={:.6f}".format(
        *best.as_tuple(), scaling.constraint_value(best)))
    if args.phi is not None:
        scaled = scaling.compound_scale(best, args.phi)
        print("scaled triple (phi={}): depth={:.6f} width={:.6f} resolution={:.6f}".format(
            args.phi, *scaled.as_tuple()))
        if args.plan_output:
            base = (scaling.ArchPlan.from_json(Path(args.base_plan).read_text())
                    if args.base_plan else scaling.B0_PLAN)
            plan = scaling.plan_variant(base, scaled, args.fix_resolution, args.stage4_extra)
            with io.atomic_write(args.plan_output) as fh:
                fh.write(plan.to_json() + "\n")
    return EXIT_OK


def cmd_augment(args) -> int:
    img = io.read_ppm(args.image)
    labels, boxes = io.read_boxes(args.boxes) if args.boxes else ([], [])
    policy = (augment.Policy.from_json(Path(args.policy).read_text())
              if args.policy else augment.default_policy())
    image_id = args.image_id or Path(args.image).stem
    rng = sampling.make_rng(augment.derive_seed(args.seed, image_id))
    out, new_boxes, kept = augment.apply_policy(img, boxes, policy, rng, return_indices=True)
    io.write_ppm(out, args.output_image)
    if args.output_boxes:
        io.write_boxes([labels[i] for i in kept], new_boxes, args.output_boxes)
    print(f"{image_id}: {len(new_boxes)}/{len(boxes)} boxes kept")
    return EXIT_OK


def _read_loss_rows(path):
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or rec[0].startswith("#") or rec[0] == "Kind":
                continue
            kind = rec[0].strip()
            try:
                vals = np.array([float(v) for v in rec[1:] if v.strip()])
            except ValueError:
                raise DataError(f"{path}: row {lineno}: bad number") from None
            rows.append((lineno, kind, vals))
    pairs = []
    for i in range(0, len(rows), 2):
        if i + 1 >= len(rows) or rows[i][1] != "logits" or rows[i + 1][1] != "target":
            raise DataError(f"{path}: row {rows[i][0]}: expected a 'logits' row followed "
                            "by a 'target' row")
        pairs.append((rows[i][0], rows[i][2], rows[i + 1][2]))
    return pairs


def cmd_loss_check(args) -> int:
    out_rows = []
    worst = 0.0
    for n, (lineno, x, y) in enumerate(_read_loss_rows(args.input)):
        try:
            value = loss.distributed_softmax_ce(x, y)
            grad = loss.distributed_softmax_grad(x, y)
            disc = loss.finite_diff_check(x, y, args.epsilon)
        except (ValueError, IndexError) as e:
            raise DataError(f"{args.input}: row {lineno}: {e}") from None
        worst = max(worst, disc)
        g = " ".join(f"{v:.9e}" for v in grad)
        out_rows.append((n, f"{value:.12f}", f"{disc:.3e}", g))
        print(f"pair {n}: loss={value:.12f} max_fd_discrepancy={disc:.3e} grad=[{g}]")
    if args.output:
        io.write_csv(args.output, ("Pair", "Loss", "MaxFDDiscrepancy", "Gradient"), out_rows)
    print(f"worst finite-difference discrepancy: {worst:.3e}")
    return EXIT_OK


def cmd_expand(args) -> int:
    if not args.hierarchy:
        raise DataError("expand requires --hierarchy")
    h = _hierarchy(args)
    if args.detections:
        dets = expand_detections(h, io.read_detections(args.detections), args.mode)
        io.write_detections(dets, args.output, oi_order=args.oi_order)
        print(f"{len(dets)} detections written")
    else:
        gts = expand_ground_truth(h, io.read_ground_truth(args.ground_truth))
        io.write_ground_truth(gts, args.output, oi_order=args.oi_order)
        print(f"{len(gts)} ground-truth boxes written")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _global_flags(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    parser.add_argument("--jobs", type=int, default=d(1), help="worker threads")
    parser.add_argument("--hierarchy", default=d(None), help="label hierarchy JSON")
    parser.add_argument("--oi-order", action="store_true", default=d(False),
                        help="write XMin,XMax,YMin,YMax column order")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oidkit", description=__doc__.splitlines()[0])
    _global_flags(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("evaluate", parents=[common], help="hierarchical per-label AP and mAP")
    s.add_argument("-d", "--detections", required=True)
    s.add_argument("-g", "--ground-truth", required=True)
    s.add_argument("--iou", type=float, default=evaluation.DEFAULT_IOU)
    s.add_argument("-o", "--output", help="per-label AP CSV")
    s.add_argument("--flat", action="store_true", help="skip hierarchical expansion")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ensemble", parents=[common], help="fuse several models' detections")
    s.add_argument("-m", "--manifest", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--alpha", type=float, help="override the manifest's alpha")
    s.add_argument("--thresholds", help="LabelName,Threshold CSV from nms-search")
    s.add_argument("--default-nms", type=float, default=0.5)
    s.add_argument("--classifier", help="classifier scores in detection CSV layout")
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("nms-search", parents=[common], help="per-label NMS threshold search")
    s.add_argument("-d", "--detections", required=True)
    s.add_argument("-g", "--ground-truth", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--default", type=float, default=0.5, help="default NMS threshold d")
    s.add_argument("--grid", help="comma-separated thresholds (default 0.30..0.70 step 0.05)")
    s.add_argument("--mode", choices=(ensembling.PENALTY, ensembling.INVERSE_SQUARE),
                   default=ensembling.PENALTY)
    s.add_argument("--lam", type=float, default=1.0)
    s.add_argument("--iou", type=float, default=evaluation.DEFAULT_IOU)
    s.set_defaults(func=cmd_nms_search)

    s = sub.add_parser("sample", parents=[common], help="class-aware sampling stream")
    s.add_argument("-g", "--ground-truth", required=True)
    s.add_argument("-n", type=int, required=True)
    s.add_argument("--draws", required=True, help="output Category,ImageID CSV")
    s.add_argument("--histogram", help="output per-category exposure CSV")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("scale-search", parents=[common], help="constrained compound-scaling search")
    s.add_argument("--grid", help='JSON {"depth":[..],"width":[..],"resolution":[..],'
                                  '"target":2,"tol":0.05}')
    s.add_argument("--oracle", default="builtin:separable-concave",
                   help="builtin:<name> or exec:<command>")
    s.add_argument("-o", "--output", help="full scan CSV")
    s.add_argument("--phi", type=float, help="compound exponent applied to the winner")
    s.add_argument("--base-plan", help="stage plan JSON (default: B0 block repeats)")
    s.add_argument("--fix-resolution", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--stage4-extra", type=int, default=0)
    s.add_argument("--plan-output", help="write the scaled stage plan JSON (needs --phi)")
    s.set_defaults(func=cmd_scale_search)

    s = sub.add_parser("augment", parents=[common], help="apply an auto-augmentation policy")
    s.add_argument("--image", required=True, help="binary PPM (P6)")
    s.add_argument("--boxes", help="LabelName,XMin,YMin,XMax,YMax CSV")
    s.add_argument("--policy", help="policy JSON (default: built-in five sub-policies)")
    s.add_argument("--image-id", help="id mixed into the seed (default: file stem)")
    s.add_argument("--output-image", required=True)
    s.add_argument("--output-boxes")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("loss-check", parents=[common],
                       help="distributed softmax loss, gradient and finite-difference check")
    s.add_argument("-i", "--input", required=True,
                   help="CSV of alternating 'logits,...' and 'target,...' rows")
    s.add_argument("--epsilon", type=float, default=1e-5)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_loss_check)

    s = sub.add_parser("expand", parents=[common], help="expand labels to ancestors")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("-d", "--detections")
    src.add_argument("-g", "--ground-truth")
    s.add_argument("--mode", choices=EXPANSION_MODES, default=EXPANSION_MODES[0])
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_expand)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as e:
        print(f"oidkit {args.command}: infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataError, ValueError, KeyError, IndexError, OSError) as e:
        print(f"oidkit {args.command}: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
