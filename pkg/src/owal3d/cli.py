"""Command-line entry point: ``owal3d {simulate,score,select,evaluate}``.

Exit codes: 0 success, 2 configuration or usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Sequence

from .core import ClassCatalog
from .io import (
    ConfigError,
    DataError,
    atomic_write,
    csv_text,
    load_config,
    read_catalog,
    read_dump,
    read_ids,
    read_truth_dump,
)
from .metrics import cost_curve, evaluate_detections
from .policies import POLICIES, select_frames
from .scoring import (
    confidence_margin_score,
    entropy_score,
    gradnorm_surrogate_score,
    label_distribution,
    olc_score,
    random_score,
    relationship_diagnostics,
)
from .simulation import generate_world, run_experiment

log = logging.getLogger("owal3d")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
SCORE_POLICIES = ("olc", "entropy", "gradnorm", "margin", "random")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _map_cell(d: dict) -> str:
    return ";".join(f"{k}={format(v, '.17g') if isinstance(v, float) else v}" for k, v in sorted(d.items()))


# ------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    world = generate_world(cfg.world)
    trace = run_experiment(
        world,
        cfg.policy,
        cfg.protocol,
        detector=cfg.detector,
        crb=cfg.crb,
        olc_first_round=cfg.olc_first_round,
        iou_thresholds=cfg.iou_thresholds,
        default_iou=cfg.default_iou,
    )
    os.makedirs(args.out, exist_ok=True)

    doc = {"config": cfg.to_dict(), **trace.to_dict()}
    atomic_write(os.path.join(args.out, "trace.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")

    class_ids = list(cfg.world.catalog().all_ids)
    header = [
        "round",
        "cumulative_boxes",
        "cumulative_known",
        "cumulative_unknown",
        "map_unk",
        "map_k",
        "map_h",
        *(f"ap_{c}" for c in class_ids),
    ]
    by_round = {r.round_index: r for r in trace.reports}
    rows = [
        [
            row.round_index,
            row.cumulative_boxes,
            row.cumulative_known,
            row.cumulative_unknown,
            row.map_unk,
            row.map_k,
            row.map_h,
            *(float(by_round[row.round_index].per_class_ap[c]) for c in class_ids),
        ]
        for row in cost_curve(trace)
    ]
    atomic_write(os.path.join(args.out, "metrics.csv"), csv_text(header, rows))

    sel_header = ["round", "rank", "frame_id", "olc", "n_boxes", "p_unknown", "gt_known", "gt_unknown"]
    sel_rows = [
        [s.round_index, rank, d["frame_id"], d["olc"], d["n_boxes"], d["p_unknown"], d["gt_known"], d["gt_unknown"]]
        for s in trace.selections
        for rank, d in enumerate(s.diagnostics, 1)
    ]
    atomic_write(os.path.join(args.out, "selections.csv"), csv_text(sel_header, sel_rows))
    final = trace.reports[-1]
    print(
        f"{cfg.policy}: {len(trace.selections)} rounds, {final.cumulative_cost} boxes, "
        f"mAP_unk {final.map_unk:.4f} mAP_k {final.map_k:.4f} mAP_H {final.map_h:.4f}"
    )
    return EXIT_OK


def _catalog_for(frames, path: str | None) -> ClassCatalog:
    if path:
        return read_catalog(path)
    labels = sorted({b.label for f in frames for b in f.boxes})
    if not labels:
        raise ConfigError("--catalog is required when the dump has no boxes")
    return ClassCatalog(tuple(labels))


def cmd_score(args) -> int:
    frames = read_dump(args.dump)
    catalog = read_catalog(args.catalog)
    scorer = {
        "olc": lambda f: olc_score(f, catalog),
        "entropy": lambda f: entropy_score(f, catalog),
        "gradnorm": lambda f: gradnorm_surrogate_score(f, catalog),
        "margin": confidence_margin_score,
        "random": lambda f: random_score(f, args.seed),
    }[args.policy]
    rows = []
    for f in frames:
        try:
            dist = label_distribution(f, catalog)
            scored = scorer(f)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        row = [f.frame_id, scored.score, dist.n_boxes, dist.unknown]
        if args.diagnostics:
            if dist.n_boxes:
                diag = relationship_diagnostics(dist, f)
                hm = diag.get("harmonic_mean")
                row += [
                    _map_cell(diag["counts"]),
                    _map_cell(diag["mean_conf"]),
                    "" if hm is None else hm,
                    str(diag["max_entropy_condition"]).lower(),
                ]
            else:
                row += ["", "", "", "false"]
        rows.append((scored.score, f.frame_id, row))
    rows.sort(key=lambda t: (-t[0], t[1]))
    header = ["frame_id", "score", "n_boxes", "p_unknown"]
    if args.diagnostics:
        header += ["counts", "mean_conf", "harmonic_mean", "max_entropy_condition"]
    _emit(args.out, csv_text(header, (r for _, _, r in rows)))
    return EXIT_OK


def cmd_select(args) -> int:
    frames = read_dump(args.dump)
    labeled_ids = set(read_ids(args.labeled)) if args.labeled else set()
    needs_catalog = args.policy not in ("random", "coreset", "margin")
    catalog = _catalog_for(frames, args.catalog) if needs_catalog or args.catalog else ClassCatalog((0,))
    labeled = [f for f in frames if f.frame_id in labeled_ids]
    unlabeled = [f for f in frames if f.frame_id not in labeled_ids]
    if args.k > len(unlabeled):
        raise ConfigError(f"--k {args.k} exceeds the {len(unlabeled)} unlabeled frames in the dump")
    try:
        picked = select_frames(
            args.policy,
            unlabeled,
            catalog,
            args.k,
            args.round,
            labeled=labeled,
            seed=args.seed,
        )
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _emit(args.out, csv_text(["rank", "frame_id"], ([i, fid] for i, fid in enumerate(picked, 1))))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not 0 < args.tau < 1:
        raise ConfigError("--tau must be in (0, 1)")
    preds = {f.frame_id: f for f in read_dump(args.pred)}
    truth = read_truth_dump(args.truth)
    missing = sorted(set(preds) - set(truth))
    if missing:
        raise DataError(f"prediction frame {missing[0]!r} has no truth line")
    if args.catalog:
        catalog = read_catalog(args.catalog)
        known, unknown = catalog.known_ids, catalog.unknown_ids
    else:
        known = tuple(sorted({b.label for boxes in truth.values() for b in boxes}))
        unknown = ()
    report = evaluate_detections(preds, truth, known, unknown, default_iou=args.tau)
    rows = [[f"ap_{c}", float(report.per_class_ap[c])] for c in (*known, *unknown)]
    rows += [["map_unk", report.map_unk], ["map_k", report.map_k], ["map_h", report.map_h]]
    _emit(args.out, csv_text(["metric", "value"], rows))
    return EXIT_OK


def _emit(path: str | None, text: str) -> None:
    if path:
        atomic_write(path, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="owal3d", description="Open-world active learning for 3D detection.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one simulated experiment")
    s.add_argument("--config", help="experiment config JSON (default: bundled config)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("score", help="score every frame of a prediction dump")
    s.add_argument("--policy", choices=SCORE_POLICIES, default="olc")
    s.add_argument("--dump", required=True, help="prediction JSONL")
    s.add_argument("--catalog", required=True, help="catalog JSON")
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.add_argument("--seed", type=int, default=0, help="seed for --policy random")
    s.add_argument("--diagnostics", action="store_true", help="add per-class counts and mean confidences")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("select", help="pick frames from a prediction dump")
    s.add_argument("--policy", choices=POLICIES, required=True)
    s.add_argument("--dump", required=True, help="prediction JSONL (labeled and unlabeled frames)")
    s.add_argument("--k", type=int, required=True, help="frames to pick")
    s.add_argument("--labeled", help="file of already-labeled frame ids, one per line")
    s.add_argument("--catalog", help="catalog JSON (default: every label in the dump is known)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--round", type=int, default=1, help="round index; open-crb uses OLC on round 1")
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("evaluate", help="per-class AP and mAP summary")
    s.add_argument("--pred", required=True, help="prediction JSONL")
    s.add_argument("--truth", required=True, help="truth JSONL")
    s.add_argument("--tau", type=float, default=0.5, help="IoU threshold")
    s.add_argument("--catalog", help="catalog JSON splitting known and unknown classes")
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"owal3d: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"owal3d: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"owal3d: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
