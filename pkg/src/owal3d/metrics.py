"""Detection evaluation: BEV IoU, 40-point interpolated AP, the open-world
mAP summary and cost-vs-performance curves."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import FrameRecord, GroundTruthBox

__all__ = [
    "MetricReport",
    "CostRow",
    "bev_iou",
    "average_precision",
    "harmonic_map",
    "evaluate_detections",
    "cost_curve",
    "interpolate_at_cost",
]

log = logging.getLogger(__name__)

N_RECALL_POINTS = 40


def bev_iou(a, b) -> float:
    """Axis-aligned bird's-eye-view IoU on (x, y, length, width).

    Heading is ignored. Works on anything with ``center`` and ``size``.
    """
    ax, ay = a.center[0], a.center[1]
    bx, by = b.center[0], b.center[1]
    al, aw = a.size[0], a.size[1]
    bl, bw = b.size[0], b.size[1]
    ix = min(ax + al / 2, bx + bl / 2) - max(ax - al / 2, bx - bl / 2)
    iy = min(ay + aw / 2, by + bw / 2) - max(ay - aw / 2, by - bw / 2)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # rounding can push identical boxes a hair above 1
    return min(inter / (al * aw + bl * bw - inter), 1.0)


def average_precision(
    detections: Sequence[tuple[str, float, object]],
    truth: Mapping[str, Sequence[object]],
    iou_threshold: float = 0.5,
) -> float:
    """40-recall-point interpolated AP for one class.

    Args:
        detections: ``(frame_id, confidence, box)`` triples for the class.
            Their order within a frame is the box index used for tie-breaks.
        truth: frame id -> ground-truth boxes of the same class.
        iou_threshold: minimum IoU for a true positive.

    Returns:
        AP in [0, 1]; 0.0 when the class has no ground truth.
    """
    n_gt = sum(len(v) for v in truth.values())
    if n_gt == 0 or not detections:
        return 0.0
    order = {}
    keyed = []
    for fid, conf, box in detections:
        idx = order.get(fid, 0)
        order[fid] = idx + 1
        keyed.append((-conf, fid, idx, box))
    keyed.sort(key=lambda t: t[:3])

    matched = {fid: np.zeros(len(boxes), dtype=bool) for fid, boxes in truth.items()}
    tp = np.zeros(len(keyed), dtype=int)
    for i, (_, fid, _, box) in enumerate(keyed):
        gts = truth.get(fid, ())
        best, best_j = -1.0, -1
        for j, gt in enumerate(gts):
            if matched[fid][j]:
                continue
            iou = bev_iou(box, gt)
            if iou > best:
                best, best_j = iou, j
        if best_j >= 0 and best >= iou_threshold:
            matched[fid][best_j] = True
            tp[i] = 1

    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(keyed) + 1)
    # interpolated precision: max precision at this rank or any later rank
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for k in range(1, N_RECALL_POINTS + 1):
        # recall >= k/40, compared in integers to avoid float edge cases
        reach = np.flatnonzero(N_RECALL_POINTS * ctp >= k * n_gt)
        if reach.size:
            total += interp[reach[0]]
    return float(total / N_RECALL_POINTS)


def harmonic_map(map_unk: float, map_k: float) -> float:
    """Harmonic mean of the unknown and known mAPs; 0 if either is 0."""
    if map_unk <= 0 or map_k <= 0:
        return 0.0
    return 2.0 / (1.0 / map_unk + 1.0 / map_k)


@dataclass(frozen=True)
class MetricReport:
    per_class_ap: Mapping[int, float]
    map_unk: float
    map_k: float
    map_h: float
    round_index: int = 0
    cumulative_known: int = 0
    cumulative_unknown: int = 0
    absent_classes: tuple[int, ...] = field(default=())

    @property
    def cumulative_cost(self) -> int:
        return self.cumulative_known + self.cumulative_unknown

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "per_class_ap": {str(c): ap for c, ap in sorted(self.per_class_ap.items())},
            "map_unk": self.map_unk,
            "map_k": self.map_k,
            "map_h": self.map_h,
            "cumulative_known": self.cumulative_known,
            "cumulative_unknown": self.cumulative_unknown,
            "absent_classes": list(self.absent_classes),
        }


def evaluate_detections(
    predictions: Mapping[str, FrameRecord],
    truth: Mapping[str, Sequence[GroundTruthBox]],
    known_ids: Sequence[int],
    unknown_ids: Sequence[int],
    iou_thresholds: Mapping[int, float] | None = None,
    default_iou: float = 0.5,
    round_index: int = 0,
    cumulative_known: int = 0,
    cumulative_unknown: int = 0,
) -> MetricReport:
    """Per-class AP over the test frames and the three summary means.

    Classes without ground truth anywhere in ``truth`` are reported with AP 0
    but left out of the means. An empty group mean is 0.
    """
    iou_thresholds = iou_thresholds or {}
    per_class_dets: dict[int, list] = {}
    for fid in sorted(predictions):
        for box in predictions[fid].boxes:
            per_class_dets.setdefault(box.label, []).append((fid, box.confidence, box))
    per_class_gt: dict[int, dict[str, list]] = {}
    for fid, boxes in truth.items():
        for gt in boxes:
            per_class_gt.setdefault(gt.label, {}).setdefault(fid, []).append(gt)

    aps, absent = {}, []
    for c in (*known_ids, *unknown_ids):
        gt = per_class_gt.get(c, {})
        if not gt:
            absent.append(c)
            aps[c] = 0.0
            log.info("class %s has no ground truth in the evaluation set; excluded from means", c)
            continue
        aps[c] = average_precision(per_class_dets.get(c, []), gt, iou_thresholds.get(c, default_iou))

    def group_mean(ids):
        vals = [aps[c] for c in ids if c not in absent]
        return float(np.mean(vals)) if vals else 0.0

    map_unk = group_mean(unknown_ids)
    map_k = group_mean(known_ids)
    return MetricReport(
        aps,
        map_unk,
        map_k,
        harmonic_map(map_unk, map_k),
        round_index,
        cumulative_known,
        cumulative_unknown,
        tuple(absent),
    )


@dataclass(frozen=True)
class CostRow:
    round_index: int
    cumulative_boxes: int
    cumulative_known: int
    cumulative_unknown: int
    map_unk: float
    map_k: float
    map_h: float


def cost_curve(reports: Sequence[MetricReport]) -> list[CostRow]:
    """One row per evaluated round, in round order.

    Accepts the reports list of an experiment trace (or the trace itself).
    """
    reports = getattr(reports, "reports", reports)
    rows = [
        CostRow(
            r.round_index,
            r.cumulative_cost,
            r.cumulative_known,
            r.cumulative_unknown,
            r.map_unk,
            r.map_k,
            r.map_h,
        )
        for r in sorted(reports, key=lambda r: r.round_index)
    ]
    for prev, cur in zip(rows, rows[1:]):
        if cur.cumulative_boxes < prev.cumulative_boxes:
            raise ValueError("cumulative cost decreased between rounds")
    return rows


def interpolate_at_cost(rows: Sequence[CostRow], cost: float, column: str = "map_h") -> float:
    """Linear interpolation of a metric column at a given cumulative cost.

    Costs outside the curve clamp to its end points.
    """
    xs = np.array([r.cumulative_boxes for r in rows], dtype=float)
    ys = np.array([getattr(r, column) for r in rows], dtype=float)
    return float(np.interp(cost, xs, ys))
