from fractions import Fraction
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from owal3d.core import FrameRecord
from owal3d.metrics import (
    MetricReport,
    average_precision,
    bev_iou,
    cost_curve,
    evaluate_detections,
    harmonic_map,
    interpolate_at_cost,
)

from conftest import gtbox, pbox


def box(x, y, l, w):
    return SimpleNamespace(center=(x, y, 0.0), size=(l, w, 1.0))


# ------------------------------------------------------------------- IoU


def test_iou_examples():
    a = box(0, 0, 1, 1)
    assert bev_iou(a, a) == 1.0
    assert bev_iou(a, box(5, 5, 1, 1)) == 0.0
    assert bev_iou(a, box(0.5, 0, 1, 1)) == pytest.approx(1 / 3, abs=1e-15)
    # touching edges share no area
    assert bev_iou(a, box(1, 0, 1, 1)) == 0.0


def test_iou_against_monte_carlo_area():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = box(*rng.uniform(-1, 1, 2), *rng.uniform(0.5, 2, 2))
        b = box(*rng.uniform(-1, 1, 2), *rng.uniform(0.5, 2, 2))
        pts = rng.uniform(-3, 3, size=(400_000, 2))

        def inside(bx):
            return (np.abs(pts[:, 0] - bx.center[0]) <= bx.size[0] / 2) & (np.abs(pts[:, 1] - bx.center[1]) <= bx.size[1] / 2)

        ia, ib = inside(a), inside(b)
        mc = (ia & ib).sum() / max((ia | ib).sum(), 1)
        assert bev_iou(a, b) == pytest.approx(mc, abs=0.01)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.lists(st.floats(0.1, 5), min_size=2, max_size=2),
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.lists(st.floats(0.1, 5), min_size=2, max_size=2),
    st.floats(0.01, 100),
)
def test_iou_symmetric_bounded_and_scale_invariant(c1, s1, c2, s2, k):
    a, b = box(*c1, *s1), box(*c2, *s2)
    v = bev_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(bev_iou(b, a), abs=1e-12)
    scaled = bev_iou(box(c1[0] * k, c1[1] * k, s1[0] * k, s1[1] * k), box(c2[0] * k, c2[1] * k, s2[0] * k, s2[1] * k))
    assert scaled == pytest.approx(v, abs=1e-9)


# -------------------------------------------------------------------- AP


def test_ap_examples():
    gt = {"f": [box(0, 0, 1, 1)]}
    assert average_precision([("f", 0.9, box(0, 0, 1, 1))], gt) == 1.0
    fp_then_tp = [("f", 0.9, box(9, 9, 1, 1)), ("f", 0.8, box(0, 0, 1, 1))]
    assert average_precision(fp_then_tp, gt) == 0.5
    assert average_precision(fp_then_tp, {}) == 0.0
    assert average_precision([], gt) == 0.0
    # duplicate detection of one object counts once
    assert average_precision([("f", 0.9, box(0, 0, 1, 1)), ("f", 0.8, box(0, 0, 1, 1))], gt) == 1.0


def exact_iou(a, b):
    ix = min(a[0] + a[2] / 2, b[0] + b[2] / 2) - max(a[0] - a[2] / 2, b[0] - b[2] / 2)
    iy = min(a[1] + a[3] / 2, b[1] + b[3] / 2) - max(a[1] - a[3] / 2, b[1] - b[3] / 2)
    if ix <= 0 or iy <= 0:
        return Fraction(0)
    inter = ix * iy
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def oracle_ap(dets, truth, tau):
    """Exhaustive PR integration in exact arithmetic.

    Every cut of the confidence ranking is matched from scratch; the
    interpolated precision at recall level r is the best precision among all
    cuts reaching r.
    """
    n_gt = sum(len(v) for v in truth.values())
    if n_gt == 0 or not dets:
        return Fraction(0)
    ranked = sorted(range(len(dets)), key=lambda i: (-dets[i][1], dets[i][0], i))
    cuts = []
    for n in range(1, len(ranked) + 1):
        used = set()
        tp = 0
        for i in ranked[:n]:
            fid, _, b = dets[i]
            best, best_j = Fraction(-1), None
            for j, g in enumerate(truth.get(fid, [])):
                if (fid, j) in used:
                    continue
                v = exact_iou(b, g)
                if v > best:
                    best, best_j = v, j
            if best_j is not None and best >= tau:
                used.add((fid, best_j))
                tp += 1
        cuts.append((Fraction(tp, n_gt), Fraction(tp, n)))
    total = Fraction(0)
    for k in range(1, 41):
        reachable = [p for r, p in cuts if r >= Fraction(k, 40)]
        total += max(reachable, default=Fraction(0))
    return total / 40


def random_instance(rng):
    fids = ["a", "b"]
    truth = {f: [] for f in fids}
    for _ in range(int(rng.integers(0, 6))):
        truth[fids[rng.integers(2)]].append(tuple(Fraction(int(v)) for v in (*rng.integers(0, 4, 2), *rng.integers(1, 3, 2))))
    dets = []
    for _ in range(int(rng.integers(0, 9))):
        geom = tuple(Fraction(int(v)) for v in (*rng.integers(0, 4, 2), *rng.integers(1, 3, 2)))
        dets.append((fids[rng.integers(2)], float(rng.integers(1, 6)) / 5, geom))
    return dets, truth


def run_ap(dets, truth, tau):
    as_box = lambda g: box(*map(float, g))
    return average_precision(
        [(f, c, as_box(g)) for f, c, g in dets],
        {f: [as_box(g) for g in gs] for f, gs in truth.items() if gs},
        tau,
    )


def test_ap_matches_exact_oracle_on_random_tiny_instances():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        dets, truth = random_instance(rng)
        tau = float(rng.choice([0.1, 0.3, 0.5]))
        assert run_ap(dets, truth, tau) == pytest.approx(float(oracle_ap(dets, truth, Fraction(tau))), abs=1e-9)


# --------------------------------------------------------------- summary


def test_harmonic_examples():
    assert harmonic_map(0.2, 0.6) == pytest.approx(0.3, abs=1e-15)
    assert harmonic_map(0.7, 0.7) == pytest.approx(0.7, abs=1e-15)
    assert harmonic_map(0.0, 0.9) == 0.0


@given(st.floats(0, 1), st.floats(0, 1))
def test_harmonic_bounds(a, b):
    h = harmonic_map(a, b)
    assert min(a, b) - 1e-12 <= h <= (a + b) / 2 + 1e-12
    assert h == pytest.approx(harmonic_map(b, a))


def test_evaluate_groups_and_absent_classes():
    truth = {"t": [gtbox(1), gtbox(4, center=(10, 0, 0))]}
    preds = {"t": FrameRecord("t", (pbox(1, 0.9), pbox(3, 0.5, center=(20, 0, 0))))}
    rep = evaluate_detections(preds, truth, known_ids=(1, 2), unknown_ids=(4, 5))
    assert rep.per_class_ap == {1: 1.0, 2: 0.0, 4: 0.0, 5: 0.0}
    assert rep.absent_classes == (2, 5)
    assert rep.map_k == 1.0
    # the undetected unknown class with ground truth counts with AP 0
    assert rep.map_unk == 0.0 and rep.map_h == 0.0


def test_evaluate_per_class_threshold():
    truth = {"t": [gtbox(1, size=(1, 1, 1))]}
    preds = {"t": FrameRecord("t", (pbox(1, 0.9, center=(0.5, 0, 0)),))}
    assert evaluate_detections(preds, truth, (1,), ()).map_k == 0.0
    assert evaluate_detections(preds, truth, (1,), (), iou_thresholds={1: 0.3}).map_k == 1.0


# ------------------------------------------------------------ cost curve


def report(r, k, u, unk, kn):
    return MetricReport({}, unk, kn, harmonic_map(unk, kn), r, k, u)


def test_cost_curve_replays_reports():
    reps = [report(2, 30, 10, 0.2, 0.5), report(0, 0, 0, 0.0, 0.1), report(1, 10, 5, 0.1, 0.4)]
    rows = cost_curve(reps)
    assert [r.round_index for r in rows] == [0, 1, 2]
    by_round = {r.round_index: r for r in reps}
    for row in rows:
        src = by_round[row.round_index]
        assert row.cumulative_boxes == src.cumulative_known + src.cumulative_unknown
        assert (row.map_unk, row.map_k, row.map_h) == (src.map_unk, src.map_k, src.map_h)
    assert [r.cumulative_boxes for r in rows] == sorted(r.cumulative_boxes for r in rows)
    assert len(cost_curve([report(0, 0, 0, 0.1, 0.1)])) == 1
    with pytest.raises(ValueError):
        cost_curve([report(0, 10, 0, 0, 0), report(1, 5, 0, 0, 0)])


def test_interpolate_at_cost():
    rows = cost_curve([report(0, 0, 0, 0.0, 0.0), report(1, 100, 0, 0.2, 0.6)])
    assert interpolate_at_cost(rows, 50) == pytest.approx(0.15)
    assert interpolate_at_cost(rows, 50, "map_k") == pytest.approx(0.3)
    assert interpolate_at_cost(rows, 1e6) == pytest.approx(0.3)
