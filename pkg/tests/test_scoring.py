import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from owal3d.core import ClassCatalog, FrameRecord
from owal3d.scoring import (
    ScoredFrame,
    confidence_margin_score,
    coreset_select,
    coreset_select_matrix,
    entropy_score,
    gradnorm_surrogate_score,
    label_distribution,
    olc_score,
    random_score,
    relationship_diagnostics,
    select_top_k,
)

from conftest import frame, pbox


def mp_entropy(p):
    """Arbitrary-precision natural-log entropy of exact fractions."""
    with mpmath.workdps(50):
        return float(-sum(mpmath.mpf(x) * mpmath.log(mpmath.mpf(x)) for x in p if x > 0))


# ---------------------------------------------------------------- examples


@pytest.mark.parametrize(
    "pairs, expected",
    [
        ([(1, 1.0)], (1.0, 0.0, 0.0)),
        ([(1, 0.5), (2, 0.5)], (0.25, 0.25, 0.5)),
        ([(1, 1.0), (2, 1.0), (1, 0.0)], (1 / 3, 1 / 3, 1 / 3)),
    ],
)
def test_label_distribution_examples(cat2, pairs, expected):
    dist = label_distribution(frame("f", pairs), cat2)
    assert np.allclose(dist.components, expected, atol=1e-15)
    assert dist.n_boxes == len(pairs)


def test_label_distribution_rejects_unlisted_class(cat2):
    with pytest.raises(ValueError, match="label 3"):
        label_distribution(frame("f", [(3, 0.5)]), cat2)


def test_label_distribution_uses_discovered_classes():
    cat = ClassCatalog((1,), (7,), frozenset({7}))
    dist = label_distribution(frame("f", [(7, 0.5)]), cat)
    assert dist.class_ids == (1, 7)
    assert np.allclose(dist.components, (0.0, 0.5, 0.5))


def test_empty_frame_is_point_mass_on_unknown(cat2):
    dist = label_distribution(FrameRecord("e"), cat2)
    assert list(dist.components) == [0.0, 0.0, 1.0]
    assert olc_score(FrameRecord("e"), cat2).score == 0.0


@pytest.mark.parametrize(
    "pairs, exact",
    [
        ([(1, 1.0)], [1]),
        ([(1, 1.0), (2, 1.0), (1, 0.0)], [mpmath.mpf(1) / 3] * 3),
        ([(1, 0.5), (2, 0.5)], [mpmath.mpf(1) / 4, mpmath.mpf(1) / 4, mpmath.mpf(1) / 2]),
    ],
)
def test_olc_examples_against_mpmath(cat2, pairs, exact):
    score = olc_score(frame("f", pairs), cat2).score
    assert score == pytest.approx(mp_entropy(exact), abs=1e-12)


def test_olc_example_values_as_published(cat2):
    # 0.0, 1.039721 and ln 3 = 1.098612 to six decimals
    got = [olc_score(frame("f", p), cat2).score for p in ([(1, 1.0)], [(1, 0.5), (2, 0.5)], [(1, 1.0), (2, 1.0), (1, 0.0)])]
    assert [round(g, 6) for g in got] == [0.0, 1.039721, 1.098612]


def test_olc_diagnostics_carry_distribution(cat2):
    s = olc_score(frame("f", [(1, 0.5), (2, 0.5)]), cat2)
    assert s.diagnostics["n_boxes"] == 2
    assert s.diagnostics["p_unknown"] == 0.5
    assert np.allclose(s.diagnostics["distribution"].components, (0.25, 0.25, 0.5))


@pytest.mark.parametrize(
    "pairs, exact",
    [
        ([(1, 1.0), (2, 1.0)], [0.5, 0.5]),
        ([(1, 1.0)], [1.0]),
        ([(1, 0.5), (2, 0.5)], [0.5, 0.5]),
        ([(1, 0.0)], []),
    ],
)
def test_entropy_examples(cat2, pairs, exact):
    assert entropy_score(frame("f", pairs), cat2).score == pytest.approx(mp_entropy(exact), abs=1e-12)


def test_relationship_balanced_example(cat2):
    f = frame("f", [(1, 2 / 3), (2, 2 / 3)])
    d = relationship_diagnostics(label_distribution(f, cat2), f)
    assert d["counts"] == {1: 1, 2: 1}
    assert d["mean_conf"] == pytest.approx({1: 2 / 3, 2: 2 / 3})
    assert d["harmonic_mean"] == pytest.approx(2 / 3, abs=1e-12)
    assert d["max_entropy_condition"] is True


def test_relationship_absent_class(cat2):
    f = frame("f", [(1, 1.0)])
    d = relationship_diagnostics(label_distribution(f, cat2), f)
    assert "harmonic_mean" not in d and 2 not in d["counts"]
    assert d["max_entropy_condition"] is False


def test_relationship_equal_known_masses_but_heavy_unknown(cat2):
    f = frame("f", [(1, 0.2)] * 5 + [(2, 1.0)])
    dist = label_distribution(f, cat2)
    d = relationship_diagnostics(dist, f)
    assert 5 * d["mean_conf"][1] == pytest.approx(1.0) and d["mean_conf"][2] == pytest.approx(1.0)
    assert dist.unknown == pytest.approx(2 / 3)
    assert d["max_entropy_condition"] is False


def test_relationship_needs_boxes(cat2):
    with pytest.raises(ValueError):
        relationship_diagnostics(label_distribution(FrameRecord("e"), cat2), FrameRecord("e"))


def test_gradnorm_examples(cat2):
    one = lambda s: FrameRecord("f", (pbox(1 if s[0] >= s[1] else 2, max(s), scores=s),))
    assert gradnorm_surrogate_score(one((0.5, 0.5)), cat2).score == 0.0
    assert gradnorm_surrogate_score(one((1.0, 0.0)), cat2).score == -1.0
    # per-box L1 gaps 0.1 and 0.3 average to 0.2
    two = FrameRecord("f", (pbox(1, 0.55, scores=(0.55, 0.45)), pbox(1, 0.65, scores=(0.65, 0.35))))
    assert gradnorm_surrogate_score(two, cat2).score == pytest.approx(-0.2)
    assert gradnorm_surrogate_score(FrameRecord("e"), cat2).score == 1.0
    with pytest.raises(ValueError, match="scores"):
        gradnorm_surrogate_score(frame("f", [(1, 0.5)]), cat2)


def test_margin_examples():
    f = FrameRecord("f", (pbox(1, 0.9, scores=(0.9, 0.1)),))
    assert confidence_margin_score(f).score == pytest.approx(-0.8)
    f = FrameRecord("f", (pbox(1, 0.6, scores=(0.6, 0.4)), pbox(1, 0.5, scores=(0.5, 0.5))))
    assert confidence_margin_score(f).score == pytest.approx(-0.1)
    with pytest.raises(ValueError, match="scores"):
        confidence_margin_score(frame("f", [(1, 0.5)]))


def test_random_score_deterministic_and_in_range():
    frames = [FrameRecord(f"f{i}") for i in range(50)]
    a = [random_score(f, 1).score for f in frames]
    assert a == [random_score(f, 1).score for f in frames]
    assert a != [random_score(f, 2).score for f in frames]
    assert all(0.0 <= x < 1.0 for x in a)


def test_select_top_k_examples():
    s = [ScoredFrame("a", 0.5, "x"), ScoredFrame("b", 1.0, "x"), ScoredFrame("c", 0.5, "x")]
    assert select_top_k(s, 2) == ["b", "a"]
    assert select_top_k(s, 3) == ["b", "a", "c"]
    same = [ScoredFrame(i, 0.0, "x") for i in "dbca"]
    assert select_top_k(same, 4) == ["a", "b", "c", "d"]
    with pytest.raises(ValueError):
        select_top_k(s, 4)


def test_scored_frame_rejects_non_finite():
    with pytest.raises(ValueError):
        ScoredFrame("a", math.inf, "x")


def test_coreset_examples():
    frames = [FrameRecord(n, (), (x,)) for n, x in [("l0", 0.0), ("u1", 1.0), ("u5", 5.0), ("u6", 6.0)]]
    assert coreset_select(frames, {"l0"}, 2) == ["u6", "u1"]
    assert coreset_select(frames, {"l0"}, 0) == []
    assert coreset_select(frames, set(), 1) == ["l0"]
    with pytest.raises(ValueError, match="embedding required"):
        coreset_select([FrameRecord("a")], set(), 1)
    with pytest.raises(ValueError, match="mixed dimensions"):
        coreset_select([FrameRecord("a", (), (0.0,)), FrameRecord("b", (), (0.0, 1.0))], set(), 1)


def test_coreset_first_step_matches_all_pairs_optimum():
    # a 2-pick greedy trace from {0} chooses 6 then the lower id of the tie
    pts = {"a": 1.0, "b": 5.0, "c": 6.0}
    best = max(pts, key=lambda k: (abs(pts[k]), -ord(k)))
    assert best == "c"
    remaining = {k: min(abs(v), abs(v - pts[best])) for k, v in pts.items() if k != best}
    assert remaining == {"a": 1.0, "b": 1.0}


# --------------------------------------------------------------- oracles


def greedy_replay(ids, points, labeled, k):
    """Plain-Python replay of furthest-first: max of min distance, ties to smaller id."""
    anchors = [points[i] for i in ids if i in labeled]
    picks = []
    cands = sorted(i for i in ids if i not in labeled)
    for step in range(k):
        def key(i):
            ds = [math.dist(points[i], a) for a in anchors]
            return min(ds) if ds else math.inf

        remaining = [i for i in cands if i not in picks]
        best = max(remaining, key=lambda i: (key(i), [-ord(ch) for ch in i]))
        # ties on distance resolve to the lexicographically smallest id
        top = key(best)
        best = min(i for i in remaining if key(i) == top)
        picks.append(best)
        anchors.append(points[best])
    return picks


@settings(max_examples=150, deadline=None)
@given(
    st.integers(1, 12).flatmap(
        lambda n: st.tuples(
            st.lists(
                st.tuples(st.integers(-3, 3), st.integers(-3, 3)), min_size=n, max_size=n
            ),
            st.sets(st.integers(0, n - 1), max_size=n - 1),
            st.integers(0, n),
        )
    )
)
def test_coreset_matches_greedy_replay(data):
    coords, labeled_idx, k = data
    ids = [f"f{i:02d}" for i in range(len(coords))]
    labeled = {ids[i] for i in labeled_idx}
    k = min(k, len(ids) - len(labeled))
    points = {i: tuple(map(float, c)) for i, c in zip(ids, coords)}
    frames = [FrameRecord(i, (), points[i]) for i in ids]
    assert coreset_select(frames, labeled, k) == greedy_replay(ids, points, labeled, k)


# ------------------------------------------------------------ properties

confidences = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def random_frames(draw, max_classes=5, max_boxes=12):
    c = draw(st.integers(1, max_classes))
    pairs = draw(st.lists(st.tuples(st.integers(1, c), confidences), min_size=1, max_size=max_boxes))
    return ClassCatalog(tuple(range(1, c + 1))), pairs


@settings(max_examples=300, deadline=None)
@given(random_frames())
def test_simplex_and_bounds(data):
    cat, pairs = data
    f = frame("f", pairs)
    dist = label_distribution(f, cat)
    assert abs(dist.components.sum() - 1.0) <= 1e-9
    assert np.all(dist.components >= 0) and np.all(dist.components <= 1)
    s = olc_score(f, cat).score
    assert 0.0 <= s <= math.log(cat.n_effective + 1) + 1e-12


@settings(max_examples=200, deadline=None)
@given(random_frames(), st.randoms(use_true_random=False))
def test_permutation_invariance(data, rnd):
    cat, pairs = data
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a, b = frame("f", pairs), frame("f", shuffled)
    assert olc_score(a, cat).score == pytest.approx(olc_score(b, cat).score, abs=1e-12)
    assert entropy_score(a, cat).score == pytest.approx(entropy_score(b, cat).score, abs=1e-12)
    c = cat.n_effective
    with_scores = lambda ps: FrameRecord(
        "f", tuple(pbox(l, y, scores=tuple(y if j == l - 1 else (1 - y) / max(c - 1, 1) * (c > 1) for j in range(c)))
                   for l, y in ps if c == 1 or y >= (1 - y) / max(c - 1, 1))
    )
    assert gradnorm_surrogate_score(with_scores(pairs), cat).score == pytest.approx(
        gradnorm_surrogate_score(with_scores(shuffled), cat).score, abs=1e-12
    )


@settings(max_examples=200, deadline=None)
@given(random_frames(), st.floats(0.05, 0.95))
def test_lowering_confidences_raises_unknown_mass(data, factor):
    cat, pairs = data
    assume(sum(y for _, y in pairs) > 1e-6)
    before = label_distribution(frame("f", pairs), cat)
    after = label_distribution(frame("f", [(c, y * factor) for c, y in pairs]), cat)
    # known components keep their proportions, the unknown mass strictly grows
    assert np.allclose(after.known, before.known * factor, atol=1e-12)
    assert after.unknown > before.unknown


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.randoms(use_true_random=False))
def test_max_entropy_attained_on_equal_mass_construction(c, k, rnd):
    # k confident boxes per class plus k zero-confidence boxes: every slot is 1/(c+1)
    pairs = [(cls, 1.0) for cls in range(1, c + 1) for _ in range(k)]
    pairs += [(rnd.randint(1, c), 0.0) for _ in range(k)]
    rnd.shuffle(pairs)
    cat = ClassCatalog(tuple(range(1, c + 1)))
    f = frame("f", pairs)
    assert olc_score(f, cat).score == pytest.approx(math.log(c + 1), abs=1e-12)
    d = relationship_diagnostics(label_distribution(f, cat), f)
    assert d["max_entropy_condition"] is True


def eq4_frame(n1, n2, rnd):
    """C=2 frame satisfying the equal-mass condition with spread-out confidences."""
    n = n1 + n2
    p1, p2 = n / (3 * n1), n / (3 * n2)

    def spread(count, mean):
        # pairwise +/- offsets keep the mean and stay inside [0, 1]
        room = min(mean, 1 - mean)
        vals = [mean] * count
        for i in range(0, count - 1, 2):
            d = rnd.uniform(0, room)
            vals[i] += d
            vals[i + 1] -= d
        return vals

    pairs = [(1, y) for y in spread(n1, p1)] + [(2, y) for y in spread(n2, p2)]
    rnd.shuffle(pairs)
    return frame("f", pairs), p1, p2


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.randoms(use_true_random=False))
def test_harmonic_mean_is_two_thirds_on_all_solutions(n1, n2, rnd):
    assume(n2 <= 2 * n1 and n1 <= 2 * n2)  # both mean confidences <= 1
    cat = ClassCatalog((1, 2))
    f, p1, p2 = eq4_frame(n1, n2, rnd)
    d = relationship_diagnostics(label_distribution(f, cat), f)
    assert d["max_entropy_condition"] is True
    assert abs(d["harmonic_mean"] - 2 / 3) < 1e-6
    # inverse relationship: n2/n1 = mean1/mean2
    assert d["counts"][2] / d["counts"][1] == pytest.approx(d["mean_conf"][1] / d["mean_conf"][2], rel=1e-9)


@pytest.mark.parametrize("n2, p2", [(6, 0.5), (4, 0.9), (10, 0.25), (3, 1.0)])
def test_count_ratio_proportional_to_mean_confidence(n2, p2):
    # class 2 fixed, class 1 varies along equal known mass n1 * p1 = n2 * p2
    rnd = __import__("random").Random(n2)
    cat = ClassCatalog((1, 2))
    mass = n2 * p2
    xs, ys = [], []
    for n1 in range(math.ceil(mass), math.ceil(mass) + 15):
        p1 = mass / n1
        pairs = [(1, p1)] * n1 + [(2, p2)] * n2
        rnd.shuffle(pairs)
        f = frame("f", pairs)
        dist = label_distribution(f, cat)
        d = relationship_diagnostics(dist, f)
        assert dist.known[0] == pytest.approx(dist.known[1], abs=1e-12)
        xs.append(d["mean_conf"][1])
        ys.append(d["counts"][2] / d["counts"][1])
    slope, intercept = np.polyfit(xs, ys, 1)
    assert slope == pytest.approx(1 / p2, rel=1e-6)
    assert abs(intercept) < 1e-6
    assert np.max(np.abs(np.polyval([slope, intercept], xs) - ys)) < 1e-6
