"""Synthetic open-world active-learning environment.

A world is a pool of frames with ground-truth boxes drawn from per-class
priors, plus a held-out test set. A :class:`DetectorSurrogate` stands in for
a trained 3D detector: each class has a competence ``n / (n + h)`` that grows
with the number of labeled boxes and drives detection rate, label accuracy,
confidence and localization. Retraining is a competence update; no epochs
are simulated.

Random streams are keyed by ``(seed, purpose, frame_id, round)`` so a
policy's choices never perturb randomness elsewhere, which keeps policy
comparisons paired.
"""

from __future__ import annotations

import contextlib
import gc
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from .core import (
    BudgetLedger,
    ClassCatalog,
    FrameRecord,
    GroundTruthBox,
    PoolState,
    PredictedBox,
    annotate,
    wrap_heading,
)
from .crb import CrbConfig
from .metrics import MetricReport, evaluate_detections
from .policies import POLICIES, select_frames
from .scoring import label_distribution, stable_hash

__all__ = [
    "ClassSpec",
    "WorldConfig",
    "World",
    "DetectorSurrogate",
    "Protocol",
    "RoundSelection",
    "ExperimentTrace",
    "default_classes",
    "generate_world",
    "predict",
    "predict_batch",
    "retrain",
    "run_experiment",
]

log = logging.getLogger(__name__)


def _rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, stable_hash(*key)])


@dataclass(frozen=True)
class ClassSpec:
    class_id: int
    name: str
    known: bool
    frequency: float
    size_mean: tuple[float, float, float]
    size_std: tuple[float, float, float] = (0.2, 0.1, 0.1)
    position_range: float = 40.0

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError(f"class {self.name}: frequency must be > 0")
        if min(self.size_std) <= 0 or min(self.size_mean) <= 0:
            raise ValueError(f"class {self.name}: size mean and sigma must be > 0")


def default_classes() -> tuple[ClassSpec, ...]:
    """Three known and two rare unknown driving classes (typical street-scene sizes)."""
    return (
        ClassSpec(1, "car", True, 4.0, (4.6, 1.9, 1.7), (0.4, 0.15, 0.15)),
        ClassSpec(2, "pedestrian", True, 3.0, (0.8, 0.7, 1.75), (0.1, 0.08, 0.1)),
        ClassSpec(3, "cyclist", True, 2.5, (1.8, 0.7, 1.7), (0.15, 0.08, 0.1)),
        ClassSpec(4, "bus", False, 0.3, (11.0, 2.9, 3.5), (1.0, 0.15, 0.2)),
        ClassSpec(5, "barrier", False, 0.3, (0.5, 2.5, 1.0), (0.08, 0.3, 0.1)),
    )


@dataclass(frozen=True)
class WorldConfig:
    """Pool/test sizes and per-class object priors.

    ``scene_concentration`` controls how much class mixes vary between
    frames: per-frame class weights are Dirichlet with this concentration
    times the normalized frequencies. ``None`` uses the frequencies as-is in
    every frame.
    """

    classes: tuple[ClassSpec, ...] = field(default_factory=default_classes)
    n_frames: int = 2000
    n_test: int = 200
    objects_per_frame: float = 12.0
    scene_concentration: float | None = 10.0
    embedding_dim: int = 16
    embedding_noise: float = 0.5
    unknown_feature_scale: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ValueError("world needs at least one class")
        if not any(c.known for c in self.classes):
            raise ValueError("world needs at least one known class")
        if len({c.class_id for c in self.classes}) != len(self.classes):
            raise ValueError("duplicate class ids")
        if self.n_frames < 0 or self.n_test < 0 or self.objects_per_frame < 0:
            raise ValueError("sizes and objects_per_frame must be non-negative")
        if self.scene_concentration is not None and self.scene_concentration <= 0:
            raise ValueError("scene_concentration must be > 0")
        if self.embedding_dim < 1 or self.embedding_noise < 0:
            raise ValueError("embedding_dim must be >= 1 and embedding_noise >= 0")
        if self.unknown_feature_scale < 0:
            raise ValueError("unknown_feature_scale must be >= 0")

    def catalog(self) -> ClassCatalog:
        return ClassCatalog(
            tuple(c.class_id for c in self.classes if c.known),
            tuple(c.class_id for c in self.classes if not c.known),
        )


@dataclass(frozen=True)
class World:
    config: WorldConfig
    pool: PoolState
    test_truth: Mapping[str, tuple[GroundTruthBox, ...]]
    embeddings: Mapping[str, np.ndarray]
    catalog: ClassCatalog
    # per-frame (labels, centers, sizes, headings) arrays for pool and test frames
    arrays: Mapping[str, tuple] = field(default_factory=dict, repr=False, compare=False)
    # detector outputs keyed by surrogate state, catalog and RNG stream; see _predict_cached
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def class_spec(self, class_id: int) -> ClassSpec:
        return next(c for c in self.config.classes if c.class_id == class_id)


_TRUTH_SETTERS = tuple(GroundTruthBox.__dict__[name].__set__ for name in ("label", "center", "size", "heading"))


def _trusted_truth(*values) -> GroundTruthBox:
    box = object.__new__(GroundTruthBox)
    for setter, value in zip(_TRUTH_SETTERS, values):
        setter(box, value)
    return box


def _sample_frame(config: WorldConfig, rng: np.random.Generator) -> tuple[GroundTruthBox, ...]:
    freqs = np.array([c.frequency for c in config.classes], dtype=float)
    weights = freqs / freqs.sum()
    if config.scene_concentration is not None:
        weights = rng.dirichlet(config.scene_concentration * weights)
    counts = rng.poisson(config.objects_per_frame * weights)
    boxes = []
    for spec, n in zip(config.classes, counts):
        if n == 0:
            continue
        r = spec.position_range
        xy = rng.uniform(-r, r, size=(n, 2))
        size = rng.normal(spec.size_mean, spec.size_std, size=(n, 3))
        size = np.maximum(size, 0.25 * np.asarray(spec.size_mean))
        heading = rng.uniform(-math.pi, math.pi, size=n)
        for (x, y), sz, hd in zip(xy.tolist(), size.tolist(), heading.tolist()):
            # sizes are floored above zero and headings drawn in range
            boxes.append(_trusted_truth(spec.class_id, (x, y, sz[2] / 2), tuple(sz), wrap_heading(hd)))
    return tuple(boxes)


def _embedding(
    boxes: Sequence[GroundTruthBox], index: Mapping[int, int], proj: np.ndarray, noise: float, rng
) -> np.ndarray:
    counts = np.zeros(proj.shape[0])
    for b in boxes:
        counts[index[b.label]] += 1
    return counts @ proj + rng.normal(0.0, noise, size=proj.shape[1]) if noise > 0 else counts @ proj


def generate_world(config: WorldConfig) -> World:
    """Sample pool and test frames with ground truth and frame embeddings.

    Embeddings are the frame's per-class object counts pushed through a fixed
    random projection plus Gaussian noise, so frames with similar contents sit
    close together. Unknown classes enter the signature scaled by
    ``unknown_feature_scale``: features of a detector pre-trained on the known
    classes respond weakly to novel objects. Everything is determined by
    ``config.seed``.
    """
    with _gc_paused():
        return _generate_world(config)


def _generate_world(config: WorldConfig) -> World:
    index = {c.class_id: i for i, c in enumerate(config.classes)}
    proj = _rng(config.seed, "projection").normal(
        0.0, 1.0, size=(len(config.classes), config.embedding_dim)
    )
    proj /= np.linalg.norm(proj, axis=1, keepdims=True)
    proj *= np.array([1.0 if c.known else config.unknown_feature_scale for c in config.classes])[:, None]

    truth, embeddings = {}, {}
    for i in range(config.n_frames):
        fid = f"pool-{i:05d}"
        rng = _rng(config.seed, "world", fid)
        truth[fid] = _sample_frame(config, rng)
        embeddings[fid] = _embedding(truth[fid], index, proj, config.embedding_noise, rng)
    test = {}
    for i in range(config.n_test):
        fid = f"test-{i:05d}"
        test[fid] = _sample_frame(config, _rng(config.seed, "world", fid))
    arrays = {fid: _truth_arrays(boxes) for fid, boxes in (*truth.items(), *test.items())}
    return World(config, PoolState.from_truth(truth), test, embeddings, config.catalog(), arrays)


@dataclass(frozen=True)
class DetectorSurrogate:
    """Stochastic map from ground truth to detections.

    Attributes:
        counts: labeled boxes per class id seen in training so far.
        half_saturation: boxes needed to reach competence 0.5.
        conf_noise: std of detection confidence around ``0.2 + 0.7 * kappa``.
        loc_noise: center noise std (m) at zero competence.
        size_noise: size noise std (m) at zero competence.
        spurious_rate: chance an object of an untrained class yields a
            low-confidence box under some trained label.
        fp_rate: Poisson mean of background false positives per frame.
    """

    counts: Mapping[int, int] = field(default_factory=dict)
    half_saturation: float = 20.0
    conf_noise: float = 0.02
    loc_noise: float = 0.4
    size_noise: float = 0.2
    spurious_rate: float = 0.8
    fp_rate: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "counts", {int(c): int(n) for c, n in self.counts.items()})
        if self.half_saturation <= 0:
            raise ValueError("half_saturation must be > 0")
        if not 0 <= self.spurious_rate <= 1 or self.fp_rate < 0:
            raise ValueError("spurious_rate must be in [0, 1] and fp_rate >= 0")
        if min(self.conf_noise, self.loc_noise, self.size_noise) < 0:
            raise ValueError("noise scales must be non-negative")

    def competence(self, class_id: int) -> float:
        n = self.counts.get(class_id, 0)
        return n / (n + self.half_saturation)

    def trained(self, catalog: ClassCatalog) -> tuple[int, ...]:
        return tuple(c for c in catalog.effective_known if self.counts.get(c, 0) > 0)


def _score_matrix(conf: np.ndarray, label_idx: np.ndarray, c_eff: int) -> np.ndarray:
    # one-hot smoothed toward uniform by (1 - conf), rescaled so the peak equals conf
    rows = np.arange(len(conf))
    base = np.repeat(((1.0 - conf) / c_eff)[:, None], c_eff, axis=1)
    base[rows, label_idx] += conf
    vec = base * (conf / base[rows, label_idx])[:, None]
    vec[rows, label_idx] = conf
    return vec


def _wrap(theta: np.ndarray) -> np.ndarray:
    wrapped = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    return np.where(wrapped >= np.pi, -np.pi, wrapped)


def _truth_arrays(truth: Sequence[GroundTruthBox]):
    if not truth:
        return np.empty(0, dtype=int), np.empty((0, 3)), np.empty((0, 3)), np.empty(0)
    return (
        np.array([b.label for b in truth]),
        np.array([b.center for b in truth]),
        np.array([b.size for b in truth]),
        np.array([b.heading for b in truth]),
    )


def _poisson_icdf(u: float, lam: float) -> int:
    k, p = 0, math.exp(-lam)
    cdf = p
    while u > cdf and k < 10_000:
        k += 1
        p *= lam / k
        cdf += p
    return k


_new_box = object.__new__
# slot descriptors write past the frozen-dataclass __setattr__
_BOX_SETTERS = tuple(
    PredictedBox.__dict__[name].__set__
    for name in ("label", "confidence", "center", "size", "heading", "scores")
)


def _trusted_box(*values) -> PredictedBox:
    # boxes built here are valid by construction; skip re-validation
    box = _new_box(PredictedBox)
    for setter, value in zip(_BOX_SETTERS, values):
        setter(box, value)
    return box


# uniforms per object: detect, relabel, alternative class, then 8 normals
# (confidence, center xyz, size lwh, heading) and one Beta(2, 5)
_OBJ_DRAWS = 12
# uniforms per false positive: class, x, y, Beta(2, 8) confidence, heading
_FP_DRAWS = 5
_TINY = 1e-12


def _as_tuple(vec) -> tuple:
    return vec if isinstance(vec, tuple) else tuple(np.asarray(vec, dtype=float).tolist())


def predict_batch(
    surrogate: DetectorSurrogate,
    frame_ids: Sequence[str],
    truths: Sequence,
    catalog: ClassCatalog,
    rngs: Sequence[np.random.Generator],
    embeddings: Sequence | None = None,
    size_prior: Mapping[int, tuple[float, float, float]] | None = None,
) -> list[FrameRecord]:
    """:func:`predict` over many frames; ``truths`` items may be box
    sequences or cached ``(labels, centers, sizes, headings)`` arrays.

    Each frame consumes only its own generator, so results do not depend on
    batch composition.
    """
    with _gc_paused():
        return _predict_batch(surrogate, frame_ids, truths, catalog, rngs, embeddings, size_prior)


@contextlib.contextmanager
def _gc_paused():
    # bulk construction of acyclic boxes; generational scans over the
    # growing prediction cache would otherwise dominate the runtime
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def _predict_batch(
    surrogate: DetectorSurrogate,
    frame_ids: Sequence[str],
    truths: Sequence,
    catalog: ClassCatalog,
    rngs: Sequence[np.random.Generator],
    embeddings: Sequence | None = None,
    size_prior: Mapping[int, tuple[float, float, float]] | None = None,
) -> list[FrameRecord]:
    effective = catalog.effective_known
    c_eff = len(effective)
    col = {c: i for i, c in enumerate(effective)}
    trained = np.sort(np.array(surrogate.trained(catalog), dtype=int))
    n_t = len(trained)

    arrays = [t if isinstance(t, tuple) and len(t) == 4 and isinstance(t[0], np.ndarray) else _truth_arrays(t) for t in truths]
    obj_u, fp_u, n_obj, n_fps = [], [], [], []
    for (labels, *_), rng in zip(arrays, rngs):
        n = len(labels)
        u = rng.random(_OBJ_DRAWS * n + 1)
        k = _poisson_icdf(float(u[-1]), surrogate.fp_rate)
        obj_u.append(u[:-1].reshape(n, _OBJ_DRAWS))
        fp_u.append(rng.random(_FP_DRAWS * k).reshape(k, _FP_DRAWS))
        n_obj.append(n)
        n_fps.append(k)

    if n_t == 0:
        return [
            FrameRecord(fid, (), None if embeddings is None else tuple(np.asarray(embeddings[i], dtype=float).tolist()))
            for i, fid in enumerate(frame_ids)
        ]

    U = np.concatenate(obj_u) if obj_u else np.empty((0, _OBJ_DRAWS))
    labels = np.concatenate([a[0] for a in arrays]).astype(int) if arrays else np.empty(0, dtype=int)
    centers = np.concatenate([a[1] for a in arrays]) if arrays else np.empty((0, 3))
    sizes = np.concatenate([a[2] for a in arrays]) if arrays else np.empty((0, 3))
    headings = np.concatenate([a[3] for a in arrays]) if arrays else np.empty(0)
    Z = special.ndtri(np.clip(U[:, 3:11], _TINY, 1 - _TINY))
    spur_conf = 0.5 * special.betaincinv(2.0, 5.0, U[:, 11])

    counts = np.array([surrogate.counts.get(int(c), 0) for c in labels], dtype=float)
    is_trained = np.isin(labels, trained)
    kappa = np.where(is_trained, counts / (counts + surrogate.half_saturation), 0.0)
    emit = np.where(is_trained, U[:, 0] < 0.5 + 0.5 * kappa, U[:, 0] < surrogate.spurious_rate)

    # relabel among the other trained classes by skipping the true class's slot
    own_pos = np.where(is_trained, np.searchsorted(trained, labels), -1)
    if n_t > 1:
        alt = np.floor(U[:, 2] * (n_t - 1)).astype(int)
        alt = np.minimum(np.where(alt >= own_pos, alt + 1, alt), n_t - 1)
        swap = is_trained & (U[:, 1] >= np.maximum(kappa, 1.0 / c_eff))
        pred_label = np.where(swap, trained[alt], labels)
    else:
        pred_label = labels
    spur_label = trained[np.minimum(np.floor(U[:, 2] * n_t).astype(int), n_t - 1)]
    pred_label = np.where(is_trained, pred_label, spur_label)

    conf = np.where(
        is_trained,
        np.clip(0.2 + 0.7 * kappa + surrogate.conf_noise * Z[:, 0], 0.01, 0.99),
        np.maximum(spur_conf, 0.01),
    )
    scale = (1.0 - kappa)[:, None]
    p_center = centers + surrogate.loc_noise * scale * Z[:, 1:4]
    p_size = np.maximum(sizes + surrogate.size_noise * scale * Z[:, 4:7], 0.05)
    p_head = _wrap(headings + 0.3 * scale[:, 0] * Z[:, 7])

    F = np.concatenate(fp_u) if fp_u else np.empty((0, _FP_DRAWS))
    fp_label = trained[np.minimum(np.floor(F[:, 0] * n_t).astype(int), n_t - 1)]
    prior = size_prior or {}
    fp_size = np.array([prior.get(int(c), (1.0, 1.0, 1.0)) for c in fp_label], dtype=float).reshape(-1, 3)
    fp_center = np.column_stack([-40.0 + 80.0 * F[:, 1:3], fp_size[:, 2] / 2])
    fp_conf = np.clip(special.betaincinv(2.0, 8.0, F[:, 3]), 0.01, 0.99)
    fp_head = _wrap(-np.pi + 2 * np.pi * F[:, 4])

    def boxes_of(lab, cf, ce, sz, hd):
        cols = np.array([col[c] for c in lab.tolist()], dtype=int)
        sc = _score_matrix(cf, cols, c_eff)
        return [
            _trusted_box(*row[:2], tuple(row[2]), tuple(row[3]), row[4], tuple(row[5]))
            for row in zip(lab.tolist(), cf.tolist(), ce.tolist(), sz.tolist(), hd.tolist(), sc.tolist())
        ]

    obj_boxes = boxes_of(pred_label, conf, p_center, p_size, p_head)
    fp_boxes = boxes_of(fp_label, fp_conf, fp_center, fp_size, fp_head)
    emit_list = emit.tolist()

    out = []
    o = f = 0
    for i, fid in enumerate(frame_ids):
        n, k = n_obj[i], n_fps[i]
        boxes = [b for b, e in zip(obj_boxes[o : o + n], emit_list[o : o + n]) if e]
        boxes.extend(fp_boxes[f : f + k])
        o += n
        f += k
        emb = None if embeddings is None else _as_tuple(embeddings[i])
        out.append(FrameRecord(fid, tuple(boxes), emb))
    return out


def predict(
    surrogate: DetectorSurrogate,
    frame_id: str,
    truth: Sequence[GroundTruthBox],
    catalog: ClassCatalog,
    rng: np.random.Generator,
    embedding: Sequence[float] | None = None,
    size_prior: Mapping[int, tuple[float, float, float]] | None = None,
) -> FrameRecord:
    """Simulated detector output for one frame.

    Objects of trained classes are detected with probability
    ``0.5 + 0.5 * kappa``, keep their label with probability
    ``max(kappa, 1 / C_eff)`` (otherwise another trained class), get
    confidence ``N(0.2 + 0.7 * kappa, conf_noise)`` clipped to [0.01, 0.99]
    and geometry noise scaled by ``1 - kappa``. Objects of untrained classes
    produce, with probability ``spurious_rate``, one box under a random
    trained label with confidence ``0.5 * Beta(2, 5)``. Background false
    positives arrive as ``Poisson(fp_rate)`` with confidence ``Beta(2, 8)``
    at random positions, sized by ``size_prior``.

    Class scores are the one-hot label smoothed toward uniform by
    ``1 - confidence`` and rescaled so their maximum equals the confidence.
    """
    return predict_batch(
        surrogate, [frame_id], [truth], catalog, [rng],
        None if embedding is None else [embedding], size_prior,
    )[0]


def retrain(
    surrogate: DetectorSurrogate, newly_labeled: Sequence[GroundTruthBox], catalog: ClassCatalog
) -> DetectorSurrogate:
    """Add newly annotated boxes of effective known classes to the counts."""
    effective = set(catalog.effective_known)
    added: dict[int, int] = {}
    for box in newly_labeled:
        if box.label in effective:
            added[box.label] = added.get(box.label, 0) + 1
    if not added:
        return surrogate
    counts = dict(surrogate.counts)
    for c, k in added.items():
        counts[c] = counts.get(c, 0) + k
    return replace(surrogate, counts=counts)


@dataclass(frozen=True)
class Protocol:
    """Pre-train size ``m``, per-round picks ``n_r``, round count and seed."""

    m: int = 100
    n_r: int = 100
    rounds: int = 4
    seed: int = 0

    def __post_init__(self):
        if min(self.m, self.n_r, self.rounds) < 0:
            raise ValueError("protocol sizes must be non-negative")


@dataclass
class RoundSelection:
    round_index: int
    frame_ids: list[str]
    # per selected frame: olc score, n_boxes, p_unknown, gt known/unknown counts
    diagnostics: list[dict]


@dataclass
class ExperimentTrace:
    policy: str
    olc_first_round: bool
    protocol: Protocol
    pretrain_ids: list[str]
    selections: list[RoundSelection]
    ledger: BudgetLedger
    reports: list[MetricReport]
    catalog: ClassCatalog

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "olc_first_round": self.olc_first_round,
            "protocol": dict(self.protocol.__dict__),
            "pretrain_ids": self.pretrain_ids,
            "selections": [
                {"round": s.round_index, "frame_ids": s.frame_ids, "diagnostics": s.diagnostics}
                for s in self.selections
            ],
            "ledger": {
                "budget": self.ledger.budget,
                "budget_mode": self.ledger.budget_mode,
                "rounds": [
                    {
                        "round": e.round_index,
                        "frames": e.frames,
                        "known_boxes": e.known_boxes,
                        "unknown_boxes": e.unknown_boxes,
                    }
                    for e in self.ledger.entries
                ],
            },
            "reports": [r.to_dict() for r in self.reports],
            "discovered": sorted(self.catalog.discovered),
        }


# policies whose picks do not depend on detector output
_CONTENT_BLIND = ("random", "coreset")


def _embedding_tuple(world, fid):
    store = world.cache.setdefault("embedding-tuples", {})
    if fid not in store:
        store[fid] = _as_tuple(world.embeddings[fid])
    return store[fid]


def _predict_cached(world, surrogate, catalog, purpose, seed, round_index, ids, size_prior, with_embedding):
    """predict_batch through the world's cache.

    A frame's prediction depends only on the surrogate state, the catalog and
    its own RNG stream, so policies that reach the same state share results.
    """
    key = (
        purpose,
        seed,
        round_index,
        tuple(sorted(surrogate.counts.items())),
        tuple(getattr(surrogate, f.name) for f in fields(surrogate) if f.name != "counts"),
        catalog,
        with_embedding,
    )
    store = world.cache.setdefault(key, {})
    missing = [fid for fid in ids if fid not in store]
    if missing:
        truth = world.test_truth if purpose == "eval" else world.pool.truth
        records = predict_batch(
            surrogate,
            missing,
            [world.arrays.get(fid) or truth[fid] for fid in missing],
            catalog,
            [_rng(seed, purpose, fid, round_index) for fid in missing],
            [_embedding_tuple(world, fid) for fid in missing] if with_embedding else None,
            size_prior,
        )
        store.update(zip(missing, records))
    return [store[fid] for fid in ids]


def _evaluate(world, surrogate, catalog, protocol, round_index, ledger, size_prior, iou_thresholds, default_iou):
    ids = list(world.test_truth)
    records = _predict_cached(world, surrogate, catalog, "eval", protocol.seed, round_index, ids, size_prior, False)
    preds = dict(zip(ids, records))
    return evaluate_detections(
        preds,
        world.test_truth,
        world.catalog.known_ids,
        world.catalog.unknown_ids,
        iou_thresholds,
        default_iou,
        round_index,
        ledger.total_known,
        ledger.total_unknown,
    )


def run_experiment(
    world: World,
    policy: str,
    protocol: Protocol = Protocol(),
    *,
    detector: DetectorSurrogate | None = None,
    crb: CrbConfig | None = None,
    olc_first_round: bool = False,
    iou_thresholds: Mapping[int, float] | None = None,
    default_iou: float = 0.5,
) -> ExperimentTrace:
    """Pre-train on ``m`` random frames, then run ``rounds`` selection rounds.

    Pre-training labels only the original known classes; unknown objects in
    those frames stay unlabeled. Each round predicts on the unlabeled pool,
    selects ``n_r`` frames with ``policy``, annotates them, retrains the
    surrogate and evaluates on the test frames.

    Raises:
        ValueError: if the budget ``m + rounds * n_r`` exceeds the pool or the
            policy is unknown; raised before any work.
    """
    with _gc_paused():
        return _run_experiment(
            world,
            policy,
            protocol,
            detector=detector,
            crb=crb,
            olc_first_round=olc_first_round,
            iou_thresholds=iou_thresholds,
            default_iou=default_iou,
        )


def _run_experiment(
    world: World,
    policy: str,
    protocol: Protocol = Protocol(),
    *,
    detector: DetectorSurrogate | None = None,
    crb: CrbConfig | None = None,
    olc_first_round: bool = False,
    iou_thresholds: Mapping[int, float] | None = None,
    default_iou: float = 0.5,
) -> ExperimentTrace:
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    budget = protocol.m + protocol.rounds * protocol.n_r
    if budget > world.pool.size:
        raise ValueError(f"budget of {budget} frames exceeds pool of {world.pool.size}")

    detector = detector or DetectorSurrogate()
    surrogate = replace(detector, counts={})
    catalog = world.catalog
    pool = world.pool
    ledger = BudgetLedger(budget=budget, budget_mode="frames")
    size_prior = {c.class_id: c.size_mean for c in world.config.classes}
    eval_args = (size_prior, iou_thresholds, default_iou)

    # pre-train: closed-set labels on m seeded random frames
    order = sorted(pool.unlabeled, key=lambda fid: stable_hash(protocol.seed, "pretrain", fid))
    pretrain = sorted(order[: protocol.m])
    pool, _, entry = annotate(pool, catalog, pretrain, 0, closed_set=True)
    ledger = ledger.record(entry)
    surrogate = retrain(surrogate, [b for fid in pretrain for b in pool.truth[fid]], catalog)
    reports = [_evaluate(world, surrogate, catalog, protocol, 0, ledger, *eval_args)]

    selections = []
    for r in range(1, protocol.rounds + 1):
        unlabeled_ids = sorted(pool.unlabeled)
        content_blind = policy in _CONTENT_BLIND and not (olc_first_round and r == 1)
        if content_blind:
            # selection reads only ids/embeddings; predict the picks afterwards
            frames = [FrameRecord(fid, (), _embedding_tuple(world, fid)) for fid in unlabeled_ids]
        else:
            frames = _predict_cached(
                world, surrogate, catalog, "pool", protocol.seed, r, unlabeled_ids, size_prior, True
            )
        labeled_frames = []
        if policy == "coreset" and not (olc_first_round and r == 1):
            labeled_frames = [FrameRecord(fid, (), _embedding_tuple(world, fid)) for fid in sorted(pool.labeled)]
        picked = select_frames(
            policy,
            frames,
            catalog,
            protocol.n_r,
            r,
            labeled=labeled_frames,
            seed=protocol.seed,
            crb=crb,
            olc_first_round=olc_first_round,
        )
        if content_blind:
            frames = _predict_cached(world, surrogate, catalog, "pool", protocol.seed, r, picked, size_prior, True)
        by_id = {f.frame_id: f for f in frames}
        effective = set(catalog.effective_known)
        diags = []
        for fid in picked:
            dist = label_distribution(by_id[fid], catalog)
            comps = dist.components
            nz = comps[comps > 0]
            gt = pool.truth[fid]
            diags.append(
                {
                    "frame_id": fid,
                    "olc": float(-(nz * np.log(nz)).sum()) + 0.0,
                    "n_boxes": dist.n_boxes,
                    "p_unknown": dist.unknown,
                    "gt_known": sum(1 for b in gt if b.label in effective),
                    "gt_unknown": sum(1 for b in gt if b.label not in effective),
                }
            )
        pool, new_catalog, entry = annotate(pool, catalog, picked, r)
        ledger = ledger.record(entry)
        catalog = new_catalog
        surrogate = retrain(surrogate, [b for fid in picked for b in pool.truth[fid]], catalog)
        selections.append(RoundSelection(r, picked, diags))
        reports.append(_evaluate(world, surrogate, catalog, protocol, r, ledger, *eval_args))
        log.debug("round %d: %s", r, reports[-1])

    return ExperimentTrace(
        policy, olc_first_round, protocol, pretrain, selections, ledger, reports, catalog
    )
