"""Three-stage CRB filter and the Open-CRB round selector.

Stage 1 keeps the frames with the highest known-class label entropy, stage 2
keeps cluster representatives in embedding space, and stage 3 greedily
builds a batch whose box-geometry histograms stay close to a prior. Open-CRB
uses OLC ranking in the first (open-world) round and CRB afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import ClassCatalog, FrameRecord
from .scoring import entropy_score, olc_score, select_top_k

__all__ = [
    "CrbConfig",
    "GeometryHistogram",
    "GreedyTrace",
    "geometry_edges",
    "stage1_concise",
    "stage2_prototypes",
    "stage3_greedy_balance",
    "open_crb_round",
]

GEOMETRY_DIMS = ("l", "w", "h", "heading")


@dataclass(frozen=True)
class CrbConfig:
    k1: int = 300
    k2: int = 200
    n_r: int = 100
    geometry_bins: tuple[int, int, int, int] = (10, 10, 10, 10)
    prior_source: str = "uniform"
    olc_every_round: bool = False
    smoothing: float = 1e-6
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "geometry_bins", tuple(int(b) for b in self.geometry_bins))
        if not 0 <= self.n_r <= self.k2 <= self.k1:
            raise ValueError(f"need n_r <= k2 <= k1, got {self.n_r}, {self.k2}, {self.k1}")
        if self.prior_source not in ("uniform", "empirical-unlabeled"):
            raise ValueError(f"unknown prior source {self.prior_source!r}")
        if len(self.geometry_bins) != 4 or min(self.geometry_bins) < 1:
            raise ValueError("geometry_bins needs four positive bin counts")

    def clipped(self, pool_size: int) -> CrbConfig:
        """Copy with k1/k2 reduced to fit a smaller pool."""
        k1 = min(self.k1, pool_size)
        k2 = min(self.k2, k1)
        return CrbConfig(**{**self.__dict__, "k1": k1, "k2": k2})


def _box_geometry(frame: FrameRecord) -> np.ndarray:
    if not frame.boxes:
        return np.empty((0, 4))
    return np.array([(*b.size, b.heading) for b in frame.boxes], dtype=float)


def geometry_edges(
    frames: Iterable[FrameRecord], bins: Sequence[int] = (10, 10, 10, 10)
) -> list[np.ndarray]:
    """Bin edges per geometry dimension spanning the observed range.

    Size edges cover the pool's min/max; heading always covers [-pi, pi).
    """
    geo = [_box_geometry(f) for f in frames]
    geo = np.concatenate(geo) if geo else np.empty((0, 4))
    edges = []
    for d in range(3):
        if geo.shape[0]:
            lo, hi = float(geo[:, d].min()), float(geo[:, d].max())
        else:
            lo, hi = 0.0, 1.0
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges.append(np.linspace(lo, hi, bins[d] + 1))
    edges.append(np.linspace(-np.pi, np.pi, bins[3] + 1))
    return edges


def _bin_counts(geo: np.ndarray, edges: Sequence[np.ndarray]) -> list[np.ndarray]:
    out = []
    for d, e in enumerate(edges):
        nb = len(e) - 1
        if geo.shape[0] == 0:
            out.append(np.zeros(nb))
            continue
        idx = np.searchsorted(e, geo[:, d], side="right") - 1
        idx = np.clip(idx, 0, nb - 1)
        out.append(np.bincount(idx, minlength=nb).astype(float))
    return out


def _smooth(counts: np.ndarray, eps: float) -> np.ndarray:
    total = counts.sum(axis=-1, keepdims=True)
    nb = counts.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(total > 0, counts / np.where(total > 0, total, 1), 1.0 / nb)
    # mixing with uniform keeps the sum at 1 and every entry >= eps
    return (1 - nb * eps) * p + eps


@dataclass(frozen=True)
class GeometryHistogram:
    """Normalized per-dimension histograms over (l, w, h, heading)."""

    edges: tuple[np.ndarray, ...]
    probs: tuple[np.ndarray, ...]
    epsilon: float = 1e-6

    @classmethod
    def from_frames(
        cls, frames: Iterable[FrameRecord], edges: Sequence[np.ndarray], epsilon: float = 1e-6
    ) -> GeometryHistogram:
        geo = [_box_geometry(f) for f in frames]
        geo = np.concatenate(geo) if geo else np.empty((0, 4))
        counts = _bin_counts(geo, edges)
        return cls(tuple(edges), tuple(_smooth(c, epsilon) for c in counts), epsilon)

    @classmethod
    def uniform(cls, edges: Sequence[np.ndarray], epsilon: float = 1e-6) -> GeometryHistogram:
        return cls(tuple(edges), tuple(np.full(len(e) - 1, 1.0 / (len(e) - 1)) for e in edges), epsilon)


def _kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return (p * np.log(p / q)).sum(axis=-1)


@dataclass
class GreedyTrace:
    """Per-step record of the stage-3 greedy search."""

    picks: list[str] = field(default_factory=list)
    step_kl: list[float] = field(default_factory=list)
    # KL of every remaining candidate at each step, keyed by frame id
    candidate_kl: list[dict[str, float]] = field(default_factory=list)


def stage1_concise(frames: Sequence[FrameRecord], catalog: ClassCatalog, k1: int) -> list[str]:
    """Top-``k1`` frames by known-class label entropy."""
    return select_top_k([entropy_score(f, catalog) for f in frames], k1)


def _kmeans_representatives(
    ids: list[str], X: np.ndarray, k: int, max_iter: int, tol: float
) -> list[str]:
    n = len(ids)
    # farthest-point seeding from the smallest frame id
    seeds = [0]
    min_d = np.linalg.norm(X - X[0], axis=1)
    taken = np.zeros(n, dtype=bool)
    taken[0] = True
    for _ in range(1, k):
        j = int(np.argmax(np.where(taken, -np.inf, min_d)))
        seeds.append(j)
        taken[j] = True
        min_d = np.minimum(min_d, np.linalg.norm(X - X[j], axis=1))
    centers = X[seeds].copy()

    for _ in range(max_iter):
        d = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        assign = np.argmin(d, axis=1)
        new = centers.copy()
        for c in range(k):
            members = assign == c
            if members.any():
                new[c] = X[members].mean(axis=0)
        shift = float(np.abs(new - centers).max()) if k else 0.0
        centers = new
        if shift <= tol:
            break

    reps = []
    used = np.zeros(n, dtype=bool)
    for c in range(k):
        d = np.linalg.norm(X - centers[c], axis=1)
        d = np.where(used, np.inf, d)
        # rows are sorted by frame id, so argmin breaks ties by id
        j = int(np.argmin(d))
        used[j] = True
        reps.append(ids[j])
    return reps


def stage2_prototypes(
    frames: Sequence[FrameRecord], k2: int, max_iter: int = 100, tol: float = 1e-6
) -> list[str]:
    """Cluster embeddings into ``k2`` groups and keep the frame nearest each center.

    A frame already claimed by an earlier center is skipped in favour of the
    next-nearest one, so exactly ``k2`` distinct ids come back.
    """
    if k2 < 0 or k2 > len(frames):
        raise ValueError(f"cannot keep {k2} of {len(frames)} frames")
    for f in frames:
        if f.embedding is None:
            raise ValueError(f"frame {f.frame_id!r}: embedding required for prototype selection")
    if k2 == 0:
        return []
    ordered = sorted(frames, key=lambda f: f.frame_id)
    X = np.array([f.embedding for f in ordered], dtype=float)
    return _kmeans_representatives([f.frame_id for f in ordered], X, k2, max_iter, tol)


def stage3_greedy_balance(
    candidates: Sequence[FrameRecord],
    prior: GeometryHistogram,
    n_r: int,
    trace: GreedyTrace | None = None,
) -> list[str]:
    """Greedily add the frame that keeps the batch's geometry closest to ``prior``.

    At each step the batch histogram (smoothed like the prior) is recomputed
    with every remaining candidate added, and the one with the smallest KL
    divergence to the prior, summed over the four dimensions, is accepted.
    A batch with no boxes counts as infinitely far from the prior, so
    box-free frames are only taken once nothing else improves the batch.
    Ties go to the smaller frame id. Pass a :class:`GreedyTrace` to record
    the per-step values.
    """
    if n_r < 0 or n_r > len(candidates):
        raise ValueError(f"cannot pick {n_r} of {len(candidates)} candidates")
    ordered = sorted(candidates, key=lambda f: f.frame_id)
    ids = [f.frame_id for f in ordered]
    edges = prior.edges
    eps = prior.epsilon
    # (n_cand, n_bins) count matrix per dimension
    cand_counts = [np.zeros((len(ordered), len(e) - 1)) for e in edges]
    for i, f in enumerate(ordered):
        for d, c in enumerate(_bin_counts(_box_geometry(f), edges)):
            cand_counts[d][i] = c
    current = [np.zeros(len(e) - 1) for e in edges]
    remaining = np.ones(len(ordered), dtype=bool)

    picks = []
    for _ in range(n_r):
        kl = np.zeros(len(ordered))
        for d in range(len(edges)):
            kl += _kl(_smooth(current[d][None, :] + cand_counts[d], eps), prior.probs[d][None, :])
        # a batch without boxes has no geometry to compare; rank it last
        n_boxes = current[0].sum() + cand_counts[0].sum(axis=1)
        kl = np.where(n_boxes > 0, kl, np.inf)
        open_idx = np.flatnonzero(remaining)
        j = int(open_idx[np.argmin(kl[open_idx])])
        if trace is not None:
            trace.candidate_kl.append({ids[i]: float(kl[i]) for i in np.flatnonzero(remaining)})
            trace.step_kl.append(float(kl[j]))
            trace.picks.append(ids[j])
        picks.append(ids[j])
        remaining[j] = False
        for d in range(len(edges)):
            current[d] = current[d] + cand_counts[d][j]
    return picks


def batch_kl(frames: Sequence[FrameRecord], prior: GeometryHistogram) -> float:
    """Summed KL divergence between a batch's geometry histograms and ``prior``.

    A batch without boxes has no histogram and scores ``inf``.
    """
    geo = [_box_geometry(f) for f in frames]
    geo = np.concatenate(geo) if geo else np.empty((0, 4))
    if geo.shape[0] == 0:
        return math.inf
    counts = _bin_counts(geo, prior.edges)
    return float(sum(_kl(_smooth(c, prior.epsilon), q) for c, q in zip(counts, prior.probs)))


def build_prior(frames: Sequence[FrameRecord], config: CrbConfig) -> GeometryHistogram:
    edges = geometry_edges(frames, config.geometry_bins)
    if config.prior_source == "uniform":
        return GeometryHistogram.uniform(edges, config.smoothing)
    return GeometryHistogram.from_frames(frames, edges, config.smoothing)


def crb_select(
    frames: Sequence[FrameRecord],
    catalog: ClassCatalog,
    config: CrbConfig,
    prior: GeometryHistogram | None = None,
) -> list[str]:
    """Run stages 1-3 on ``frames`` and return ``config.n_r`` ids."""
    if config.n_r > len(frames):
        raise ValueError(f"cannot select {config.n_r} of {len(frames)} unlabeled frames")
    cfg = config.clipped(len(frames))
    if prior is None:
        prior = build_prior(frames, cfg)
    by_id = {f.frame_id: f for f in frames}
    s1 = stage1_concise(frames, catalog, cfg.k1)
    s2 = stage2_prototypes([by_id[i] for i in s1], cfg.k2, cfg.kmeans_max_iter, cfg.kmeans_tol)
    return stage3_greedy_balance([by_id[i] for i in s2], prior, cfg.n_r)


def open_crb_round(
    frames: Sequence[FrameRecord],
    catalog: ClassCatalog,
    config: CrbConfig,
    round_index: int,
    prior: GeometryHistogram | None = None,
) -> list[str]:
    """Selection for one Open-CRB round over the unlabeled ``frames``.

    Round 1 draws from the open-world pool and ranks by OLC; later rounds
    run the CRB filter. ``config.olc_every_round`` forces OLC throughout.
    """
    if round_index < 1:
        raise ValueError("rounds are numbered from 1")
    if config.n_r > len(frames):
        raise ValueError(f"cannot select {config.n_r} of {len(frames)} unlabeled frames")
    if round_index == 1 or config.olc_every_round:
        return select_top_k([olc_score(f, catalog) for f in frames], config.n_r)
    return crb_select(frames, catalog, config, prior)
