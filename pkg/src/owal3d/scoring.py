"""Frame-level acquisition scores.

Every scorer maps one :class:`~owal3d.core.FrameRecord` to a
:class:`ScoredFrame`; higher scores are selected first. Logs are natural.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import ClassCatalog, FrameRecord

__all__ = [
    "LabelDistribution",
    "ScoredFrame",
    "label_distribution",
    "olc_score",
    "entropy_score",
    "relationship_diagnostics",
    "gradnorm_surrogate_score",
    "confidence_margin_score",
    "random_score",
    "coreset_select",
    "coreset_select_matrix",
    "select_top_k",
    "stable_hash",
]

EQUALITY_TOL = 1e-6


@dataclass(frozen=True)
class LabelDistribution:
    """Known-class masses followed by the unknown mass for one frame.

    ``components[:-1]`` line up with ``class_ids`` (the catalog's effective
    known ids); ``components[-1]`` is the unknown component.
    """

    components: np.ndarray
    class_ids: tuple[int, ...]
    n_boxes: int

    @property
    def known(self) -> np.ndarray:
        return self.components[:-1]

    @property
    def unknown(self) -> float:
        return float(self.components[-1])


@dataclass(frozen=True)
class ScoredFrame:
    frame_id: str
    score: float
    policy: str
    diagnostics: Mapping[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score for frame {self.frame_id!r}")


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    # adding 0.0 turns the -0.0 of a point mass into 0.0
    return float(-(nz * np.log(nz)).sum()) + 0.0 if nz.size else 0.0


def label_distribution(frame: FrameRecord, catalog: ClassCatalog) -> LabelDistribution:
    """Per-class confidence mass plus the residual (1 - confidence) mass.

    Both are averaged over the frame's boxes, so the components sum to one.
    A frame with no boxes gets all of its mass on the unknown slot.

    Raises:
        ValueError: if a box is labeled with a class outside the catalog's
            effective known ids.
    """
    class_ids = catalog.effective_known
    index = {c: i for i, c in enumerate(class_ids)}
    comps = np.zeros(len(class_ids) + 1)
    n = frame.n_boxes
    if n == 0:
        comps[-1] = 1.0
        return LabelDistribution(comps, class_ids, 0)
    residual = 0.0
    for box in frame.boxes:
        try:
            comps[index[box.label]] += box.confidence
        except KeyError:
            raise ValueError(
                f"frame {frame.frame_id!r}: box label {box.label} is not an effective known class"
            ) from None
        residual += 1.0 - box.confidence
    comps[:-1] /= n
    comps[-1] = residual / n
    return LabelDistribution(comps, class_ids, n)


def olc_score(frame: FrameRecord, catalog: ClassCatalog) -> ScoredFrame:
    """Unknown-aware label entropy of a frame."""
    dist = label_distribution(frame, catalog)
    return ScoredFrame(
        frame.frame_id,
        _entropy(dist.components),
        "olc",
        {"distribution": dist, "n_boxes": dist.n_boxes, "p_unknown": dist.unknown},
    )


def entropy_score(frame: FrameRecord, catalog: ClassCatalog) -> ScoredFrame:
    """Entropy of the known-class label distribution, renormalized.

    This is the closed-world entropy baseline; it is 0 when the frame carries
    no known-class mass.
    """
    dist = label_distribution(frame, catalog)
    known = dist.known
    total = known.sum()
    score = _entropy(known / total) if total > 0 else 0.0
    return ScoredFrame(frame.frame_id, score, "entropy", {"n_boxes": dist.n_boxes})


def relationship_diagnostics(dist: LabelDistribution, frame: FrameRecord) -> dict:
    """Per-class counts, mean confidences and the max-entropy check.

    Returns a dict with ``counts`` and ``mean_conf`` (keyed by class id, only
    for classes with at least one box), ``harmonic_mean`` (two effective
    known classes, both present) and ``max_entropy_condition``: whether every
    known mass equals the unknown mass within 1e-6.
    """
    if dist.n_boxes == 0:
        raise ValueError("relationship diagnostics need at least one box")
    counts = {c: 0 for c in dist.class_ids}
    for box in frame.boxes:
        counts[box.label] += 1
    counts = {c: n for c, n in counts.items() if n > 0}
    mean_conf = {
        c: float(dist.known[dist.class_ids.index(c)] * dist.n_boxes / n) for c, n in counts.items()
    }
    out: dict = {"counts": counts, "mean_conf": mean_conf}
    if len(dist.class_ids) == 2 and len(mean_conf) == 2:
        p1, p2 = (mean_conf[c] for c in dist.class_ids)
        if p1 + p2 > 0:
            out["harmonic_mean"] = 2 * p1 * p2 / (p1 + p2)
    out["max_entropy_condition"] = bool(
        len(counts) == len(dist.class_ids)
        and np.all(np.abs(dist.known - dist.unknown) <= EQUALITY_TOL)
    )
    return out


def gradnorm_surrogate_score(frame: FrameRecord, catalog: ClassCatalog) -> ScoredFrame:
    """Negated mean L1 gap between each box's class scores and uniform.

    A small gap means the output is close to uniform, which the gradient-norm
    OOD detector reads as out-of-distribution; negating puts those frames
    first. Frames with no boxes score 1.0, above every non-empty frame.
    """
    if frame.n_boxes == 0:
        return ScoredFrame(frame.frame_id, 1.0, "gradnorm", {"n_boxes": 0})
    c_eff = catalog.n_effective
    gaps = []
    for box in frame.boxes:
        if box.scores is None:
            raise ValueError(f"frame {frame.frame_id!r}: gradnorm needs class scores on every box")
        if len(box.scores) != c_eff:
            raise ValueError(
                f"frame {frame.frame_id!r}: score vector length {len(box.scores)} != {c_eff}"
            )
        gaps.append(sum(abs(s - 1.0 / c_eff) for s in box.scores))
    return ScoredFrame(frame.frame_id, -float(np.mean(gaps)), "gradnorm", {"n_boxes": frame.n_boxes})


def confidence_margin_score(frame: FrameRecord) -> ScoredFrame:
    """Negated mean top-1 minus top-2 class-score gap (margin sampling)."""
    if frame.n_boxes == 0:
        return ScoredFrame(frame.frame_id, 0.0, "margin", {"n_boxes": 0})
    margins = []
    for box in frame.boxes:
        if box.scores is None:
            raise ValueError(f"frame {frame.frame_id!r}: margin needs class scores on every box")
        top = sorted(box.scores, reverse=True) + [0.0]
        margins.append(top[0] - top[1])
    return ScoredFrame(frame.frame_id, -float(np.mean(margins)), "margin", {"n_boxes": frame.n_boxes})


def stable_hash(*parts) -> int:
    """64-bit hash of the parts' string forms, stable across processes."""
    h = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def random_score(frame: FrameRecord, seed: int) -> ScoredFrame:
    """Uniform score in [0, 1) derived from a hash of (seed, frame_id)."""
    return ScoredFrame(frame.frame_id, (stable_hash(seed, frame.frame_id) >> 11) / 2.0**53, "random")


def select_top_k(scored: Sequence[ScoredFrame], k: int) -> list[str]:
    """Frame ids of the ``k`` highest scores; ties go to the smaller frame id."""
    if k < 0 or k > len(scored):
        raise ValueError(f"cannot select {k} of {len(scored)} scored frames")
    ranked = sorted(scored, key=lambda s: (-s.score, s.frame_id))
    return [s.frame_id for s in ranked[:k]]


def coreset_select_matrix(
    ids: Sequence[str], embeddings: np.ndarray, labeled: set[str] | frozenset[str], k: int
) -> list[str]:
    """Greedy furthest-first over an (n, d) embedding matrix.

    Each step picks the unlabeled row whose distance to the nearest labeled
    or already-picked row is largest. Ties go to the smaller frame id; with
    nothing labeled the first pick is the smallest unlabeled id.
    """
    ids = list(ids)
    X = np.asarray(embeddings, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(ids):
        raise ValueError("embedding matrix must be (n_frames, d)")
    cand = sorted((i for i, fid in enumerate(ids) if fid not in labeled), key=lambda i: ids[i])
    if k < 0 or k > len(cand):
        raise ValueError(f"cannot pick {k} of {len(cand)} unlabeled frames")
    if k == 0:
        return []
    C = X[cand]
    anchors = [i for i, fid in enumerate(ids) if fid in labeled]
    if anchors:
        min_d = np.full(len(cand), np.inf)
        A = X[anchors]
        for start in range(0, len(anchors), 512):
            block = A[start : start + 512]
            d = np.sqrt(((C[:, None, :] - block[None, :, :]) ** 2).sum(-1))
            min_d = np.minimum(min_d, d.min(axis=1))
    else:
        min_d = np.full(len(cand), np.inf)

    picked = []
    taken = np.zeros(len(cand), dtype=bool)
    for _ in range(k):
        masked = np.where(taken, -np.inf, min_d)
        # argmax returns the first maximum, i.e. the smallest frame id
        j = int(np.argmax(masked))
        picked.append(ids[cand[j]])
        taken[j] = True
        min_d = np.minimum(min_d, np.sqrt(((C - C[j]) ** 2).sum(-1)))
    return picked


def coreset_select(frames: Sequence[FrameRecord], labeled: set[str] | frozenset[str], k: int) -> list[str]:
    """Furthest-first selection over frame embeddings.

    ``frames`` holds both labeled and unlabeled records; membership in
    ``labeled`` decides which side each is on.
    """
    for f in frames:
        if f.embedding is None:
            raise ValueError(f"frame {f.frame_id!r}: embedding required for coreset")
    if not frames:
        if k:
            raise ValueError(f"cannot pick {k} of 0 unlabeled frames")
        return []
    dims = {len(f.embedding) for f in frames}
    if len(dims) != 1:
        raise ValueError(f"embeddings have mixed dimensions {sorted(dims)}")
    return coreset_select_matrix(
        [f.frame_id for f in frames], np.array([f.embedding for f in frames]), labeled, k
    )
