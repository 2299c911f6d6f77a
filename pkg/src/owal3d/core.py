"""Domain types: class catalog, predicted and ground-truth boxes, frames,
pool state and the annotation-cost ledger.

All types are immutable; operations that change state return new values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

__all__ = [
    "ClassCatalog",
    "PredictedBox",
    "GroundTruthBox",
    "FrameRecord",
    "PoolState",
    "LedgerEntry",
    "BudgetLedger",
    "annotate",
    "unknown_to_known_ratio",
]


def _check_geometry(center, size, heading) -> None:
    if len(center) != 3 or len(size) != 3:
        raise ValueError("center and size must have 3 components")
    if not all(math.isfinite(v) for v in (*center, *size, heading)):
        raise ValueError("box geometry must be finite")
    if min(size) <= 0:
        raise ValueError(f"box size components must be > 0, got {tuple(size)}")
    if not -math.pi <= heading < math.pi:
        raise ValueError(f"heading {heading} outside [-pi, pi)")


def wrap_heading(theta: float) -> float:
    """Map an angle into [-pi, pi)."""
    wrapped = (theta + math.pi) % (2 * math.pi) - math.pi
    # float rounding can land exactly on +pi
    return -math.pi if wrapped >= math.pi else wrapped


@dataclass(frozen=True)
class ClassCatalog:
    """Known classes, unknown classes, and which unknowns have been annotated.

    Once an unknown class is annotated it joins the effective known set and
    can be predicted and scored in later rounds.
    """

    known_ids: tuple[int, ...]
    unknown_ids: tuple[int, ...] = ()
    discovered: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "known_ids", tuple(int(c) for c in self.known_ids))
        object.__setattr__(self, "unknown_ids", tuple(int(c) for c in self.unknown_ids))
        object.__setattr__(self, "discovered", frozenset(int(c) for c in self.discovered))
        if not self.known_ids:
            raise ValueError("catalog needs at least one known class")
        if len(set(self.known_ids)) != len(self.known_ids) or len(set(self.unknown_ids)) != len(
            self.unknown_ids
        ):
            raise ValueError("duplicate class ids in catalog")
        if set(self.known_ids) & set(self.unknown_ids):
            raise ValueError("known and unknown class ids overlap")
        if not self.discovered <= set(self.unknown_ids):
            raise ValueError("discovered classes must be unknown ids")

    @property
    def effective_known(self) -> tuple[int, ...]:
        """Original known ids followed by discovered unknowns, in catalog order."""
        return self.known_ids + tuple(c for c in self.unknown_ids if c in self.discovered)

    @property
    def n_effective(self) -> int:
        return len(self.known_ids) + len(self.discovered)

    @property
    def all_ids(self) -> tuple[int, ...]:
        return self.known_ids + self.unknown_ids

    def discover(self, class_ids: Iterable[int]) -> ClassCatalog:
        new = self.discovered | (set(class_ids) & set(self.unknown_ids))
        if new == self.discovered:
            return self
        return replace(self, discovered=frozenset(new))


@dataclass(frozen=True, slots=True)
class PredictedBox:
    """One detection.

    ``scores``, when given, holds one probability per effective known class
    (catalog order) and its maximum must equal ``confidence``.
    """

    label: int
    confidence: float
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    heading: float = 0.0
    scores: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        _check_geometry(self.center, self.size, self.heading)
        if self.scores is not None:
            scores = tuple(float(s) for s in self.scores)
            object.__setattr__(self, "scores", scores)
            if not scores or any(not (0.0 <= s <= 1.0) for s in scores):
                raise ValueError("class scores must lie in [0, 1]")
            if abs(max(scores) - self.confidence) > 1e-6:
                raise ValueError("confidence must equal the maximum class score")


@dataclass(frozen=True, slots=True)
class GroundTruthBox:
    label: int
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        _check_geometry(self.center, self.size, self.heading)


@dataclass(frozen=True)
class FrameRecord:
    """Detector output for one point-cloud frame."""

    frame_id: str
    boxes: tuple[PredictedBox, ...] = ()
    embedding: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.embedding is not None and not isinstance(self.embedding, tuple):
            object.__setattr__(self, "embedding", tuple(map(float, self.embedding)))

    @property
    def n_boxes(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True)
class PoolState:
    """Labeled and unlabeled frame ids plus the oracle-held ground truth."""

    labeled: frozenset[str]
    unlabeled: frozenset[str]
    truth: Mapping[str, tuple[GroundTruthBox, ...]] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "labeled", frozenset(self.labeled))
        object.__setattr__(self, "unlabeled", frozenset(self.unlabeled))
        overlap = self.labeled & self.unlabeled
        if overlap:
            raise ValueError(f"frames both labeled and unlabeled: {sorted(overlap)[:5]}")
        missing = (self.labeled | self.unlabeled) - self.truth.keys()
        if missing:
            raise ValueError(f"frames without ground truth: {sorted(missing)[:5]}")

    @classmethod
    def from_truth(cls, truth: Mapping[str, Sequence[GroundTruthBox]]) -> PoolState:
        """A pool with every frame unlabeled."""
        frozen = {fid: tuple(boxes) for fid, boxes in truth.items()}
        return cls(frozenset(), frozenset(frozen), frozen)

    @property
    def size(self) -> int:
        return len(self.labeled) + len(self.unlabeled)


@dataclass(frozen=True)
class LedgerEntry:
    round_index: int
    frames: int
    known_boxes: int
    unknown_boxes: int

    def __post_init__(self):
        if min(self.frames, self.known_boxes, self.unknown_boxes) < 0:
            raise ValueError("ledger counts must be non-negative")

    @property
    def cost(self) -> int:
        return self.known_boxes + self.unknown_boxes


@dataclass(frozen=True)
class BudgetLedger:
    """Per-round annotation counts with an optional cap.

    ``budget_mode`` is ``"frames"`` or ``"boxes"``; the cap applies to the
    cumulative total in that unit.
    """

    entries: tuple[LedgerEntry, ...] = ()
    budget: int | None = None
    budget_mode: str = "frames"

    def __post_init__(self):
        if self.budget_mode not in ("frames", "boxes"):
            raise ValueError(f"unknown budget mode {self.budget_mode!r}")

    def record(self, entry: LedgerEntry) -> BudgetLedger:
        ledger = replace(self, entries=self.entries + (entry,))
        if self.budget is not None:
            used = ledger.total_frames if self.budget_mode == "frames" else ledger.total_cost
            if used > self.budget:
                raise ValueError(f"budget exceeded: {used} {self.budget_mode} > {self.budget}")
        return ledger

    @property
    def total_frames(self) -> int:
        return sum(e.frames for e in self.entries)

    @property
    def total_known(self) -> int:
        return sum(e.known_boxes for e in self.entries)

    @property
    def total_unknown(self) -> int:
        return sum(e.unknown_boxes for e in self.entries)

    @property
    def total_cost(self) -> int:
        return self.total_known + self.total_unknown

    def cumulative(self) -> list[tuple[int, int, int]]:
        """(round_index, cumulative known, cumulative unknown) after each entry."""
        out, known, unknown = [], 0, 0
        for e in self.entries:
            known += e.known_boxes
            unknown += e.unknown_boxes
            out.append((e.round_index, known, unknown))
        return out


def annotate(
    pool: PoolState,
    catalog: ClassCatalog,
    selected: Sequence[str],
    round_index: int = 0,
    closed_set: bool = False,
) -> tuple[PoolState, ClassCatalog, LedgerEntry]:
    """Query the oracle for every box in the selected frames.

    Box counts are split into known/unknown against ``catalog`` as it stood
    before the call. Unknown classes present in the selected frames are added
    to the returned catalog's ``discovered`` set.

    With ``closed_set=True`` only the catalog's effective known classes are
    labeled (used for the pre-training set); other objects stay unlabeled and
    nothing is discovered.

    Raises:
        ValueError: if an id is duplicated or not in ``pool.unlabeled``.
    """
    seen = set()
    for fid in selected:
        if fid in seen:
            raise ValueError(f"duplicate frame id {fid!r} in selection")
        if fid not in pool.unlabeled:
            raise ValueError(f"frame {fid!r} not in unlabeled pool")
        seen.add(fid)

    effective = set(catalog.effective_known)
    known = unknown = 0
    found = set()
    for fid in selected:
        for box in pool.truth[fid]:
            if box.label in effective:
                known += 1
            elif not closed_set:
                unknown += 1
                found.add(box.label)

    new_pool = PoolState(pool.labeled | seen, pool.unlabeled - seen, pool.truth)
    entry = LedgerEntry(round_index, len(seen), known, unknown)
    return new_pool, catalog.discover(found), entry


def unknown_to_known_ratio(
    ledger: BudgetLedger, upto_round: int | None = None, since_round: int = 0
) -> float:
    """Unknown boxes over known boxes summed over rounds in
    ``[since_round, upto_round]``.

    Returns ``inf`` when only unknown boxes were annotated and ``0.0`` when
    nothing was.
    """
    if upto_round is not None and ledger.entries:
        last = max(e.round_index for e in ledger.entries)
        if upto_round > last:
            raise ValueError(f"round {upto_round} beyond last recorded round {last}")
    rows = [
        e
        for e in ledger.entries
        if e.round_index >= since_round and (upto_round is None or e.round_index <= upto_round)
    ]
    known = sum(e.known_boxes for e in rows)
    unknown = sum(e.unknown_boxes for e in rows)
    if known == 0:
        return math.inf if unknown > 0 else 0.0
    return unknown / known
