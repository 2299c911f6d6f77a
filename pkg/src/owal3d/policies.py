"""Name-based dispatch over the selection policies."""

from __future__ import annotations

from typing import Sequence

from .core import ClassCatalog, FrameRecord
from .crb import CrbConfig, crb_select, open_crb_round
from .scoring import (
    coreset_select,
    confidence_margin_score,
    entropy_score,
    gradnorm_surrogate_score,
    olc_score,
    random_score,
    select_top_k,
    stable_hash,
)

POLICIES = ("random", "entropy", "margin", "coreset", "gradnorm", "olc", "crb", "open-crb")


def select_frames(
    policy: str,
    unlabeled: Sequence[FrameRecord],
    catalog: ClassCatalog,
    k: int,
    round_index: int = 1,
    *,
    labeled: Sequence[FrameRecord] = (),
    seed: int = 0,
    crb: CrbConfig | None = None,
    olc_first_round: bool = False,
) -> list[str]:
    """Pick ``k`` unlabeled frame ids with the named policy.

    Args:
        policy: one of :data:`POLICIES`.
        unlabeled: candidate frames (detector output on the unlabeled pool).
        catalog: class catalog in force for this round.
        k: number of frames to pick.
        round_index: 1-based round number. Open-CRB and ``olc_first_round``
            switch behaviour on round 1.
        labeled: already-labeled frames; only coreset reads them.
        seed: random-policy seed; combined with the round index.
        crb: stage sizes for ``crb``/``open-crb``; ``n_r`` is overridden by ``k``.
        olc_first_round: rank round 1 by OLC regardless of ``policy``.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {', '.join(POLICIES)}")
    if k > len(unlabeled):
        raise ValueError(f"cannot select {k} of {len(unlabeled)} unlabeled frames")

    if olc_first_round and round_index == 1:
        policy = "olc"

    if policy in ("crb", "open-crb"):
        base = crb or CrbConfig()
        k1 = min(max(base.k1, k), len(unlabeled))
        k2 = min(max(base.k2, k), k1)
        cfg = CrbConfig(**{**base.__dict__, "k1": k1, "k2": k2, "n_r": k})
        if policy == "crb":
            return crb_select(unlabeled, catalog, cfg)
        return open_crb_round(unlabeled, catalog, cfg, round_index)

    if policy == "coreset":
        return coreset_select([*labeled, *unlabeled], {f.frame_id for f in labeled}, k)

    if policy == "random":
        round_seed = stable_hash(seed, round_index) % (2**63)
        scored = [random_score(f, round_seed) for f in unlabeled]
    elif policy == "olc":
        scored = [olc_score(f, catalog) for f in unlabeled]
    elif policy == "entropy":
        scored = [entropy_score(f, catalog) for f in unlabeled]
    elif policy == "gradnorm":
        scored = [gradnorm_surrogate_score(f, catalog) for f in unlabeled]
    else:
        scored = [confidence_margin_score(f) for f in unlabeled]
    return select_top_k(scored, k)
