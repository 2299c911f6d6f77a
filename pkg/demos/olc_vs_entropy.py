"""Why label entropy alone misses frames full of novel objects.

Frames from a detector trained on cars (1) and pedestrians (2):

* ``familiar``: four confident car boxes.
* ``novel``: four hesitant "car" boxes, the typical footprint of an
  unfamiliar object squeezed into a known label.
* ``mixed``: one confident car and one confident pedestrian.

Known-class entropy sees only the label mix, so ``familiar`` and ``novel``
tie at zero. OLC keeps a slot for the mass the detector could not explain
and ranks ``novel`` well above ``familiar``.
"""

from owal3d import ClassCatalog, FrameRecord, PredictedBox
from owal3d import entropy_score, label_distribution, olc_score, relationship_diagnostics


def box(label, conf):
    return PredictedBox(label, conf, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


catalog = ClassCatalog(known_ids=(1, 2))
frames = [
    FrameRecord("familiar", tuple(box(1, 0.95) for _ in range(4))),
    FrameRecord("novel", tuple(box(1, 0.5) for _ in range(4))),
    FrameRecord("mixed", (box(1, 0.95), box(2, 0.95))),
    # the balanced case: equal known masses and an unknown mass to match
    FrameRecord("balanced", (box(1, 2 / 3), box(2, 2 / 3))),
]

print(f"{'frame':10s} {'entropy':>8s} {'olc':>8s}   distribution (car, ped, unknown)")
for f in frames:
    dist = label_distribution(f, catalog)
    comps = ", ".join(f"{p:.3f}" for p in dist.components)
    print(f"{f.frame_id:10s} {entropy_score(f, catalog).score:8.4f} {olc_score(f, catalog).score:8.4f}   ({comps})")

d = relationship_diagnostics(label_distribution(frames[3], catalog), frames[3])
print("\nbalanced frame: counts", d["counts"], "harmonic mean of confidences", round(d["harmonic_mean"], 6))
print("every slot equal, so OLC reaches its ceiling ln 3 =", round(olc_score(frames[3], catalog).score, 6))
