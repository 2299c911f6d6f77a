"""Run a few policies on one simulated world and compare them.

The first column is what the first round spent its budget on: unknown
boxes per known box among the selected frames. The last columns are the
final test-set scores after all rounds.

Usage: python demos/compare_policies.py [seed]
"""

import sys
from dataclasses import replace

from owal3d.core import unknown_to_known_ratio
from owal3d.metrics import cost_curve
from owal3d.simulation import Protocol, WorldConfig, generate_world, run_experiment

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
world = generate_world(WorldConfig(seed=seed))
protocol = Protocol(seed=seed)
print(f"world seed {seed}: {world.pool.size} pool frames, known {world.catalog.known_ids}, unknown {world.catalog.unknown_ids}")

runs = {
    "open-crb": run_experiment(world, "open-crb", protocol),
    "random": run_experiment(world, "random", protocol),
    "random+olc": run_experiment(world, "random", protocol, olc_first_round=True),
    "entropy": run_experiment(world, "entropy", protocol),
    # coreset ignores detector output; one round is enough for its ratio
    "coreset (r1)": run_experiment(world, "coreset", replace(protocol, rounds=1)),
}

print(f"\n{'policy':14s} {'r1 unk/known':>12s} {'boxes':>6s} {'mAP_unk':>8s} {'mAP_k':>7s} {'mAP_H':>7s}")
for name, trace in runs.items():
    ratio = unknown_to_known_ratio(trace.ledger, 1, 1)
    last = cost_curve(trace)[-1]
    print(f"{name:14s} {ratio:12.3f} {last.cumulative_boxes:6d} {last.map_unk:8.3f} {last.map_k:7.3f} {last.map_h:7.3f}")
print("\ndiscovered by open-crb:", sorted(runs["open-crb"].catalog.discovered))
