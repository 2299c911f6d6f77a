import math

import pytest

from owal3d.core import ClassCatalog, FrameRecord, GroundTruthBox, PredictedBox


def pbox(label, conf, center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0), heading=0.0, scores=None):
    return PredictedBox(label, conf, center, size, heading, scores)


def gtbox(label, center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0), heading=0.0):
    return GroundTruthBox(label, center, size, heading)


def frame(fid, pairs, embedding=None):
    """Frame from (label, confidence) pairs with dummy geometry."""
    return FrameRecord(fid, tuple(pbox(c, y) for c, y in pairs), embedding)


@pytest.fixture
def cat2():
    return ClassCatalog((1, 2))


def entropy_nat(p):
    return -sum(x * math.log(x) for x in p if x > 0)


def geometry_pool(rng, n_frames, n_classes=3, max_boxes=6, emb_dim=4):
    """Random frames with varied box geometry, labels and embeddings."""
    import numpy as np

    frames = []
    for i in range(n_frames):
        boxes = []
        for _ in range(int(rng.integers(0, max_boxes + 1))):
            size = tuple(float(v) for v in rng.uniform(0.3, 5.0, 3))
            label = int(rng.integers(1, n_classes + 1))
            boxes.append(pbox(label, float(rng.uniform(0.05, 1.0)), size=size, heading=float(rng.uniform(-math.pi, math.pi))))
        emb = tuple(float(v) for v in rng.normal(size=emb_dim))
        frames.append(FrameRecord(f"f{i:04d}", tuple(boxes), emb))
    return frames


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in mod.CRITERIA:
        terminalreporter.write_line(mod.RESULTS.get(name, f"FAIL  {name}: did not complete"))
