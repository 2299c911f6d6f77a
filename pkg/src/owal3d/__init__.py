"""Open-world active learning for 3D detection: scoring, selection,
simulation and evaluation."""

from .core import (
    BudgetLedger,
    ClassCatalog,
    FrameRecord,
    GroundTruthBox,
    LedgerEntry,
    PoolState,
    PredictedBox,
    annotate,
    unknown_to_known_ratio,
)
from .crb import CrbConfig, GeometryHistogram, open_crb_round
from .metrics import MetricReport, average_precision, bev_iou, cost_curve, harmonic_map
from .policies import POLICIES, select_frames
from .scoring import (
    coreset_select,
    entropy_score,
    label_distribution,
    olc_score,
    relationship_diagnostics,
    select_top_k,
)

__version__ = "0.1.0"
