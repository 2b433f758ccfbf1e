"""Detection post-processing, sampling and evaluation tools for large,
hierarchical, long-tailed label spaces."""

from pathlib import Path

from .boxes import BBox, Detection, GroundTruthBox, batched_nms, clip_box, iou, nms
from .errors import DataError, HierarchyError, InfeasibleError
from .labelspace import (
    LabelHierarchy,
    ancestors,
    expand_detections,
    expand_ground_truth,
    load_hierarchy,
)

__all__ = [
    "BBox",
    "DATA_DIR",
    "DataError",
    "Detection",
    "GroundTruthBox",
    "HierarchyError",
    "InfeasibleError",
    "LabelHierarchy",
    "ancestors",
    "batched_nms",
    "clip_box",
    "expand_detections",
    "expand_ground_truth",
    "iou",
    "load_hierarchy",
    "nms",
]

__version__ = "0.1.0"

DATA_DIR = Path(__file__).parent / "data"
