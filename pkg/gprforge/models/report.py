from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from gprforge.models.base import Model
from gprforge.models.boxes import BBox


@dataclass(repr=False)
class Match(Model):
    """One TP, FP or FN outcome. TPs carry both boxes and their IoU."""

    types = {"kind": "str", "pred": "BBox", "gt": "BBox", "iou": "float", "score": "float"}

    kind: str
    pred: Optional[BBox] = None
    gt: Optional[BBox] = None
    iou: float = 0.0
    score: Optional[float] = None


@dataclass(repr=False)
class EvalReport(Model):
    types = {
        "iou_thresh": "float",
        "score_thresh": "float",
        "ap": "float",
        "precision": "float",
        "recall": "float",
        "n_gt": "int",
        "n_pred": "int",
        "tp": "int",
        "fp": "int",
        "fn": "int",
        "mean_tp_score": "float",
    }

    iou_thresh: float
    score_thresh: float
    ap: float = 0.0
    precision: float = 1.0
    recall: float = 0.0
    n_gt: int = 0
    n_pred: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    mean_tp_score: float = 0.0
    per_image: Dict[int, List[Match]] = field(default_factory=dict)
    pr_curve: List[Tuple[float, float, float]] = field(default_factory=list)
