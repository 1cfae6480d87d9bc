"""
    Detection scoring: greedy matching, PR curves, average precision and
    corpus reports.
"""

import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from gprforge.annotate import dataset_indices, iou, read_labels
from gprforge.exceptions import MissingPair
from gprforge.models import BBox, EvalReport, Match

log = logging.getLogger(__name__)


def score_of(box: BBox) -> float:
    # Label files without a score column count as certain
    return 1.0 if box.score is None else float(box.score)


def match_detections(preds: Sequence[BBox], gts: Sequence[BBox], iou_thresh: float = 0.5) -> List[Match]:
    """Greedy by descending score: each prediction takes the unmatched gt
    of highest IoU >= iou_thresh, else it is a false positive."""
    order = sorted(range(len(preds)), key=lambda k: -score_of(preds[k]))
    taken = [False] * len(gts)
    matches = []
    for k in order:
        pred = preds[k]
        best, best_iou = None, iou_thresh
        for g, gt in enumerate(gts):
            if taken[g]:
                continue
            overlap = iou(pred, gt)
            if overlap >= best_iou and (best is None or overlap > best_iou):
                best, best_iou = g, overlap
        if best is None:
            matches.append(Match("fp", pred=pred, score=score_of(pred)))
        else:
            taken[best] = True
            matches.append(Match("tp", pred=pred, gt=gts[best], iou=best_iou, score=score_of(pred)))
    matches += [Match("fn", gt=gt) for g, gt in enumerate(gts) if not taken[g]]
    return matches


def count_gt(matches: Sequence[Match]) -> int:
    return sum(1 for m in matches if m.kind in ("tp", "fn"))


def pr_curve(matches: Sequence[Match], n_gt: Optional[int] = None) -> List[Tuple[float, float, float]]:
    """(score, precision, recall) at every distinct prediction score,
    highest first."""
    n_gt = count_gt(matches) if n_gt is None else n_gt
    scored = [(m.score, m.kind == "tp") for m in matches if m.kind in ("tp", "fp")]
    if not scored:
        return []
    scores = np.array([s for s, _ in scored])
    hits = np.array([t for _, t in scored])
    curve = []
    for s in np.unique(scores)[::-1]:
        passed = scores >= s
        tp = int(hits[passed].sum())
        precision = tp / int(passed.sum())
        recall = tp / n_gt if n_gt else 1.0
        curve.append((float(s), precision, recall))
    return curve


def average_precision(matches: Sequence[Match], n_gt: Optional[int] = None) -> float:
    # All-point interpolation: area under the precision envelope
    n_gt = count_gt(matches) if n_gt is None else n_gt
    curve = pr_curve(matches, n_gt)
    if n_gt == 0 or not curve:
        return 0.0
    precision = np.array([p for _, p, _ in curve])
    recall = np.array([r for _, _, r in curve])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def eval_report(pred_dir: str, gt_dir: str, iou_thresh: float = 0.5, score_thresh: float = 0.7) -> EvalReport:
    """Pair `{i}.txt` files by index; AP over all scores, P/R/counts at
    score_thresh."""
    gt_ids = dataset_indices(gt_dir, ".txt")
    pred_ids = dataset_indices(pred_dir, ".txt")
    for i in sorted(set(gt_ids) ^ set(pred_ids)):
        side = "prediction" if i in gt_ids else "ground-truth"
        raise MissingPair(subject=i, reason=f"image {i} has no {side} file")

    per_image: Dict[int, List[Match]] = {}
    for i in gt_ids:
        preds = read_labels(os.path.join(pred_dir, f"{i}.txt"))
        gts = read_labels(os.path.join(gt_dir, f"{i}.txt"))
        per_image[i] = match_detections(preds, gts, iou_thresh)

    pooled = [m for i in gt_ids for m in per_image[i]]
    n_gt = count_gt(pooled)
    passed = [m for m in pooled if m.kind != "fn" and m.score >= score_thresh]
    tp_scores = [m.score for m in passed if m.kind == "tp"]
    tp, fp = len(tp_scores), len(passed) - len(tp_scores)

    report = EvalReport(
        iou_thresh=iou_thresh,
        score_thresh=score_thresh,
        ap=average_precision(pooled, n_gt),
        precision=tp / (tp + fp) if tp + fp else 1.0,
        recall=tp / n_gt if n_gt else 1.0,
        n_gt=n_gt,
        n_pred=sum(1 for m in pooled if m.kind != "fn"),
        tp=tp,
        fp=fp,
        fn=n_gt - tp,
        mean_tp_score=float(np.mean(tp_scores)) if tp_scores else 0.0,
        per_image=per_image,
        pr_curve=pr_curve(pooled, n_gt),
    )
    log.info(
        f"Evaluated {len(gt_ids)} images: AP {report.ap:.4f}, "
        f"P {report.precision:.4f}, R {report.recall:.4f} at score >= {score_thresh}"
    )
    return report


def format_report(report: EvalReport) -> str:
    keys = ("iou_thresh", "score_thresh", "ap", "precision", "recall", "n_gt", "n_pred", "tp", "fp", "fn", "mean_tp_score")
    lines = [f"{k}: {getattr(report, k)}" for k in keys]
    lines.append(f"images: {len(report.per_image)}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path: str):
    with open(path, "w") as file:
        file.write(format_report(report))


def write_pr_csv(report: EvalReport, path: str):
    with open(path, "w") as file:
        file.write("score,precision,recall\n")
        for score, precision, recall in report.pr_curve:
            file.write(f"{score!r},{precision!r},{recall!r}\n")
