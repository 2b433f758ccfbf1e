"""Detection matching, average precision and hierarchical mAP.

Also builds the ground-truth / prediction confusion matrix used to pick the
extra categories an expert model should be trained against.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .boxes import Detection, GroundTruthBox, iou
from .labelspace import ANCESTORS, LabelHierarchy, expand_detections, expand_ground_truth

DEFAULT_IOU = 0.5


@dataclass(frozen=True)
class MatchResult:
    """TP/FP flags of one label's detections, in descending score order."""

    label: str
    tp: tuple[bool, ...]
    scores: tuple[float, ...]
    num_gt: int

    @property
    def num_tp(self) -> int:
        return sum(self.tp)


@dataclass
class EvalReport:
    ap: dict[str, float]
    num_gt: dict[str, int]
    mAP: float
    # labels that were predicted but have no ground truth; excluded from mAP
    unscored: list[str] = field(default_factory=list)


def _check_iou_thr(iou_thr: float) -> None:
    if not (0.0 < iou_thr <= 1.0):
        raise ValueError(f"IoU threshold must be in (0, 1], got {iou_thr}")


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruthBox],
                     iou_thr: float = DEFAULT_IOU) -> dict[str, MatchResult]:
    """Greedy matching per label.

    Detections are visited in descending score (ties keep input order).  Each
    one claims the still-unmatched ground truth of the same image and label
    with the highest IoU, provided that IoU is ``>= iou_thr``; otherwise it is
    a false positive.  Inputs are expected to be label-expanded already.
    """
    _check_iou_thr(iou_thr)
    gt_by_key: dict[tuple[str, str], list[GroundTruthBox]] = defaultdict(list)
    gt_count: dict[str, int] = defaultdict(int)
    for g in gts:
        gt_by_key[(g.image_id, g.label)].append(g)
        gt_count[g.label] += 1
    dets_by_label: dict[str, list[int]] = defaultdict(list)
    for i, d in enumerate(dets):
        dets_by_label[d.label].append(i)

    results: dict[str, MatchResult] = {}
    for label in sorted(set(gt_count) | set(dets_by_label)):
        order = sorted(dets_by_label.get(label, []), key=lambda i: (-dets[i].score, i))
        used: dict[str, set[int]] = defaultdict(set)
        flags = []
        for i in order:
            d = dets[i]
            cands = gt_by_key.get((d.image_id, label), [])
            best, best_iou = -1, -1.0
            for j, g in enumerate(cands):
                if j in used[d.image_id]:
                    continue
                o = iou(d.box, g.box)
                if o >= iou_thr and o > best_iou:
                    best, best_iou = j, o
            if best >= 0:
                used[d.image_id].add(best)
                flags.append(True)
            else:
                flags.append(False)
        results[label] = MatchResult(
            label, tuple(flags), tuple(dets[i].score for i in order), gt_count.get(label, 0)
        )
    return results


def average_precision(m: MatchResult) -> Optional[float]:
    """All-point interpolated AP; ``None`` when the label has no ground truth."""
    if m.num_gt <= 0:
        return None
    if not m.tp:
        return 0.0
    tp = np.cumsum(np.asarray(m.tp, dtype=np.float64))
    fp = np.cumsum(~np.asarray(m.tp, dtype=bool))
    recall = tp / m.num_gt
    precision = tp / (tp + fp)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def evaluate_flat(dets: Sequence[Detection], gts: Sequence[GroundTruthBox],
                  iou_thr: float = DEFAULT_IOU) -> EvalReport:
    """Per-label AP without any label expansion."""
    matches = match_detections(dets, gts, iou_thr)
    ap: dict[str, float] = {}
    num_gt: dict[str, int] = {}
    unscored = []
    for label, m in matches.items():
        value = average_precision(m)
        if value is None:
            unscored.append(label)
        else:
            ap[label] = value
            num_gt[label] = m.num_gt
    mean = float(np.mean(list(ap.values()))) if ap else 0.0
    return EvalReport(ap, num_gt, mean, unscored)


def hierarchical_map(dets: Sequence[Detection], gts: Sequence[GroundTruthBox],
                     h: LabelHierarchy, iou_thr: float = DEFAULT_IOU) -> EvalReport:
    """Evaluate raw detections under the parent-label protocol.

    Ground truth and detections are both copied to every ancestor label
    before matching, so a parent's AP covers its own boxes and all of its
    descendants'.
    """
    egts = expand_ground_truth(h, gts)
    edets = expand_detections(h, dets, ANCESTORS)
    return evaluate_flat(edets, egts, iou_thr)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed by (ground-truth label, predicted label)."""

    labels: tuple[str, ...]
    counts: np.ndarray

    def __getitem__(self, key: tuple[str, str]) -> int:
        gt, pred = key
        idx = {l: i for i, l in enumerate(self.labels)}
        return int(self.counts[idx[gt], idx[pred]])

    def off_diagonal(self) -> np.ndarray:
        out = self.counts.copy()
        np.fill_diagonal(out, 0)
        return out


def confusion_matrix(dets: Sequence[Detection], gts: Sequence[GroundTruthBox],
                     h: LabelHierarchy, iou_thr: float = DEFAULT_IOU,
                     score_thr: float = 0.0) -> ConfusionMatrix:
    """Count which ground-truth label each confident detection lands on.

    Every detection with ``score >= score_thr`` is assigned to the single GT
    box in its image with the largest IoU (ties prefer the same label, then
    file order).  If that IoU is ``>= iou_thr`` the cell
    ``(gt label, detection label)`` is incremented.
    """
    _check_iou_thr(iou_thr)
    if not (0.0 <= score_thr <= 1.0):
        raise ValueError(f"score threshold must be in [0, 1], got {score_thr}")
    for x in (*dets, *gts):
        h.check(x.label)
    labels = tuple(sorted(h.nodes))
    idx = {l: i for i, l in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)

    by_image: dict[str, list[GroundTruthBox]] = defaultdict(list)
    for g in gts:
        by_image[g.image_id].append(g)
    for d in dets:
        if d.score < score_thr:
            continue
        best = None
        best_key = None
        for j, g in enumerate(by_image.get(d.image_id, [])):
            key = (iou(d.box, g.box), g.label == d.label, -j)
            if best_key is None or key > best_key:
                best, best_key = g, key
        if best is not None and best_key[0] >= iou_thr:
            counts[idx[best.label], idx[d.label]] += 1
    return ConfusionMatrix(labels, counts)


def confusable_categories(cm: ConfusionMatrix, expert_subset: Iterable[str],
                          top_n: int) -> list[str]:
    """Labels outside ``expert_subset`` most often predicted as a subset label.

    Ranked by the total count of their ground truth detected as any subset
    label; ties broken by id.  Labels with zero mass are never returned.
    """
    subset = set(expert_subset)
    if not subset:
        raise ValueError("expert subset is empty")
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    cols = [i for i, l in enumerate(cm.labels) if l in subset]
    mass = cm.counts[:, cols].sum(axis=1) if cols else np.zeros(len(cm.labels), dtype=np.int64)
    ranked = sorted(
        ((int(mass[i]), l) for i, l in enumerate(cm.labels) if l not in subset and mass[i] > 0),
        key=lambda t: (-t[0], t[1]),
    )
    return [l for _, l in ranked[:top_n]]


def per_label_table(report: EvalReport) -> list[tuple[str, float, int]]:
    """Rows of ``(label, AP, NumGT)`` sorted by label."""
    return [(l, report.ap[l], report.num_gt[l]) for l in sorted(report.ap)]
