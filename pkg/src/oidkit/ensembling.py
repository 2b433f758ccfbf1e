"""Multi-model ensembling: per-category model weights, classifier and expert
re-scoring, fusion with per-category NMS, and the NMS threshold search.
"""

from __future__ import annotations

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .boxes import Detection, GroundTruthBox, nms
from .errors import DataError
from .evaluation import DEFAULT_IOU, average_precision, match_detections
from .labelspace import ANCESTORS, LabelHierarchy, expand_detections, expand_ground_truth

PENALTY = "penalty"
INVERSE_SQUARE = "inverse-square"


@dataclass(frozen=True)
class ModelRun:
    model_id: str
    detections: tuple[Detection, ...]
    per_category_ap: Mapping[str, float]

    def __post_init__(self):
        for label, s in self.per_category_ap.items():
            if not (0.0 <= s <= 1.0):
                raise DataError(f"{self.model_id}: AP {s} for {label!r} outside [0, 1]")


@dataclass(frozen=True)
class WeightTable:
    weights: Mapping[tuple[str, str], float]
    alpha: float

    def get(self, model_id: str, label: str) -> float:
        try:
            return self.weights[(model_id, label)]
        except KeyError:
            raise DataError(f"no weight for model {model_id!r}, label {label!r}") from None


@dataclass(frozen=True)
class ThresholdTable:
    thresholds: Mapping[str, float]
    default: float
    # objective value at the chosen threshold, for reporting
    objective: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for label, t in self.thresholds.items():
            if not (0.0 < t < 1.0):
                raise DataError(f"threshold {t} for {label!r} outside (0, 1)")

    def get(self, label: str) -> float:
        try:
            return self.thresholds[label]
        except KeyError:
            raise DataError(f"no NMS threshold for label {label!r}") from None

    @classmethod
    def uniform(cls, labels, d: float) -> "ThresholdTable":
        return cls({l: d for l in sorted(set(labels))}, d)


def category_weight(s: float, mu: float, t: float, alpha: float) -> float:
    """Weight of one model on one category from its validation AP.

    ``s`` is the model's AP, ``mu`` and ``t`` the mean and max AP over all
    models for this category.  Linear from ``alpha`` at ``s = mu`` up to 1 at
    ``s = t``; floored at ``alpha`` below the mean.  All-equal models
    (``t == mu``) get weight 1.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if mu > t:
        raise ValueError(f"mean AP {mu} exceeds max AP {t}")
    if t == mu:
        return 1.0
    if s <= mu:
        return alpha
    if s >= t:
        return 1.0
    # == (s - mu)/(t - mu) + alpha (t - s)/(t - mu), written so rounding stays monotone in s
    w = (1.0 - alpha) * (s - mu) / (t - mu) + alpha
    return min(1.0, max(alpha, w))


def weight_table(runs: Sequence[ModelRun], alpha: float) -> WeightTable:
    """Weights for every (model, category) that the model reports an AP for.

    Mean and max are taken over the models reporting that category.
    """
    if not runs:
        raise ValueError("at least one model run is required")
    ids = [r.model_id for r in runs]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate model ids: {ids}")
    per_cat: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for r in runs:
        for label, s in r.per_category_ap.items():
            per_cat[label].append((r.model_id, s))
    weights = {}
    for label in sorted(per_cat):
        vals = [s for _, s in per_cat[label]]
        mu = sum(vals) / len(vals)
        t = max(vals)
        mu = min(mu, t)  # summation rounding can push the mean above the max
        for mid, s in per_cat[label]:
            weights[(mid, label)] = category_weight(s, mu, t, alpha)
    return WeightTable(weights, alpha)


def reweight_detections(run: ModelRun, wt: WeightTable) -> list[Detection]:
    out = []
    for d in run.detections:
        w = wt.get(run.model_id, d.label)
        out.append(d.with_score(min(1.0, max(0.0, d.score * w))))
    return out


def classifier_reweight(dets: Sequence[Detection],
                        classifier_scores: Mapping[tuple[str, str, tuple], float],
                        drop_missing: bool = False) -> list[Detection]:
    """Multiply detector scores by a box classifier's confidence.

    ``classifier_scores`` is keyed by ``(image_id, label, box.key())``.
    """
    for key, c in classifier_scores.items():
        if not (0.0 <= c <= 1.0):
            raise DataError(f"classifier score {c} for {key} outside [0, 1]")
    out = []
    for d in dets:
        c = classifier_scores.get((d.image_id, d.label, d.box.key()))
        if c is None:
            if not drop_missing:
                out.append(d)
        else:
            out.append(d.with_score(d.score * c))
    return out


def expert_consensus(expert_runs: Sequence[ModelRun],
                     subsets: Mapping[str, set]) -> list[Detection]:
    """Keep expert detections whose label lies in at least two expert subsets."""
    membership: dict[str, int] = defaultdict(int)
    for r in expert_runs:
        if r.model_id not in subsets:
            raise DataError(f"no declared subset for expert {r.model_id!r}")
    for mid in subsets:
        for label in set(subsets[mid]):
            membership[label] += 1
    out = []
    for r in expert_runs:
        sub = subsets[r.model_id]
        for d in r.detections:
            if d.label not in sub:
                raise DataError(
                    f"expert {r.model_id!r} emitted {d.label!r} outside its declared subset"
                )
            if membership[d.label] >= 2:
                out.append(d)
    return out


def sort_detections(dets: Sequence[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: (-d.score, d.image_id, d.label, d.box.as_tuple()))


def fuse(runs: Sequence[ModelRun], wt: WeightTable, tt: ThresholdTable) -> list[Detection]:
    """Re-weight each run, pool them, and apply per-label NMS with ``tt``.

    Weights are applied before suppression.
    """
    pooled: dict[tuple[str, str], list[Detection]] = defaultdict(list)
    for r in runs:
        for d in reweight_detections(r, wt):
            pooled[(d.image_id, d.label)].append(d)
    out = []
    for key in sorted(pooled):
        out.extend(nms(pooled[key], tt.get(key[1])))
    return sort_detections(out)


def penalized_objective(ap: float, h: float, d: float, mode: str = PENALTY,
                        lam: float = 1.0) -> float:
    """Score of threshold ``h`` given its AP.

    ``mode="inverse-square"`` uses ``AP + 1/(h - d)^2``; ``mode="penalty"``
    uses ``AP - lam * (h - d)^2``.
    """
    if mode == INVERSE_SQUARE:
        if h == d:
            raise ZeroDivisionError("inverse-square objective is undefined at h == d")
        return ap + 1.0 / (h - d) ** 2
    if mode == PENALTY:
        return ap - lam * (h - d) ** 2
    raise ValueError(f"unknown search mode {mode!r}")


def _check_grid(grid: Sequence[float], d: float, mode: str, lam: float) -> list[float]:
    grid = sorted(set(float(g) for g in grid))
    if not grid:
        raise ValueError("threshold grid is empty")
    if not all(0.0 < g < 1.0 for g in grid):
        raise ValueError(f"grid values must lie in (0, 1): {grid}")
    if not (0.0 < d < 1.0):
        raise ValueError(f"default threshold must lie in (0, 1), got {d}")
    if mode not in (INVERSE_SQUARE, PENALTY):
        raise ValueError(f"unknown search mode {mode!r}")
    if mode == INVERSE_SQUARE and any(abs(g - d) < 1e-12 for g in grid):
        raise ValueError(f"inverse-square mode requires the default {d} to be excluded from the grid")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return grid


def select_threshold(ap_by_threshold: Mapping[float, float], d: float, mode: str = PENALTY,
                     lam: float = 1.0) -> tuple[float, float]:
    """Best grid threshold for one category; returns ``(threshold, objective)``.

    Ties go to the threshold nearest ``d``, then to the smaller threshold.
    """
    grid = _check_grid(list(ap_by_threshold), d, mode, lam)
    best = None
    for h in grid:
        obj = penalized_objective(ap_by_threshold[h], h, d, mode, lam)
        key = (-obj, abs(h - d), h)
        if best is None or key < best[0]:
            best = (key, h, obj)
    return best[1], best[2]


def ap_profile(dets: Sequence[Detection], gts: Sequence[GroundTruthBox], grid: Sequence[float],
               iou_thr: float = DEFAULT_IOU) -> dict[float, float]:
    """AP of one label after per-image NMS at each grid threshold.

    ``dets`` and ``gts`` must already be restricted to a single label.
    """
    by_image: dict[str, list[Detection]] = defaultdict(list)
    for x in dets:
        by_image[x.image_id].append(x)
    out = {}
    for h in grid:
        kept = [k for img in sorted(by_image) for k in nms(by_image[img], h)]
        ms = match_detections(kept, gts, iou_thr)
        m = next(iter(ms.values()))
        out[h] = average_precision(m)
    return out


def search_nms_thresholds(dets: Sequence[Detection], gts: Sequence[GroundTruthBox],
                          h: Optional[LabelHierarchy], default_d: float, grid: Sequence[float],
                          mode: str = PENALTY, lam: float = 1.0,
                          iou_thr: float = DEFAULT_IOU, jobs: int = 1) -> ThresholdTable:
    """Per-category NMS threshold maximizing a regularized validation AP.

    Both inputs are first expanded to ancestor labels (when ``h`` is given),
    then each label's candidates are suppressed at every grid threshold and
    scored by AP.  Under per-label NMS the labels do not interact, so the
    per-label argmax is also the joint argmax of mAP.  Labels without ground
    truth keep ``default_d``.
    """
    grid = _check_grid(grid, default_d, mode, lam)
    if h is not None:
        gts = expand_ground_truth(h, gts)
        dets = expand_detections(h, dets, ANCESTORS)
    det_by_label: dict[str, list[Detection]] = defaultdict(list)
    gt_by_label: dict[str, list[GroundTruthBox]] = defaultdict(list)
    for x in dets:
        det_by_label[x.label].append(x)
    for g in gts:
        gt_by_label[g.label].append(g)

    labels = sorted(gt_by_label)

    def solve(label):
        prof = ap_profile(det_by_label.get(label, []), gt_by_label[label], grid, iou_thr)
        return select_threshold(prof, default_d, mode, lam)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(solve, labels))
    else:
        results = [solve(l) for l in labels]

    thresholds = {l: default_d for l in sorted(det_by_label)}
    objective = {}
    for label, (thr, obj) in zip(labels, results):
        thresholds[label] = thr
        objective[label] = obj
    return ThresholdTable(thresholds, default_d, objective)
