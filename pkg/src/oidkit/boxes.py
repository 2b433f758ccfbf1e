"""Axis-aligned box geometry, detection records and greedy NMS.

Coordinates are normalized to ``[0, 1]``; ``(x_min, y_min, x_max, y_max)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import DataError


@dataclass(frozen=True, order=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        c = (self.x_min, self.y_min, self.x_max, self.y_max)
        if any(math.isnan(v) for v in c):
            raise DataError(f"NaN coordinate in box {c}")
        if not all(0.0 <= v <= 1.0 for v in c):
            raise DataError(f"box coordinates outside [0, 1]: {c}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise DataError(f"box has min > max: {c}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def key(self, ndigits: int = 6) -> tuple[float, float, float, float]:
        """Coordinates rounded for use as a join / dedup key."""
        return tuple(round(v, ndigits) for v in self.as_tuple())


@dataclass(frozen=True)
class Detection:
    image_id: str
    label: str
    score: float
    box: BBox

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise DataError(f"score {self.score} outside [0, 1]")

    def with_label(self, label: str) -> "Detection":
        return Detection(self.image_id, label, self.score, self.box)

    def with_score(self, score: float) -> "Detection":
        return Detection(self.image_id, self.label, score, self.box)


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    label: str
    box: BBox

    def with_label(self, label: str) -> "GroundTruthBox":
        return GroundTruthBox(self.image_id, label, self.box)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def clip_box(coords: Sequence[float]) -> Optional[BBox]:
    """Clamp raw coordinates into the unit square.

    Returns ``None`` when the clamped box has zero width or height; callers
    drop such boxes.
    """
    vals = [float(v) for v in coords]
    if len(vals) != 4:
        raise DataError(f"expected 4 coordinates, got {len(vals)}")
    if any(math.isnan(v) for v in vals):
        raise DataError(f"NaN coordinate in {vals}")
    x0, y0, x1, y1 = (min(1.0, max(0.0, v)) for v in vals)
    if x1 <= x0 or y1 <= y0:
        return None
    return BBox(x0, y0, x1, y1)


def nms(dets: Sequence[Detection], threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression for one (image, label) group.

    A detection is kept iff its IoU with every previously kept detection is
    ``<= threshold``.  Score ties are ordered by box coordinates, then input
    position, so the result never depends on hash or sort stability.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"NMS threshold must be in (0, 1), got {threshold}")
    if not dets:
        return []
    groups = {(d.image_id, d.label) for d in dets}
    if len(groups) > 1:
        raise DataError(f"nms expects a single (image, label) group, got {sorted(groups)}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].box.as_tuple(), i))
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(iou(d.box, k.box) <= threshold for k in kept):
            kept.append(d)
    return kept


def batched_nms(dets: Sequence[Detection], thresholds) -> list[Detection]:
    """Run :func:`nms` independently per (image, label).

    ``thresholds`` is a float or a callable mapping a label to its threshold.
    Output is ordered by image, label, then descending score.
    """
    groups: dict[tuple[str, str], list[Detection]] = {}
    for d in dets:
        groups.setdefault((d.image_id, d.label), []).append(d)
    out: list[Detection] = []
    for key in sorted(groups):
        thr = thresholds(key[1]) if callable(thresholds) else thresholds
        out.extend(nms(groups[key], thr))
    return out
