"""Detection auto-augmentation: the five-sub-policy table and its operations.

Images are ``(H, W, 3)`` uint8 arrays.  Boxes are :class:`~oidkit.boxes.BBox`
in normalized coordinates.  Geometric operations warp pixels and boxes with
the same affine map (pixel ``i`` spans ``[i, i + 1)``), then clip boxes and
drop the ones pushed fully out of frame.

Magnitude ``M`` in ``[0, 10]`` maps linearly onto:

=================  ====================================  =========
kind               parameter                             M = 10
=================  ====================================  =========
translate          fraction of the image (or box) side   0.3
shear              shear factor                          0.3
rotate             degrees                               30
cutout             square side / min(H, W)               0.5
sharpness, color   enhancement factor ``1 +- 0.09 M``    0.1 / 1.9
equalize           ignored                               -
=================  ====================================  =========

Directional operations draw their sign per application.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .boxes import BBox, clip_box

TRANSLATE_X = "TranslateX_BBox"
TRANSLATE_Y_ONLY = "TranslateY_Only_BBoxes"
EQUALIZE = "Equalize"
CUTOUT = "Cutout"
SHARPNESS = "Sharpness"
SHEAR_X = "ShearX_BBox"
SHEAR_Y = "ShearY_BBox"
ROTATE = "Rotate_BBox"
COLOR = "Color"

KINDS = (TRANSLATE_X, TRANSLATE_Y_ONLY, EQUALIZE, CUTOUT, SHARPNESS, SHEAR_X, SHEAR_Y,
         ROTATE, COLOR)
GEOMETRIC = (TRANSLATE_X, SHEAR_X, SHEAR_Y, ROTATE)
# TranslateY_Only_BBoxes draws a sign per box instead
SIGNED = (TRANSLATE_X, SHEAR_X, SHEAR_Y, ROTATE, SHARPNESS, COLOR)

_MAX_PARAM = {
    TRANSLATE_X: 0.3,
    TRANSLATE_Y_ONLY: 0.3,
    SHEAR_X: 0.3,
    SHEAR_Y: 0.3,
    ROTATE: 30.0,
    CUTOUT: 0.5,
    SHARPNESS: 0.9,
    COLOR: 0.9,
    EQUALIZE: 0.0,
}

FILL = 128


@dataclass(frozen=True)
class AugOp:
    kind: str
    p: float
    m: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"probability {self.p} outside [0, 1]")
        if not (0 <= self.m <= 10) or int(self.m) != self.m:
            raise ValueError(f"magnitude {self.m} must be an integer in [0, 10]")


@dataclass(frozen=True)
class Policy:
    sub_policies: tuple[tuple[AugOp, AugOp], ...]

    def __post_init__(self):
        if not self.sub_policies:
            raise ValueError("a policy needs at least one sub-policy")
        for sp in self.sub_policies:
            if len(sp) != 2:
                raise ValueError(f"each sub-policy has exactly 2 ops, got {len(sp)}")

    def to_json(self) -> str:
        return json.dumps(
            [{"ops": [{"kind": o.kind, "p": o.p, "m": o.m} for o in sp]}
             for sp in self.sub_policies],
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "Policy":
        doc = json.loads(text)
        return cls(tuple(
            tuple(AugOp(o["kind"], float(o["p"]), int(o["m"])) for o in sp["ops"])
            for sp in doc
        ))


def default_policy() -> Policy:
    return Policy((
        (AugOp(TRANSLATE_X, 0.6, 4), AugOp(EQUALIZE, 0.8, 10)),
        (AugOp(TRANSLATE_Y_ONLY, 0.2, 2), AugOp(CUTOUT, 0.8, 8)),
        (AugOp(SHARPNESS, 0.0, 8), AugOp(SHEAR_X, 0.4, 0)),
        (AugOp(SHEAR_Y, 1.0, 2), AugOp(TRANSLATE_Y_ONLY, 0.6, 6)),
        (AugOp(ROTATE, 0.6, 10), AugOp(COLOR, 1.0, 6)),
    ))


def magnitude_to_param(kind: str, m: float) -> float:
    """Unsigned strength of ``kind`` at magnitude ``m`` (see module table)."""
    if kind not in KINDS:
        raise ValueError(f"unknown augmentation kind {kind!r}")
    if not (0 <= m <= 10):
        raise ValueError(f"magnitude {m} outside [0, 10]")
    return _MAX_PARAM[kind] * m / 10.0


def as_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    return img


def derive_seed(seed: int, image_id: str) -> int:
    """Per-image seed mixing a global seed with the image id."""
    h = hashlib.blake2b(f"{seed}:{image_id}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "big")


# ---------------------------------------------------------------------------
# geometry


def affine_matrix(kind: str, value: float, width: int, height: int) -> np.ndarray:
    """Forward 3x3 map in pixel coordinates for a signed parameter ``value``."""
    if kind == TRANSLATE_X:
        shift = round(value * width)
        return np.array([[1.0, 0.0, shift], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    if kind == SHEAR_X:
        return np.array([[1.0, value, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    if kind == SHEAR_Y:
        return np.array([[1.0, 0.0, 0.0], [value, 1.0, 0.0], [0.0, 0.0, 1.0]])
    if kind == ROTATE:
        a = math.radians(value)
        c, s = math.cos(a), math.sin(a)
        cx, cy = width / 2.0, height / 2.0
        # counter-clockwise on screen (y axis points down)
        return np.array([
            [c, s, cx - c * cx - s * cy],
            [-s, c, cy + s * cx - c * cy],
            [0.0, 0.0, 1.0],
        ])
    raise ValueError(f"{kind!r} is not a geometric operation")


def warp(img: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Nearest-neighbour inverse warp; uncovered pixels become gray."""
    h, w = img.shape[:2]
    inv = np.linalg.inv(matrix)
    ys, xs = np.mgrid[0:h, 0:w]
    pts = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5, np.ones(h * w)])
    src = inv @ pts
    sx = np.floor(src[0]).astype(np.int64)
    sy = np.floor(src[1]).astype(np.int64)
    ok = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.full_like(img, FILL).reshape(-1, 3)
    out[ok] = img[sy[ok], sx[ok]]
    return out.reshape(img.shape)


def transform_box(box: BBox, matrix: np.ndarray, width: int, height: int) -> Optional[BBox]:
    corners = np.array([
        [box.x_min * width, box.x_max * width, box.x_min * width, box.x_max * width],
        [box.y_min * height, box.y_min * height, box.y_max * height, box.y_max * height],
        [1.0, 1.0, 1.0, 1.0],
    ])
    p = matrix @ corners
    return clip_box((p[0].min() / width, p[1].min() / height,
                     p[0].max() / width, p[1].max() / height))


# ---------------------------------------------------------------------------
# pixel operations


def equalize(img: np.ndarray) -> np.ndarray:
    """Per-channel histogram equalization (same lookup rule as PIL)."""
    out = np.empty_like(img)
    for ch in range(3):
        band = img[..., ch]
        hist = np.bincount(band.ravel(), minlength=256)
        nz = hist[hist > 0]
        step = (int(nz.sum()) - int(nz[-1])) // 255 if nz.size > 1 else 0
        if step == 0:
            out[..., ch] = band
            continue
        lut = (np.concatenate(([0], np.cumsum(hist)[:-1])) + step // 2) // step
        out[..., ch] = np.clip(lut, 0, 255).astype(np.uint8)[band]
    return out


def _blend(degenerate: np.ndarray, img: np.ndarray, factor: float) -> np.ndarray:
    out = degenerate.astype(np.float64) + factor * (img.astype(np.float64) - degenerate)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def sharpness(img: np.ndarray, factor: float) -> np.ndarray:
    """Blend with a 3x3 smoothed copy; factor 1 is identity, border pixels untouched."""
    h, w = img.shape[:2]
    if h < 3 or w < 3:
        return img.copy()
    f = img.astype(np.float64)
    acc = np.zeros((h - 2, w - 2, 3))
    for dy in range(3):
        for dx in range(3):
            acc += f[dy:dy + h - 2, dx:dx + w - 2] * (5.0 if dy == dx == 1 else 1.0)
    smooth = f.copy()
    smooth[1:-1, 1:-1] = np.round(acc / 13.0)
    return _blend(smooth, img, factor)


def color(img: np.ndarray, factor: float) -> np.ndarray:
    """Saturation: blend with the luma image; factor 0 is grayscale."""
    f = img.astype(np.float64)
    luma = np.round(f[..., 0] * 0.299 + f[..., 1] * 0.587 + f[..., 2] * 0.114)
    return _blend(np.repeat(luma[..., None], 3, axis=2), img, factor)


def cutout(img: np.ndarray, side_frac: float, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    side = int(round(side_frac * min(h, w)))
    cy, cx = int(rng.integers(h)), int(rng.integers(w))
    out = img.copy()
    if side > 0:
        y0, x0 = max(0, cy - side // 2), max(0, cx - side // 2)
        out[y0:min(h, y0 + side), x0:min(w, x0 + side)] = FILL
    return out


def _pixel_span(lo: float, hi: float, n: int) -> tuple[int, int]:
    return int(math.floor(lo * n)), int(math.ceil(hi * n))


def translate_y_in_boxes(img: np.ndarray, boxes: Sequence[BBox], frac: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Shift the content inside each box vertically; box coordinates stay put."""
    h, w = img.shape[:2]
    out = img.copy()
    for b in boxes:
        x0, x1 = _pixel_span(b.x_min, b.x_max, w)
        y0, y1 = _pixel_span(b.y_min, b.y_max, h)
        bh = y1 - y0
        shift = int(round(abs(frac) * bh)) * (1 if rng.random() < 0.5 else -1)
        if bh <= 0 or x1 <= x0 or shift == 0:
            continue
        region = out[y0:y1, x0:x1].copy()
        moved = np.full_like(region, FILL)
        if abs(shift) < bh:
            if shift > 0:
                moved[shift:] = region[:bh - shift]
            else:
                moved[:bh + shift] = region[-shift:]
        out[y0:y1, x0:x1] = moved
    return out


# ---------------------------------------------------------------------------
# dispatch


def transform(img, boxes: Sequence[BBox], kind: str, value: float,
              rng: Optional[np.random.Generator] = None):
    """Apply ``kind`` at signed strength ``value`` unconditionally.

    Returns ``(image, boxes, kept)`` where ``kept`` are the indices of the
    input boxes that survived.  ``rng`` is needed by Cutout and
    TranslateY_Only_BBoxes only.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    boxes = list(boxes)
    everything = list(range(len(boxes)))
    if kind in GEOMETRIC:
        m = affine_matrix(kind, value, w, h)
        new_boxes, kept = [], []
        for i, b in enumerate(boxes):
            nb = transform_box(b, m, w, h)
            if nb is not None:
                new_boxes.append(nb)
                kept.append(i)
        return warp(img, m), new_boxes, kept
    if kind == EQUALIZE:
        return equalize(img), boxes, everything
    if kind == SHARPNESS:
        return sharpness(img, 1.0 + value), boxes, everything
    if kind == COLOR:
        return color(img, 1.0 + value), boxes, everything
    if kind == CUTOUT:
        return cutout(img, value, rng), boxes, everything
    if kind == TRANSLATE_Y_ONLY:
        return translate_y_in_boxes(img, boxes, value, rng), boxes, everything
    raise ValueError(f"unknown augmentation kind {kind!r}")


def apply_op(img, boxes: Sequence[BBox], op: AugOp, rng: np.random.Generator,
             return_indices: bool = False):
    """Fire ``op`` with probability ``op.p``; otherwise return the inputs unchanged."""
    img = as_image(img)
    boxes = list(boxes)
    if not rng.random() < op.p:
        return (img, boxes, list(range(len(boxes)))) if return_indices else (img, boxes)
    value = magnitude_to_param(op.kind, op.m)
    if op.kind in SIGNED and rng.random() < 0.5:
        value = -value
    out_img, out_boxes, kept = transform(img, boxes, op.kind, value, rng)
    return (out_img, out_boxes, kept) if return_indices else (out_img, out_boxes)


def choose_sub_policy(policy: Policy, rng: np.random.Generator) -> int:
    return int(rng.integers(len(policy.sub_policies)))


def apply_policy(img, boxes: Sequence[BBox], policy: Policy, rng: np.random.Generator,
                 return_indices: bool = False):
    """Pick one sub-policy uniformly and run its two ops in order."""
    sub = policy.sub_policies[choose_sub_policy(policy, rng)]
    img = as_image(img)
    boxes = list(boxes)
    kept = list(range(len(boxes)))
    for op in sub:
        img, boxes, k = apply_op(img, boxes, op, rng, return_indices=True)
        kept = [kept[i] for i in k]
    return (img, boxes, kept) if return_indices else (img, boxes)
