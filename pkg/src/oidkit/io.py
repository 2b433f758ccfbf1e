"""Readers and writers for the toolkit's CSV, JSON and PPM files.

All writers go through :func:`atomic_write` so a failed command never leaves
a half-written output behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .boxes import BBox, Detection, GroundTruthBox
from .errors import DataError

DET_COLUMNS = ("ImageID", "LabelName", "Score", "XMin", "YMin", "XMax", "YMax")
GT_COLUMNS = ("ImageID", "LabelName", "XMin", "YMin", "XMax", "YMax")
AP_COLUMNS = ("LabelName", "AP", "NumGT")
BOX_COLUMNS = ("LabelName", "XMin", "YMin", "XMax", "YMax")
COORDS = ("XMin", "YMin", "XMax", "YMax")
# Open Images files list XMin,XMax,YMin,YMax; only the column order differs
OI_COORDS = ("XMin", "XMax", "YMin", "YMax")


def fmt(x: float) -> str:
    return f"{x:.6f}"


@contextmanager
def atomic_write(path, mode: str = "w", **kw):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _rows(path, required: Sequence[str]):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def _float(row, col, path, lineno) -> float:
    try:
        return float(row[col])
    except (TypeError, ValueError):
        raise DataError(f"{path}: row {lineno}: bad number {row[col]!r} in column {col}") from None


def _box(row, path, lineno) -> BBox:
    vals = [_float(row, c, path, lineno) for c in COORDS]
    try:
        return BBox(*vals)
    except DataError as e:
        raise DataError(f"{path}: row {lineno}: {e}") from None


def read_detections(path) -> list[Detection]:
    out = []
    for lineno, row in _rows(path, DET_COLUMNS):
        score = _float(row, "Score", path, lineno)
        box = _box(row, path, lineno)
        try:
            out.append(Detection(row["ImageID"], row["LabelName"], score, box))
        except DataError as e:
            raise DataError(f"{path}: row {lineno}: {e}") from None
    return out


def read_ground_truth(path) -> list[GroundTruthBox]:
    return [
        GroundTruthBox(row["ImageID"], row["LabelName"], _box(row, path, lineno))
        for lineno, row in _rows(path, GT_COLUMNS)
    ]


def detection_sort_key(d: Detection):
    return (d.image_id, d.label, -round(d.score, 6), d.box.key())


def write_detections(dets: Iterable[Detection], path, oi_order: bool = False) -> None:
    coords = OI_COORDS if oi_order else COORDS
    with atomic_write(path, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("ImageID", "LabelName", "Score", *coords))
        for d in sorted(dets, key=detection_sort_key):
            c = dict(zip(COORDS, d.box.as_tuple()))
            w.writerow((d.image_id, d.label, fmt(d.score), *(fmt(c[k]) for k in coords)))


def write_ground_truth(gts: Iterable[GroundTruthBox], path, oi_order: bool = False) -> None:
    coords = OI_COORDS if oi_order else COORDS
    with atomic_write(path, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("ImageID", "LabelName", *coords))
        for g in sorted(gts, key=lambda g: (g.image_id, g.label, g.box.key())):
            c = dict(zip(COORDS, g.box.as_tuple()))
            w.writerow((g.image_id, g.label, *(fmt(c[k]) for k in coords)))


def read_ap_table(path) -> dict[str, float]:
    out = {}
    for lineno, row in _rows(path, ("LabelName", "AP")):
        out[row["LabelName"]] = _float(row, "AP", path, lineno)
    return out


def write_ap_table(rows: Iterable[tuple[str, float, int]], path) -> None:
    with atomic_write(path, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AP_COLUMNS)
        for label, ap, n in rows:
            w.writerow((label, f"{ap:.9f}", n))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with atomic_write(path, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_thresholds(path) -> dict[str, float]:
    return {row["LabelName"]: _float(row, "Threshold", path, lineno)
            for lineno, row in _rows(path, ("LabelName", "Threshold"))}


def read_boxes(path) -> tuple[list[str], list[BBox]]:
    """Labelled boxes of a single image (``LabelName,XMin,YMin,XMax,YMax``)."""
    labels, boxes = [], []
    for lineno, row in _rows(path, BOX_COLUMNS):
        labels.append(row["LabelName"])
        boxes.append(_box(row, path, lineno))
    return labels, boxes


def write_boxes(labels: Sequence[str], boxes: Sequence[BBox], path) -> None:
    write_csv(path, BOX_COLUMNS,
              ((l, *(fmt(v) for v in b.as_tuple())) for l, b in zip(labels, boxes)))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON: {e}") from None


# ---------------------------------------------------------------------------
# binary PPM (P6, maxval 255)


def _ppm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PPM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _ppm_tokens(data, 4)
    if magic != b"P6" or int(maxval) != 255:
        raise DataError(f"{path}: only binary P6 images with maxval 255 are supported")
    w, h = int(w), int(h)
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=offset)
    return pix.reshape(h, w, 3).copy()


def write_ppm(img: np.ndarray, path) -> None:
    h, w = img.shape[:2]
    buf = io.BytesIO()
    buf.write(f"P6\n{w} {h}\n255\n".encode())
    buf.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())
    with atomic_write(path, "wb") as fh:
        fh.write(buf.getvalue())
