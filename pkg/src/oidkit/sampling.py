"""Class-aware sampling over an imbalanced annotation set.

Each draw first picks a category uniformly among the categories present in
the index, then an image uniformly among the images containing it.  Both
stages sample with replacement.  Randomness comes from numpy's PCG64
generator so a stream is a pure function of (index, seed, n).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .boxes import GroundTruthBox
from .errors import DataError


@dataclass(frozen=True)
class DatasetIndex:
    images_by_category: Mapping[str, tuple[str, ...]]
    categories_by_image: Mapping[str, frozenset]

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(sorted(self.images_by_category))

    def __len__(self) -> int:
        return len(self.images_by_category)


@dataclass(frozen=True)
class SampleStream:
    seed: int
    draws: tuple[tuple[str, str], ...]


def build_index(gts: Sequence[GroundTruthBox]) -> DatasetIndex:
    by_cat: dict[str, set[str]] = {}
    by_img: dict[str, set[str]] = {}
    for g in gts:
        by_cat.setdefault(g.label, set()).add(g.image_id)
        by_img.setdefault(g.image_id, set()).add(g.label)
    return DatasetIndex(
        MappingProxyType({c: tuple(sorted(v)) for c, v in sorted(by_cat.items())}),
        MappingProxyType({i: frozenset(v) for i, v in sorted(by_img.items())}),
    )


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _check_index(index: DatasetIndex) -> tuple[str, ...]:
    cats = index.categories
    if not cats:
        raise DataError("cannot sample from an empty index")
    for c in cats:
        if not index.images_by_category[c]:
            raise DataError(f"category {c!r} has no images")
    return cats


def sample_one(index: DatasetIndex, rng: np.random.Generator) -> tuple[str, str]:
    cats = _check_index(index)
    cat = cats[int(rng.integers(len(cats)))]
    images = index.images_by_category[cat]
    return cat, images[int(rng.integers(len(images)))]


def sample_epoch(index: DatasetIndex, n: int, seed: int) -> SampleStream:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cats = _check_index(index)
    rng = make_rng(seed)
    lists = [index.images_by_category[c] for c in cats]
    draws = []
    for _ in range(n):
        ci = int(rng.integers(len(cats)))
        imgs = lists[ci]
        draws.append((cats[ci], imgs[int(rng.integers(len(imgs)))]))
    return SampleStream(seed, tuple(draws))


def exposure_histogram(stream: SampleStream, index: DatasetIndex) -> dict[str, int]:
    """How many times each indexed category was drawn in stage one."""
    counts = Counter(c for c, _ in stream.draws)
    out = {c: counts.get(c, 0) for c in index.categories}
    for c in counts:
        out.setdefault(c, counts[c])
    return out


def image_marginal(index: DatasetIndex) -> dict[str, float]:
    """Exact probability of drawing each image under class-aware sampling."""
    cats = _check_index(index)
    p: dict[str, float] = {}
    for c in cats:
        imgs = index.images_by_category[c]
        for img in imgs:
            p[img] = p.get(img, 0.0) + 1.0 / (len(cats) * len(imgs))
    return dict(sorted(p.items()))


def instance_counts(gts: Sequence[GroundTruthBox]) -> dict[str, int]:
    """Box count per category, largest first (the long-tail profile)."""
    counts = Counter(g.label for g in gts)
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def imbalance_ratio(gts: Sequence[GroundTruthBox]) -> float:
    """Ratio between the most and the least frequent category."""
    counts = list(instance_counts(gts).values())
    if not counts:
        raise DataError("no annotations")
    return counts[0] / counts[-1]
