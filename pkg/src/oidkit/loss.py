"""Standard and distributed softmax cross-entropy on single logit vectors.

The distributed target spreads unit mass evenly over ``k`` active labels
(a leaf, its ancestors and optionally its ambiguity partners), so the loss
keeps the inter-class competition of softmax while allowing several
positives.  Losses are negative log-likelihoods (non-negative).
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .labelspace import LabelHierarchy


def _logits(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"logits must be a vector with at least 2 entries, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("logits contain non-finite values")
    return x


def log_softmax(x) -> np.ndarray:
    x = _logits(x)
    z = x - x.max()
    return z - np.log(np.sum(np.exp(z)))


def softmax(x) -> np.ndarray:
    x = _logits(x)
    e = np.exp(x - x.max())
    return e / e.sum()


def validate_distribution(y, size: int | None = None, atol: float = 1e-12) -> np.ndarray:
    """Check that ``y`` has ``k >= 1`` entries equal to ``1/k`` and zeros elsewhere."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"label distribution must be a vector, got shape {y.shape}")
    if size is not None and y.size != size:
        raise ValueError(f"dimension mismatch: logits have {size} entries, target has {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("label distribution contains non-finite values")
    nz = y != 0
    k = int(nz.sum())
    if k == 0:
        raise ValueError("label distribution has no positive entry")
    if np.abs(y[nz] - 1.0 / k).max() > atol:
        raise ValueError(f"label distribution entries must all equal 1/{k}")
    return y


def label_distribution(size: int, active) -> np.ndarray:
    """Target vector with weight ``1/k`` on each of the ``k`` active indices."""
    active = sorted(set(int(i) for i in active))
    if not active:
        raise ValueError("at least one active index is required")
    if active[0] < 0 or active[-1] >= size:
        raise IndexError(f"active index out of range for {size} classes: {active}")
    y = np.zeros(size, dtype=np.float64)
    y[active] = 1.0 / len(active)
    return y


def standard_softmax_ce(x, target: int) -> float:
    lp = log_softmax(x)
    if not (0 <= target < lp.size):
        raise IndexError(f"target {target} out of range for {lp.size} classes")
    return float(-lp[target])


def distributed_softmax_ce(x, y) -> float:
    lp = log_softmax(x)
    y = validate_distribution(y, lp.size)
    nz = y != 0
    return float(-np.sum(y[nz] * lp[nz]))


def distributed_softmax_grad(x, y) -> np.ndarray:
    """Gradient of :func:`distributed_softmax_ce` w.r.t. the logits: ``softmax(x) - y``."""
    p = softmax(x)
    y = validate_distribution(y, p.size)
    return p - y


def finite_diff_check(x, y, epsilon: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - central difference| / max(1, |analytic|)``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    x = _logits(x)
    g = distributed_softmax_grad(x, y)
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += epsilon
        xm[i] -= epsilon
        fd = (distributed_softmax_ce(xp, y) - distributed_softmax_ce(xm, y)) / (2 * epsilon)
        if not np.isfinite(fd):
            raise FloatingPointError(f"non-finite finite difference at coordinate {i}")
        worst = max(worst, abs(g[i] - fd) / max(1.0, abs(g[i])))
    return float(worst)


def build_label_distribution(h: LabelHierarchy, leaf: str, label_index: Mapping[str, int],
                             include_ambiguity: bool = False, size: int | None = None) -> np.ndarray:
    """Distributed target for a box annotated with ``leaf``.

    Active labels are the leaf, all of its ancestors and, when
    ``include_ambiguity`` is set, its ambiguity partners.  ``size`` defaults
    to ``max(label_index) + 1``.
    """
    active = [leaf, *h.ancestors(leaf)]
    if include_ambiguity:
        active.extend(h.partners(leaf))
    missing = [l for l in active if l not in label_index]
    if missing:
        raise KeyError(f"label index has no entry for {missing}")
    if size is None:
        size = max(label_index.values()) + 1
    return label_distribution(size, [label_index[l] for l in active])
