"""Numerically stabilized softmax / log-sum-exp on plain vectors."""

from __future__ import annotations

import numpy as np


def softmax(v) -> np.ndarray:
    """Probability vector exp(v)/sum(exp(v)), stabilized by max-subtraction."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def logsumexp(v) -> float:
    """log(sum(exp(v))), stabilized by max-subtraction."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("logsumexp of an empty vector")
    m = v.max()
    return float(m + np.log(np.exp(v - m).sum()))
