"""Logistic loss with its first and second derivatives in the raw score."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GradPair:
    g: float
    h: float


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def logistic_grad_hess(raw, label):
    """g = p - y, h = p(1 - p) with p = sigmoid(raw).

    Scalars give a GradPair; arrays give a (g, h) tuple of arrays.
    """
    p = sigmoid(raw)
    g = p - np.asarray(label, dtype=float)
    h = p * (1.0 - p)
    if np.ndim(g) == 0:
        return GradPair(float(g), float(h))
    return g, h


def logloss(raw, label) -> np.ndarray:
    """Per-row -log likelihood, computed stably: log(1 + e^raw) - y*raw."""
    raw = np.asarray(raw, dtype=float)
    return np.logaddexp(0.0, raw) - np.asarray(label, dtype=float) * raw
