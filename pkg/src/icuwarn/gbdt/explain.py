"""Gain importance and path-dependent Shapley attributions for a GbdtModel."""
from __future__ import annotations

from itertools import combinations
from math import factorial

import numpy as np

from .model import GbdtModel, Tree


def importance_gain(model: GbdtModel) -> dict[str, tuple[float, int, float]]:
    """feature -> (total gain, split count, cover-weighted mean gain)."""
    p = model.n_features
    gain = np.zeros(p)
    count = np.zeros(p, dtype=np.int64)
    gc = np.zeros(p)
    cov = np.zeros(p)
    for t in sorted(model.trees, key=Tree.canonical_key):
        for nd in np.flatnonzero(t.feature >= 0):
            f = t.feature[nd]
            gain[f] += t.gain[nd]
            count[f] += 1
            gc[f] += t.gain[nd] * t.cover[nd]
            cov[f] += t.cover[nd]
    return {name: (float(gain[i]), int(count[i]), float(gc[i] / cov[i]) if cov[i] > 0 else 0.0)
            for i, name in enumerate(model.feature_names)}


def _check_cover(t: Tree) -> None:
    internal = t.feature >= 0
    if internal.any() and not (t.cover[internal] > 0).all():
        raise ValueError("model lacks cover metadata")
    for nd in np.flatnonzero(internal):
        if t.cover[t.left[nd]] + t.cover[t.right[nd]] <= 0:
            raise ValueError("model lacks cover metadata")


def _goes_left(t: Tree, nd: int, X: np.ndarray) -> np.ndarray:
    x = X[:, t.feature[nd]]
    miss = np.isnan(x)
    with np.errstate(invalid="ignore"):
        return np.where(miss, bool(t.default_left[nd]), x < t.threshold[nd])


def _leaf_paths(t: Tree):
    """Yield (leaf, [(node, went_left)]) for every leaf."""
    stack = [(0, [])]
    while stack:
        nd, path = stack.pop()
        if t.feature[nd] < 0:
            yield nd, path
        else:
            stack.append((int(t.right[nd]), path + [(nd, False)]))
            stack.append((int(t.left[nd]), path + [(nd, True)]))


def _tree_shap(t: Tree, X: np.ndarray, scale: float, phi: np.ndarray) -> float:
    """Add one tree's attributions into phi (n x p); returns its expected value."""
    _check_cover(t)
    left = {int(nd): _goes_left(t, nd, X) for nd in np.flatnonzero(t.feature >= 0)}
    n = X.shape[0]
    expected = 0.0
    for leaf, path in _leaf_paths(t):
        w = scale * t.value[leaf]
        # merge repeated features: z = product of cover fractions, o = product of indicators
        z: dict[int, float] = {}
        o: dict[int, np.ndarray] = {}
        for nd, went_left in path:
            f = int(t.feature[nd])
            child = t.left[nd] if went_left else t.right[nd]
            z[f] = z.get(f, 1.0) * (t.cover[child] / t.cover[nd])
            ind = left[nd] if went_left else ~left[nd]
            o[f] = o[f] & ind if f in o else ind.copy()
        feats = sorted(z)
        d = len(feats)
        expected += w * float(np.prod([z[f] for f in feats]))
        if d == 0:
            continue
        coef = np.array([factorial(k) * factorial(d - k - 1) / factorial(d) for k in range(d)])
        for i in feats:
            # poly[k] = sum over S of size k (others) of prod_{j in S} o_j prod_{j not in S} z_j
            poly = np.zeros((d, n))
            poly[0] = 1.0
            deg = 0
            for j in feats:
                if j == i:
                    continue
                oj = o[j].astype(float)
                nxt = poly * z[j]
                nxt[1:deg + 2] += poly[:deg + 1] * oj
                poly = nxt
                deg += 1
            acc = coef[:deg + 1] @ poly[:deg + 1]
            phi[:, i] += w * (o[i].astype(float) - z[i]) * acc
    return expected


def shap_matrix(model: GbdtModel, X) -> tuple[np.ndarray, float]:
    """Attributions for every row; base + phi.sum(1) equals the raw score.

    Trees are accumulated in a canonical order, so the result does not depend
    on the order of the model's tree list.
    """
    X = model._check(X)
    phi = np.zeros(X.shape)
    base = float(model.base_score)
    for t in sorted(model.trees, key=Tree.canonical_key):
        base += _tree_shap(t, X, float(model.learning_rate), phi)
    return phi, base


def shap_values(model: GbdtModel, row) -> tuple[np.ndarray, float]:
    phi, base = shap_matrix(model, np.asarray(row, dtype=float).reshape(1, -1))
    return phi[0], base


def ranking(phi: np.ndarray, feature_names) -> list[tuple[str, float]]:
    """Features by total absolute attribution, largest first (ties by position)."""
    total = np.abs(phi).sum(axis=0)
    order = sorted(range(len(total)), key=lambda i: (-total[i], i))
    return [(feature_names[i], float(total[i])) for i in order]


# -- reference route: enumerate feature subsets ---------------------------------

def _cond_value(t: Tree, x: np.ndarray, known: frozenset, nd: int = 0) -> float:
    if t.feature[nd] < 0:
        return float(t.value[nd])
    f = int(t.feature[nd])
    if f in known:
        v = x[f]
        go = bool(t.default_left[nd]) if np.isnan(v) else v < t.threshold[nd]
        return _cond_value(t, x, known, int(t.left[nd] if go else t.right[nd]))
    l, r = int(t.left[nd]), int(t.right[nd])
    return (t.cover[l] * _cond_value(t, x, known, l)
            + t.cover[r] * _cond_value(t, x, known, r)) / t.cover[nd]


def shap_values_enumerated(model: GbdtModel, row) -> tuple[np.ndarray, float]:
    """Exact Shapley values by enumerating subsets of each tree's features."""
    x = np.asarray(row, dtype=float)
    phi = np.zeros(model.n_features)
    base = float(model.base_score)
    lr = float(model.learning_rate)
    for t in model.trees:
        _check_cover(t)
        used = sorted({int(f) for f in t.feature if f >= 0})
        m = len(used)
        v = {}
        for k in range(m + 1):
            for S in combinations(used, k):
                v[frozenset(S)] = _cond_value(t, x, frozenset(S))
        base += lr * v[frozenset()]
        for i in used:
            others = [j for j in used if j != i]
            for k in range(m):
                wk = factorial(k) * factorial(m - k - 1) / factorial(m)
                for S in combinations(others, k):
                    s = frozenset(S)
                    phi[i] += lr * wk * (v[s | {i}] - v[s])
    return phi, base
