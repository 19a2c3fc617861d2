"""numba kernels for exact greedy split search and prediction."""
from __future__ import annotations

import numpy as np
from numba import njit


def presort(X: np.ndarray):
    """Per-feature ascending order of the non-missing rows (CSC-like layout).

    Returns (ptr, rows, vals): feature f owns rows[ptr[f]:ptr[f+1]].
    Ties keep row order, so the layout is deterministic.
    """
    n, p = X.shape
    ptr = np.zeros(p + 1, dtype=np.int64)
    np.cumsum(np.count_nonzero(~np.isnan(X), axis=0), out=ptr[1:])
    # filled in place: concatenating per-feature parts would double peak memory
    rows = np.empty(ptr[-1], dtype=np.int32)
    vals = np.empty(ptr[-1])
    for f in range(p):
        col = X[:, f]
        ok = np.flatnonzero(~np.isnan(col))
        order = ok[np.argsort(col[ok], kind="stable")]
        rows[ptr[f]:ptr[f + 1]] = order
        vals[ptr[f]:ptr[f + 1]] = col[order]
    return ptr, rows, vals


@njit(cache=True)
def _gain(gl, hl, gr, hr, parent, lam):
    return 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)


@njit(cache=True)
def find_splits(ptr, rows, vals, feats, slot_of, g, h, Gt, Ht, Nt, lam, gamma, min_n,
                best_gain, best_feat, best_thr, best_left):
    """Best split per active slot (node) over the candidate features.

    slot_of[row] is the row's node slot, or -1 if the row is not in an
    active node. Results are written into the best_* arrays, which must be
    initialised (best_gain to 0 so only positive gains are kept). Ties keep
    the earlier candidate: lower feature, then lower threshold, then
    missing-right.
    """
    ns = Gt.shape[0]
    n_rows = slot_of.shape[0]
    GL = np.zeros(ns)
    HL = np.zeros(ns)
    NL = np.zeros(ns, dtype=np.int64)
    GN = np.zeros(ns)
    HN = np.zeros(ns)
    NN = np.zeros(ns, dtype=np.int64)
    last = np.zeros(ns)
    parent = np.empty(ns)
    for s in range(ns):
        parent[s] = Gt[s] * Gt[s] / (Ht[s] + lam)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        a = ptr[f]
        b = ptr[f + 1]
        for s in range(ns):
            GN[s] = 0.0
            HN[s] = 0.0
            NN[s] = 0
            GL[s] = 0.0
            HL[s] = 0.0
            NL[s] = 0
        if b - a == n_rows:
            # no missing values: non-missing totals are the node totals
            for s in range(ns):
                GN[s] = Gt[s]
                HN[s] = Ht[s]
                NN[s] = Nt[s]
        else:
            # pass 1: non-missing totals per node
            for k in range(a, b):
                r = rows[k]
                s = slot_of[r]
                if s >= 0:
                    GN[s] += g[r]
                    HN[s] += h[r]
                    NN[s] += 1
        # pass 2: candidate thresholds between consecutive distinct values
        for k in range(a, b):
            r = rows[k]
            s = slot_of[r]
            if s < 0:
                continue
            v = vals[k]
            if NL[s] > 0 and v != last[s]:
                nm = Nt[s] - NN[s]
                gm = Gt[s] - GN[s]
                hm = Ht[s] - HN[s]
                # missing routed right
                nl = NL[s]
                nr = Nt[s] - nl
                if nl >= min_n and nr >= min_n:
                    gain = _gain(GL[s], HL[s], Gt[s] - GL[s], Ht[s] - HL[s], parent[s], lam) - gamma
                    if gain > best_gain[s]:
                        mid = 0.5 * (last[s] + v)
                        best_gain[s] = gain
                        best_feat[s] = f
                        best_thr[s] = mid if mid > last[s] else v
                        best_left[s] = False
                # missing routed left
                if nm > 0:
                    nl = NL[s] + nm
                    nr = NN[s] - NL[s]
                    if nl >= min_n and nr >= min_n:
                        gain = _gain(GL[s] + gm, HL[s] + hm, GN[s] - GL[s], HN[s] - HL[s],
                                     parent[s], lam) - gamma
                        if gain > best_gain[s]:
                            mid = 0.5 * (last[s] + v)
                            best_gain[s] = gain
                            best_feat[s] = f
                            best_thr[s] = mid if mid > last[s] else v
                            best_left[s] = True
            GL[s] += g[r]
            HL[s] += h[r]
            NL[s] += 1
            last[s] = v


@njit(cache=True)
def route(X, idx, node_of, split_feat, split_thr, split_left, left_child, right_child):
    """Move rows idx of split nodes to their children (in place)."""
    for k in range(idx.shape[0]):
        r = idx[k]
        nd = node_of[r]
        f = split_feat[nd]
        if f < 0:
            continue
        x = X[r, f]
        if np.isnan(x):
            go_left = split_left[nd]
        else:
            go_left = x < split_thr[nd]
        node_of[r] = left_child[nd] if go_left else right_child[nd]


@njit(cache=True)
def predict_leaf_values(X, feat, thr, dleft, left, right, value, offsets, lr, base, out):
    """out[r] = base + sum_k lr * tree_k(X[r]) with trees stored in flat arrays."""
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    for r in range(n):
        acc = base
        for t in range(n_trees):
            nd = offsets[t]
            while feat[nd] >= 0:
                x = X[r, feat[nd]]
                if np.isnan(x):
                    go = dleft[nd]
                else:
                    go = x < thr[nd]
                nd = offsets[t] + (left[nd] if go else right[nd])
            acc += lr * value[nd]
        out[r] = acc
