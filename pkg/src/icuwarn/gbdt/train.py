"""Boosting loop, negative-admission sampling and round selection by CV."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._kernels import find_splits, presort, route
from .losses import logistic_grad_hess, logloss
from .model import GbdtModel, Tree

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    neg_sample_rate: float = 0.25
    learning_rate: float = 0.15
    max_depth: int = 4
    colsample_per_tree: float = 0.3
    min_node_cases: int = 20
    l2_reg: float = 1.0
    gain_floor: float = 0.0
    max_rounds: int = 60
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.neg_sample_rate <= 1:
            raise ValueError("neg_sample_rate must be in (0, 1]")
        if not 0 < self.colsample_per_tree <= 1:
            raise ValueError("colsample_per_tree must be in (0, 1]")
        if self.learning_rate <= 0 or self.max_depth < 1 or self.min_node_cases < 1:
            raise ValueError("learning_rate, max_depth and min_node_cases must be positive")
        if self.l2_reg < 0 or self.gain_floor < 0:
            raise ValueError("l2_reg and gain_floor must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_admissions(admission_ids: Sequence[str], labels: Sequence[int], rate: float,
                      seed: int) -> list[str]:
    """All case admissions plus round(rate * n_controls) seeded control admissions."""
    pairs = sorted(set(zip(map(str, admission_ids), map(int, labels))))
    ids = [a for a, _ in pairs]
    if len(set(ids)) != len(ids):
        raise ValueError("an admission carries both labels")
    cases = [a for a, y in pairs if y == 1]
    controls = [a for a, y in pairs if y == 0]
    k = _round_half_up(rate * len(controls))
    rng = np.random.default_rng([seed, 101])
    chosen = rng.choice(len(controls), size=k, replace=False) if k else np.empty(0, int)
    return sorted(cases + [controls[i] for i in chosen])


def _admission_labels(admission_id: np.ndarray, y: np.ndarray) -> tuple[list[str], list[int]]:
    ids, first = np.unique(admission_id.astype(str), return_index=True)
    return ids.tolist(), y[first].astype(int).tolist()


@dataclass
class _Data:
    X: np.ndarray
    y: np.ndarray
    ptr: np.ndarray
    rows: np.ndarray
    vals: np.ndarray

    @classmethod
    def prepare(cls, X: np.ndarray, y: np.ndarray) -> "_Data":
        X = np.ascontiguousarray(X, dtype=float)
        ptr, rows, vals = presort(X)
        return cls(X, np.asarray(y, dtype=float), ptr, rows, vals)


def _grow_tree(data: _Data, train_idx: np.ndarray, g: np.ndarray, h: np.ndarray,
               feats: np.ndarray, p: Hyperparams) -> tuple[Tree, np.ndarray]:
    """One level-wise exact-greedy tree. Returns the tree and each training row's leaf."""
    n = len(data.y)
    node_of = np.full(n, -1, dtype=np.int32)
    node_of[train_idx] = 0
    feat, thr, dleft, left, right, gain = [-1], [np.nan], [False], [-1], [-1], [0.0]
    frontier = [0]
    lam, min_n = float(p.l2_reg), int(p.min_node_cases)
    gt, ht = g[train_idx], h[train_idx]
    for _depth in range(p.max_depth):
        nodes_now = node_of[train_idx]
        n_nodes = len(feat)
        G = np.bincount(nodes_now, gt, n_nodes)
        H = np.bincount(nodes_now, ht, n_nodes)
        N = np.bincount(nodes_now, minlength=n_nodes)
        active = [nd for nd in frontier if N[nd] >= 2 * min_n]
        if not active:
            break
        slot_of_node = np.full(n_nodes, -1, dtype=np.int32)
        slot_of_node[active] = np.arange(len(active), dtype=np.int32)
        slot_of = np.full(n, -1, dtype=np.int32)
        slot_of[train_idx] = slot_of_node[nodes_now]
        ns = len(active)
        best_gain = np.zeros(ns)
        best_feat = np.full(ns, -1, dtype=np.int64)
        best_thr = np.zeros(ns)
        best_left = np.zeros(ns, dtype=np.bool_)
        find_splits(data.ptr, data.rows, data.vals, feats, slot_of, g, h,
                    G[active], H[active], N[active].astype(np.int64), lam,
                    float(p.gain_floor), min_n, best_gain, best_feat, best_thr, best_left)
        frontier = []
        for s, nd in enumerate(active):
            if best_feat[s] < 0 or not best_gain[s] > 0:
                continue
            feat[nd], thr[nd], dleft[nd], gain[nd] = (int(best_feat[s]), float(best_thr[s]),
                                                      bool(best_left[s]), float(best_gain[s]))
            for side in (left, right):
                side[nd] = len(feat)
                feat.append(-1)
                thr.append(np.nan)
                dleft.append(False)
                left.append(-1)
                right.append(-1)
                gain.append(0.0)
                frontier.append(side[nd])
        if not frontier:
            break
        route(data.X, train_idx, node_of, np.array(feat, np.int32), np.array(thr),
              np.array(dleft, np.bool_), np.array(left, np.int32), np.array(right, np.int32))
    nodes_now = node_of[train_idx]
    n_nodes = len(feat)
    cover = np.zeros(n_nodes)
    # cover of every node: rows of its leaf descendants
    leaf_counts = np.bincount(nodes_now, minlength=n_nodes).astype(float)
    G = np.bincount(nodes_now, gt, n_nodes)
    H = np.bincount(nodes_now, ht, n_nodes)
    value = np.where(np.array(feat) < 0, -G / (H + lam), 0.0)

    def fill(nd):
        if feat[nd] < 0:
            cover[nd] = leaf_counts[nd]
        else:
            cover[nd] = fill(left[nd]) + fill(right[nd])
        return cover[nd]

    fill(0)
    tree = Tree(np.array(feat, np.int32), np.array(thr), np.array(dleft, np.bool_),
                np.array(left, np.int32), np.array(right, np.int32), value,
                np.array(gain), cover)
    return tree, nodes_now


def _boost(data: _Data, train_idx: np.ndarray, p: Hyperparams, rounds: int,
           on_round: Callable[[int, Tree], None] | None = None):
    y = data.y[train_idx]
    prev = float(y.mean())
    if prev <= 0 or prev >= 1:
        raise ValueError("training rows hold a single class")
    base = math.log(prev / (1 - prev))
    F = np.full(len(train_idx), base)
    g = np.zeros(len(data.y))
    h = np.zeros(len(data.y))
    n_feat = data.X.shape[1]
    k = max(1, math.ceil(p.colsample_per_tree * n_feat))
    trees, losses = [], []
    lr = float(p.learning_rate)
    for r in range(rounds):
        gg, hh = logistic_grad_hess(F, y)
        g[train_idx] = gg
        h[train_idx] = hh
        rng = np.random.default_rng([p.seed, 7, r])
        feats = np.sort(rng.choice(n_feat, size=k, replace=False)).astype(np.int64)
        tree, leaf = _grow_tree(data, train_idx, g, h, feats, p)
        F += lr * tree.value[leaf]
        trees.append(tree)
        losses.append(float(np.mean(logloss(F, y))))
        if on_round is not None:
            on_round(r, tree)
    return base, trees, losses


def train(matrix, params: Hyperparams, rounds: int | None = None, sample: bool = True,
          labels: Sequence[int] | None = None) -> GbdtModel:
    """Fit the ensemble on a FeatureMatrix.

    With `sample`, control admissions are subsampled at params.neg_sample_rate
    (all case admissions kept) before rows are extracted. Pass sample=False
    when the matrix was already built from `sample_admissions`.
    """
    rounds = params.max_rounds if rounds is None else rounds
    if rounds <= 0:
        raise ValueError("rounds must be positive")
    y = np.asarray(matrix.label if labels is None else labels, dtype=float)
    if len(y) == 0:
        raise ValueError("empty feature matrix")
    ids, adm_y = _admission_labels(matrix.admission_id, y)
    if len(set(adm_y)) < 2:
        raise ValueError("single-class input")
    if sample:
        keep = sample_admissions(ids, adm_y, params.neg_sample_rate, params.seed)
        mask = np.isin(matrix.admission_id.astype(str), np.asarray(keep))
        X, y, aid = matrix.X[mask], y[mask], matrix.admission_id[mask]
    else:
        X, aid = matrix.X, matrix.admission_id
    data = _Data.prepare(X, y)
    base, trees, losses = _boost(data, np.arange(len(y)), params, rounds)
    cfg = matrix.config.to_dict() if getattr(matrix, "config", None) is not None else None
    meta = {"rounds": rounds, "seed": params.seed, "hyperparams": params.to_dict(),
            "n_train_rows": int(len(y)), "n_train_admissions": int(len(np.unique(aid))),
            "train_prevalence": float(y.mean()), "train_loss": losses}
    return GbdtModel(base, params.learning_rate, tuple(trees), tuple(matrix.feature_names),
                     cfg, _dictionaries(cfg), meta)


def _dictionaries(cfg: dict | None) -> dict:
    from ..emr import DISPOSITIONS, GENDERS
    d = {"gender": list(GENDERS), "prev_discharge_disposition": list(DISPOSITIONS)}
    if cfg:
        d["ward"] = list(cfg.get("wards", []))
    return d


# -- cross-validation -----------------------------------------------------------

@dataclass
class CVResult:
    best_rounds: int
    adm_auc: list[float]            # mean held-out admission-level AUC after r+1 rounds
    row_auc: list[float]            # mean held-out row-level AUC
    fold_adm_auc: list[list[float]] = field(default_factory=list)

    @property
    def row_best_rounds(self) -> int:
        return int(np.argmax(self.row_auc)) + 1

    def to_rows(self) -> list[dict]:
        return [{"rounds": r + 1, "admission_auc": a, "row_auc": b}
                for r, (a, b) in enumerate(zip(self.adm_auc, self.row_auc))]


def first_argmax(curve: Sequence[float]) -> int:
    """Round count (1-based) at the first maximum of the curve."""
    best = 0
    for i, v in enumerate(curve):
        if v > curve[best]:
            best = i
    return best + 1


def stratified_folds(ids: Sequence[str], labels: Sequence[int], k: int, seed: int) -> dict[str, int]:
    pairs = sorted(zip(ids, labels))
    fold = {}
    rng = np.random.default_rng([seed, 211])
    for cls in (1, 0):
        members = [a for a, y in pairs if y == cls]
        perm = rng.permutation(len(members))
        for i, j in enumerate(perm):
            fold[members[j]] = i % k
    return fold


def cross_validate_rounds(matrix, params: Hyperparams, k: int = 5, rounds: int | None = None,
                          sample: bool = True) -> CVResult:
    """Choose the boosting round count by k-fold CV over admissions."""
    from ..evalkit import auc_float, max_per_group

    if k < 2:
        raise ValueError("k must be at least 2")
    rounds = params.max_rounds if rounds is None else rounds
    y_all = matrix.label.astype(float)
    ids, adm_y = _admission_labels(matrix.admission_id, y_all)
    if sample:
        keep = np.asarray(sample_admissions(ids, adm_y, params.neg_sample_rate, params.seed))
        mask = np.isin(matrix.admission_id.astype(str), keep)
    else:
        mask = np.ones(len(y_all), dtype=bool)
    X, y, aid = matrix.X[mask], y_all[mask], matrix.admission_id[mask].astype(str)
    ids, adm_y = _admission_labels(aid, y)
    fold_of = stratified_folds(ids, adm_y, k, params.seed)
    row_fold = np.array([fold_of[a] for a in aid])
    data = _Data.prepare(X, y)
    adm_curves, row_curves = [], []
    for f in range(k):
        tr = np.flatnonzero(row_fold != f)
        va = np.flatnonzero(row_fold == f)
        yv = y[va]
        if len(set(yv)) < 2 or len(set(y[tr])) < 2:
            raise ValueError(f"fold {f} holds a single class")
        Xv = np.ascontiguousarray(X[va])
        va_ids = aid[va]
        group_ids, inverse = np.unique(va_ids, return_inverse=True)
        group_y = np.zeros(len(group_ids))
        group_y[inverse] = yv
        raw = None
        a_curve, r_curve = [], []

        def on_round(r, tree, Xv=Xv):
            nonlocal raw
            single = GbdtModel(0.0, params.learning_rate, (tree,), matrix.feature_names)
            step = single.predict_raw(Xv)
            raw = step if raw is None else raw + step
            r_curve.append(auc_float(raw, yv))
            a_curve.append(auc_float(max_per_group(raw, inverse, len(group_ids)), group_y))

        _boost(data, tr, params, rounds, on_round)
        adm_curves.append(a_curve)
        row_curves.append(r_curve)
        log.info("cv fold %d: best admission AUC %.4f", f, max(a_curve))
    adm_mean = np.mean(np.array(adm_curves), axis=0).tolist()
    row_mean = np.mean(np.array(row_curves), axis=0).tolist()
    return CVResult(first_argmax(adm_mean), adm_mean, row_mean, adm_curves)
