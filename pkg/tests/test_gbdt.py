import itertools
import json
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icuwarn.gbdt import (GbdtModel, Hyperparams, Tree, cross_validate_rounds, first_argmax,
                          logistic_grad_hess, logloss, predict, predict_series,
                          sample_admissions, sigmoid, train)
from icuwarn.gbdt.explain import (importance_gain, ranking, shap_matrix, shap_values,
                                  shap_values_enumerated)
from icuwarn.gbdt.train import _Data, _grow_tree, stratified_folds


def toy(n_adm=120, rows=6, p=6, seed=0, missing=0.2):
    """Admission-structured toy data: cases drift upward on features 0 and 1."""
    r = np.random.default_rng(seed)
    aid, y, X = [], [], []
    for a in range(n_adm):
        case = int(a % 4 == 0)
        for k in range(rows):
            x = r.normal(size=p)
            x[0] += case * 0.4 * k
            x[1] -= case * 0.3 * k
            x[r.random(p) < missing] = np.nan
            X.append(x)
            aid.append(f"A{a:04d}")
            y.append(case)
    return SimpleNamespace(X=np.array(X), label=np.array(y, dtype=np.int8),
                           admission_id=np.array(aid, dtype=object),
                           feature_names=tuple(f"f{i}" for i in range(p)), config=None)


@pytest.fixture(scope="module")
def model():
    return train(toy(), Hyperparams(max_rounds=12, max_depth=3, min_node_cases=5,
                                    colsample_per_tree=0.7, seed=3), sample=False)


# -- loss -----------------------------------------------------------------------

def test_gradient_check_grid():
    raw = np.linspace(-8, 8, 161)
    eps = 1e-5
    worst = 0.0
    for y in (0.0, 1.0):
        g, h = logistic_grad_hess(raw, np.full_like(raw, y))
        fd_g = (logloss(raw + eps, y) - logloss(raw - eps, y)) / (2 * eps)
        fd_h = (logistic_grad_hess(raw + eps, y)[0] - logistic_grad_hess(raw - eps, y)[0]) / (2 * eps)
        worst = max(worst, np.max(np.abs(g - fd_g)), np.max(np.abs(h - fd_h)))
    assert worst < 1e-6


def test_loss_scalars_and_stability():
    gp = logistic_grad_hess(0.0, 1)
    assert gp.g == -0.5 and gp.h == 0.25
    assert sigmoid(1000.0) == 1.0 and sigmoid(-1000.0) == 0.0
    assert np.isfinite(logloss(np.array([-800.0, 800.0]), np.array([1, 0]))).all()
    assert logloss(0.0, 1) == pytest.approx(math.log(2))


# -- split search ------------------------------------------------------------------

def brute_best_split(X, g, h, rows, feats, lam, min_n):
    """Reference exact-greedy search over one node's rows."""
    G, H = g[rows].sum(), h[rows].sum()
    parent = G * G / (H + lam)
    best = (0.0, None, None, None)
    for f in feats:
        x = X[rows, f]
        miss = np.isnan(x)
        vals = np.unique(x[~miss])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (lo + hi)
            for default_left in (False, True):
                go = np.where(miss, default_left, x < thr)
                nl, nr = go.sum(), (~go).sum()
                if nl < min_n or nr < min_n:
                    continue
                gl, hl = g[rows][go].sum(), h[rows][go].sum()
                gain = 0.5 * (gl * gl / (hl + lam) + (G - gl) ** 2 / (H - hl + lam) - parent)
                if gain > best[0] + 1e-12:
                    best = (gain, f, thr, default_left)
    return best


def node_rows(tree, X, idx, node):
    return np.array([r for r in idx if node in _path(tree, X[r])])


def _path(tree, x):
    n, out = 0, [0]
    while tree.feature[n] >= 0:
        v = x[tree.feature[n]]
        go = bool(tree.default_left[n]) if np.isnan(v) else v < tree.threshold[n]
        n = int(tree.left[n] if go else tree.right[n])
        out.append(n)
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.sampled_from([0.0, 0.3]))
def test_every_split_matches_brute_force(seed, depth, missing):
    d = toy(n_adm=30, rows=4, p=4, seed=seed, missing=missing)
    r = np.random.default_rng(seed)
    raw = r.normal(size=len(d.label))
    g, h = logistic_grad_hess(raw, d.label.astype(float))
    p = Hyperparams(max_depth=depth, min_node_cases=4, l2_reg=1.0)
    data = _Data.prepare(d.X, d.label)
    idx = np.arange(len(d.label))
    feats = np.arange(4, dtype=np.int64)
    tree, leaf = _grow_tree(data, idx, g, h, feats, p)
    for nd in range(len(tree)):
        rows = node_rows(tree, d.X, idx, nd)
        if tree.feature[nd] >= 0:
            gain, f, thr, dl = brute_best_split(d.X, g, h, rows, feats, 1.0, 4)
            assert tree.feature[nd] == f
            assert tree.threshold[nd] == pytest.approx(thr, abs=0, rel=1e-12)
            assert tree.gain[nd] == pytest.approx(gain, rel=1e-9)
            if np.isnan(d.X[rows, f]).any():
                assert bool(tree.default_left[nd]) == dl
        else:
            assert tree.value[nd] == pytest.approx(-g[rows].sum() / (h[rows].sum() + 1.0),
                                                   rel=1e-12, abs=1e-15)
            assert tree.cover[nd] == len(rows)
            assert len(rows) >= 4 or nd == 0
    assert (tree.value[leaf] == np.array([tree.predict_row(x) for x in d.X])).all()


def test_gain_floor_prunes():
    d = toy(n_adm=40, rows=3, p=3, seed=1)
    y = d.label.astype(float)
    g, h = logistic_grad_hess(np.zeros(len(y)), y)
    data = _Data.prepare(d.X, y)
    tree, _ = _grow_tree(data, np.arange(len(y)), g, h, np.arange(3, dtype=np.int64),
                         Hyperparams(gain_floor=1e9))
    assert len(tree) == 1


# -- model -----------------------------------------------------------------------

def test_prediction_routes_agree(model):
    X = toy(seed=9).X[:200]
    raw = model.predict_raw(X)
    manual = np.array([model.base_score + sum(model.learning_rate * t.predict_row(x)
                                              for t in model.trees) for x in X])
    np.testing.assert_allclose(raw, manual, rtol=0, atol=1e-12)
    assert predict(model, X[0]) == pytest.approx(sigmoid(raw[0]))
    series = predict_series(model, [30, 10, 20], X[:3])
    assert [t for t, _ in series] == [10, 20, 30]


def test_missing_goes_default_direction():
    t = Tree(np.array([0, -1, -1], np.int32), np.array([0.5, np.nan, np.nan]),
             np.array([True, False, False]), np.array([1, -1, -1], np.int32),
             np.array([2, -1, -1], np.int32), np.array([0.0, -1.0, 1.0]),
             np.array([1.0, 0, 0]), np.array([10.0, 5, 5]))
    m = GbdtModel(0.0, 1.0, (t,), ("a",))
    assert m.predict_raw([[np.nan], [0.4], [0.5]]).tolist() == [-1.0, -1.0, 1.0]


def test_json_roundtrip_exact(tmp_path, model):
    model.save(tmp_path / "m.json")
    back = GbdtModel.load(tmp_path / "m.json")
    assert back == model
    assert back.to_json() == model.to_json()
    assert back.version == model.version
    X = toy(seed=5).X
    np.testing.assert_array_equal(back.predict_raw(X), model.predict_raw(X))


def test_bad_model_files():
    d = json.loads(GbdtModel(0.0, 0.1, (), ("a",)).to_json())
    with pytest.raises(ValueError, match="not an icuwarn"):
        GbdtModel.from_dict({**d, "format": "other"})
    with pytest.raises(ValueError, match="version"):
        GbdtModel.from_dict({**d, "format_version": 99})


def test_feature_count_checked(model):
    with pytest.raises(ValueError, match="expected 6 features, got 5"):
        model.predict_raw(np.zeros((2, 5)))


def test_training_is_deterministic():
    p = Hyperparams(max_rounds=5, max_depth=2, min_node_cases=5, seed=8, neg_sample_rate=0.5)
    a, b = train(toy(), p), train(toy(), p)
    assert a.to_json() == b.to_json()
    c = train(toy(), Hyperparams(max_rounds=5, max_depth=2, min_node_cases=5, seed=9,
                                 neg_sample_rate=0.5))
    assert c.to_json() != a.to_json()


def test_training_loss_decreases(model):
    loss = model.metadata["train_loss"]
    assert loss[-1] < loss[0]
    assert model.metadata["rounds"] == len(model.trees) == 12


def test_truncated_and_base_score(model):
    m1 = model.truncated(1)
    assert len(m1.trees) == 1 and m1.metadata["rounds"] == 1
    prev = model.metadata["train_prevalence"]
    assert model.base_score == pytest.approx(math.log(prev / (1 - prev)))


def test_train_rejects_bad_input():
    d = toy()
    with pytest.raises(ValueError, match="single-class"):
        train(SimpleNamespace(**{**vars(d), "label": np.zeros(len(d.label), np.int8)}),
              Hyperparams(max_rounds=1))
    with pytest.raises(ValueError):
        train(d, Hyperparams(), rounds=0)
    for bad in ({"neg_sample_rate": 0}, {"colsample_per_tree": 1.5}, {"learning_rate": 0},
                {"l2_reg": -1}):
        with pytest.raises(ValueError):
            Hyperparams(**bad)


# -- sampling and CV ------------------------------------------------------------------

@given(st.integers(1, 30), st.integers(0, 200), st.floats(0.01, 1.0), st.integers(0, 5))
def test_sample_admissions(n_case, n_ctrl, rate, seed):
    ids = [f"C{i}" for i in range(n_case)] + [f"N{i}" for i in range(n_ctrl)]
    labels = [1] * n_case + [0] * n_ctrl
    kept = sample_admissions(ids, labels, rate, seed)
    assert {f"C{i}" for i in range(n_case)} <= set(kept)
    assert sum(k.startswith("N") for k in kept) == math.floor(rate * n_ctrl + 0.5)
    assert kept == sorted(kept) == sample_admissions(ids[::-1], labels[::-1], rate, seed)


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=50))
def test_first_argmax(curve):
    b = first_argmax(curve)
    assert curve[b - 1] == max(curve)
    assert all(v < max(curve) for v in curve[:b - 1])


def test_folds_stratified():
    ids = [f"A{i}" for i in range(50)]
    labels = [int(i < 10) for i in range(50)]
    fold = stratified_folds(ids, labels, 5, 0)
    for f in range(5):
        members = [i for i in range(50) if fold[f"A{i}"] == f]
        assert len(members) == 10 and sum(labels[i] for i in members) == 2


def test_cv_best_is_argmax_of_curve():
    p = Hyperparams(max_rounds=15, max_depth=2, min_node_cases=5, seed=2)
    cv = cross_validate_rounds(toy(n_adm=80), p, k=3, sample=False)
    assert len(cv.adm_auc) == len(cv.row_auc) == 15
    assert cv.best_rounds == first_argmax(cv.adm_auc)
    assert cv.adm_auc[cv.best_rounds - 1] == max(cv.adm_auc)
    assert cv.row_best_rounds == first_argmax(cv.row_auc)
    assert len(cv.fold_adm_auc) == 3
    np.testing.assert_allclose(np.mean(cv.fold_adm_auc, axis=0), cv.adm_auc)
    assert cv.to_rows()[0]["rounds"] == 1


def test_cv_validation_scores_match_truncated_models():
    """Held-out curves equal AUCs of models trained on the other folds, truncated."""
    from icuwarn.evalkit import auc_float, max_per_group
    d = toy(n_adm=60)
    p = Hyperparams(max_rounds=6, max_depth=2, min_node_cases=5, seed=4)
    cv = cross_validate_rounds(d, p, k=3, sample=False)
    ids = np.unique(d.admission_id.astype(str))
    adm_y = [int(d.label[d.admission_id == a][0]) for a in ids]
    fold = stratified_folds(list(ids), adm_y, 3, p.seed)
    rf = np.array([fold[a] for a in d.admission_id])
    curves = []
    for f in range(3):
        tr = SimpleNamespace(X=d.X[rf != f], label=d.label[rf != f],
                             admission_id=d.admission_id[rf != f], feature_names=d.feature_names,
                             config=None)
        m = train(tr, p, sample=False)
        va = rf == f
        gid, inv = np.unique(d.admission_id[va].astype(str), return_inverse=True)
        gy = np.zeros(len(gid))
        gy[inv] = d.label[va]
        curve = []
        for r in range(1, 7):
            raw = m.truncated(r).predict_raw(d.X[va]) - m.base_score
            curve.append(auc_float(max_per_group(raw, inv, len(gid)), gy))
        curves.append(curve)
    np.testing.assert_allclose(np.mean(curves, axis=0), cv.adm_auc, rtol=0, atol=1e-12)


# -- explanations -------------------------------------------------------------------

def test_shap_local_accuracy(model):
    X = toy(seed=11).X
    phi, base = shap_matrix(model, X)
    err = np.abs(base + phi.sum(axis=1) - model.predict_raw(X))
    assert err.max() < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_shap_polynomial_matches_enumeration(seed):
    d = toy(n_adm=40, rows=4, p=5, seed=seed)
    m = train(d, Hyperparams(max_rounds=3, max_depth=4, min_node_cases=3,
                             colsample_per_tree=1.0, seed=seed), sample=False)
    for x in d.X[::37]:
        a, ba = shap_values(m, x)
        b, bb = shap_values_enumerated(m, x)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)
        assert ba == pytest.approx(bb, rel=1e-12)


def test_shap_repeated_feature_on_path():
    # x0 split twice on one path
    t = Tree.from_dict({"feature": 0, "threshold": 0.0, "default_left": False, "cover": 10,
                        "left": {"leaf": -1.0, "cover": 4},
                        "right": {"feature": 0, "threshold": 1.0, "default_left": False,
                                  "cover": 6, "left": {"leaf": 0.5, "cover": 2},
                                  "right": {"feature": 1, "threshold": 0.0, "default_left": True,
                                            "cover": 4, "left": {"leaf": 2.0, "cover": 1},
                                            "right": {"leaf": 3.0, "cover": 3}}}})
    m = GbdtModel(0.1, 1.0, (t,), ("a", "b"))
    for x in ([-1.0, 5.0], [0.5, -1.0], [2.0, np.nan], [2.0, 1.0]):
        a, _ = shap_values(m, x)
        b, _ = shap_values_enumerated(m, x)
        np.testing.assert_allclose(a, b, atol=1e-12)
        assert a.sum() + shap_values(m, x)[1] == pytest.approx(m.predict_raw([x])[0], abs=1e-12)


def test_ranking_invariant_to_tree_order(model):
    X = toy(seed=12).X[:300]
    phi, base = shap_matrix(model, X)
    rnd = np.random.default_rng(0)
    for _ in range(3):
        perm = rnd.permutation(len(model.trees))
        shuffled = model.with_trees([model.trees[i] for i in perm])
        phi2, base2 = shap_matrix(shuffled, X)
        np.testing.assert_array_equal(phi, phi2)
        assert base == base2
        assert ranking(phi, model.feature_names) == ranking(phi2, model.feature_names)


def test_ranking_orders_by_total_abs():
    phi = np.array([[0.1, -0.5, 0.0], [0.1, 0.2, 0.0]])
    assert [n for n, _ in ranking(phi, ("a", "b", "c"))] == ["b", "a", "c"]


def test_missing_cover_rejected(model):
    t = model.trees[0]
    bare = Tree(t.feature, t.threshold, t.default_left, t.left, t.right, t.value, t.gain,
                np.zeros(len(t)))
    if (t.feature >= 0).any():
        with pytest.raises(ValueError, match="cover"):
            shap_matrix(model.with_trees([bare]), toy().X[:2])


def test_importance_gain(model):
    imp = importance_gain(model)
    assert set(imp) == set(model.feature_names)
    total = sum(v[0] for v in imp.values())
    want = sum(float(t.gain[t.feature >= 0].sum()) for t in model.trees)
    assert total == pytest.approx(want)
    assert sum(v[1] for v in imp.values()) == sum(int((t.feature >= 0).sum()) for t in model.trees)
    top = max(imp, key=lambda k: imp[k][0])
    assert top in ("f0", "f1")


# -- hand-built models ------------------------------------------------------------------

def stump(feature, thr, left, right, gain=0.0, cl=1.0, cr=1.0, default_left=False):
    return Tree.from_dict({"feature": feature, "threshold": thr, "default_left": default_left,
                           "gain": gain, "cover": cl + cr,
                           "left": {"leaf": left, "cover": cl}, "right": {"leaf": right, "cover": cr}})


def test_zero_tree_model():
    m = GbdtModel(0.0, 0.1, (), ("a", "b"))
    assert m.predict_proba([[1.0, np.nan]])[0] == 0.5
    phi, base = shap_values(m, [1.0, 2.0])
    assert base == 0.0 and (phi == 0).all()


def test_two_leaf_model_and_all_missing_row():
    m = GbdtModel(0.0, 1.0, (stump(0, 0.0, -1.0, 1.0),), ("a",))
    p = m.predict_proba([[-1.0], [1.0], [np.nan]])
    assert p[0] == pytest.approx(sigmoid(-1.0)) and p[1] == pytest.approx(sigmoid(1.0))
    assert p[2] == p[1] and np.isfinite(p[2])   # missing goes right by default


def test_importance_single_split():
    m = GbdtModel(0.0, 0.1, (stump(2, 0.5, -1.0, 1.0, gain=3.0),), ("a", "b", "c", "d"))
    imp = importance_gain(m)
    assert imp["c"][:2] == (3.0, 1)
    assert all(imp[k] == (0.0, 0, 0.0) for k in ("a", "b", "d"))


def test_importance_cover_weighted_mean_by_hand():
    t = Tree.from_dict({"feature": 0, "threshold": 0.0, "default_left": False, "gain": 4.0,
                        "cover": 30,
                        "left": {"leaf": 0.1, "cover": 10},
                        "right": {"feature": 0, "threshold": 1.0, "default_left": False,
                                  "gain": 1.0, "cover": 20,
                                  "left": {"leaf": 0.2, "cover": 5},
                                  "right": {"leaf": 0.3, "cover": 15}}})
    imp = importance_gain(GbdtModel(0.0, 0.1, (t,), ("a", "b")))
    # (4*30 + 1*20) / (30 + 20) = 2.8
    assert imp["a"] == (5.0, 2, 2.8)


def test_importance_invariant_to_tree_order(model):
    rev = model.with_trees(list(model.trees)[::-1])
    assert importance_gain(rev) == importance_gain(model)


def test_shap_single_split_two_player_by_hand():
    # covers 3 (left) and 1 (right): expectation 0.25*... = (3*-1 + 1*2)/4 = -0.25
    m = GbdtModel(0.5, 1.0, (stump(1, 0.0, -1.0, 2.0, cl=3.0, cr=1.0),), ("a", "b"))
    phi, base = shap_values(m, [9.0, -1.0])
    assert base == pytest.approx(0.5 - 0.25)
    assert phi[0] == 0.0 and phi[1] == pytest.approx(-1.0 + 0.25)
    phi, _ = shap_values(m, [9.0, 1.0])
    assert phi[1] == pytest.approx(2.0 + 0.25)


def test_training_loss_non_increasing_per_round():
    m = train(toy(seed=4), Hyperparams(max_rounds=20, max_depth=3, min_node_cases=5, seed=1),
              sample=False)
    loss = m.metadata["train_loss"]
    assert all(b <= a + 1e-12 for a, b in zip(loss, loss[1:]))
