import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icuwarn import codes
from icuwarn.cohort import instant_times, label_admissions
from icuwarn.emr import Admission, ClinicalEvent, Events, TransferRecord
from icuwarn.features import windows as W
from icuwarn.features.build import (AdmissionContext, FeatureConfig, FeatureMatrix,
                                    admission_rows, build_matrix, catalog, contexts,
                                    feature_names)
from icuwarn.features.comorbidity import charlson, elixhauser_vw

DAY = 86400


@pytest.fixture(scope="module")
def sample(small_ds):
    labels = [lb for lb in label_admissions(small_ds) if not lb.excluded]
    rnd = np.random.default_rng(0)
    with_hist = [lb for lb in labels if small_ds.history(small_ds[lb.admission_id])]
    picks = list(rnd.choice(len(labels), 10, replace=False))
    chosen = [labels[i] for i in picks] + with_hist[:4] + [lb for lb in labels if lb.is_case][:3]
    chosen = list({lb.admission_id: lb for lb in chosen}.values())
    cfg = FeatureConfig.from_dataset(small_ds)
    inst = {lb.admission_id: instant_times(small_ds[lb.admission_id], lb) for lb in chosen}
    matrix, tables = build_matrix(small_ds, chosen, inst, cfg)
    return small_ds, chosen, cfg, matrix, tables


def _close(a, b):
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return abs(a - b) <= 1e-9 * max(1.0, abs(a), abs(b))


def test_rows_match_single_instant_primitives(sample):
    ds, chosen, cfg, M, _ = sample
    col = {n: i for i, n in enumerate(M.feature_names)}
    checked = 0
    for r in range(0, len(M), 7):
        adm = ds[M.admission_id[r]]
        t = int(M.ts[r])
        ev = adm.events
        x = M.X[r]
        want = {}
        for v in cfg.vitals:
            want[f"{v}_last"] = W.most_recent(ev, v, t, "vital")
            want[f"{v}_min_1day"] = W.window_agg(ev, v, t, W.WindowSpec(1), "min", "vital")
            want[f"{v}_max_1day"] = W.window_agg(ev, v, t, W.WindowSpec(1), "max", "vital")
            for y in cfg.day_windows:
                want[f"{v}_count_{y}day"] = W.window_agg(ev, v, t, W.WindowSpec(y), "count", "vital")
                want[f"{v}_avg_{y}day"] = W.window_agg(ev, v, t, W.WindowSpec(y), "avg", "vital")
        for c in cfg.fluids:
            name = codes.fluid_column(c)
            want[f"{name}_last"] = W.most_recent(ev, c, t, "fluid")
            for y in cfg.day_windows:
                want[f"{name}_count_{y}day"] = W.window_agg(ev, c, t, W.WindowSpec(y), "count", "fluid")
                want[f"{name}_avg_{y}day"] = W.window_agg(ev, c, t, W.WindowSpec(y), "avg", "fluid")
        for c in cfg.fluid_trends:
            for d in cfg.trend_days:
                want[f"{codes.fluid_column(c)}_trend_{d}day"] = W.trend(ev, c, t, W.WindowSpec(d),
                                                                         "fluid")
        for c in cfg.lab_codes:
            name = codes.lab_column(c)
            want[f"{name}_last"] = W.most_recent(ev, c, t, "lab")
            for y in cfg.day_windows:
                want[f"{name}_count_{y}day"] = W.window_agg(ev, c, t, W.WindowSpec(y), "count", "lab")
            for z in cfg.week_windows:
                for stat in ("avg", "min", "max"):
                    want[f"{name}_{stat}_{z}wk"] = W.window_agg(ev, c, t, W.WindowSpec(z, "weeks"),
                                                                stat, "lab")
            m = (ev.code == c) & (ev.kind == "lab")
            want[f"{name}_count_adm"] = float(np.sum((ev.ts[m] >= adm.admit_ts) & (ev.ts[m] <= t)))
        hist = ds.history(adm)
        for k, v in W.usage_features(hist, adm.admit_ts).items():
            want[k] = v
        want["lab_count_trend_7day"] = W.lab_count_trend(ev, t, 7)
        dx = W.past_year_diagnoses(hist, adm.admit_ts)
        want["charlson"] = float(charlson(dx))
        want["elixhauser_vw"] = float(elixhauser_vw(dx))
        want["age"] = adm.age
        want["days_since_adm"] = W.sql_round((t - adm.admit_ts) / DAY, 1)
        for name, v in want.items():
            assert _close(x[col[name]], v), (name, x[col[name]], v)
        checked += 1
    assert checked > 20


def test_meds_features(sample):
    ds, _, cfg, M, _ = sample
    col = {n: i for i, n in enumerate(M.feature_names)}
    for r in range(0, len(M), 11):
        adm = ds[M.admission_id[r]]
        t = int(M.ts[r])
        m = adm.events.kind == "med_admin"
        ts, code = adm.events.ts[m], adm.events.code[m]
        for y in cfg.day_windows:
            sel = (ts > t - y * DAY) & (ts <= t)
            assert M.X[r, col[f"med_count_{y}day"]] == sel.sum()
            assert M.X[r, col[f"med_distinct_atc4_{y}day"]] == len({c[:5] for c in code[sel]})


def test_one_row_per_instant(sample):
    ds, chosen, cfg, M, _ = sample
    lb = chosen[0]
    T = instant_times(ds[lb.admission_id], lb)[:3]
    m, _ = build_matrix(ds, [lb], {lb.admission_id: T}, cfg, with_tables=False)
    assert m.X.shape == (len(T), len(feature_names(cfg)))
    assert m.ts.tolist() == sorted(T.tolist())
    sub = M.for_admissions([lb.admission_id])
    np.testing.assert_array_equal(m.X, sub.X[np.isin(sub.ts, T)])


def test_unknown_admission_rejected(sample):
    ds, chosen, cfg, *_ = sample
    with pytest.raises(KeyError):
        build_matrix(ds, chosen, {"NOPE": [1]}, cfg)


def test_column_count_order_of_magnitude(sample):
    p = len(sample[3].feature_names)
    assert 400 <= p <= 600
    assert len(set(sample[3].feature_names)) == p


def test_catalog_matches_built_tables(sample):
    _, _, cfg, _, tables = sample
    cat = catalog(cfg)
    assert set(cat) == set(tables)
    for name, t in tables.items():
        assert cat[name] == t.column_names


def test_monotone_windows(sample):
    M = sample[3]
    names = M.feature_names
    for stem in ("hr", "lab_2524_7", "urine_output", "med"):
        c1 = names.index(f"{stem}_count_1day")
        c7 = names.index(f"{stem}_count_7day")
        assert (M.X[:, c7] >= M.X[:, c1]).all()


def _admission(events):
    tr = (TransferRecord("A", "MED-A", "general", 0, 20 * DAY),)
    ev = Events.from_records(ClinicalEvent("A", k, c, v, "", t) for k, c, v, t in events)
    return Admission("A", "P", "F", 0, 20 * DAY, "home", 70.0, "M", tr, ev)


def test_causality_future_events_do_not_leak(sample):
    ds, chosen, cfg, *_ = sample
    base_events = [("vital", "hr", 80.0 + i, i * 3600 * 5) for i in range(40)]
    base_events += [("lab", "2524-7", 1.0 + 0.1 * i, i * 3600 * 11) for i in range(15)]
    T = np.array(sorted({t for *_, t in base_events}), dtype=np.int64)
    cut = T[len(T) // 2]
    future = [("vital", "hr", 200.0, cut + 60), ("lab", "2524-7", 9.0, cut + 120),
              ("lab", "777-3", 5.0, cut + 180), ("med_admin", "J01DD04", None, cut + 240),
              ("fluid", "9187-6", 3.0, cut + 300)]
    a = AdmissionContext(_admission(base_events), ())
    b = AdmissionContext(_admission(base_events + future), ())
    ra = admission_rows(a, T[T <= cut], cfg)
    rb = admission_rows(b, T[T <= cut], cfg)
    np.testing.assert_array_equal(ra, rb)


def test_window_boundary_half_open():
    ev = _admission([("vital", "hr", 1.0, DAY), ("vital", "hr", 2.0, 2 * DAY)]).events
    w = W.WindowSpec(1)
    assert W.window_agg(ev, "hr", 2 * DAY, w, "count") == 1.0
    assert W.window_agg(ev, "hr", 2 * DAY - 1, w, "count") == 1.0
    assert W.window_agg(ev, "hr", 2 * DAY, w, "min") == 2.0
    assert math.isnan(W.window_agg(ev, "hr", 4 * DAY, w, "avg"))


@settings(max_examples=50)
@given(st.floats(-5, 5, allow_nan=False), st.floats(-100, 100, allow_nan=False),
       st.lists(st.integers(0, 7 * 24), min_size=2, max_size=20, unique=True))
def test_trend_collinear_exact(slope, icpt, hours):
    t = 8 * DAY
    ev = _admission([("fluid", "9187-6", icpt + slope * (t - h * 3600) / DAY, t - h * 3600)
                     for h in hours]).events
    got = W.trend(ev, "9187-6", t, W.WindowSpec(7), "fluid")
    inside = [h for h in hours if h < 7 * 24]
    if len(inside) < 2:
        assert math.isnan(got)
    else:
        assert abs(got - slope) <= 1e-9 * max(1.0, abs(slope))


@settings(max_examples=50)
@given(st.integers(-64, 64), st.integers(-100, 100),
       st.lists(st.integers(0, 6), min_size=2, max_size=7, unique=True))
def test_trend_collinear_dyadic_to_1e12(slope8, icpt, days):
    # dyadic slopes on whole-day offsets keep every input exact
    slope = slope8 / 8
    t = 8 * DAY
    ev = _admission([("fluid", "9187-6", icpt + slope * (8 - d), t - d * DAY)
                     for d in days]).events
    got = W.trend(ev, "9187-6", t, W.WindowSpec(7), "fluid")
    assert abs(got - slope) <= 1e-12 * max(1.0, abs(slope))


def test_sql_round_half_away_from_zero():
    assert W.sql_round(0.25, 1) == 0.3
    assert W.sql_round(-0.25, 1) == -0.3
    assert W.sql_round(1.04, 1) == 1.0
    assert math.isnan(W.sql_round(float("nan"), 1))


def test_window_grid():
    assert W.WindowSpec(6, "months").seconds == 182 * DAY
    assert W.WindowSpec(2, "weeks").seconds == 14 * DAY
    with pytest.raises(ValueError):
        W.WindowSpec(2, "days")


def test_usage_features_counts():
    def prior(aid, a, d):
        return Admission(aid, "P", "F", a * DAY, d * DAY, "home", 50.0, "F")
    hist = [prior("B", 100, 105), prior("C", 300, 340), prior("D", 390, 395)]
    u = W.usage_features(hist, 400 * DAY)
    assert u["n_prev_adm"] == 3
    assert u["n_adm_1mo"] == 1 and u["n_adm_6mo"] == 2 and u["n_adm_12mo"] == 3
    assert u["prev_los_days"] == 5 and u["days_since_last_discharge"] == 5
    empty = W.usage_features([], 0)
    assert empty["n_prev_adm"] == 0 and math.isnan(empty["prev_los_days"])


def test_lab_count_trend_oracle():
    # counts per day (most recent first): 3, 2, 1, 0, 0, 0, 0 -> rising load
    t = 10 * DAY
    events = []
    for k, n in enumerate([3, 2, 1]):
        events += [("lab", "2524-7", 1.0, t - k * DAY - 100 * (i + 1)) for i in range(n)]
    ev = _admission(events).events
    x = -np.arange(7.0)
    y = np.array([3, 2, 1, 0, 0, 0, 0.0])
    assert W.lab_count_trend(ev, t) == pytest.approx(np.polyfit(x, y, 1)[0], abs=1e-12)


def test_matrix_save_load_roundtrip(tmp_path, sample):
    M = sample[3]
    M.save(tmp_path / "m.npz")
    back = FeatureMatrix.load(tmp_path / "m.npz")
    np.testing.assert_array_equal(back.X, M.X)
    assert back.feature_names == M.feature_names and back.config == M.config
    assert back.admission_id.tolist() == M.admission_id.tolist()
    for k in M.meta:
        np.testing.assert_array_equal(back.meta[k], M.meta[k])


def test_frame_roundtrip(sample):
    M = sample[3]
    back = FeatureMatrix.from_frame(M.to_frame(), M.config)
    np.testing.assert_array_equal(back.X, M.X)
    np.testing.assert_array_equal(back.label, M.label)


def test_contexts_carry_history(sample):
    ds, chosen, *_ = sample
    ctx = contexts(ds, chosen)
    for lb in chosen:
        assert list(ctx[lb.admission_id].history) == ds.history(ds[lb.admission_id])


def test_usage_calendar_windows_at_20_100_400_days():
    # month windows are 30/182/365 days, so a prior 400 days back is outside 12 months
    def prior(aid, back):
        return Admission(aid, "P", "F", (1000 - back - 2) * DAY, (1000 - back) * DAY, "home", 50.0, "F")
    u = W.usage_features([prior("B", 20), prior("C", 100), prior("D", 400)], 1000 * DAY)
    assert (u["n_adm_1mo"], u["n_adm_6mo"], u["n_adm_12mo"]) == (1, 2, 2)
    assert u["n_prev_adm"] == 3
