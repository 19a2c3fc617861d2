import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icuwarn.evalkit import (DAY, HOUR, AdmissionScore, admission_level_auc, advance_warning,
                             alerts_per_day, auc_float, auc_from_max, calibration_quintiles,
                             compare_report, confusion_at, exclude_early_transfers, median,
                             operating_points, roc_points, study_interval_of,
                             threshold_for_specificity, TABLE_IV_REFERENCE)


def brute_auc(pos, neg):
    """Reference: enumerate every (case, control) pair."""
    num = sum(Fraction(1) if p > n else Fraction(1, 2) if p == n else Fraction(0)
              for p in pos for n in neg)
    return num / (len(pos) * len(neg))


def adm(i, label, series, target=None, admit=0):
    return AdmissionScore(f"A{i:04d}", label, tuple(series), target, admit)


# discrete values make ties common
score_values = st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.5000000001, 0.75, 1.0])


@st.composite
def admissions(draw, max_n=200):
    n = draw(st.integers(2, max_n))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    if len(set(labels)) < 2:
        labels[0], labels[1] = 0, 1
    out = []
    for i, y in enumerate(labels):
        vals = draw(st.lists(score_values, min_size=1, max_size=4))
        out.append(adm(i, y, [(k * HOUR, v) for k, v in enumerate(vals)], 10 * HOUR))
    return out


def test_fraction_auc_matches_brute_force_100_instances():
    r = np.random.default_rng(2024)
    for _ in range(100):
        n = int(r.integers(2, 201))
        labels = r.integers(0, 2, n)
        labels[:2] = (0, 1)
        scores = []
        for i, y in enumerate(labels):
            k = int(r.integers(1, 5))
            vals = np.round(r.random(k) + 0.3 * y, int(r.integers(1, 3)))
            scores.append(adm(i, int(y), [(j * HOUR, float(v)) for j, v in enumerate(vals)]))
        pos = [s.max_score for s in scores if s.label == 1]
        neg = [s.max_score for s in scores if s.label == 0]
        got = admission_level_auc(scores)
        assert isinstance(got, Fraction)
        assert got == brute_auc(pos, neg)


@settings(max_examples=60, deadline=None)
@given(admissions())
def test_auc_routes_agree(scores):
    pos = [s.max_score for s in scores if s.label == 1]
    neg = [s.max_score for s in scores if s.label == 0]
    exact = admission_level_auc(scores)
    assert exact == brute_auc(pos, neg)
    labels = np.array([s.label for s in scores])
    assert auc_float([s.max_score for s in scores], labels) == float(exact)
    # complement symmetry
    assert auc_from_max(neg, pos) == 1 - exact


def test_auc_degenerate():
    assert auc_from_max([1.0], [0.0]) == 1
    assert auc_from_max([0.5], [0.5]) == Fraction(1, 2)
    with pytest.raises(ValueError):
        auc_from_max([], [0.1])


def test_empty_series_rejected():
    with pytest.raises(ValueError, match="empty"):
        AdmissionScore("A", 0, ())


def test_series_sorted_and_first_crossing():
    s = adm(0, 1, [(3 * HOUR, 0.9), (HOUR, 0.2), (2 * HOUR, 0.6)])
    assert [t for t, _ in s.series] == [HOUR, 2 * HOUR, 3 * HOUR]
    assert s.first_crossing(0.5) == 2 * HOUR
    assert s.first_crossing(0.6) == 2 * HOUR
    assert s.first_crossing(0.95) is None


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=80),
       st.floats(0.01, 0.99))
def test_threshold_for_specificity(controls, target):
    theta = threshold_for_specificity(controls, target)
    c = np.array(controls)
    need = math.ceil(Fraction(repr(target)) * len(c))
    assert (c < theta).sum() >= need
    # any smaller candidate would alert too many controls
    smaller = np.unique(c[c < theta])
    for cand in smaller:
        assert (c < cand).sum() < need
    assert theta == math.inf or theta in c


def test_threshold_examples():
    c = [0.1, 0.2, 0.3, 0.4]
    assert threshold_for_specificity(c, 0.75) == 0.4
    assert threshold_for_specificity(c, 0.5) == 0.3
    assert threshold_for_specificity(c, 0.76) == math.inf
    assert threshold_for_specificity([0.2, 0.2, 0.2, 0.9], 0.5) == 0.9
    for bad in (0, 1, 1.5):
        with pytest.raises(ValueError):
            threshold_for_specificity(c, bad)


def test_confusion():
    scores = [adm(0, 1, [(0, 0.9)]), adm(1, 1, [(0, 0.3)]), adm(2, 0, [(0, 0.5)]),
              adm(3, 0, [(0, 0.1)])]
    c = confusion_at(scores, 0.5)
    assert (c.sensitivity, c.specificity, c.alerts) == (Fraction(1, 2), Fraction(1, 2), 2)


def test_advance_warning():
    cases = [adm(0, 1, [(0, 0.1), (DAY, 0.8)], target=3 * DAY),
             adm(1, 1, [(0, 0.9)], target=DAY // 2),
             adm(2, 1, [(0, 0.1)], target=DAY),            # missed
             adm(3, 0, [(0, 0.9)])]
    aw = advance_warning(cases, 0.5)
    assert aw.per_case == {"A0000": 2.0, "A0001": 0.5}
    assert aw.median_days == 1.25
    assert advance_warning(cases, 2.0).median_days is None
    with pytest.raises(ValueError, match="target_ts"):
        advance_warning([adm(9, 1, [(0, 1.0)])], 0.5)


def test_median():
    assert median([3, 1, 2]) == 2
    assert median([4, 1, 2, 3]) == 2.5
    with pytest.raises(ValueError):
        median([])


def test_alerts_per_day_counts_zero_days_and_first_crossing_only():
    scores = [adm(0, 0, [(HOUR, 0.9), (DAY + HOUR, 0.9)]),     # counted once
              adm(1, 1, [(2 * DAY, 0.1), (3 * DAY + HOUR, 0.7)]),
              adm(2, 0, [(HOUR, 0.1)])]
    # four days, two alerting admissions
    assert alerts_per_day(scores, 0.5, (0, 4 * DAY)) == 0.5
    # a partial trailing day still counts as a day
    assert alerts_per_day(scores, 0.5, (0, 3 * DAY + 2 * HOUR)) == 0.5
    with pytest.raises(ValueError):
        alerts_per_day(scores, 0.5, (0, DAY))
    with pytest.raises(ValueError):
        alerts_per_day(scores, 0.5, (DAY, DAY))
    assert study_interval_of(scores) == (0, 4 * DAY)


def test_calibration_bins():
    scores = [adm(i, int(i >= 7), [(0, i / 10)]) for i in range(10)]
    cal = calibration_quintiles(scores)
    assert cal.counts == (2, 2, 2, 2, 2)
    assert cal.rates == (0.0, 0.0, 0.0, 0.5, 1.0)
    assert cal.inversions() == []
    uneven = calibration_quintiles(scores[:7])
    assert uneven.counts == (1, 1, 1, 2, 2)
    with pytest.raises(ValueError):
        calibration_quintiles(scores[:3])


@given(admissions(max_n=60))
def test_calibration_partitions(scores):
    if len(scores) < 5:
        return
    cal = calibration_quintiles(scores)
    assert sum(cal.counts) == len(scores)
    assert max(cal.counts) - min(cal.counts) <= 1
    assert sum(r * c for r, c in zip(cal.rates, cal.counts)) == pytest.approx(
        sum(s.label for s in scores))
    assert list(cal.score_max) == sorted(cal.score_max)


@given(admissions(max_n=60))
def test_roc_points_consistent_with_confusion(scores):
    for theta, sens, spec in roc_points(scores):
        c = confusion_at(scores, theta)
        assert (sens, spec) == (float(c.sensitivity), float(c.specificity))


def test_exclude_early_transfers():
    scores = [adm(0, 1, [(0, 1.0)], target=10 * HOUR, admit=0),
              adm(1, 1, [(0, 1.0)], target=30 * HOUR, admit=0),
              adm(2, 0, [(0, 1.0)])]
    assert [s.admission_id for s in exclude_early_transfers(scores)] == ["A0001", "A0002"]


def test_operating_points():
    assert operating_points(["benchmark", 0.75, 0.9]) == [
        ("Model A", "benchmark"), ("Model B", 0.75), ("Model spec=0.9", 0.9)]
    with pytest.raises(ValueError):
        operating_points([1.0])


def synthetic_pair(seed, n=300):
    r = np.random.default_rng(seed)
    model, icuww = [], []
    for i in range(n):
        y = int(r.random() < 0.2)
        admit = int(r.integers(0, 5)) * DAY
        k = int(r.integers(2, 8))
        ts = admit + np.arange(k) * 6 * HOUR
        target = int(ts[-1] + HOUR) if y else None
        mv = np.round(r.random(k) * (0.6 + 0.4 * y), 3)
        alert = np.cumsum(r.random(k) < (0.15 + 0.2 * y)) > 0
        model.append(adm(i, y, zip(ts.tolist(), mv.tolist()), target, admit))
        icuww.append(adm(i, y, zip(ts.tolist(), alert.astype(float).tolist()), target, admit))
    return model, icuww


@pytest.mark.parametrize("seed", range(5))
def test_compare_report_model_a_matches_icuww_specificity(seed):
    model, icuww = synthetic_pair(seed)
    rep = compare_report(model, icuww)
    for variant in ("all", "exclude_transfers_within_24h"):
        ic, a = rep.row("ICUWW", variant), rep.row("Model A", variant)
        assert a["specificity"] == ic["specificity"]
    b = rep.row("Model B")
    assert 0.75 <= b["specificity"] < 0.75 + 2 / rep.row("Model B")["n_controls"] + 0.05
    assert rep.row("Model A")["auc"] == rep.row("Model B")["auc"]
    assert rep.thresholds["icuww_specificity"] == rep.row("ICUWW")["specificity"]
    csv_text = rep.to_csv()
    assert csv_text.splitlines()[0].startswith("variant,method,sensitivity")
    assert len(csv_text.splitlines()) == 7
    assert "mammography" in rep.markers_csv()


def test_compare_report_requires_same_admissions():
    model, icuww = synthetic_pair(0)
    with pytest.raises(ValueError, match="different admissions"):
        compare_report(model[1:], icuww)


def test_reference_table_values():
    assert len(TABLE_IV_REFERENCE) == 9
    by = {(r["hospital"], r["method"]): r for r in TABLE_IV_REFERENCE}
    assert by[(1, "ICUWW")]["auc"] == "0.676"
    assert by[(2, "Model B")]["sensitivity"] == "80.5%"
    assert by[(3, "Model A")]["auc"] == "0.863"
    assert {r["specificity"] for r in TABLE_IV_REFERENCE if r["method"] == "Model B"} == {"75.0%"}
    for h in (1, 2, 3):
        assert by[(h, "ICUWW")]["specificity"] == by[(h, "Model A")]["specificity"]
