"""Admission-level evaluation: AUC, operating points, warnings, alert load, calibration."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

DAY = 86400
HOUR = 3600

# Published hospital-1..3 figures, rendered next to our results for context only.
TABLE_IV_REFERENCE = (
    {"hospital": 1, "method": "ICUWW", "sensitivity": "42.0%", "specificity": "93.1%",
     "auc": "0.676", "advance_warning": "2.4 days", "alerts_per_day": "2.9"},
    {"hospital": 1, "method": "Model A", "sensitivity": "58.9%", "specificity": "93.1%",
     "auc": "0.862", "advance_warning": "2.4 days", "alerts_per_day": "3.0"},
    {"hospital": 1, "method": "Model B", "sensitivity": "79.5%", "specificity": "75.0%",
     "auc": "0.862", "advance_warning": "2.7 days", "alerts_per_day": "11"},
    {"hospital": 2, "method": "ICUWW", "sensitivity": "47.3%", "specificity": "90.7%",
     "auc": "0.690", "advance_warning": "2.1 days", "alerts_per_day": "3.8"},
    {"hospital": 2, "method": "Model A", "sensitivity": "63.2%", "specificity": "90.7%",
     "auc": "0.873", "advance_warning": "3.4 days", "alerts_per_day": "3.8"},
    {"hospital": 2, "method": "Model B", "sensitivity": "80.5%", "specificity": "75.0%",
     "auc": "0.873", "advance_warning": "4.0 days", "alerts_per_day": "10"},
    {"hospital": 3, "method": "ICUWW", "sensitivity": "21.6%", "specificity": "91.7%",
     "auc": "0.566", "advance_warning": "0.3 days", "alerts_per_day": "2.4"},
    {"hospital": 3, "method": "Model A", "sensitivity": "55.9%", "specificity": "91.7%",
     "auc": "0.863", "advance_warning": "0.3 days", "alerts_per_day": "2.6"},
    {"hospital": 3, "method": "Model B", "sensitivity": "85.3%", "specificity": "75.0%",
     "auc": "0.863", "advance_warning": "0.4 days", "alerts_per_day": "7.3"},
)
MAMMOGRAPHY = {"marker": "mammography", "sensitivity": 0.678, "specificity": 0.75}


@dataclass(frozen=True)
class AdmissionScore:
    admission_id: str
    label: int
    series: tuple[tuple[int, float], ...]
    target_ts: int | None = None
    admit_ts: int | None = None

    def __post_init__(self):
        if not self.series:
            raise ValueError(f"admission {self.admission_id} has an empty score series")
        s = tuple(sorted((int(t), float(v)) for t, v in self.series))
        object.__setattr__(self, "series", s)

    @property
    def max_score(self) -> float:
        return max(v for _, v in self.series)

    def first_crossing(self, theta: float) -> int | None:
        for t, v in self.series:
            if v >= theta:
                return t
        return None


def _split(scores: Sequence[AdmissionScore]) -> tuple[np.ndarray, np.ndarray]:
    pos = np.array([s.max_score for s in scores if s.label == 1], dtype=float)
    neg = np.array([s.max_score for s in scores if s.label == 0], dtype=float)
    return pos, neg


def _twice_u(pos: np.ndarray, neg: np.ndarray) -> int:
    """2·U: each (case, control) pair scores 2 for a win and 1 for a tie."""
    neg = np.sort(neg)
    less = np.searchsorted(neg, pos, side="left")
    leq = np.searchsorted(neg, pos, side="right")
    return int(less.sum() + leq.sum())


def auc_from_max(pos: Sequence[float], neg: Sequence[float]) -> Fraction:
    pos, neg = np.asarray(pos, dtype=float), np.asarray(neg, dtype=float)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs both classes")
    return Fraction(_twice_u(pos, neg), 2 * len(pos) * len(neg))


def admission_level_auc(scores: Sequence[AdmissionScore]) -> Fraction:
    """Mann-Whitney AUC on per-admission maximum scores, as an exact fraction."""
    return auc_from_max(*_split(scores))


def auc_float(scores: np.ndarray, labels: np.ndarray) -> float:
    scores, labels = np.asarray(scores, dtype=float), np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs both classes")
    return _twice_u(pos, neg) / (2.0 * len(pos) * len(neg))


def max_per_group(values: np.ndarray, group: np.ndarray, n_groups: int) -> np.ndarray:
    out = np.full(n_groups, -np.inf)
    np.maximum.at(out, group, values)
    return out


def _target_fraction(target: float) -> Fraction:
    return Fraction(repr(float(target)))


def threshold_for_specificity(control_scores: Sequence[float], target: float) -> float:
    """Smallest observed score (or +inf) leaving at least `target` of controls unalerted."""
    if not 0 < target < 1:
        raise ValueError("target specificity must be in (0, 1)")
    if len(control_scores) == 0:
        raise ValueError("no control scores")
    return _threshold_exact(control_scores, _target_fraction(target))


@dataclass(frozen=True)
class Confusion:
    sensitivity: Fraction
    specificity: Fraction
    alerts: int


def confusion_at(scores: Sequence[AdmissionScore], theta: float) -> Confusion:
    pos, neg = _split(scores)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("confusion needs both classes")
    tp = int((pos >= theta).sum())
    tn = int((neg < theta).sum())
    return Confusion(Fraction(tp, len(pos)), Fraction(tn, len(neg)), tp + len(neg) - tn)


@dataclass(frozen=True)
class AdvanceWarning:
    median_days: float | None          # None when there are no true positives
    per_case: dict[str, float]


def median(values: Sequence[float]) -> float:
    v = sorted(values)
    n = len(v)
    if n == 0:
        raise ValueError("median of nothing")
    return v[n // 2] if n % 2 else (v[n // 2 - 1] + v[n // 2]) / 2


def advance_warning(case_scores: Iterable[AdmissionScore], theta: float) -> AdvanceWarning:
    per = {}
    for s in case_scores:
        if s.label != 1:
            continue
        if s.target_ts is None:
            raise ValueError(f"case {s.admission_id} has no target_ts")
        t = s.first_crossing(theta)
        if t is not None:
            per[s.admission_id] = (s.target_ts - t) / DAY
    return AdvanceWarning(median(per.values()) if per else None, dict(sorted(per.items())))


def alerts_per_day(scores: Iterable[AdmissionScore], theta: float,
                   study_interval: tuple[int, int]) -> float:
    """Mean alerted admissions per UTC day over [start, end), zero days included.

    An admission counts once, on the day of its first crossing.
    """
    start, end = study_interval
    if end <= start:
        raise ValueError("empty study interval")
    d0, d1 = start // DAY, -(-end // DAY)
    n_days = d1 - d0
    count = 0
    for s in scores:
        t = s.first_crossing(theta)
        if t is None:
            continue
        if not start <= t < end:
            raise ValueError(f"alert at {t} outside the study interval")
        count += 1
    return count / n_days


def study_interval_of(scores: Iterable[AdmissionScore]) -> tuple[int, int]:
    ts = [t for s in scores for t, _ in s.series]
    if not ts:
        raise ValueError("no scores")
    return min(ts) // DAY * DAY, (max(ts) // DAY + 1) * DAY


@dataclass(frozen=True)
class CalibrationBins:
    counts: tuple[int, ...]
    rates: tuple[float, ...]
    score_max: tuple[float, ...] = ()

    def inversions(self) -> list[float]:
        return [self.rates[i] - self.rates[i + 1] for i in range(len(self.rates) - 1)
                if self.rates[i + 1] < self.rates[i]]


def calibration_quintiles(scores: Sequence[AdmissionScore], n_bins: int = 5) -> CalibrationBins:
    n = len(scores)
    if n < n_bins:
        raise ValueError(f"need at least {n_bins} admissions")
    order = sorted(scores, key=lambda s: (s.max_score, s.admission_id))
    base, rem = divmod(n, n_bins)
    sizes = [base + (1 if i >= n_bins - rem else 0) for i in range(n_bins)]
    counts, rates, tops = [], [], []
    k = 0
    for size in sizes:
        chunk = order[k:k + size]
        k += size
        counts.append(size)
        rates.append(sum(s.label for s in chunk) / size)
        tops.append(chunk[-1].max_score)
    return CalibrationBins(tuple(counts), tuple(rates), tuple(tops))


def roc_points(scores: Sequence[AdmissionScore]) -> list[tuple[float, float, float]]:
    """(threshold, sensitivity, specificity) over every distinct max score plus +inf."""
    pos, neg = _split(scores)
    pos, neg = np.sort(pos), np.sort(neg)
    thetas = np.append(np.unique(np.concatenate([pos, neg])), math.inf)
    sens = (len(pos) - np.searchsorted(pos, thetas, side="left")) / len(pos)
    spec = np.searchsorted(neg, thetas, side="left") / len(neg)
    return [(float(t), float(a), float(b)) for t, a, b in zip(thetas, sens, spec)]


@dataclass(frozen=True)
class EvalReport:
    sensitivity: float
    specificity: float
    auc: float
    median_advance_warning: float | None
    alerts_per_day: float
    threshold: float
    n_cases: int
    n_controls: int


def evaluate(scores: Sequence[AdmissionScore], theta: float,
             study_interval: tuple[int, int]) -> EvalReport:
    c = confusion_at(scores, theta)
    pos, neg = _split(scores)
    return EvalReport(float(c.sensitivity), float(c.specificity),
                      float(admission_level_auc(scores)),
                      advance_warning(scores, theta).median_days,
                      alerts_per_day(scores, theta, study_interval), float(theta),
                      len(pos), len(neg))


def exclude_early_transfers(scores: Sequence[AdmissionScore], hours: float = 24) -> list[AdmissionScore]:
    """Drop cases whose ICU transfer came less than `hours` after admission."""
    out = []
    for s in scores:
        if s.label == 1:
            if s.admit_ts is None or s.target_ts is None:
                raise ValueError(f"case {s.admission_id} lacks admit_ts/target_ts")
            if s.target_ts - s.admit_ts < hours * HOUR:
                continue
        out.append(s)
    return out


@dataclass
class CompareReport:
    rows: list[dict]
    markers: list[dict]
    reference: tuple[dict, ...] = TABLE_IV_REFERENCE
    thresholds: dict = field(default_factory=dict)

    def row(self, method: str, variant: str = "all") -> dict:
        return next(r for r in self.rows if r["method"] == method and r["variant"] == variant)

    def to_csv(self) -> str:
        cols = ["variant", "method", "sensitivity", "specificity", "auc",
                "median_advance_warning_days", "alerts_per_day", "threshold",
                "n_cases", "n_controls"]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r[k]) for k in cols})
        return buf.getvalue()

    def markers_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["marker", "sensitivity", "specificity"],
                           lineterminator="\n")
        w.writeheader()
        for m in self.markers:
            w.writerow({k: _fmt(m[k]) for k in ("marker", "sensitivity", "specificity")})
        return buf.getvalue()

    def reference_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(TABLE_IV_REFERENCE[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(self.reference)
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _row(variant, method, rep: EvalReport) -> dict:
    return {"variant": variant, "method": method, "sensitivity": rep.sensitivity,
            "specificity": rep.specificity, "auc": rep.auc,
            "median_advance_warning_days": rep.median_advance_warning,
            "alerts_per_day": rep.alerts_per_day, "threshold": rep.threshold,
            "n_cases": rep.n_cases, "n_controls": rep.n_controls}


def operating_points(target_specs: Sequence) -> list[tuple[str, object]]:
    """Name each target: "benchmark" is Model A, the first number Model B."""
    out, n_numeric = [], 0
    for t in target_specs:
        if t == "benchmark":
            out.append(("Model A", t))
            continue
        t = float(t)
        if not 0 < t < 1:
            raise ValueError(f"specificity target {t} not in (0, 1)")
        out.append(("Model B" if n_numeric == 0 else f"Model spec={t!r}", t))
        n_numeric += 1
    return out


def compare_report(model_scores: Sequence[AdmissionScore], icuww_scores: Sequence[AdmissionScore],
                   target_specs: Sequence = ("benchmark", 0.75),
                   study_interval: tuple[int, int] | None = None) -> CompareReport:
    """The benchmark next to the model at each target specificity.

    ICUWW scores are 0/1 alert series, so its operating point is theta = 1;
    the "benchmark" target reuses its achieved specificity. Rows are
    repeated for the variant without transfers inside the first 24 hours.
    """
    ids_m = sorted(s.admission_id for s in model_scores)
    ids_i = sorted(s.admission_id for s in icuww_scores)
    if ids_m != ids_i:
        raise ValueError("model and ICUWW scores cover different admissions")
    if study_interval is None:
        study_interval = study_interval_of(list(model_scores) + list(icuww_scores))
    _, neg_i = _split(icuww_scores)
    _, neg_m = _split(model_scores)
    icuww_spec = Fraction(int((neg_i < 1.0).sum()), len(neg_i))
    thresholds = {}
    for name, t in operating_points(target_specs):
        thresholds[name] = (_threshold_exact(neg_m, icuww_spec) if t == "benchmark"
                            else threshold_for_specificity(neg_m, t))
    rows = []
    for variant, filt in (("all", list), ("exclude_transfers_within_24h", exclude_early_transfers)):
        ms, ic = filt(model_scores), filt(icuww_scores)
        rows.append(_row(variant, "ICUWW", evaluate(ic, 1.0, study_interval)))
        for name, theta in thresholds.items():
            rows.append(_row(variant, name, evaluate(ms, theta, study_interval)))
    icuww_row = rows[0]
    markers = [{"marker": "ICUWW", "sensitivity": icuww_row["sensitivity"],
                "specificity": icuww_row["specificity"]}, dict(MAMMOGRAPHY)]
    return CompareReport(rows, markers, thresholds={**thresholds,
                                                    "icuww_specificity": float(icuww_spec)})


def _threshold_exact(control_scores: np.ndarray, target: Fraction) -> float:
    """Like threshold_for_specificity, with a rational target (may equal 1)."""
    c = np.sort(np.asarray(control_scores, dtype=float))
    need = math.ceil(target * len(c))
    cands = np.unique(c)
    below = np.searchsorted(c, cands, side="left")
    ok = np.flatnonzero(below >= need)
    return float(cands[ok[0]]) if len(ok) else math.inf


def warnings_rows(scores: Sequence[AdmissionScore], theta: float) -> list[dict]:
    aw = advance_warning(scores, theta)
    return [{"admission_id": a, "advance_warning_days": d} for a, d in aw.per_case.items()]


def to_dict(obj) -> dict:
    return asdict(obj)
