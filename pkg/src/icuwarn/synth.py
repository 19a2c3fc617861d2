"""Deterministic synthetic EMR generator with a planted deterioration signal.

Randomness is split into independent streams derived from the config seed:

* ``[seed, 0]``          -- global calibration (none currently random)
* ``[seed, 1, patient]`` -- the patient plan: frailty, admission timeline,
  case status, pathway, deterioration timing
* ``[seed, 2, index]``   -- the content of admission number ``index``
  (vitals, fluids, labs, meds, diagnoses)

so generating admissions in any order yields the same content.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import codes
from .emr import Dataset, from_frames, object_full
from .features.comorbidity import charlson_table, elixhauser_vw_table

HOUR = 3600
DAY = 86400

DEFAULT_PANEL_PROB = {
    "bmp": 0.85, "cbc": 0.8, "liver": 0.25, "coag": 0.15, "crp": 0.25,
    "mg": 0.3, "abg": 0.04, "lactate": 0.04, "troponin": 0.03,
}
PANELS = {
    "bmp": ("2951-2", "2823-3", "2075-0", "1963-8", "3094-0", "2160-0", "2345-7", "17861-6"),
    "cbc": ("6690-2", "718-7", "777-3"),
    "liver": ("1975-2", "1742-6"),
    "coag": ("5902-2",),
    "crp": ("1988-5",),
    "mg": ("2601-3",),
    "abg": ("2744-1", "2019-8", "2703-7"),
    "lactate": ("2524-7",),
    "troponin": ("10839-9",),
}
# panels whose ordering frequency rises with deterioration
SIGNAL_PANELS = ("abg", "lactate", "troponin", "crp", "coag")

# (mean, sd, deterioration shift at full severity, decimals, lower, upper)
LAB_MODEL = {
    "2951-2": (140, 3, -4, 0, 120, 160),
    "2823-3": (4.2, 0.4, 0.6, 1, 2.5, 6.5),
    "2075-0": (103, 3, 0, 0, 85, 120),
    "1963-8": (24, 2.5, -6, 0, 10, 35),
    "3094-0": (15, 6, 18, 0, 3, 90),
    "2160-0": (0.9, 0.25, 1.0, 2, 0.3, 6),
    "2345-7": (105, 25, 40, 0, 50, 400),
    "17861-6": (9.3, 0.4, -0.6, 1, 7, 11),
    "6690-2": (7.5, 2.0, 8, 1, 1.5, 35),
    "718-7": (12.5, 1.5, -1.5, 1, 6, 18),
    "777-3": (250, 60, -110, 0, 101, 600),     # 10*3/uL
    "1975-2": (0.7, 0.3, 0.8, 1, 0.1, 8),
    "1742-6": (25, 10, 30, 0, 5, 400),
    "5902-2": (12.5, 1.0, 3, 1, 9, 30),
    "1988-5": (5, 4, 80, 1, 0.2, 300),
    "2601-3": (2.0, 0.2, -0.2, 1, 1.2, 3),
    "2744-1": (7.40, 0.03, -0.07, 2, 7.31, 7.55),
    "2019-8": (40, 4, 14, 0, 25, 59),
    "2703-7": (90, 10, -25, 0, 45, 140),
    "2524-7": (1.2, 0.4, 1.4, 1, 0.3, 2.9),
    "10839-9": (0.01, 0.01, 0.2, 2, 0.0, 0.29),
}

# Values that meet one benchmark criterion each: (loinc, low, high, decimals)
ICUWW_HITS = (
    ("10839-9", 0.35, 2.0, 2),
    ("2744-1", 7.12, 7.28, 2),
    ("2019-8", 62, 85, 0),
    ("777-3", 35, 95, 0),       # 10*3/uL
    ("2524-7", 3.2, 7.0, 1),
)

# (baseline mean, between-patient sd, measurement sd, shift at full severity, decimals, lo, hi)
VITAL_MODEL = {
    "hr": (76, 8, 5, 38, 0, 35, 190),
    "rr": (16, 2, 1.5, 11, 0, 6, 45),
    "spo2": (97, 1.0, 1.0, -9, 0, 70, 100),
    "sbp": (126, 12, 8, -32, 0, 60, 220),
    "dbp": (75, 8, 6, -16, 0, 30, 130),
    "temp": (36.8, 0.25, 0.25, 1.3, 1, 34, 41.5),
    "glucose": (112, 18, 20, 45, 0, 45, 450),
}

WARDS = {"general": ("MED-A", "MED-B", "SURG-1"), "icu": ("ICU-1",), "operating_room": ("OR-1",),
         "recovery": ("PACU",), "neonatal_icu": ("NICU",), "nursery": ("NURSERY",)}


@dataclass(frozen=True)
class SynthConfig:
    n_admissions: int = 1000
    prevalence: float = 0.01
    seed: int = 0
    n_facilities: int = 3
    vitals_cadence: tuple[float, float] = (1.0, 4.0)      # hours
    fluids_per_day: tuple[int, int] = (2, 4)
    lab_panel_prob: dict = field(default_factory=lambda: dict(DEFAULT_PANEL_PROB))
    deterioration_lead: tuple[float, float] = (0.5, 5.0)  # days
    no_signal_fraction: float = 0.2
    icuww_case_fraction: float = 0.4
    icuww_control_rate: float = 0.07
    transient_rate: float = 0.15
    prior_admission_fraction: float = 0.3
    direct_icu_fraction: float = 0.01
    surgical_fraction: float = 0.12
    surgical_icu_fraction: float = 0.02
    neonatal_fraction: float = 0.005
    los_median_days: float = 1.4
    start: str = "2019-01-01"
    span_days: int = 730

    def __post_init__(self):
        if not 0 < self.prevalence < 1:
            raise ValueError("prevalence must be in (0, 1)")
        if self.n_admissions < 1 or self.n_facilities < 1:
            raise ValueError("n_admissions and n_facilities must be positive")
        lo, hi = self.vitals_cadence
        if not 0 < lo <= hi:
            raise ValueError("vitals_cadence must be a positive range")
        flo, fhi = self.fluids_per_day
        if not 0 < flo <= fhi:
            raise ValueError("fluids_per_day must be a positive range")
        llo, lhi = self.deterioration_lead
        if not 0 < llo <= lhi:
            raise ValueError("deterioration_lead must be a positive range")

    @classmethod
    def from_file(cls, path: str | Path, section: str = "synth") -> "SynthConfig":
        """Read ``key = value`` lines (optionally under a ``[synth]`` header)."""
        text = Path(path).read_text()
        if not text.lstrip().startswith("["):
            text = f"[{section}]\n" + text
        parser = configparser.ConfigParser()
        parser.read_string(text)
        return cls.from_mapping(dict(parser[section]) if parser.has_section(section) else {})

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown synth option {key!r}")
            kind = types[key]
            if key == "lab_panel_prob":
                pairs = (p.split(":") for p in str(raw).split(","))
                kwargs[key] = {**DEFAULT_PANEL_PROB, **{k.strip(): float(v) for k, v in pairs}}
            elif "tuple" in str(kind):
                lo, hi = (float(x) for x in str(raw).replace("(", "").replace(")", "").split(","))
                kwargs[key] = (int(lo), int(hi)) if "int" in str(kind) else (lo, hi)
            elif "int" in str(kind):
                kwargs[key] = int(raw)
            elif "float" in str(kind):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = ["[synth]"]
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                v = ",".join(f"{a}:{b}" for a, b in v.items())
            elif isinstance(v, tuple):
                v = f"{v[0]},{v[1]}"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SynthTruth:
    """What the generator intended for one admission."""

    category: str          # case | medical | surgical | surgical_icu | direct_icu | neonatal
    is_case: bool
    target_ts: int | None
    signal: bool
    icuww_positive: bool
    lead_days: float | None

    @property
    def excluded_reason(self) -> str:
        return {"direct_icu": "direct_icu_admission", "neonatal": "neonatal"}.get(self.category,
                                                                                  "none")


@dataclass
class _Plan:
    index: int
    admission_id: str
    patient_id: str
    facility: str
    frailty: float
    age: float
    gender: str
    admit_ts: int
    discharge_ts: int
    disposition: str
    segments: list          # (ward_name, ward_type, in_ts, out_ts)
    truth: SynthTruth
    severity: list = field(default_factory=list)   # (start, peak, end, amplitude) episodes
    icuww_hit_ts: int | None = None
    surgical_after: int | None = None


def _case_intercept(prevalence: float, slope: float) -> float:
    """Intercept a with E_z[sigmoid(a + slope*z)] = prevalence for z ~ N(0, 1)."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(60)
    weights = weights / weights.sum()

    def mean_p(a):
        return float(np.sum(weights / (1 + np.exp(-(a + slope * nodes)))))

    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if mean_p(mid) < prevalence:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


FRAILTY_SLOPE = 1.3


def _minute(t: float) -> int:
    return int(round(t / 60.0)) * 60


def _plan(config: SynthConfig) -> list[_Plan]:
    start = int(pd.Timestamp(config.start, tz="UTC").value // 10**9)
    a0 = _case_intercept(config.prevalence, FRAILTY_SLOPE)
    facilities = [f"H{i + 1}" for i in range(config.n_facilities)]
    plans: list[_Plan] = []
    patient = 0
    while len(plans) < config.n_admissions:
        rng = np.random.default_rng([config.seed, 1, patient])
        pid = f"P{patient:07d}"
        patient += 1
        neonatal = rng.random() < config.neonatal_fraction
        z = float(rng.normal())
        n_adm = 1
        if not neonatal and rng.random() < config.prior_admission_fraction:
            n_adm += 1 + int(rng.poisson(0.6))
        facility = facilities[int(rng.integers(len(facilities)))]
        gender = "M" if rng.random() < 0.5 else "F"
        if neonatal:
            age0 = float(rng.uniform(0.0, 0.05))
        else:
            age0 = float(np.clip(60 + 13 * z + rng.normal(0, 9), 18, 97))
        t = start + float(rng.uniform(0, config.span_days)) * DAY
        first_admit = t
        for _ in range(n_adm):
            if len(plans) >= config.n_admissions:
                break
            idx = len(plans)
            admit = _minute(t)
            age = round(age0 + (admit - first_admit) / (365.25 * DAY), 2)
            p = _plan_admission(config, rng, idx, pid, facility, z, age, gender, admit, neonatal,
                                a0)
            plans.append(p)
            t = p.discharge_ts + (1 + float(rng.exponential(90))) * DAY
    return plans


def _plan_admission(config, rng, idx, pid, facility, z, age, gender, admit, neonatal, a0) -> _Plan:
    aid = f"A{idx:07d}"
    general = WARDS["general"][int(rng.integers(3))]
    lead = None
    target = None
    signal = icuww = False
    severity = []
    hit_ts = None
    surgical_after = None
    if neonatal:
        category = "neonatal"
    elif rng.random() < 1 / (1 + math.exp(-(a0 + FRAILTY_SLOPE * z))):
        category = "case"
    else:
        u = rng.random()
        cuts = np.cumsum([config.direct_icu_fraction, config.surgical_icu_fraction,
                          config.surgical_fraction])
        category = ("direct_icu" if u < cuts[0] else "surgical_icu" if u < cuts[1]
                    else "surgical" if u < cuts[2] else "medical")

    segs = []

    def add(ward_type, dur_days, name=None):
        begin = segs[-1][3] if segs else admit
        end = _minute(begin + dur_days * DAY)
        if end <= begin:
            end = begin + 3600
        segs.append([name or WARDS[ward_type][0], ward_type, begin, end])
        return begin, end

    if category == "case":
        signal = bool(rng.random() >= config.no_signal_fraction)
        icuww = bool(rng.random() < config.icuww_case_fraction)
        lead = float(rng.uniform(*config.deterioration_lead))
        baseline = float(rng.uniform(0.2, 2.0))
        _, target = add("general", baseline + lead, general)
        icu_begin, icu_end = add("icu", float(rng.uniform(1, 3)))
        deceased = rng.random() < 0.12
        if not deceased:
            add("general", float(rng.uniform(0.5, 3)), general)
        if signal:
            severity.append((target - lead * DAY, target, icu_end, 1.0))
        else:
            severity.append((target - 2 * HOUR, target, icu_end, 1.0))
        if icuww:
            lo = max(admit + HOUR, target - 0.6 * lead * DAY)
            hit_ts = _minute(rng.uniform(lo, target - HOUR))
            if hit_ts >= target:
                hit_ts = target - 3600
        disposition = "deceased" if deceased else ("home" if rng.random() < 0.85 else "transfer")
    elif category == "direct_icu":
        b, e = add("icu", float(rng.uniform(1, 2.5)))
        severity.append((admit, admit, e, 0.8))
        add("general", float(rng.uniform(0.5, 3)), general)
        disposition = "home"
    elif category in ("surgical", "surgical_icu"):
        add("general", float(rng.uniform(0.2, 1.0)), WARDS["general"][2])
        _, or_end = add("operating_room", float(rng.uniform(2, 4)) / 24)
        add("recovery", float(rng.uniform(2, 5)) / 24)
        surgical_after = or_end
        if category == "surgical_icu":
            add("icu", float(rng.uniform(1, 2)))
        add("general", float(rng.uniform(0.5, 3)), WARDS["general"][2])
        disposition = "home" if rng.random() < 0.9 else "transfer"
    elif category == "neonatal":
        add("general", float(rng.uniform(1, 3)), WARDS["nursery"][0])
        if rng.random() < 0.5:
            add("neonatal_icu", float(rng.uniform(1, 3)))
            add("general", float(rng.uniform(0.5, 2)), WARDS["nursery"][0])
        disposition = "home"
    else:
        los = float(np.clip(rng.lognormal(math.log(config.los_median_days), 0.6), 0.3, 20))
        if rng.random() < 0.2:
            cut = float(rng.uniform(0.2, 0.8))
            add("general", los * cut, general)
            add("general", los * (1 - cut), WARDS["general"][(WARDS["general"].index(general) + 1) % 2])
        else:
            add("general", los, general)
        u = rng.random()
        disposition = "home" if u < 0.85 else "transfer" if u < 0.93 else "deceased" if u < 0.95 else "other"

    discharge = segs[-1][3]
    if category != "case" or not signal:
        if rng.random() < config.transient_rate:
            b = float(rng.uniform(admit, discharge))
            width = float(rng.uniform(6, 24)) * HOUR
            severity.append((b, b + width / 2, b + width, float(rng.uniform(0.2, 0.6))))
    if category != "case" and category != "neonatal" and rng.random() < config.icuww_control_rate:
        hit_ts = _minute(rng.uniform(admit + HOUR, max(admit + 2 * HOUR, discharge - HOUR)))
    truth = SynthTruth(category, category == "case", target, signal, icuww, lead)
    return _Plan(idx, aid, pid, facility, z, age, gender, admit, discharge, disposition,
                 [tuple(s) for s in segs], truth, severity, hit_ts, surgical_after)


def _severity(plan: _Plan, t: np.ndarray) -> np.ndarray:
    """Deterioration severity in [0, 1] at times t (piecewise linear episodes)."""
    s = np.zeros(len(t))
    for begin, peak, end, amp in plan.severity:
        rise = np.where(peak > begin, (t - begin) / max(peak - begin, 1), 1.0)
        fall = 1 - (t - peak) / max(end - peak, 1)
        val = np.where(t < peak, rise, fall)
        val = np.where((t >= begin) & (t <= end), np.clip(val, 0, 1), 0)
        s = np.maximum(s, amp * val)
    return s


def _severity_at(plan: _Plan, t: float) -> float:
    s = 0.0
    for begin, peak, end, amp in plan.severity:
        if begin <= t <= end:
            if t < peak:
                val = (t - begin) / max(peak - begin, 1)
            else:
                val = 1 - (t - peak) / max(end - peak, 1)
            s = max(s, amp * min(max(val, 0.0), 1.0))
    return s


def _ward_type_at(plan: _Plan, t: float) -> str:
    for _, wtype, b, e in plan.segments:
        if b <= t < e:
            return wtype
    return plan.segments[-1][1]


def _content(config: SynthConfig, plan: _Plan, seed: int) -> dict[str, list]:
    rng = np.random.default_rng([seed, 2, plan.index])
    admit, disch = plan.admit_ts, plan.discharge_ts
    ev = {"kind": [], "code": [], "value": [], "unit": [], "ts": []}

    def emit(kind, code, values, unit, ts):
        n = len(ts)
        if n == 0:
            return
        ev["kind"].append(object_full(n, kind))
        ev["code"].append(object_full(n, code) if isinstance(code, str)
                          else np.asarray(code, dtype=object))
        ev["value"].append(np.asarray(values, dtype=float))
        ev["unit"].append(object_full(n, unit) if isinstance(unit, str)
                          else np.asarray(unit, dtype=object))
        ev["ts"].append(np.asarray(ts, dtype=np.int64))

    # vitals ------------------------------------------------------------------
    lo, hi = config.vitals_cadence
    base_gap = float(rng.uniform(lo + 0.5 * (hi - lo), hi))
    times = []
    t = admit + float(rng.uniform(0.1, 1.0)) * HOUR
    while t < disch:
        times.append(_minute(t))
        sev = _severity_at(plan, t)
        if _ward_type_at(plan, t) in ("icu", "neonatal_icu"):
            gap = lo
        else:
            gap = base_gap * (1 - 0.7 * sev) * float(rng.uniform(0.9, 1.1))
        t += float(np.clip(gap, lo, hi)) * HOUR
    vt = np.array(sorted(set(x for x in times if admit <= x <= disch)), dtype=np.int64)
    if len(vt):
        sev = _severity(plan, vt.astype(float))
        for name, (mu, between, meas, shift, dec, vlo, vhi) in codes_vital_items():
            if name == "glucose":
                take = rng.random(len(vt)) < 0.4
            else:
                take = np.ones(len(vt), dtype=bool)
            base = mu + between * (plan.frailty * 0.3 + rng.normal())
            vals = base + shift * sev + rng.normal(0, meas, len(vt))
            vals = np.round(np.clip(vals, vlo, vhi), dec)
            emit("vital", name, vals[take], VITAL_UNITS[name], vt[take])
        bmi = round(float(np.clip(rng.normal(27 + 1.5 * plan.frailty, 4.5), 14, 60)), 1)
        emit("vital", "bmi", [bmi], "kg/m2", vt[:1])

    # fluids + scheduled meds -------------------------------------------------
    flo, fhi = config.fluids_per_day
    per_day = int(rng.integers(flo, fhi + 1))
    step = DAY / per_day
    ft = []
    k = 0
    while True:
        t = admit + (k + float(rng.uniform(0.2, 0.8))) * step
        if t >= disch:
            break
        ft.append(_minute(t))
        k += 1
    ft = np.array([x for x in ft if x <= disch], dtype=np.int64)
    if len(ft):
        sev = _severity(plan, ft.astype(float))
        n = len(ft)
        scale = step / (8 * HOUR)
        oral = np.round(np.clip(rng.normal(350, 120, n) * (1 - 0.5 * sev), 0, None) * scale)
        iv = np.round(np.clip(rng.normal(400, 150, n) * (1 + 0.4 * sev), 0, None) * scale)
        urine = np.round(np.clip(rng.normal(450, 130, n) * (1 - 0.65 * sev), 0, None) * scale)
        drain = np.zeros(n)
        has_drain = np.zeros(n, dtype=bool)
        if plan.surgical_after is not None:
            has_drain = ft >= plan.surgical_after
            drain = np.where(has_drain, np.round(np.clip(rng.normal(60, 30, n), 0, None)), 0)
        balance = oral + iv - urine - drain
        emit("fluid", "9000-1", oral, "mL", ft)
        emit("fluid", "8975-5", iv, "mL", ft)
        emit("fluid", "9187-6", urine, "mL", ft)
        emit("fluid", "9210-6", drain[has_drain], "mL", ft[has_drain])
        emit("fluid", "9252-8", balance, "mL", ft)
        n_meds = int(rng.integers(2, 6))
        regimen = rng.choice(len(codes.MEDS), size=n_meds, replace=False)
        for m in sorted(regimen):
            given = rng.random(n) < 0.6
            emit("med_admin", codes.MEDS[m], np.full(int(given.sum()), np.nan), "", ft[given])
        for code in codes.MEDS_DETERIORATION:
            given = rng.random(n) < 0.8 * sev
            emit("med_admin", code, np.full(int(given.sum()), np.nan), "", ft[given])

    # labs ----------------------------------------------------------------------
    draws = [admit + float(rng.uniform(0.3, 2.0)) * HOUR]
    day0 = admit - admit % DAY
    d = day0 + DAY
    while d < disch:
        draws.append(d + float(rng.uniform(5, 8)) * HOUR)
        d += DAY
    if plan.truth.signal:
        begin = plan.truth.target_ts - plan.truth.lead_days * DAY
        n_stat = int(rng.poisson(0.8 * plan.truth.lead_days))
        draws.extend(rng.uniform(begin, plan.truth.target_ts, n_stat).tolist())
    draw_ts = sorted(set(_minute(x) for x in draws if admit <= x <= disch))
    platelet_unit = "10*3/uL" if plan.facility == "H2" else "/uL"
    rows = []  # (ts, loinc, value)
    first = True
    for ts in draw_ts:
        sev = _severity_at(plan, ts)
        for panel, prob in config.lab_panel_prob.items():
            p = min(0.98, 0.95 if first and panel in ("bmp", "cbc") else prob)
            if panel in SIGNAL_PANELS:
                p = min(0.95, p + 0.6 * sev)
            if rng.random() < p:
                for loinc in PANELS[panel]:
                    mu, sd, shift, dec, vlo, vhi = LAB_MODEL[loinc]
                    v = mu + shift * sev * float(rng.uniform(0.6, 1.2)) + sd * float(rng.normal())
                    rows.append((ts, loinc, round(min(max(v, vlo), vhi), dec)))
        first = False
    if plan.icuww_hit_ts is not None:
        loinc, vlo, vhi, dec = ICUWW_HITS[int(rng.integers(len(ICUWW_HITS)))]
        rows.append((plan.icuww_hit_ts, loinc, round(float(rng.uniform(vlo, vhi)), dec)))
    rows.sort(key=lambda r: (r[0], r[1]))
    seen = {}
    for ts, loinc, v in rows:
        seen[(ts, loinc)] = v   # later draw wins (the benchmark hit overrides a panel value)
    if seen:
        keys = sorted(seen)
        lab_ts = [k[0] for k in keys]
        lab_code = [k[1] for k in keys]
        lab_val = [seen[k] * (1000 if k[1] == "777-3" and platelet_unit == "/uL" else 1)
                   for k in keys]
        lab_unit = [platelet_unit if c == "777-3" else codes.LABS[c][1] for c in lab_code]
        emit("lab", lab_code, lab_val, lab_unit, lab_ts)

    # diagnoses (known after discharge) and home medication ---------------------
    n_dx = int(rng.poisson(0.4 + 0.9 * math.exp(0.6 * plan.frailty)))
    diagnoses = []
    pool = _dx_pool()
    for rank in range(1, n_dx + 1):
        stem = pool[int(rng.integers(len(pool)))]
        code = stem + str(int(rng.integers(10))) if len(stem) == 3 else stem
        diagnoses.append((code, rank))
    n_home = int(rng.integers(0, 5))
    home = [codes.MEDS[i] for i in sorted(rng.choice(len(codes.MEDS), n_home, replace=False))]
    return {"events": ev, "diagnoses": diagnoses, "meds": home}


VITAL_UNITS = {"hr": "/min", "rr": "/min", "spo2": "%", "sbp": "mm[Hg]", "dbp": "mm[Hg]",
               "temp": "Cel", "glucose": "mg/dL", "bmi": "kg/m2"}


def codes_vital_items():
    return VITAL_MODEL.items()


_DX_POOL: list[str] | None = None


def _dx_pool() -> list[str]:
    global _DX_POOL
    if _DX_POOL is None:
        stems = set()
        for table in (charlson_table(), elixhauser_vw_table()):
            for pfx in table.prefixes.values():
                stems.update(pfx)
        # plus codes that map to no category
        stems.update(["J18", "N39", "R07", "K35", "S72", "A41", "I80", "L03"])
        _DX_POOL = sorted(stems)
    return _DX_POOL


def generate_with_truth(config: SynthConfig) -> tuple[Dataset, dict[str, SynthTruth]]:
    if config.prevalence * config.n_admissions < 1:
        raise ValueError("no cases generated: prevalence x n_admissions < 1")
    plans = _plan(config)
    adm_rows, tr_rows, dx_rows, med_rows = [], [], [], []
    ev_parts = {k: [] for k in ("admission_id", "kind", "code", "value", "unit", "ts")}
    for p in plans:
        adm_rows.append((p.admission_id, p.patient_id, p.facility, p.admit_ts, p.discharge_ts,
                         p.disposition, p.age, p.gender))
        for name, wtype, b, e in p.segments:
            tr_rows.append((p.admission_id, name, wtype, b, e))
        content = _content(config, p, config.seed)
        ev = content["events"]
        for key in ("kind", "code", "value", "unit", "ts"):
            ev_parts[key].extend(ev[key])
        n = sum(len(x) for x in ev["ts"])
        ev_parts["admission_id"].append(object_full(n, p.admission_id))
        dx_rows.extend((p.admission_id, c, r) for c, r in content["diagnoses"])
        med_rows.extend((p.admission_id, c) for c in content["meds"])
    frames = {
        "admissions": pd.DataFrame(adm_rows, columns=["admission_id", "patient_id", "facility_cd",
                                                      "admit_ts", "discharge_ts", "disposition",
                                                      "age", "gender"]),
        "transfers": pd.DataFrame(tr_rows, columns=["admission_id", "ward_name", "ward_type",
                                                    "in_ts", "out_ts"]),
        "events": pd.DataFrame({
            "admission_id": np.concatenate(ev_parts["admission_id"]),
            "kind": np.concatenate(ev_parts["kind"]),
            "code": np.concatenate(ev_parts["code"]),
            "value_text": np.concatenate(ev_parts["value"]),
            "unit": np.concatenate(ev_parts["unit"]),
            "ts": np.concatenate(ev_parts["ts"]).astype(np.int64),
        }),
        "diagnoses": pd.DataFrame(dx_rows, columns=["admission_id", "icd10_code", "rank"]),
        "meds": pd.DataFrame(med_rows, columns=["admission_id", "atc_code"]),
    }
    del ev_parts
    for t in ("admissions",):
        frames[t]["admit_ts"] = frames[t]["admit_ts"].astype(np.int64)
        frames[t]["discharge_ts"] = frames[t]["discharge_ts"].astype(np.int64)
    frames["transfers"]["in_ts"] = frames["transfers"]["in_ts"].astype(np.int64)
    frames["transfers"]["out_ts"] = frames["transfers"]["out_ts"].astype(np.int64)
    ds = from_frames(frames)
    truth = {p.admission_id: p.truth for p in plans}
    return ds, truth


def generate(config: SynthConfig) -> Dataset:
    """Generate a synthetic dataset; deterministic for a fixed config."""
    return generate_with_truth(config)[0]


@dataclass
class SummaryStats:
    n_admissions: int
    n_cases: int
    n_controls: int
    n_excluded: int
    prevalence: float
    events_per_kind: dict[str, int]
    vitals_gap_hours_median: float
    vitals_gap_histogram: dict[str, int]
    per_facility: pd.DataFrame

    def to_text(self) -> str:
        lines = [f"admissions: {self.n_admissions}",
                 f"cases: {self.n_cases}  controls: {self.n_controls}  excluded: {self.n_excluded}",
                 f"prevalence: {self.prevalence:.4f}"]
        lines += [f"events[{k}]: {v}" for k, v in self.events_per_kind.items()]
        lines.append(f"vitals inter-arrival median (h): {self.vitals_gap_hours_median:.2f}")
        lines += [f"vitals gap {k}h: {v}" for k, v in self.vitals_gap_histogram.items()]
        lines.append(self.per_facility.to_string(index=False))
        return "\n".join(lines)


def describe(dataset: Dataset) -> SummaryStats:
    from .cohort import label_admissions

    if not len(dataset):
        raise ValueError("empty dataset")
    labels = label_admissions(dataset)
    n_case = sum(lb.is_case for lb in labels)
    n_excl = sum(lb.excluded for lb in labels)
    n_ctrl = len(labels) - n_case - n_excl
    counts = {k: 0 for k in ("vital", "lab", "fluid", "med_admin")}
    gaps = []
    for a in dataset:
        kinds, c = np.unique(a.events.kind.astype(str), return_counts=True)
        for k, n in zip(kinds, c):
            counts[k] = counts.get(k, 0) + int(n)
        vt = np.unique(a.events.ts[a.events.kind == "vital"])
        if len(vt) > 1:
            gaps.append(np.diff(vt) / HOUR)
    gaps = np.concatenate(gaps) if gaps else np.empty(0)
    edges = [0, 1, 2, 3, 4, 6, 12, np.inf]
    hist, _ = np.histogram(gaps, bins=edges)
    labels_by_id = {lb.admission_id: lb for lb in labels}
    fac = pd.DataFrame([(a.facility_cd, labels_by_id[a.admission_id].is_case) for a in dataset],
                       columns=["facility_cd", "is_case"])
    per_fac = fac.groupby("facility_cd").agg(admissions=("is_case", "size"),
                                             cases=("is_case", "sum")).reset_index()
    return SummaryStats(
        n_admissions=len(dataset), n_cases=n_case, n_controls=n_ctrl, n_excluded=n_excl,
        prevalence=n_case / (n_case + n_ctrl) if n_case + n_ctrl else 0.0,
        events_per_kind=counts,
        vitals_gap_hours_median=float(np.median(gaps)) if len(gaps) else float("nan"),
        vitals_gap_histogram={f"{lo}-{hi}": int(h) for lo, hi, h in zip(edges, edges[1:], hist)},
        per_facility=per_fac,
    )
