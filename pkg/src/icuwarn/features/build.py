"""Per-category feature tables and the merged feature matrix.

Features are computed per admission, vectorised over that admission's
scoring instants. Every value at instant t uses only events with ts <= t,
the admission's static record and prior admissions, so scoring a prefix of
an admission's events reproduces the same row (see `service`).
"""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .. import codes
from ..cohort import CohortLabel, label_admission
from ..emr import DISPOSITIONS, GENDERS, Admission, Dataset, atc_truncate
from ..featspec import bundled_spec
from ..featspec.relational import RelTable
from .comorbidity import charlson, elixhauser_vw
from .windows import DAY, MONTH_DAYS, past_year_diagnoses, sql_round

log = logging.getLogger(__name__)

KEY = ("admission_id", "ts")
META_COLUMNS = ("facility_cd", "patient_id", "admission_id", "ts", "rand", "admit_ts",
                "target_ts", "is_direct_icu_admission")
GENDER_CODES = {g: i for i, g in enumerate(GENDERS)}
DISPOSITION_CODES = {d: i for i, d in enumerate(DISPOSITIONS)}


@dataclass(frozen=True)
class FeatureConfig:
    lab_codes: tuple[str, ...]
    wards: tuple[str, ...] = ()
    vitals: tuple[str, ...] = codes.VITALS
    fluids: tuple[str, ...] = tuple(codes.FLUIDS)
    fluid_trends: tuple[str, ...] = codes.FLUID_TRENDS
    day_windows: tuple[int, ...] = (1, 3, 5, 7)
    week_windows: tuple[int, ...] = (1, 2, 3, 4)
    month_windows: tuple[int, ...] = (1, 6, 12)
    trend_days: tuple[int, ...] = (1, 3)
    lab_trend_days: int = 7

    @classmethod
    def from_dataset(cls, dataset: Dataset | Iterable[Admission]) -> "FeatureConfig":
        """Lab universe and ward dictionary from the (training) admissions."""
        labs, wards = set(), set()
        for a in dataset:
            ev = a.events
            labs.update(ev.code[ev.kind == "lab"].tolist())
            wards.update(t.ward_name for t in a.transfers)
        return cls(lab_codes=tuple(sorted(labs, key=_loinc_key)), wards=tuple(sorted(wards)))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _loinc_key(code: str):
    num, _, check = code.partition("-")
    return (int(num) if num.isdigit() else 0, code)


@dataclass(frozen=True)
class TableDef:
    name: str
    key: tuple[str, ...]
    columns: tuple[str, ...]
    suffix: str = ""
    sparse: bool = False       # rows whose values are all missing are not stored


def feature_tables(cfg: FeatureConfig) -> list[TableDef]:
    """Per-category tables in merge order (after the bookkeeping tables)."""
    v = cfg.vitals
    fl = tuple(codes.fluid_column(c) for c in cfg.fluids)
    lab = tuple(codes.lab_column(c) for c in cfg.lab_codes)
    out = [
        TableDef("patient_demographics_features", KEY, ("gender", "admission_age")),
        TableDef("vital_signs_min1day", KEY, v, "_min_1day", True),
        TableDef("vital_signs_max1day", KEY, v, "_max_1day", True),
        TableDef("vital_signs_last", KEY, v, "_last", True),
    ]
    out += [TableDef(f"vital_signs_count{y}day", KEY, v, f"_count_{y}day") for y in cfg.day_windows]
    out += [TableDef(f"vital_signs_avg{y}day", KEY, v, f"_avg_{y}day", True) for y in cfg.day_windows]
    out.append(TableDef("fluid_last", KEY, fl, "_last", True))
    out += [TableDef(f"fluid_count{y}day", KEY, fl, f"_count_{y}day") for y in cfg.day_windows]
    out += [TableDef(f"fluid_avg{y}day", KEY, fl, f"_avg_{y}day", True) for y in cfg.day_windows]
    out.append(TableDef("fluid_trend", KEY, tuple(
        f"{codes.fluid_column(c)}_trend_{d}day" for c in cfg.fluid_trends for d in cfg.trend_days),
        "", True))
    out.append(TableDef("lab_last", KEY, lab, "_last", True))
    out.append(TableDef("lab_count_adm", KEY, lab, "_count_adm"))
    out += [TableDef(f"lab_count{y}day", KEY, lab, f"_count_{y}day") for y in cfg.day_windows]
    for stat in ("avg", "min", "max"):
        out += [TableDef(f"lab_{stat}{z}wk", KEY, lab, f"_{stat}_{z}wk", True)
                for z in cfg.week_windows]
    out.append(TableDef("usage_features", KEY, (
        "n_prev_adm", *(f"n_adm_{m}mo" for m in cfg.month_windows), "prev_los_days",
        "days_since_last_discharge", f"lab_count_trend_{cfg.lab_trend_days}day")))
    out.append(TableDef("transfer_features", KEY, ("ward_at_admission", "current_ward")))
    out.append(TableDef("comorbidity", ("admission_id",), ("charlson", "elixhauser_vw")))
    out.append(TableDef("meds", KEY, (*(f"med_count_{y}day" for y in cfg.day_windows),
                                      *(f"med_distinct_atc4_{y}day" for y in cfg.day_windows))))
    return out


def _out_names(td: TableDef) -> list[str]:
    if td.name == "patient_demographics_features":
        return ["gender", "age"]
    return [c + td.suffix for c in td.columns]


def feature_names(cfg: FeatureConfig) -> tuple[str, ...]:
    """Model inputs, in matrix column order."""
    names = ["prev_discharge_disposition"]
    tables = feature_tables(cfg)
    names += _out_names(tables[0]) + ["days_since_adm"]
    for td in tables[1:]:
        names += _out_names(td)
    return tuple(names)


BOOKKEEPING_COLUMNS = {
    "patient_master": (KEY, ("admission_id", "ts", "facility_cd", "patient_id", "label")),
    "target_adm": (("admission_id",), ("admission_id", "rand")),
    "adm": (("admission_id",), ("admission_id", "admit_ts", "target_ts", "is_direct_icu_admission",
                                "prev_admission_id", "discharge_disposition")),
}


def catalog(cfg: FeatureConfig) -> dict[str, list[str]]:
    """Table -> column names of everything build_matrix emits, without building it."""
    out = {name: list(cols) for name, (_, cols) in BOOKKEEPING_COLUMNS.items()}
    for td in feature_tables(cfg):
        out[td.name] = [*td.key, *td.columns]
    return out


def default_spec(cfg: FeatureConfig) -> str:
    """Spec text merging every per-category table (extends the bundled listing)."""
    text = bundled_spec("listing1").rstrip("\n") + "\n"
    tables = feature_tables(cfg)
    for i, td in enumerate(tables[3:], start=8):
        cond = ("t1.admission_id = admission_id" if td.key == ("admission_id",)
                else "t1.admission_id = admission_id, t1.ts = ts")
        sel = f"* suffix {td.suffix}" if td.suffix else "*"
        text += f"table {td.name} alias t{i} join ({cond}) {{ {sel} }}\n"
    return text


# -- matrix ------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    facility_cd: np.ndarray
    patient_id: np.ndarray
    admission_id: np.ndarray
    ts: np.ndarray
    label: np.ndarray
    meta: dict[str, np.ndarray]
    X: np.ndarray
    feature_names: tuple[str, ...]
    config: FeatureConfig | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def columns(self) -> list[str]:
        return ["facility_cd", "patient_id", "admission_id", "ts", "rand", "admit_ts",
                "target_ts", "is_direct_icu_admission", *self.feature_names]

    def column(self, name: str) -> np.ndarray:
        if name in ("facility_cd", "patient_id", "admission_id", "ts"):
            return getattr(self, name)
        if name in self.meta:
            return self.meta[name]
        return self.X[:, self.feature_names.index(name)]

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        if rows.dtype == bool and len(rows) == len(self) and rows.all():
            return self   # immutable in practice; skip the copy of X
        return FeatureMatrix(self.facility_cd[rows], self.patient_id[rows], self.admission_id[rows],
                             self.ts[rows], self.label[rows],
                             {k: v[rows] for k, v in self.meta.items()}, self.X[rows],
                             self.feature_names, self.config)

    def for_admissions(self, ids: Iterable[str]) -> "FeatureMatrix":
        return self.take(np.isin(self.admission_id, np.asarray(sorted(set(ids)), dtype=object)))

    def to_frame(self) -> pd.DataFrame:
        cols = {c: self.column(c) for c in self.columns[:8]}
        df = pd.DataFrame(cols)
        feats = pd.DataFrame(self.X, columns=list(self.feature_names))
        return pd.concat([df, feats], axis=1).assign(label=self.label)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, config: FeatureConfig | None = None) -> "FeatureMatrix":
        names = tuple(c for c in df.columns if c not in META_COLUMNS and c != "label")
        obj = {c: df[c].astype(str).to_numpy(dtype=object)
               for c in ("facility_cd", "patient_id", "admission_id")}
        return cls(obj["facility_cd"], obj["patient_id"], obj["admission_id"],
                   df["ts"].to_numpy(dtype=np.int64), df["label"].to_numpy(dtype=np.int8),
                   {c: df[c].to_numpy(dtype=float) for c in ("rand", "admit_ts", "target_ts",
                                                             "is_direct_icu_admission")},
                   df[list(names)].to_numpy(dtype=float), names, config)

    def save(self, path) -> None:
        """Write to a compressed .npz (object columns stored as str)."""
        arrays = {"facility_cd": self.facility_cd.astype(str),
                  "patient_id": self.patient_id.astype(str),
                  "admission_id": self.admission_id.astype(str), "ts": self.ts,
                  "label": self.label, "X": self.X,
                  "feature_names": np.asarray(self.feature_names, dtype=str),
                  "config": np.asarray(json.dumps(self.config.to_dict() if self.config else None,
                                                  sort_keys=True))}
        arrays.update({f"meta_{k}": v for k, v in self.meta.items()})
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **arrays)

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        with np.load(path, allow_pickle=False) as z:
            cfg = json.loads(str(z["config"]))
            meta = {k[5:]: z[k] for k in z.files if k.startswith("meta_")}
            return cls(z["facility_cd"].astype(object), z["patient_id"].astype(object),
                       z["admission_id"].astype(object), z["ts"], z["label"], meta, z["X"],
                       tuple(z["feature_names"].tolist()),
                       FeatureConfig.from_dict(cfg) if cfg else None)


def admission_rand(admission_id: str) -> float:
    """Stable per-admission uniform variate (carried as `rand`)."""
    return float(np.random.default_rng(zlib.crc32(admission_id.encode())).random())


# -- per-admission computation ------------------------------------------------

class _Series:
    """Time-sorted (ts, value) of one code within an admission."""

    __slots__ = ("ts", "value", "_csum")

    def __init__(self, ts: np.ndarray, value: np.ndarray):
        self.ts = ts
        self.value = value
        self._csum = None

    @property
    def csum(self) -> np.ndarray:
        if self._csum is None:
            self._csum = np.concatenate([[0.0], np.cumsum(self.value)])
        return self._csum


def _group(events, kind: str) -> dict[str, _Series]:
    m = events.kind == kind
    if not m.any():
        return {}
    code, ts, val = events.code[m], events.ts[m], events.value[m]
    out = {}
    for c in np.unique(code):
        sel = code == c
        out[c] = _Series(ts[sel], val[sel])
    return out


def _windows(s: _Series, T: np.ndarray, widths: Sequence[int], stats: Sequence[str]
             ) -> dict[str, np.ndarray]:
    """Window statistics over (t - w, t] for every width at once: (len(widths), m) arrays."""
    m = len(T)
    hi = np.searchsorted(s.ts, T, side="right")
    W = np.asarray(widths, dtype=np.int64)
    lo = np.searchsorted(s.ts, (T[None, :] - W[:, None]).ravel(), side="right").reshape(len(W), m)
    his = np.broadcast_to(hi, lo.shape)
    n = his - lo
    out = {"count": n.astype(float)}
    empty = n == 0
    if "avg" in stats:
        with np.errstate(invalid="ignore", divide="ignore"):
            avg = (s.csum[his] - s.csum[lo]) / n
        avg[empty] = np.nan
        out["avg"] = avg
    if "min" in stats or "max" in stats:
        padded = np.append(s.value, np.nan)
        idx = np.stack([lo, his], axis=-1).ravel()
        for stat, uf in (("min", np.minimum), ("max", np.maximum)):
            if stat in stats:
                red = uf.reduceat(padded, idx)[::2].reshape(lo.shape)
                red[empty] = np.nan
                out[stat] = red
    return out


def _last(s: _Series, T: np.ndarray) -> np.ndarray:
    hi = np.searchsorted(s.ts, T, side="right")
    return np.where(hi > 0, s.value[np.maximum(hi - 1, 0)], np.nan)


def _bounds(s: _Series, T: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    return (np.searchsorted(s.ts, T - width, side="right"),
            np.searchsorted(s.ts, T, side="right"))


def _trend(s: _Series | None, T: np.ndarray, width: int) -> np.ndarray:
    """OLS slope per day over (t - width, t]; NaN below two distinct times."""
    m = len(T)
    if s is None:
        return np.full(m, np.nan)
    lo, hi = _bounds(s, T, width)
    n = hi - lo
    total = int(n.sum())
    if total == 0:
        return np.full(m, np.nan)
    grp = np.repeat(np.arange(m), n)
    start = np.repeat(lo - np.concatenate([[0], np.cumsum(n)[:-1]]), n)
    idx = start + np.arange(total)
    x = (s.ts[idx] - T[grp]) / DAY
    y = s.value[idx]
    cnt = np.maximum(n, 1)
    xm = np.bincount(grp, x, m) / cnt
    ym = np.bincount(grp, y, m) / cnt
    dx = x - xm[grp]
    sxx = np.bincount(grp, dx * dx, m)
    sxy = np.bincount(grp, dx * (y - ym[grp]), m)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sxy / sxx
    return np.where((n >= 2) & (sxx > 0), out, np.nan)


def _lab_count_trend(lab_ts: np.ndarray, T: np.ndarray, days: int) -> np.ndarray:
    lab_ts = np.sort(lab_ts)
    x = -np.arange(days, dtype=float)
    dx = x - x.mean()
    counts = np.empty((len(T), days))
    for k in range(days):
        counts[:, k] = (np.searchsorted(lab_ts, T - k * DAY, side="right")
                        - np.searchsorted(lab_ts, T - (k + 1) * DAY, side="right"))
    # explicit per-day accumulation: BLAS reductions may reorder sums with the
    # batch size, which would break online/offline parity
    ym = counts.sum(axis=1) / days
    acc = np.zeros(len(T))
    for k in range(days):
        acc += (counts[:, k] - ym) * dx[k]
    return acc / float(np.sum(dx * dx))


def _safe_atc4(code: str) -> str | None:
    try:
        return atc_truncate(code)
    except ValueError:
        return None


@dataclass(frozen=True)
class AdmissionContext:
    """Static per-admission inputs: the record, its label, and prior history."""

    admission: Admission
    history: tuple[Admission, ...]
    is_direct_icu: bool = False
    target_ts: int | None = None


def admission_blocks(ctx: AdmissionContext, T: np.ndarray,
                     cfg: FeatureConfig) -> dict[str, np.ndarray]:
    """Every per-category table block (m x k) for the admission at instants T."""
    adm = ctx.admission
    T = np.asarray(T, dtype=np.int64)
    m = len(T)
    ev = adm.events
    vit = _group(ev, "vital")
    flu = _group(ev, "fluid")
    lab = _group(ev, "lab")
    out: dict[str, np.ndarray] = {}

    def stack(cols):
        return np.column_stack(cols) if cols else np.empty((m, 0))

    def alloc(name, k, fill):
        out[name] = np.full((m, k), fill)
        return out[name]

    out["patient_demographics_features"] = stack([
        np.full(m, float(GENDER_CODES.get(adm.gender, GENDER_CODES["U"]))),
        np.full(m, float(adm.age))])

    days = [y * DAY for y in cfg.day_windows]
    weeks = [7 * z * DAY for z in cfg.week_windows]
    nd, nw = len(days), len(weeks)

    # vitals
    k = len(cfg.vitals)
    vmin, vmax, vlast = (alloc(n, k, np.nan) for n in
                         ("vital_signs_min1day", "vital_signs_max1day", "vital_signs_last"))
    vcount = [alloc(f"vital_signs_count{y}day", k, 0.0) for y in cfg.day_windows]
    vavg = [alloc(f"vital_signs_avg{y}day", k, np.nan) for y in cfg.day_windows]
    for j, name in enumerate(cfg.vitals):
        ser = vit.get(name)
        if ser is None:
            continue
        vlast[:, j] = _last(ser, T)
        r = _windows(ser, T, [DAY] + days, ("avg", "min", "max"))
        vmin[:, j] = r["min"][0]
        vmax[:, j] = r["max"][0]
        for i in range(nd):
            vcount[i][:, j] = r["count"][i + 1]
            vavg[i][:, j] = r["avg"][i + 1]

    # fluids
    k = len(cfg.fluids)
    flast = alloc("fluid_last", k, np.nan)
    fcount = [alloc(f"fluid_count{y}day", k, 0.0) for y in cfg.day_windows]
    favg = [alloc(f"fluid_avg{y}day", k, np.nan) for y in cfg.day_windows]
    for j, c in enumerate(cfg.fluids):
        ser = flu.get(c)
        if ser is None:
            continue
        flast[:, j] = _last(ser, T)
        r = _windows(ser, T, days, ("avg",))
        for i in range(nd):
            fcount[i][:, j] = r["count"][i]
            favg[i][:, j] = r["avg"][i]
    out["fluid_trend"] = stack([_trend(flu.get(c), T, d * DAY)
                                for c in cfg.fluid_trends for d in cfg.trend_days])

    # labs
    k = len(cfg.lab_codes)
    llast = alloc("lab_last", k, np.nan)
    ladm = alloc("lab_count_adm", k, 0.0)
    lcount = [alloc(f"lab_count{y}day", k, 0.0) for y in cfg.day_windows]
    lstat = {stat: [alloc(f"lab_{stat}{z}wk", k, np.nan) for z in cfg.week_windows]
             for stat in ("avg", "min", "max")}
    # count since admission: window (admit - 1s, t]
    since_admit = T - adm.admit_ts + 1
    for j, c in enumerate(cfg.lab_codes):
        ser = lab.get(c)
        if ser is None:
            continue
        llast[:, j] = _last(ser, T)
        ladm[:, j] = (np.searchsorted(ser.ts, T, side="right")
                      - np.searchsorted(ser.ts, T - since_admit, side="right"))
        r = _windows(ser, T, days, ())
        for i in range(nd):
            lcount[i][:, j] = r["count"][i]
        r = _windows(ser, T, weeks, ("avg", "min", "max"))
        for stat, arrs in lstat.items():
            for i in range(nw):
                arrs[i][:, j] = r[stat][i]

    # usage: prior admissions relative to this admission's start
    prior = sorted((a for a in ctx.history if a.discharge_ts <= adm.admit_ts),
                   key=lambda a: (a.discharge_ts, a.admission_id))
    usage = [float(len(prior))]
    for months in cfg.month_windows:
        lo = adm.admit_ts - MONTH_DAYS[months] * DAY
        usage.append(float(sum(lo < a.discharge_ts for a in prior)))
    if prior:
        usage += [(prior[-1].discharge_ts - prior[-1].admit_ts) / DAY,
                  (adm.admit_ts - prior[-1].discharge_ts) / DAY]
    else:
        usage += [np.nan, np.nan]
    lab_ts = ev.ts[ev.kind == "lab"]
    out["usage_features"] = stack([np.full(m, u) for u in usage]
                                  + [_lab_count_trend(lab_ts, T, cfg.lab_trend_days)])

    ward_code = {w: float(i) for i, w in enumerate(cfg.wards)}
    segs = sorted(adm.transfers, key=lambda r: r.in_ts)
    if segs:
        first = ward_code.get(segs[0].ward_name, np.nan)
        starts = np.array([r.in_ts for r in segs], dtype=np.int64)
        names = np.array([ward_code.get(r.ward_name, np.nan) for r in segs] + [np.nan])
        pos = np.searchsorted(starts, T, side="right") - 1
        current = np.where(pos >= 0, names[np.where(pos >= 0, pos, -1)], np.nan)
    else:
        first, current = np.nan, np.full(m, np.nan)
    out["transfer_features"] = stack([np.full(m, first), current])

    dx = past_year_diagnoses(prior, adm.admit_ts)
    out["comorbidity"] = np.array([[float(charlson(dx)), float(elixhauser_vw(dx))]])

    med_mask = ev.kind == "med_admin"
    med_ts, med_code = ev.ts[med_mask], ev.code[med_mask]
    atc4 = np.array([_safe_atc4(c) for c in med_code], dtype=object)
    counts, distinct = [], []
    groups = [med_ts[atc4 == c] for c in sorted({c for c in atc4 if c is not None})]
    for y in cfg.day_windows:
        lo = np.searchsorted(med_ts, T - y * DAY, side="right")
        hi = np.searchsorted(med_ts, T, side="right")
        counts.append((hi - lo).astype(float))
        present = np.zeros(m)
        for g in groups:
            present += (np.searchsorted(g, T, side="right")
                        > np.searchsorted(g, T - y * DAY, side="right"))
        distinct.append(present)
    out["meds"] = stack(counts + distinct)
    return out


def _prev_admission(ctx: AdmissionContext) -> Admission | None:
    prior = [a for a in ctx.history if a.discharge_ts <= ctx.admission.admit_ts]
    return max(prior, key=lambda a: (a.discharge_ts, a.admission_id)) if prior else None


def admission_rows(ctx: AdmissionContext, T: np.ndarray, cfg: FeatureConfig,
                   blocks: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Model-input rows (m x p) for the admission at instants T."""
    T = np.asarray(T, dtype=np.int64)
    m = len(T)
    blocks = admission_blocks(ctx, T, cfg) if blocks is None else blocks
    prev = _prev_admission(ctx)
    prev_disp = np.nan if prev is None else float(DISPOSITION_CODES[prev.discharge_disposition])
    days = sql_round((T - ctx.admission.admit_ts) / 3600.0 / 24, 1)
    tables = feature_tables(cfg)
    parts = [np.full((m, 1), prev_disp), blocks[tables[0].name], days.reshape(m, 1)]
    for td in tables[1:]:
        b = blocks[td.name]
        parts.append(np.repeat(b, m, axis=0) if len(b) == 1 and m != 1 else b)
    return np.hstack(parts)


# -- whole-dataset build ------------------------------------------------------

def contexts(dataset: Dataset, labels: Sequence[CohortLabel]) -> dict[str, AdmissionContext]:
    by_id = {lb.admission_id: lb for lb in labels}
    out = {}
    for aid, lb in by_id.items():
        adm = dataset[aid]
        out[aid] = AdmissionContext(adm, tuple(dataset.history(adm)),
                                    lb.exclusion_reason == "direct_icu_admission", lb.target_ts)
    return out


def build_matrix(dataset: Dataset, labels: Sequence[CohortLabel], instants,
                 config: FeatureConfig | None = None, with_tables: bool = True
                 ) -> tuple[FeatureMatrix, dict[str, RelTable]]:
    """One row per scoring instant, plus the per-category tables.

    `instants` is a mapping admission_id -> timestamps, or an iterable of
    ScoringInstant. Rows are ordered by (admission_id, ts).
    """
    if isinstance(instants, dict):
        inst = {a: np.unique(np.asarray(t, dtype=np.int64)) for a, t in instants.items()}
    else:
        acc: dict[str, list[int]] = {}
        for i in instants:
            acc.setdefault(i.admission_id, []).append(i.ts)
        inst = {a: np.unique(np.asarray(t, dtype=np.int64)) for a, t in acc.items()}
    label_by_id = {lb.admission_id: lb for lb in labels}
    for aid in inst:
        if aid not in dataset or aid not in label_by_id:
            raise KeyError(f"instant references unknown admission {aid}")
    cfg = config or FeatureConfig.from_dataset(dataset)
    tables_def = feature_tables(cfg)
    ids = sorted(a for a in inst if len(inst[a]))
    ctxs = contexts(dataset, [label_by_id[a] for a in ids])

    n = sum(len(inst[a]) for a in ids)
    names = feature_names(cfg)
    X = np.empty((n, len(names)))
    aid_col = np.empty(n, dtype=object)
    ts_col = np.empty(n, dtype=np.int64)
    block_parts: dict[str, list[np.ndarray]] = {td.name: [] for td in tables_def}
    r = 0
    for aid in ids:
        T = inst[aid]
        blocks = admission_blocks(ctxs[aid], T, cfg)
        X[r:r + len(T)] = admission_rows(ctxs[aid], T, cfg, blocks)
        aid_col[r:r + len(T)] = aid
        ts_col[r:r + len(T)] = T
        r += len(T)
        if with_tables:
            for td in tables_def:
                block_parts[td.name].append(blocks[td.name])

    per_adm = {a: dataset[a] for a in ids}
    counts = np.array([len(inst[a]) for a in ids], dtype=np.int64)

    def rep(values, dtype=object):
        return np.repeat(np.asarray(values, dtype=dtype), counts)

    lbs = [label_by_id[a] for a in ids]
    meta = {
        "rand": rep([admission_rand(a) for a in ids], float),
        "admit_ts": rep([per_adm[a].admit_ts for a in ids], float),
        "target_ts": rep([np.nan if lb.target_ts is None else lb.target_ts for lb in lbs], float),
        "is_direct_icu_admission": rep([float(ctxs[a].is_direct_icu) for a in ids], float),
    }
    matrix = FeatureMatrix(
        facility_cd=rep([per_adm[a].facility_cd for a in ids]),
        patient_id=rep([per_adm[a].patient_id for a in ids]),
        admission_id=aid_col, ts=ts_col,
        label=rep([int(lb.is_case) for lb in lbs], np.int8),
        meta=meta, X=X, feature_names=names, config=cfg)
    log.info("feature matrix: %d rows x %d features", n, len(names))
    if not with_tables:
        return matrix, {}
    tables = _bookkeeping_tables(dataset, ids, label_by_id, matrix)
    for td in tables_def:
        parts = block_parts.pop(td.name)
        if td.key == ("admission_id",):
            data = np.vstack(parts) if parts else np.empty((0, len(td.columns)))
            cols = {"admission_id": np.asarray(ids, dtype=object)}
        else:
            data = np.vstack(parts) if parts else np.empty((0, len(td.columns)))
            cols = {"admission_id": aid_col, "ts": ts_col}
            if td.sparse:
                keep = ~np.all(np.isnan(data), axis=1)
                data = data[keep]
                cols = {k: v[keep] for k, v in cols.items()}
        for j, c in enumerate(td.columns):
            cols[c] = data[:, j]
        tables[td.name] = RelTable(td.name, td.key, cols, check_key=False)
    return matrix, tables


def _bookkeeping_tables(dataset, ids, label_by_id, matrix) -> dict[str, RelTable]:
    pm = RelTable("patient_master", KEY, {
        "admission_id": matrix.admission_id, "ts": matrix.ts,
        "facility_cd": matrix.facility_cd, "patient_id": matrix.patient_id,
        "label": matrix.label.astype(np.int64)}, check_key=False)
    target = RelTable("target_adm", ("admission_id",), {
        "admission_id": np.asarray(ids, dtype=object),
        "rand": np.array([admission_rand(a) for a in ids])})
    # adm rows: the matrix admissions plus the admissions they follow
    rows: dict[str, tuple] = {}
    for aid in ids:
        adm = dataset[aid]
        prior = [a for a in dataset.history(adm) if a.discharge_ts <= adm.admit_ts]
        prev = max(prior, key=lambda a: (a.discharge_ts, a.admission_id)) if prior else None
        for a in ([adm] + ([prev] if prev else [])):
            if a.admission_id in rows and a is not adm:
                continue
            lb = label_by_id.get(a.admission_id) or label_admission(a)
            rows[a.admission_id] = (
                a.admission_id, a.admit_ts,
                np.nan if lb.target_ts is None else float(lb.target_ts),
                float(lb.exclusion_reason == "direct_icu_admission"),
                None if a is not adm or prev is None else prev.admission_id,
                DISPOSITION_CODES[a.discharge_disposition])
        # a prior admission may itself be a matrix admission processed later
    recs = [rows[k] for k in sorted(rows)]
    adm_tab = RelTable("adm", ("admission_id",), {
        "admission_id": np.array([r[0] for r in recs], dtype=object),
        "admit_ts": np.array([r[1] for r in recs], dtype=np.int64),
        "target_ts": np.array([r[2] for r in recs], dtype=float),
        "is_direct_icu_admission": np.array([r[3] for r in recs], dtype=float),
        "prev_admission_id": np.array([r[4] for r in recs], dtype=object),
        "discharge_disposition": np.array([r[5] for r in recs], dtype=np.int64)})
    return {"patient_master": pm, "target_adm": target, "adm": adm_tab}
