"""EMR data model, file ingestion, validation and low-level cleaning.

Events are stored column-wise per admission (`Events`) because a desk-scale
dataset easily holds millions of measurements; `ClinicalEvent` is the
record-level view used at API boundaries.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

EVENT_KINDS = ("vital", "lab", "fluid", "med_admin")
WARD_TYPES = ("general", "icu", "operating_room", "recovery", "neonatal_icu", "emergency")
DISPOSITIONS = ("home", "transfer", "deceased", "other")
GENDERS = ("F", "M", "U")

TABLE_COLUMNS = {
    "admissions": ["admission_id", "patient_id", "facility_cd", "admit_ts", "discharge_ts",
                   "disposition", "age", "gender"],
    "transfers": ["admission_id", "ward_name", "ward_type", "in_ts", "out_ts"],
    "events": ["admission_id", "kind", "code", "value_text", "unit", "ts"],
    "diagnoses": ["admission_id", "icd10_code", "rank"],
    "meds": ["admission_id", "atc_code"],
}

_LOINC_RE = re.compile(r"^\d{1,7}-\d$")
_NUMBER_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_COMPARATOR_RE = re.compile(r"^(<=|>=|<|>)\s*(.+)$")

# Analyte-specific unit conversions to the canonical unit. Keyed by (loinc, unit).
UNIT_CANON = {
    ("777-3", "10*3/uL"): ("/uL", 1000.0),
    ("777-3", "K/uL"): ("/uL", 1000.0),
    ("777-3", "10*9/L"): ("/uL", 1000.0),
    ("10839-9", "ng/mL"): ("ug/L", 1.0),
    ("10839-9", "ng/L"): ("ug/L", 0.001),
    ("2524-7", "mg/dL"): ("mmol/L", 1.0 / 9.01),
    ("2019-8", "kPa"): ("mm[Hg]", 7.50062),
    ("2744-1", "[pH]"): ("pH", 1.0),
}


class SchemaError(ValueError):
    """A dataset file is unreadable or lacks a required column."""


# ---------------------------------------------------------------------------
# timestamps

def parse_ts(text) -> int | None:
    """ISO-8601 UTC text to epoch seconds, or None when unparsable."""
    if text is None or (isinstance(text, float) and math.isnan(text)):
        return None
    try:
        ts = pd.Timestamp(str(text))
    except (ValueError, TypeError):
        return None
    if ts is pd.NaT:
        return None
    if ts.tzinfo is None:
        ts = ts.tz_localize("UTC")
    return int(ts.tz_convert("UTC").value // 10**9)


def object_full(n: int, value) -> np.ndarray:
    """Object array holding n references to one value.

    np.full(..., dtype=object) with a string fill makes a new str per element.
    """
    a = np.empty(n, dtype=object)
    a.fill(value)
    return a


def format_ts(epoch: int) -> str:
    return pd.Timestamp(int(epoch), unit="s", tz="UTC").strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_ts_column(values: pd.Series) -> np.ndarray:
    """Vectorised parse; unparsable entries become -1 (callers flag them).

    Integer columns are taken as epoch seconds already.
    """
    if pd.api.types.is_integer_dtype(values.dtype):
        return values.to_numpy(dtype=np.int64)
    parsed = pd.to_datetime(values, utc=True, errors="coerce", format="ISO8601")
    out = np.full(len(values), -1, dtype=np.int64)
    ok = parsed.notna().to_numpy()
    out[ok] = parsed[ok].astype("int64").to_numpy() // 10**9
    return out


def _format_ts_column(epochs: np.ndarray) -> np.ndarray:
    stamps = np.asarray(epochs, dtype=np.int64).astype("datetime64[s]")
    return np.char.add(np.datetime_as_string(stamps, unit="s"), "Z").astype(object)


# ---------------------------------------------------------------------------
# cleaning

def clean_lab_value(raw_text) -> float | None:
    """Extract a numeric value from a lab result's text representation.

    Comparator-prefixed results ("<0.01", ">= 5") map to their bound; anything
    that is not a number returns None.
    """
    if raw_text is None:
        return None
    if isinstance(raw_text, (int, float)) and not isinstance(raw_text, bool):
        return None if math.isnan(raw_text) else float(raw_text)
    text = str(raw_text).strip().replace(",", "")
    m = _COMPARATOR_RE.match(text)
    if m:
        text = m.group(2).strip()
    if not _NUMBER_RE.match(text):
        return None
    value = float(text)
    return value if math.isfinite(value) else None


def atc_truncate(code: str) -> str:
    """Round an ATC code to level 4 (its first five characters)."""
    code = code.strip().upper()
    if len(code) not in (1, 3, 4, 5, 7):
        raise ValueError(f"not an ATC code: {code!r}")
    return code[:5]


def is_loinc(code: str) -> bool:
    return bool(_LOINC_RE.match(code))


def canonical_unit(code: str, value: float, unit: str) -> tuple[float, str]:
    conv = UNIT_CANON.get((code, unit))
    if conv is None:
        return value, unit
    new_unit, factor = conv
    return value * factor, new_unit


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class ClinicalEvent:
    admission_id: str
    kind: str
    code: str
    value: float | None
    unit: str
    ts: int


@dataclass(frozen=True)
class TransferRecord:
    admission_id: str
    ward_name: str
    ward_type: str
    in_ts: int
    out_ts: int


@dataclass(frozen=True, eq=False)
class Events:
    """Column-wise events of one admission, sorted by (ts, kind, code)."""

    kind: np.ndarray   # object array of EVENT_KINDS
    code: np.ndarray   # object array
    value: np.ndarray  # float64, nan = missing
    unit: np.ndarray   # object array
    ts: np.ndarray     # int64 epoch seconds

    def __len__(self) -> int:
        return len(self.ts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Events):
            return NotImplemented
        return (np.array_equal(self.ts, other.ts)
                and np.array_equal(self.value, other.value, equal_nan=True)
                and list(self.kind) == list(other.kind)
                and list(self.code) == list(other.code)
                and list(self.unit) == list(other.unit))

    __hash__ = None

    @classmethod
    def empty(cls) -> "Events":
        obj = np.empty(0, dtype=object)
        return cls(obj, obj.copy(), np.empty(0), obj.copy(), np.empty(0, dtype=np.int64))

    @classmethod
    def from_records(cls, records: Iterable[ClinicalEvent]) -> "Events":
        recs = sorted(records, key=lambda e: (e.ts, e.kind, e.code))
        if not recs:
            return cls.empty()
        return cls(
            kind=np.array([e.kind for e in recs], dtype=object),
            code=np.array([e.code for e in recs], dtype=object),
            value=np.array([np.nan if e.value is None else e.value for e in recs], dtype=float),
            unit=np.array([e.unit for e in recs], dtype=object),
            ts=np.array([e.ts for e in recs], dtype=np.int64),
        )

    def select(self, mask: np.ndarray) -> "Events":
        return Events(self.kind[mask], self.code[mask], self.value[mask], self.unit[mask],
                      self.ts[mask])

    def until(self, t: int) -> "Events":
        """Events with ts <= t (events are time-sorted)."""
        hi = int(np.searchsorted(self.ts, t, side="right"))
        return self.select(slice(0, hi))

    def records(self, admission_id: str) -> Iterator[ClinicalEvent]:
        for k, c, v, u, t in zip(self.kind, self.code, self.value, self.unit, self.ts):
            yield ClinicalEvent(admission_id, k, c, None if np.isnan(v) else float(v), u, int(t))


@dataclass(frozen=True)
class Admission:
    admission_id: str
    patient_id: str
    facility_cd: str
    admit_ts: int
    discharge_ts: int
    discharge_disposition: str
    age: float
    gender: str
    transfers: tuple[TransferRecord, ...] = ()
    events: Events = field(default_factory=Events.empty)
    diagnoses: tuple[tuple[str, int], ...] = ()
    meds_on_admission: tuple[str, ...] = ()


@dataclass(frozen=True)
class Violation:
    table: str
    key: str
    reason: str


@dataclass(frozen=True)
class Dataset:
    admissions: tuple[Admission, ...]
    violations: tuple[Violation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "_index", {a.admission_id: a for a in self.admissions})
        by_patient: dict[str, list[Admission]] = {}
        for a in self.admissions:
            by_patient.setdefault(a.patient_id, []).append(a)
        for adms in by_patient.values():
            adms.sort(key=lambda a: (a.admit_ts, a.admission_id))
        object.__setattr__(self, "_by_patient", by_patient)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.admissions == other.admissions and self.violations == other.violations

    __hash__ = None

    def __len__(self) -> int:
        return len(self.admissions)

    def __iter__(self) -> Iterator[Admission]:
        return iter(self.admissions)

    def __getitem__(self, admission_id: str) -> Admission:
        return self._index[admission_id]

    def __contains__(self, admission_id: str) -> bool:
        return admission_id in self._index

    def by_facility(self) -> dict[str, list[Admission]]:
        out: dict[str, list[Admission]] = {}
        for a in self.admissions:
            out.setdefault(a.facility_cd, []).append(a)
        return dict(sorted(out.items()))

    def history(self, adm: Admission) -> list[Admission]:
        """Prior admissions of the same patient, discharged before `adm` began."""
        return [a for a in self._by_patient.get(adm.patient_id, ())
                if a.admission_id != adm.admission_id and a.discharge_ts <= adm.admit_ts]

    def subset(self, ids: Iterable[str]) -> "Dataset":
        keep = set(ids)
        return Dataset(tuple(a for a in self.admissions if a.admission_id in keep), self.violations)


# ---------------------------------------------------------------------------
# frames -> Dataset

def _require(df: pd.DataFrame, table: str, path: str = "") -> None:
    missing = [c for c in TABLE_COLUMNS[table] if c not in df.columns]
    if missing:
        raise SchemaError(f"{path or table}: missing column(s) {', '.join(missing)}")


def _empty_frame(table: str) -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=object) for c in TABLE_COLUMNS[table]})


def from_frames(frames: dict[str, pd.DataFrame]) -> Dataset:
    """Validate raw tables (CSV schema, text-valued) and build a Dataset.

    Rows are processed in file order; record-level problems become violations.
    """
    frames = {t: frames.get(t, _empty_frame(t)) for t in TABLE_COLUMNS}
    for t, df in frames.items():
        _require(df, t)
    violations: list[Violation] = []

    # admissions ------------------------------------------------------------
    adm_df = frames["admissions"].reset_index(drop=True)
    admit = _parse_ts_column(adm_df["admit_ts"])
    disch = _parse_ts_column(adm_df["discharge_ts"])
    base: dict[str, dict] = {}
    for i, row in enumerate(adm_df.itertuples(index=False)):
        aid = str(row.admission_id)
        if aid in base:
            violations.append(Violation("admissions", aid, "duplicate admission"))
            continue
        if admit[i] < 0 or disch[i] < 0:
            violations.append(Violation("admissions", aid, "unparsable timestamp"))
            continue
        if disch[i] < admit[i]:
            violations.append(Violation("admissions", aid, "discharge before admit"))
            continue
        try:
            age = float(row.age)
        except (TypeError, ValueError):
            age = float("nan")
        if not age >= 0:
            violations.append(Violation("admissions", aid, "invalid age"))
            continue
        disp = str(row.disposition)
        base[aid] = dict(
            admission_id=aid, patient_id=str(row.patient_id), facility_cd=str(row.facility_cd),
            admit_ts=int(admit[i]), discharge_ts=int(disch[i]),
            discharge_disposition=disp if disp in DISPOSITIONS else "other",
            age=age, gender=str(row.gender) if str(row.gender) in GENDERS else "U",
        )

    # transfers -------------------------------------------------------------
    tr_df = frames["transfers"].reset_index(drop=True)
    t_in = _parse_ts_column(tr_df["in_ts"])
    t_out = _parse_ts_column(tr_df["out_ts"])
    transfers: dict[str, list[TransferRecord]] = {}
    for i, row in enumerate(tr_df.itertuples(index=False)):
        aid = str(row.admission_id)
        if aid not in base:
            violations.append(Violation("transfers", aid, "unknown admission"))
            continue
        if t_in[i] < 0 or t_out[i] < 0:
            violations.append(Violation("transfers", aid, "unparsable timestamp"))
            continue
        if not t_in[i] < t_out[i]:
            violations.append(Violation("transfers", aid, "transfer with in_ts >= out_ts"))
            continue
        wtype = str(row.ward_type)
        if wtype not in WARD_TYPES:
            violations.append(Violation("transfers", aid, f"unknown ward type {wtype}"))
            continue
        transfers.setdefault(aid, []).append(
            TransferRecord(aid, str(row.ward_name), wtype, int(t_in[i]), int(t_out[i])))
    for aid, recs in transfers.items():
        recs.sort(key=lambda r: r.in_ts)
        for a, b in zip(recs, recs[1:]):
            if b.in_ts != a.out_ts:
                violations.append(Violation("transfers", aid, "transfers not contiguous"))
                break
        b = base[aid]
        if recs[0].in_ts > b["admit_ts"] or recs[-1].out_ts < b["discharge_ts"]:
            violations.append(Violation("transfers", aid, "transfers do not cover stay"))

    # events ----------------------------------------------------------------
    events = _validate_events(frames["events"], base, transfers, violations)

    # diagnoses / meds on admission -----------------------------------------
    diagnoses: dict[str, list[tuple[str, int]]] = {}
    for row in frames["diagnoses"].itertuples(index=False):
        aid = str(row.admission_id)
        if aid not in base:
            violations.append(Violation("diagnoses", aid, "unknown admission"))
            continue
        try:
            rank = int(row.rank)
        except (TypeError, ValueError):
            violations.append(Violation("diagnoses", aid, "invalid rank"))
            continue
        diagnoses.setdefault(aid, []).append((str(row.icd10_code).strip().upper(), rank))
    meds: dict[str, list[str]] = {}
    for row in frames["meds"].itertuples(index=False):
        aid = str(row.admission_id)
        if aid not in base:
            violations.append(Violation("meds", aid, "unknown admission"))
            continue
        meds.setdefault(aid, []).append(str(row.atc_code).strip().upper())

    admissions = []
    for aid in sorted(base):
        admissions.append(Admission(
            **base[aid],
            transfers=tuple(transfers.get(aid, ())),
            events=events.get(aid, Events.empty()),
            diagnoses=tuple(sorted(diagnoses.get(aid, ()), key=lambda d: (d[1], d[0]))),
            meds_on_admission=tuple(meds.get(aid, ())),
        ))
    return Dataset(tuple(admissions), tuple(violations))


def _validate_events(df: pd.DataFrame, base: dict, transfers: dict,
                     violations: list[Violation]) -> dict[str, Events]:
    df = df.reset_index(drop=True)
    n = len(df)
    if n == 0:
        return {}
    aid = _shared(df["admission_id"].astype(str))
    kind = _shared(df["kind"].astype(str))
    code = _shared(df["code"].astype(str).str.strip())
    unit = _shared(df["unit"].fillna("").astype(str))
    ts = _parse_ts_column(df["ts"])
    value = _clean_value_column(df["value_text"])

    ok = np.ones(n, dtype=bool)

    def flag(mask: np.ndarray, reason: str) -> None:
        for i in np.flatnonzero(mask & ok):
            violations.append(Violation("events", aid[i], reason))
        ok[mask] = False

    aid_s = pd.Series(aid)
    admit = aid_s.map({a: b["admit_ts"] for a, b in base.items()})
    flag(admit.isna().to_numpy(), "unknown admission")
    admit = admit.fillna(0).to_numpy(dtype=np.int64)
    disch = aid_s.map({a: b["discharge_ts"] for a, b in base.items()}).fillna(0).to_numpy(
        dtype=np.int64)
    flag(~np.isin(kind, EVENT_KINDS), "unknown event kind")
    flag(ts < 0, "unparsable timestamp")
    needs_loinc = (kind == "lab") | (kind == "fluid")
    code_s = pd.Series(code)
    loinc_ok = code_s.map({c: is_loinc(c) for c in code_s.unique()}).to_numpy(dtype=bool)
    flag(needs_loinc & ~loinc_ok, "invalid LOINC code")
    flag((kind != "med_admin") & np.isnan(value), "unusable value")

    # stay bounds and ED intervals
    flag((ts < admit) | (ts > disch), "event outside stay")
    ed = {a: [(r.in_ts, r.out_ts) for r in recs if r.ward_type == "emergency"]
          for a, recs in transfers.items()}
    if any(ed.values()):
        in_ed = np.array([any(lo <= t < hi for lo, hi in ed.get(a, ())) for a, t in zip(aid, ts)],
                         dtype=bool)
        flag(in_ed, "event in ED interval")

    # canonical units for the analytes that need it
    for (c, u), (new_unit, factor) in UNIT_CANON.items():
        m = ok & (code == c) & (unit == u)
        if m.any():
            value[m] = value[m] * factor
            unit[m] = new_unit

    idx = np.flatnonzero(ok)
    # dedup: same (admission, kind, code, ts) keeps the last row in file order
    frame = pd.DataFrame({"aid": aid[idx], "kind": kind[idx], "code": code[idx], "ts": ts[idx],
                          "row": idx})
    last = frame.drop_duplicates(["aid", "kind", "code", "ts"], keep="last")
    dropped = len(frame) - len(last)
    if dropped:
        log.debug("dropped %d duplicate/conflicting events", dropped)
    keep = np.sort(last["row"].to_numpy())
    order = np.lexsort((_rank(code[keep]), _rank(kind[keep]), ts[keep], _rank(aid[keep])))
    keep = keep[order]
    a_sorted = aid[keep]
    bounds = np.flatnonzero(a_sorted[1:] != a_sorted[:-1]) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(keep)]])
    out = {}
    k_kind, k_code, k_val, k_unit, k_ts = kind[keep], code[keep], value[keep], unit[keep], ts[keep]
    for s, e in zip(starts, ends):
        if e > s:
            out[a_sorted[s]] = Events(k_kind[s:e], k_code[s:e], k_val[s:e], k_unit[s:e], k_ts[s:e])
    return out


def _shared(values: pd.Series) -> np.ndarray:
    """Object array in which equal strings are one object (parsed text has one per cell)."""
    codes, uniques = pd.factorize(values)
    return np.asarray(uniques, dtype=object)[codes]


def _rank(values: np.ndarray) -> np.ndarray:
    """Integer codes that sort like the (string) values."""
    return pd.factorize(values, sort=True)[0]


def _clean_value_column(values: pd.Series) -> np.ndarray:
    if pd.api.types.is_float_dtype(values.dtype):
        out = values.to_numpy(dtype=float).copy()
        out[~np.isfinite(out)] = np.nan
        return out
    numeric = pd.to_numeric(values, errors="coerce").to_numpy(dtype=float)
    out = numeric.copy()
    bad = np.isnan(numeric) & values.notna().to_numpy()
    texts = values.to_numpy(dtype=object)
    for i in np.flatnonzero(bad):
        v = clean_lab_value(texts[i])
        out[i] = np.nan if v is None else v
    out[~np.isfinite(out)] = np.nan
    return out


# ---------------------------------------------------------------------------
# file IO

def _read(path: Path, fmt: str) -> pd.DataFrame:
    try:
        if fmt == "csv":
            return pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
        return pd.read_json(path, lines=True, dtype=False)
    except (OSError, ValueError) as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc


def load_dataset(paths: Sequence[str | Path] | str | Path, format: str = "csv") -> Dataset:
    """Load a dataset from table files (or a directory holding them).

    Files are matched to tables by stem: admissions, transfers, events,
    diagnoses, meds. The admissions table is required.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {format!r}")
    if isinstance(paths, (str, Path)) and Path(paths).is_dir():
        paths = sorted(Path(paths).glob(f"*.{format}"))
    elif isinstance(paths, (str, Path)):
        paths = [paths]
    frames: dict[str, list[pd.DataFrame]] = {}
    for p in map(Path, paths):
        if not p.exists():
            raise SchemaError(f"cannot read {p}: file does not exist")
        table = p.stem
        if table not in TABLE_COLUMNS:
            log.warning("ignoring unrecognised file %s", p)
            continue
        df = _read(p, format)
        if df.empty and not len(df.columns):
            df = _empty_frame(table)
        _require(df, table, str(p))
        frames.setdefault(table, []).append(df)
    if "admissions" not in frames:
        raise SchemaError("no admissions file given")
    merged = {t: pd.concat(dfs, ignore_index=True) for t, dfs in frames.items()}
    return from_frames(merged)


def _fmt_value(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def _events_frame(adms: Sequence[Admission]) -> pd.DataFrame:
    parts = [a for a in adms if len(a.events)]
    if parts:
        ev_aid = np.concatenate([object_full(len(a.events), a.admission_id) for a in parts])
        ev_kind = np.concatenate([a.events.kind for a in parts])
        ev_code = np.concatenate([a.events.code for a in parts])
        ev_val = np.concatenate([a.events.value for a in parts])
        ev_unit = np.concatenate([a.events.unit for a in parts])
        ev_ts = np.concatenate([a.events.ts for a in parts])
    else:
        ev_aid = ev_kind = ev_code = ev_unit = np.empty(0, dtype=object)
        ev_val, ev_ts = np.empty(0), np.empty(0, dtype=np.int64)
    return pd.DataFrame({
        "admission_id": ev_aid, "kind": ev_kind, "code": ev_code,
        "value_text": [_fmt_value(v) for v in ev_val], "unit": ev_unit,
        "ts": _format_ts_column(ev_ts),
    }, columns=TABLE_COLUMNS["events"])


def to_frames(ds: Dataset, include_events: bool = True) -> dict[str, pd.DataFrame | None]:
    """Canonical text tables for a Dataset (inverse of `from_frames`)."""
    adms = ds.admissions
    admissions = pd.DataFrame({
        "admission_id": [a.admission_id for a in adms],
        "patient_id": [a.patient_id for a in adms],
        "facility_cd": [a.facility_cd for a in adms],
        "admit_ts": _format_ts_column(np.array([a.admit_ts for a in adms], dtype=np.int64)),
        "discharge_ts": _format_ts_column(np.array([a.discharge_ts for a in adms], dtype=np.int64)),
        "disposition": [a.discharge_disposition for a in adms],
        "age": [repr(float(a.age)) for a in adms],
        "gender": [a.gender for a in adms],
    }, columns=TABLE_COLUMNS["admissions"])
    trs = [t for a in adms for t in a.transfers]
    transfers = pd.DataFrame({
        "admission_id": [t.admission_id for t in trs],
        "ward_name": [t.ward_name for t in trs],
        "ward_type": [t.ward_type for t in trs],
        "in_ts": _format_ts_column(np.array([t.in_ts for t in trs], dtype=np.int64)),
        "out_ts": _format_ts_column(np.array([t.out_ts for t in trs], dtype=np.int64)),
    }, columns=TABLE_COLUMNS["transfers"])
    events = _events_frame(adms) if include_events else None
    diagnoses = pd.DataFrame(
        [(a.admission_id, c, r) for a in adms for c, r in a.diagnoses],
        columns=TABLE_COLUMNS["diagnoses"])
    meds = pd.DataFrame([(a.admission_id, c) for a in adms for c in a.meds_on_admission],
                        columns=TABLE_COLUMNS["meds"])
    return {"admissions": admissions, "transfers": transfers, "events": events,
            "diagnoses": diagnoses, "meds": meds}


def write_dataset(ds: Dataset, out_dir: str | Path, format: str = "csv",
                  chunk: int = 2000) -> list[Path]:
    """Write canonical tables; events are formatted `chunk` admissions at a time."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for table, df in to_frames(ds, include_events=False).items():
        path = out / f"{table}.{format}"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if df is not None:
                _write_table(df, fh, format, header=True)
            else:
                adms = ds.admissions
                for lo in range(0, max(len(adms), 1), chunk):
                    _write_table(_events_frame(adms[lo:lo + chunk]), fh, format, header=lo == 0)
        written.append(path)
    return written


def _write_table(df: pd.DataFrame, fh, format: str, header: bool) -> None:
    if format == "csv":
        df.to_csv(fh, index=False, header=header, lineterminator="\n")
    else:
        for rec in df.astype(str).replace({"": None}).to_dict(orient="records"):
            fh.write(json.dumps(rec, sort_keys=False) + "\n")
