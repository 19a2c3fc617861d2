"""Single-instant feature primitives.

These are the readable definitions; `features.build` computes the same
quantities vectorised over all instants of an admission and is tested
against these.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..emr import Admission, Events

DAY = 86400
UNIT_SECONDS = {"days": DAY, "weeks": 7 * DAY}
MONTH_DAYS = {1: 30, 6: 182, 12: 365}
GRID = {"days": (1, 3, 5, 7), "weeks": (1, 2, 3, 4), "months": (1, 6, 12)}


@dataclass(frozen=True)
class WindowSpec:
    length: int
    unit: str = "days"

    def __post_init__(self):
        if self.unit not in GRID or self.length not in GRID[self.unit]:
            raise ValueError(f"window {self.length} {self.unit} is not on the feature grid")

    @property
    def seconds(self) -> int:
        if self.unit == "months":
            return MONTH_DAYS[self.length] * DAY
        return self.length * UNIT_SECONDS[self.unit]


def sql_round(x, ndigits: int):
    """Round half away from zero, like SQL numeric rounding. NaN passes through."""
    scale = 10.0 ** ndigits
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.floor(np.abs(x) * scale + 0.5) / scale
    return out if out.ndim else float(out)


def _code_events(events: Events, code: str, kind: str | None = None):
    m = events.code == code
    if kind is not None:
        m &= events.kind == kind
    return events.ts[m], events.value[m]


def most_recent(events: Events, code: str, t: int, kind: str | None = None) -> float:
    """Latest value with ts <= t; NaN when there is none."""
    ts, v = _code_events(events, code, kind)
    ok = np.flatnonzero(ts <= t)
    if not len(ok):
        return math.nan
    return float(v[ok[-1]])  # events are time-sorted


def window_agg(events: Events, code: str, t: int, w: WindowSpec, stat: str,
               kind: str | None = None) -> float:
    """count/avg/min/max over ts in (t - w, t]."""
    ts, v = _code_events(events, code, kind)
    sel = v[(ts > t - w.seconds) & (ts <= t)]
    if stat == "count":
        return float(len(sel))
    if not len(sel):
        return math.nan
    if stat == "avg":
        return float(np.mean(sel))
    if stat == "min":
        return float(np.min(sel))
    if stat == "max":
        return float(np.max(sel))
    raise ValueError(f"unknown stat {stat!r}")


def ols_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope; NaN with fewer than 2 distinct x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(np.unique(x)) < 2:
        return math.nan
    dx = x - x.mean()
    return float(np.sum(dx * (y - y.mean())) / np.sum(dx * dx))


def trend(events: Events, code: str, t: int, w: WindowSpec, kind: str | None = None) -> float:
    """OLS slope (value units per day) over the window's points."""
    ts, v = _code_events(events, code, kind)
    m = (ts > t - w.seconds) & (ts <= t)
    return ols_slope((ts[m] - t) / DAY, v[m])


def lab_count_trend(events: Events, t: int, days: int = 7) -> float:
    """Slope of daily lab-result counts over the past `days` days (per day)."""
    ts = events.ts[events.kind == "lab"]
    counts = [np.sum((ts > t - (k + 1) * DAY) & (ts <= t - k * DAY)) for k in range(days)]
    return ols_slope(-np.arange(days, dtype=float), counts)


def usage_features(history: Sequence[Admission], admit_ts: int) -> dict[str, float]:
    """Prior-utilisation features relative to the current admission's start."""
    prior = sorted((a for a in history if a.discharge_ts <= admit_ts), key=lambda a: a.discharge_ts)
    out = {"n_prev_adm": float(len(prior))}
    for months in GRID["months"]:
        lo = admit_ts - MONTH_DAYS[months] * DAY
        out[f"n_adm_{months}mo"] = float(sum(lo < a.discharge_ts <= admit_ts for a in prior))
    if prior:
        last = prior[-1]
        out["prev_los_days"] = (last.discharge_ts - last.admit_ts) / DAY
        out["days_since_last_discharge"] = (admit_ts - last.discharge_ts) / DAY
    else:
        out["prev_los_days"] = math.nan
        out["days_since_last_discharge"] = math.nan
    return out


def past_year_diagnoses(history: Sequence[Admission], admit_ts: int) -> list[str]:
    lo = admit_ts - 365 * DAY
    return [code for a in history if lo < a.discharge_ts <= admit_ts for code, _ in a.diagnoses]
