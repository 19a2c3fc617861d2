"""ICU-without-walls (ICUWW) lab-threshold benchmark.

An admission alerts once any rule's strict inequality has been observed on a
lab result. By default the alert latches ("ever observed"); `latched=False`
re-evaluates the latest value of each analyte instead.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .emr import Admission, Events


@dataclass(frozen=True)
class IcuwwRule:
    loinc: str
    comparator: str      # "gt" | "lt"
    threshold: Decimal
    unit: str

    def __post_init__(self):
        if self.comparator not in ("gt", "lt"):
            raise ValueError(f"comparator must be gt or lt, got {self.comparator!r}")
        object.__setattr__(self, "threshold", Decimal(str(self.threshold)))

    def __iter__(self):
        return iter((self.loinc, self.comparator, self.threshold, self.unit))

    def hits(self, values: np.ndarray) -> np.ndarray:
        thr = float(self.threshold)
        return values > thr if self.comparator == "gt" else values < thr


def default_rules() -> list[IcuwwRule]:
    return [
        IcuwwRule("10839-9", "gt", Decimal("0.3"), "ug/L"),      # troponin I
        IcuwwRule("2744-1", "lt", Decimal("7.30"), "pH"),        # arterial pH
        IcuwwRule("2019-8", "gt", Decimal("60"), "mmHg"),        # arterial pCO2
        IcuwwRule("777-3", "lt", Decimal("100000"), "/uL"),      # platelets
        IcuwwRule("2524-7", "gt", Decimal("3"), "mmol/L"),       # lactate
    ]


def load_rules(path: str | Path) -> list[IcuwwRule]:
    """Rule table with columns loinc, comparator, threshold, unit."""
    with open(path, newline="") as fh:
        return [IcuwwRule(r["loinc"].strip(), r["comparator"].strip(), Decimal(r["threshold"]),
                          r["unit"].strip()) for r in csv.DictReader(fh)]


def _events(x) -> Events:
    return x.events if isinstance(x, Admission) else x


def hit_times(events: Events, rules: Sequence[IcuwwRule]) -> np.ndarray:
    """Timestamps of lab results meeting any rule (sorted, may repeat)."""
    labs = events.kind == "lab"
    out = []
    for rule in rules:
        m = labs & (events.code == rule.loinc)
        if m.any():
            v = events.value[m]
            out.append(events.ts[m][rule.hits(v) & ~np.isnan(v)])
    return np.sort(np.concatenate(out)) if out else np.empty(0, dtype=np.int64)


def evaluate_at(admission_events, t: int, rules: Sequence[IcuwwRule] | None = None,
                latched: bool = True) -> bool:
    events = _events(admission_events)
    rules = default_rules() if rules is None else rules
    if latched:
        hits = hit_times(events, rules)
        return bool(len(hits) and hits[0] <= t)
    labs = (events.kind == "lab") & (events.ts <= t)
    for rule in rules:
        m = np.flatnonzero(labs & (events.code == rule.loinc))
        if len(m):
            # latest value; ties at one timestamp resolved by the last stored row
            last = m[np.lexsort((m, events.ts[m]))[-1]]
            if bool(rule.hits(events.value[last:last + 1])[0]):
                return True
    return False


def alert_series(admission, instants, rules: Sequence[IcuwwRule] | None = None,
                 latched: bool = True) -> int | None:
    """Earliest scoring instant at which the rule set alerts, or None."""
    times = np.asarray([getattr(i, "ts", i) for i in instants], dtype=np.int64)
    if not len(times):
        return None
    rules = default_rules() if rules is None else rules
    events = _events(admission)
    if latched:
        hits = hit_times(events, rules)
        if not len(hits):
            return None
        ok = times[times >= hits[0]]
        return int(ok.min()) if len(ok) else None
    for t in np.sort(times):
        if evaluate_at(events, int(t), rules, latched=False):
            return int(t)
    return None
