"""Case/control labelling, scoring instants and the admission-level split."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .emr import Admission, Dataset

log = logging.getLogger(__name__)

EXCLUSION_REASONS = ("direct_icu_admission", "or_or_recovery_source", "neonatal",
                     "no_transfer_records", "none")
NEONATAL_MAX_AGE_YEARS = 28 / 365.25


@dataclass(frozen=True)
class CohortLabel:
    admission_id: str
    is_case: bool
    target_ts: int | None
    excluded: bool
    exclusion_reason: str = "none"

    @property
    def is_control(self) -> bool:
        return not self.is_case and not self.excluded


@dataclass(frozen=True, order=True)
class ScoringInstant:
    admission_id: str
    ts: int


def label_admission(adm: Admission) -> CohortLabel:
    aid = adm.admission_id
    if not adm.transfers:
        log.warning("admission %s has no transfer records; excluded", aid)
        return CohortLabel(aid, False, None, True, "no_transfer_records")
    if adm.age < NEONATAL_MAX_AGE_YEARS or any(t.ward_type == "neonatal_icu" for t in adm.transfers):
        return CohortLabel(aid, False, None, True, "neonatal")
    segs = sorted(adm.transfers, key=lambda t: t.in_ts)
    first_icu = next((i for i, t in enumerate(segs) if t.ward_type == "icu"), None)
    if first_icu is None:
        return CohortLabel(aid, False, None, False)
    prev = segs[first_icu - 1] if first_icu > 0 else None
    if prev is None or segs[first_icu].in_ts <= adm.admit_ts:
        return CohortLabel(aid, False, None, True, "direct_icu_admission")
    if prev.ward_type == "emergency":
        # ED boarding straight into the ICU is an ICU stay at the start of the admission.
        return CohortLabel(aid, False, None, True, "direct_icu_admission")
    if prev.ward_type in ("operating_room", "recovery"):
        # Post-operative ICU stays are planned: the admission remains a control.
        return CohortLabel(aid, False, None, False, "or_or_recovery_source")
    if prev.ward_type != "general":
        return CohortLabel(aid, False, None, False)
    return CohortLabel(aid, True, int(segs[first_icu].in_ts), False)


def label_admissions(dataset: Dataset) -> list[CohortLabel]:
    """One label per admission, in admission_id order."""
    return [label_admission(a) for a in sorted(dataset, key=lambda a: a.admission_id)]


def instant_times(adm: Admission, label: CohortLabel) -> np.ndarray:
    """Distinct event timestamps (sorted), truncated before target_ts for cases."""
    if label.excluded:
        raise ValueError(f"admission {adm.admission_id} is excluded")
    ts = np.unique(adm.events.ts)
    if label.is_case:
        ts = ts[ts < label.target_ts]
    return ts


def scoring_instants(adm: Admission, label: CohortLabel) -> list[ScoringInstant]:
    return [ScoringInstant(adm.admission_id, int(t)) for t in instant_times(adm, label)]


def split_train_test(labels: list[CohortLabel], train_fraction: float = 0.8,
                     seed: int = 0) -> tuple[list[str], list[str]]:
    """Admission-level split stratified by case status.

    Cases in train: floor(f * n_cases + 1/2), clamped to [1, n_cases - 1].
    Controls fill the total up to floor(f * n + 1/2). Excluded admissions are
    left out of both sides.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    usable = sorted((lb for lb in labels if not lb.excluded), key=lambda lb: lb.admission_id)
    cases = [lb.admission_id for lb in usable if lb.is_case]
    controls = [lb.admission_id for lb in usable if not lb.is_case]
    if len(cases) < 2:
        raise ValueError("cannot stratify: fewer than 2 cases")
    n_total = int(np.floor(train_fraction * len(usable) + 0.5))
    n_case = int(np.clip(np.floor(train_fraction * len(cases) + 0.5), 1, len(cases) - 1))
    n_ctrl = int(np.clip(n_total - n_case, 0, len(controls)))
    rng = np.random.default_rng([seed, 17])
    case_perm = rng.permutation(len(cases))
    ctrl_perm = rng.permutation(len(controls))
    train = {cases[i] for i in case_perm[:n_case]} | {controls[i] for i in ctrl_perm[:n_ctrl]}
    train_ids = sorted(train)
    test_ids = sorted(a.admission_id for a in usable if a.admission_id not in train)
    return train_ids, test_ids
