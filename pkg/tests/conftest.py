import json

import numpy as np
import pandas as pd
import pytest

from icuwarn import pipeline as pl
from icuwarn.emr import TABLE_COLUMNS
from icuwarn.gbdt import Hyperparams
from icuwarn.service import request_for
from icuwarn.synth import SynthConfig, generate_with_truth


@pytest.fixture(scope="session")
def small_synth():
    """A small synthetic dataset with its generator truth."""
    return generate_with_truth(SynthConfig(n_admissions=600, prevalence=0.08, seed=3))


@pytest.fixture(scope="session")
def small_ds(small_synth):
    return small_synth[0]


def frames(**tables):
    """Text-valued raw tables; missing tables are empty."""
    out = {}
    for t, cols in TABLE_COLUMNS.items():
        rows = tables.get(t, [])
        out[t] = pd.DataFrame([dict(zip(cols, r)) for r in rows], columns=cols, dtype=object)
    return out


def adm_row(aid="A1", pid="P1", fac="F1", admit="2020-01-01T00:00:00Z",
            disch="2020-01-05T00:00:00Z", disp="home", age="60", gender="F"):
    return (aid, pid, fac, admit, disch, disp, age, gender)


def rng(seed):
    return np.random.default_rng(seed)


def small_config(workdir, seed=5, n=1500):
    return pl.PipelineConfig(
        workdir=workdir, synth=SynthConfig(n_admissions=n, prevalence=0.1, seed=seed),
        hyper=Hyperparams(max_rounds=15, max_depth=3, min_node_cases=10, seed=seed),
        cv_folds=3, combined=True, shap_rows=300)


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """A complete pipeline run (combined model) on a small synthetic dataset."""
    cfg = small_config(tmp_path_factory.mktemp("small_run"))
    return cfg, pl.run_pipeline(cfg)


def replay_fixtures(ds, matrix, n, seed):
    """n (request, row index) pairs replaying random test rows as JSON-decoded requests."""
    aid = matrix.admission_id.astype(str)
    pick = np.sort(np.random.default_rng(seed).choice(len(matrix), size=n, replace=False))
    out = []
    for i in pick:
        adm, t = ds[aid[i]], int(matrix.ts[i])
        # scoring instants are event times, so the service scores at the same t
        assert int(adm.events.until(t).ts.max()) == t
        req = request_for(adm, ds.history(adm), t)
        out.append((json.loads(json.dumps(req)), int(i)))
    return out


ACCEPTANCE_LINES: list[str] = []


def record_verdict(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
