"""Pipeline stages and their on-disk artifacts.

Every stage reads the previous stage's files from the work directory, so
stages can be re-run independently. `run_pipeline` chains them in-process
and hands objects along instead of re-reading them.

Layout under the work directory:

    data/                 dataset tables (synth)
    data/truth.csv        generator intent per admission
    cohort.csv            labels, split and training sample flags
    features/train.npz    matrix of the sampled training admissions
    features/test.npz     matrix of the test admissions
    features/tables/      per-category tables (featgen --tables)
    features/merge.sql    generated merge query (sqlgen)
    features/merged.csv   merge query result (merge)
    models/model_<name>.json, models/cv_<name>.csv
    reports/<name>/       report, roc_points, calibration, warnings, markers,
                          reference_table, importance, shap_ranking
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evalkit
from .cohort import CohortLabel, instant_times, label_admissions, split_train_test
from .emr import Dataset, load_dataset, write_dataset
from .featspec import execute_query, generate_sql, parse_spec
from .featspec.relational import RelTable
from .features.build import (FeatureConfig, FeatureMatrix, build_matrix, catalog, default_spec,
                             feature_tables, BOOKKEEPING_COLUMNS)
from .gbdt import (CVResult, GbdtModel, Hyperparams, cross_validate_rounds, sample_admissions,
                   train)
from .gbdt.explain import importance_gain, ranking, shap_matrix
from .icuww import alert_series
from .synth import SynthConfig, SynthTruth, generate_with_truth

log = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    def __init__(self, path: Path, stage: str):
        super().__init__(f"missing {path}; run the `{stage}` stage first")
        self.path = path
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    workdir: Path = Path("icuwarn-run")
    data_dir: Path | None = None
    spec_file: Path | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    train_fraction: float = 0.8
    cv_folds: int = 5
    select_rounds: bool = True
    combined: bool = False
    specificities: tuple = ("benchmark", 0.75)
    shap_rows: int = 2000

    def __post_init__(self):
        evalkit.operating_points(self.specificities)
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else Path(self.workdir) / "data"

    def path(self, *parts) -> Path:
        return Path(self.workdir).joinpath(*parts)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, synth=replace(self.synth, seed=seed), hyper=replace(self.hyper, seed=seed))

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(f"config file {path} not found")
        return cls.from_parser(parser)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "PipelineConfig":
        kw: dict = {}
        if parser.has_section("paths"):
            p = parser["paths"]
            for key in ("workdir", "data_dir", "spec_file"):
                if key in p:
                    kw[key] = Path(p[key])
        if parser.has_section("synth"):
            kw["synth"] = SynthConfig.from_mapping(dict(parser["synth"]))
        if parser.has_section("train"):
            t = dict(parser["train"])
            for key, conv in (("train_fraction", float), ("cv_folds", int), ("shap_rows", int)):
                if key in t:
                    kw[key] = conv(t.pop(key))
            for key in ("select_rounds", "combined"):
                if key in t:
                    kw[key] = parser["train"].getboolean(key)
                    t.pop(key)
            types = {f.name: f.type for f in fields(Hyperparams)}
            hp = {}
            for key, raw in t.items():
                if key not in types:
                    raise ValueError(f"unknown train option {key!r}")
                hp[key] = int(raw) if "int" in str(types[key]) else float(raw)
            kw["hyper"] = Hyperparams(**hp)
        if parser.has_section("eval") and "specificities" in parser["eval"]:
            kw["specificities"] = tuple(
                s.strip() if s.strip() == "benchmark" else float(s)
                for s in parser["eval"]["specificities"].split(","))
        return cls(**kw)

    def to_text(self) -> str:
        lines = ["[paths]", f"workdir = {self.workdir}"]
        if self.data_dir:
            lines.append(f"data_dir = {self.data_dir}")
        if self.spec_file:
            lines.append(f"spec_file = {self.spec_file}")
        lines.append("")
        lines += self.synth.to_text().splitlines()
        lines += ["", "[train]", f"train_fraction = {self.train_fraction}",
                  f"cv_folds = {self.cv_folds}", f"select_rounds = {self.select_rounds}",
                  f"combined = {self.combined}", f"shap_rows = {self.shap_rows}"]
        lines += [f"{k} = {v}" for k, v in asdict(self.hyper).items()]
        lines += ["", "[eval]", "specificities = " + ", ".join(str(s) for s in self.specificities)]
        return "\n".join(lines) + "\n"


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifact(path, stage)
    return path


def _write_csv(path: Path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: evalkit._fmt(r.get(k)) for k in columns})


# -- synth -----------------------------------------------------------------------

def stage_synth(cfg: PipelineConfig) -> tuple[Dataset, dict[str, SynthTruth]]:
    ds, truth = generate_with_truth(cfg.synth)
    out = cfg.data_path
    write_dataset(ds, out)
    rows = [{"admission_id": a, **asdict(t)} for a, t in sorted(truth.items())]
    _write_csv(out / "truth.csv", rows, ["admission_id", "category", "is_case", "target_ts",
                                         "signal", "icuww_positive", "lead_days"])
    (out / "synth.ini").write_text(cfg.synth.to_text())
    log.info("synth: %d admissions -> %s", len(ds), out)
    return ds, truth


def load_data(cfg: PipelineConfig) -> Dataset:
    _need(cfg.data_path / "admissions.csv", "synth")
    return load_dataset(cfg.data_path)


# -- cohort ----------------------------------------------------------------------

@dataclass
class Cohort:
    labels: list[CohortLabel]
    train_ids: list[str]
    test_ids: list[str]
    sampled_ids: list[str]          # training admissions kept by negative sampling

    @property
    def by_id(self) -> dict[str, CohortLabel]:
        return {lb.admission_id: lb for lb in self.labels}


def make_cohort(ds: Dataset, cfg: PipelineConfig) -> Cohort:
    labels = label_admissions(ds)
    train_ids, test_ids = split_train_test(labels, cfg.train_fraction, cfg.synth.seed)
    by_id = {lb.admission_id: lb for lb in labels}
    sampled = sample_admissions(train_ids, [int(by_id[a].is_case) for a in train_ids],
                                cfg.hyper.neg_sample_rate, cfg.hyper.seed)
    return Cohort(labels, train_ids, test_ids, sampled)


def stage_cohort(cfg: PipelineConfig, ds: Dataset | None = None) -> Cohort:
    ds = load_data(cfg) if ds is None else ds
    coh = make_cohort(ds, cfg)
    train, test, samp = set(coh.train_ids), set(coh.test_ids), set(coh.sampled_ids)
    rows = []
    for lb in coh.labels:
        a = lb.admission_id
        rows.append({"admission_id": a, "facility_cd": ds[a].facility_cd,
                     "status": "excluded" if lb.excluded else ("case" if lb.is_case else "control"),
                     "exclusion_reason": lb.exclusion_reason, "target_ts": lb.target_ts,
                     "split": "train" if a in train else ("test" if a in test else ""),
                     "sampled": int(a in samp)})
    _write_csv(cfg.path("cohort.csv"), rows, list(rows[0]) if rows else ["admission_id"])
    log.info("cohort: %d train (%d sampled), %d test", len(train), len(samp), len(test))
    return coh


def load_cohort(cfg: PipelineConfig) -> Cohort:
    path = _need(cfg.path("cohort.csv"), "cohort")
    labels, train, test, samp = [], [], [], []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            tgt = int(r["target_ts"]) if r["target_ts"] else None
            labels.append(CohortLabel(r["admission_id"], r["status"] == "case", tgt,
                                      r["status"] == "excluded", r["exclusion_reason"]))
            {"train": train, "test": test}.get(r["split"], []).append(r["admission_id"])
            if r["sampled"] == "1":
                samp.append(r["admission_id"])
    return Cohort(labels, train, test, samp)


# -- featgen ---------------------------------------------------------------------

def build_split(ds: Dataset, coh: Cohort, ids: Sequence[str], config: FeatureConfig,
                with_tables: bool = False):
    by_id = coh.by_id
    labs = [by_id[a] for a in ids]
    inst = {lb.admission_id: instant_times(ds[lb.admission_id], lb) for lb in labs}
    return build_matrix(ds, labs, inst, config, with_tables=with_tables)


def stage_featgen(cfg: PipelineConfig, ds: Dataset | None = None, coh: Cohort | None = None,
                  tables: bool = False) -> tuple[FeatureMatrix, FeatureMatrix]:
    ds = load_data(cfg) if ds is None else ds
    coh = load_cohort(cfg) if coh is None else coh
    config = FeatureConfig.from_dataset(ds)
    out = cfg.path("features")
    out.mkdir(parents=True, exist_ok=True)
    (out / "feature_config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1))
    mats = {}
    for name, ids in (("train", coh.sampled_ids), ("test", coh.test_ids)):
        m, tabs = build_split(ds, coh, ids, config, with_tables=tables)
        m.save(out / f"{name}.npz")
        mats[name] = m
        if tables:
            tdir = out / "tables" / name
            tdir.mkdir(parents=True, exist_ok=True)
            for t in tabs.values():
                t.write_csv(tdir / f"{t.name}.csv")
    log.info("featgen: train %s, test %s", mats["train"].X.shape, mats["test"].X.shape)
    return mats["train"], mats["test"]


def load_matrix(cfg: PipelineConfig, name: str) -> FeatureMatrix:
    return FeatureMatrix.load(_need(cfg.path("features", f"{name}.npz"), "featgen"))


def load_feature_config(cfg: PipelineConfig) -> FeatureConfig:
    path = _need(cfg.path("features", "feature_config.json"), "featgen")
    return FeatureConfig.from_dict(json.loads(path.read_text()))


def spec_text(cfg: PipelineConfig, config: FeatureConfig) -> str:
    if cfg.spec_file:
        return _need(Path(cfg.spec_file), "spec_file").read_text()
    return default_spec(config)


def stage_sqlgen(cfg: PipelineConfig) -> str:
    config = load_feature_config(cfg)
    sql = generate_sql(parse_spec(spec_text(cfg, config)), catalog(config))
    cfg.path("features", "merge.sql").write_text(sql)
    return sql


def stage_merge(cfg: PipelineConfig, split: str = "test") -> RelTable:
    config = load_feature_config(cfg)
    tdir = cfg.path("features", "tables", split)
    keys = {name: key for name, (key, _) in BOOKKEEPING_COLUMNS.items()}
    keys.update({td.name: td.key for td in feature_tables(config)})
    tables = {name: RelTable.read_csv(_need(tdir / f"{name}.csv", "featgen --tables"), key)
              for name, key in keys.items()}
    result = execute_query(parse_spec(spec_text(cfg, config)), tables, "merged")
    result.write_csv(cfg.path("features", "merged.csv"))
    return result


# -- train -----------------------------------------------------------------------

def model_groups(matrix: FeatureMatrix, combined: bool) -> dict[str, np.ndarray]:
    """Model name -> row mask. One model per facility unless combined."""
    if combined:
        return {"combined": np.ones(len(matrix), dtype=bool)}
    fac = matrix.facility_cd.astype(str)
    return {f: fac == f for f in sorted(set(fac))}


def fit_group(train_m: FeatureMatrix, cfg: PipelineConfig) -> tuple[GbdtModel, CVResult | None]:
    cv = None
    rounds = cfg.hyper.max_rounds
    if cfg.select_rounds:
        cv = cross_validate_rounds(train_m, cfg.hyper, k=cfg.cv_folds, sample=False)
        rounds = cv.best_rounds
    model = train(train_m, cfg.hyper, rounds=rounds, sample=False)
    meta = {"neg_sampled_before_extraction": True}
    if cv is not None:
        meta["cv_best_rounds"] = cv.best_rounds
        meta["cv_row_best_rounds"] = cv.row_best_rounds
    return model.with_metadata(**meta), cv


def _only(groups: dict, facility: str | None) -> dict:
    if facility is None:
        return groups
    if facility not in groups:
        raise ValueError(f"no rows for facility {facility}; have {', '.join(sorted(groups))}")
    return {facility: groups[facility]}


def stage_train(cfg: PipelineConfig, train_m: FeatureMatrix | None = None,
                facility: str | None = None) -> dict[str, GbdtModel]:
    train_m = load_matrix(cfg, "train") if train_m is None else train_m
    groups = model_groups(train_m, cfg.combined)
    if facility is not None and cfg.combined:
        raise ValueError("--facility and --combined are exclusive")
    models = {}
    for name, mask in _only(groups, facility).items():
        model, cv = fit_group(train_m.take(mask), cfg)
        mdir = cfg.path("models")
        mdir.mkdir(parents=True, exist_ok=True)
        if cv is not None:
            _write_csv(mdir / f"cv_{name}.csv", cv.to_rows(), ["rounds", "admission_auc", "row_auc"])
        model.save(mdir / f"model_{name}.json")
        models[name] = model
        log.info("train %s: %d rounds", name, len(model.trees))
    return models


def load_models(cfg: PipelineConfig) -> dict[str, GbdtModel]:
    files = sorted(cfg.path("models").glob("model_*.json")) if cfg.path("models").exists() else []
    if not files:
        raise MissingArtifact(cfg.path("models", "model_<name>.json"), "train")
    return {f.stem[len("model_"):]: GbdtModel.load(f) for f in files}


# -- eval ------------------------------------------------------------------------

def admission_scores(matrix: FeatureMatrix, scores: np.ndarray) -> list[evalkit.AdmissionScore]:
    aid = matrix.admission_id.astype(str)
    ids, start = np.unique(aid, return_index=True)
    bounds = list(start) + [len(aid)]
    order_ok = np.all(np.diff(start) > 0)
    if not order_ok:
        raise ValueError("matrix rows must be grouped by admission")
    out = []
    for i, a in enumerate(ids):
        lo, hi = bounds[i], bounds[i + 1]
        tgt = matrix.meta["target_ts"][lo]
        out.append(evalkit.AdmissionScore(
            a, int(matrix.label[lo]), tuple(zip(matrix.ts[lo:hi].tolist(), scores[lo:hi].tolist())),
            None if np.isnan(tgt) else int(tgt), int(matrix.meta["admit_ts"][lo])))
    return out


def icuww_scores(ds: Dataset, matrix: FeatureMatrix) -> list[evalkit.AdmissionScore]:
    """0/1 alert series at the same scoring instants as the model."""
    zeros = np.zeros(len(matrix))
    base = admission_scores(matrix, zeros)
    out = []
    for s in base:
        ts = [t for t, _ in s.series]
        first = alert_series(ds[s.admission_id], ts)
        series = tuple((t, 1.0 if first is not None and t >= first else 0.0) for t in ts)
        out.append(evalkit.AdmissionScore(s.admission_id, s.label, series, s.target_ts, s.admit_ts))
    return out


@dataclass
class EvalResult:
    name: str
    model: GbdtModel
    scores: list[evalkit.AdmissionScore]
    icuww: list[evalkit.AdmissionScore]
    report: evalkit.CompareReport
    calibration: evalkit.CalibrationBins
    auc: object
    icuww_auc: object


def evaluate_model(name: str, model: GbdtModel, test_m: FeatureMatrix, ds: Dataset,
                   cfg: PipelineConfig) -> EvalResult:
    raw = model.predict_proba(test_m.X)
    ms = admission_scores(test_m, raw)
    ic = icuww_scores(ds, test_m)
    rep = evalkit.compare_report(ms, ic, cfg.specificities)
    served = "Model B" if "Model B" in rep.thresholds else "Model A"
    model = model.with_metadata(operating_point={
        "name": served, "threshold": rep.thresholds[served],
        "thresholds": {k: v for k, v in rep.thresholds.items()}})
    return EvalResult(name, model, ms, ic, rep, evalkit.calibration_quintiles(ms),
                      evalkit.admission_level_auc(ms), evalkit.admission_level_auc(ic))


def write_eval(cfg: PipelineConfig, res: EvalResult) -> None:
    rdir = cfg.path("reports", res.name)
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / "report.csv").write_text(res.report.to_csv())
    (rdir / "markers.csv").write_text(res.report.markers_csv())
    (rdir / "reference_table.csv").write_text(res.report.reference_csv())
    roc = [{"method": "model", "threshold": t, "sensitivity": a, "specificity": b}
           for t, a, b in evalkit.roc_points(res.scores)]
    roc += [{"method": "ICUWW", "threshold": t, "sensitivity": a, "specificity": b}
            for t, a, b in evalkit.roc_points(res.icuww)]
    _write_csv(rdir / "roc_points.csv", roc, ["method", "threshold", "sensitivity", "specificity"])
    cal = res.calibration
    _write_csv(rdir / "calibration.csv",
               [{"bin": i + 1, "admissions": n, "transfer_rate": r, "max_score": s}
                for i, (n, r, s) in enumerate(zip(cal.counts, cal.rates, cal.score_max))],
               ["bin", "admissions", "transfer_rate", "max_score"])
    warn = []
    for method, theta in res.report.thresholds.items():
        if method == "icuww_specificity":
            continue
        warn += [{"method": method, **r} for r in evalkit.warnings_rows(res.scores, theta)]
    warn += [{"method": "ICUWW", **r} for r in evalkit.warnings_rows(res.icuww, 1.0)]
    _write_csv(rdir / "warnings.csv", warn, ["method", "admission_id", "advance_warning_days"])
    res.model.save(cfg.path("models", f"model_{res.name}.json"))


def stage_eval(cfg: PipelineConfig, models: dict[str, GbdtModel] | None = None,
               test_m: FeatureMatrix | None = None, ds: Dataset | None = None,
               facility: str | None = None) -> dict[str, EvalResult]:
    models = _only(load_models(cfg) if models is None else models, facility)
    test_m = load_matrix(cfg, "test") if test_m is None else test_m
    ds = load_data(cfg) if ds is None else ds
    groups = {**model_groups(test_m, False), **model_groups(test_m, True)}
    out = {}
    for name, model in models.items():
        if name not in groups:
            raise ValueError(f"no test rows for model {name}")
        res = evaluate_model(name, model, test_m.take(groups[name]), ds, cfg)
        write_eval(cfg, res)
        out[name] = res
        log.info("eval %s: AUC %.4f (ICUWW %.4f)", name, float(res.auc), float(res.icuww_auc))
    return out


# -- explain ---------------------------------------------------------------------

def explain_rows(test_m: FeatureMatrix, n: int, seed: int) -> np.ndarray:
    if len(test_m) <= n:
        return np.arange(len(test_m))
    rng = np.random.default_rng([seed, 303])
    return np.sort(rng.choice(len(test_m), size=n, replace=False))


def stage_explain(cfg: PipelineConfig, models: dict[str, GbdtModel] | None = None,
                  test_m: FeatureMatrix | None = None, facility: str | None = None
                  ) -> dict[str, list]:
    models = _only(load_models(cfg) if models is None else models, facility)
    test_m = load_matrix(cfg, "test") if test_m is None else test_m
    groups = {**model_groups(test_m, False), **model_groups(test_m, True)}
    out = {}
    for name, model in models.items():
        sub = test_m.take(groups[name])
        X = sub.X[explain_rows(sub, cfg.shap_rows, cfg.hyper.seed)]
        phi, _base = shap_matrix(model, X)
        rank = ranking(phi, model.feature_names)
        imp = importance_gain(model)
        rdir = cfg.path("reports", name)
        rdir.mkdir(parents=True, exist_ok=True)
        _write_csv(rdir / "shap_ranking.csv",
                   [{"rank": i + 1, "feature": f, "sum_abs_shap": v} for i, (f, v) in enumerate(rank)],
                   ["rank", "feature", "sum_abs_shap"])
        _write_csv(rdir / "importance.csv",
                   [{"feature": f, "total_gain": g, "split_count": c, "cover_weighted_gain": w}
                    for f, (g, c, w) in sorted(imp.items(), key=lambda kv: (-kv[1][0], kv[0]))],
                   ["feature", "total_gain", "split_count", "cover_weighted_gain"])
        out[name] = rank
    return out


# -- everything ------------------------------------------------------------------

@dataclass
class PipelineResult:
    dataset: Dataset
    truth: dict[str, SynthTruth]
    cohort: Cohort
    train_matrix: FeatureMatrix
    test_matrix: FeatureMatrix
    models: dict[str, GbdtModel]
    evals: dict[str, EvalResult]
    rankings: dict[str, list]
    timings: dict[str, float]


def run_pipeline(cfg: PipelineConfig, tables: bool = False) -> PipelineResult:
    timings = {}
    t0 = time.perf_counter()

    def tick(name):
        nonlocal t0
        now = time.perf_counter()
        timings[name] = now - t0
        t0 = now

    ds, truth = stage_synth(cfg)
    tick("synth")
    coh = stage_cohort(cfg, ds)
    tick("cohort")
    train_m, test_m = stage_featgen(cfg, ds, coh, tables=tables)
    tick("featgen")
    stage_sqlgen(cfg)
    if tables:
        stage_merge(cfg)
    tick("sqlgen")
    models = stage_train(cfg, train_m)
    tick("train")
    evals = stage_eval(cfg, models, test_m, ds)
    models = {k: v.model for k, v in evals.items()}
    tick("eval")
    ranks = stage_explain(cfg, models, test_m)
    tick("explain")
    timings["total"] = sum(timings.values())
    return PipelineResult(ds, truth, coh, train_m, test_m, models, evals, ranks, timings)
