"""Command-line entry point: `icuwarn <stage> [options]`."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline as pl
from .featspec import SpecError
from .featspec.relational import QueryError

log = logging.getLogger("icuwarn")

STAGES = ("synth", "cohort", "featgen", "sqlgen", "merge", "train", "eval", "explain", "serve",
          "pipeline")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file ([paths], [synth], [train], [eval])")
    common.add_argument("--seed", type=int, help="override the synth and training seed")
    common.add_argument("--workdir", type=Path, help="artifact directory")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="icuwarn", description="ICU transfer early-warning pipeline")
    sub = p.add_subparsers(dest="stage", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--n-admissions", type=int)
    s.add_argument("--prevalence", type=float)
    sub.add_parser("cohort", parents=[common], help="label admissions and split train/test")
    s = sub.add_parser("featgen", parents=[common], help="build feature matrices")
    s.add_argument("--tables", action="store_true", help="also write per-category tables")
    s = sub.add_parser("sqlgen", parents=[common], help="compile the feature spec to SQL")
    s.add_argument("--spec", type=Path, help="spec file (default: the full merge spec)")
    s = sub.add_parser("merge", parents=[common], help="run the feature spec over the tables")
    s.add_argument("--spec", type=Path)
    s.add_argument("--split", choices=("train", "test"), default="test")
    for name, text in (("train", "fit models (one per facility unless --combined)"),
                       ("eval", "evaluate models against the ICUWW benchmark"),
                       ("explain", "gain importance and Shapley rankings"),
                       ("pipeline", "run every stage in-process")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--facility", help="restrict to one facility's model")
        s.add_argument("--combined", action="store_true", help="one model over all facilities")
        if name in ("train", "pipeline"):
            s.add_argument("--rounds", type=int, help="fixed round count (skips CV selection)")
        if name == "pipeline":
            s.add_argument("--tables", action="store_true")
    s = sub.add_parser("serve", parents=[common], help="HTTP scoring endpoint")
    s.add_argument("--model", type=Path, help="model file (default: the work directory's only model)")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--threshold", type=float, help="override the model's operating point")
    return p


def _config(args) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig.from_file(args.config) if args.config else pl.PipelineConfig()
    if args.workdir:
        cfg = replace(cfg, workdir=args.workdir)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "combined", False):
        cfg = replace(cfg, combined=True)
    if getattr(args, "rounds", None):
        cfg = replace(cfg, select_rounds=False, hyper=replace(cfg.hyper, max_rounds=args.rounds))
    if getattr(args, "spec", None):
        cfg = replace(cfg, spec_file=args.spec)
    synth = {}
    if getattr(args, "n_admissions", None):
        synth["n_admissions"] = args.n_admissions
    if getattr(args, "prevalence", None):
        synth["prevalence"] = args.prevalence
    if synth:
        cfg = replace(cfg, synth=replace(cfg.synth, **synth))
    return cfg


def _print_report(evals) -> None:
    for name, res in evals.items():
        print(f"== {name}: admission-level AUC {float(res.auc):.4f} "
              f"(ICUWW {float(res.icuww_auc):.4f})")
        print(res.report.to_csv(), end="")


def _serve(cfg: pl.PipelineConfig, args) -> int:
    from .gbdt import GbdtModel
    from .service import ScoringService, make_server

    path = args.model
    if path is None:
        files = sorted(cfg.path("models").glob("model_*.json")) if cfg.path("models").exists() else []
        if len(files) == 1:
            path = files[0]
        elif files:
            raise ValueError("several models in the work directory; pick one with --model")
    model = None
    if path is not None:
        model = GbdtModel.load(pl._need(Path(path), "train"))
    else:
        log.warning("no model found; /score will answer 503")
    service = ScoringService(model, args.threshold)
    srv = make_server(service, args.host, args.port)
    print(f"serving on http://{args.host}:{srv.server_address[1]}", flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()
    return 0


def run(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        stage = args.stage
        if stage == "synth":
            ds, _ = pl.stage_synth(cfg)
            from .synth import describe
            print(describe(ds).to_text())
        elif stage == "cohort":
            coh = pl.stage_cohort(cfg)
            print(f"train {len(coh.train_ids)} (sampled {len(coh.sampled_ids)}), "
                  f"test {len(coh.test_ids)}")
        elif stage == "featgen":
            tr, te = pl.stage_featgen(cfg, tables=args.tables)
            print(f"train {tr.X.shape[0]} rows, test {te.X.shape[0]} rows, {tr.X.shape[1]} features")
        elif stage == "sqlgen":
            print(pl.stage_sqlgen(cfg), end="")
        elif stage == "merge":
            res = pl.stage_merge(cfg, args.split)
            print(f"merged {len(res)} rows x {len(res.columns)} columns")
        elif stage == "train":
            for name, m in pl.stage_train(cfg, facility=args.facility).items():
                print(f"{name}: {len(m.trees)} trees")
        elif stage == "eval":
            _print_report(pl.stage_eval(cfg, facility=args.facility))
        elif stage == "explain":
            for name, rank in pl.stage_explain(cfg, facility=args.facility).items():
                print(f"== {name}: top features by sum |phi|")
                for i, (f, v) in enumerate(rank[:15]):
                    print(f"{i + 1:3d} {f} {v:.4f}")
        elif stage == "serve":
            return _serve(cfg, args)
        elif stage == "pipeline":
            if args.facility:
                raise ValueError("pipeline runs every facility; use train/eval --facility")
            res = pl.run_pipeline(cfg, tables=args.tables)
            _print_report(res.evals)
            print("timings: " + ", ".join(f"{k} {v:.1f}s" for k, v in res.timings.items()))
    except pl.MissingArtifact as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, SpecError, QueryError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
