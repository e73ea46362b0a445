"""Command-line pipeline: simulate -> identify -> evaluate."""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import library
from .config import ConfigError, PipelineConfig, dumps_config, load_config
from .dataset import DatasetError, build_dataset, load_csv, save_csv
from .identify import (ModelFormatError, identify_dsr, identify_sindy, load_model,
                       predict_dataset, reintegrate, save_model)
from .metrics import MetricsError, ScoredRun, assemble_report, compare_support, save_report
from .model import NoConvergenceError
from .params import DegenerateNetworkError
from .simulate import SimulationDiverged, run_protocol
from .sindy import SindyError, SparseModel
from .symreg.search import TrainingDiverged

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_EXISTS = 0, 2, 3, 4
DATASET_FILE = "dataset.csv"
SETTINGS_FILE = "settings.json"
TRUTH_FILE = "model_truth.json"


class OutputExists(Exception):
    pass


def model_file(method: str) -> str:
    return f"model_{method}.json"


def timing_file(method: str) -> str:
    return f"timing_{method}.json"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _guard(paths, overwrite: bool) -> None:
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not overwrite:
        raise OutputExists(f"output exists (use --overwrite): {', '.join(existing)}")


def _write_settings(cfg: PipelineConfig, out: Path, overwrite: bool) -> None:
    p = out / SETTINGS_FILE
    text = dumps_config(cfg)
    if p.exists() and p.read_text() != text and not overwrite:
        raise OutputExists(f"{p} holds different settings (use --overwrite)")
    p.write_text(text)


def _outdir(args, cfg: PipelineConfig) -> Path:
    out = Path(args.out or cfg.report.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: PipelineConfig, out: Path, overwrite: bool = False) -> Path:
    path = out / DATASET_FILE
    _guard([path], overwrite)
    _write_settings(cfg, out, overwrite)
    traj = run_protocol(cfg.model, cfg.schedule, cfg.sim.dt, cfg.sim.t_end)
    ds = build_dataset(traj, cfg.dataset.mode, cfg.dataset.stride, cfg.model.gains(),
                       cfg.dataset.noise, cfg.dataset.seed)
    save_csv(ds, path)
    _log(f"wrote {path} ({len(ds)} rows)")
    return path


def _load_dataset(cfg: PipelineConfig, path):
    ds = load_csv(path)
    if cfg.dataset.holdout > 0:
        train, test = ds.split(cfg.dataset.holdout)
        return train, test
    return ds, ds


def cmd_identify(cfg: PipelineConfig, method: str, dataset_path, out: Path,
                 overwrite: bool = False):
    mpath, tpath = out / model_file(method), out / timing_file(method)
    _guard([mpath, tpath], overwrite)
    train_ds, _ = _load_dataset(cfg, dataset_path)
    if method == "sindy":
        library.term_names(cfg.library, train_ds.column_names)  # schema check
        model, secs = identify_sindy(train_ds, cfg.library, cfg.sindy.threshold,
                                     cfg.sindy.ridge, cfg.sindy_targets)
    elif method == "dsr":
        def progress(t, rep):
            _log(f"dsr {t}: reward {rep.best_reward:.6f} after {rep.iterations} "
                 f"iterations: {rep.best}")
        model, secs, _ = identify_dsr(train_ds, cfg.dsr, cfg.dsr_targets, progress)
    else:
        raise ConfigError(f"unknown method {method!r}")
    _write_settings(cfg, out, overwrite)
    save_model(model, mpath)
    tpath.write_text(json.dumps({"method": method, "seconds": secs}, indent=2) + "\n")
    _log(f"wrote {mpath} ({secs:.2f} s)")
    return model, secs


def _method_of(model, path: Path) -> str:
    stem = path.stem
    if stem.startswith("model_"):
        return stem[len("model_"):]
    return "dsr" if not isinstance(model, SparseModel) else "sindy"


def _expressions(model) -> dict:
    if isinstance(model, SparseModel):
        return {t: model.equation(t) for t in model.target_names}
    return {t: tree.infix() for t, tree in model.trees.items()}


def cmd_evaluate(cfg: PipelineConfig, model_paths, dataset_path, out: Path,
                 overwrite: bool = False, truth=None):
    _, test_ds = _load_dataset(cfg, dataset_path)
    runs, libraries = [], {}
    for mp in model_paths:
        mp = Path(mp)
        model = load_model(mp)
        method = _method_of(model, mp)
        pred = predict_dataset(model, test_ds)
        if isinstance(model, SparseModel) and model.library is not None:
            libraries[method] = library.LibrarySpec.from_dict(model.library).label
        runtime = None
        tp = mp.with_name(timing_file(method))
        if tp.exists():
            runtime = json.loads(tp.read_text()).get("seconds")
        recovery = None
        if truth is not None and isinstance(model, SparseModel) and method != "truth":
            try:
                recovery = compare_support(model, truth.subset(model.target_names))
            except (MetricsError, ValueError) as exc:
                _log(f"no support comparison for {method}: {exc}")
        runs.append(ScoredRun(method, list(model.target_names), pred, runtime,
                              _expressions(model), recovery))
        if cfg.report.reintegrate:
            try:
                runs[-1].reintegration = reintegrate(model, test_ds, cfg.schedule, cfg.model)
            except ValueError as exc:
                _log(f"re-integration skipped for {method}: {exc}")
    targets = []
    for r in runs:
        targets += [t for t in r.targets if t not in targets]
    y_true = {t: test_ds.target(t) for t in targets}
    report = assemble_report(runs, y_true, test_ds.t, {"config": cfg.to_dict(),
                                                       "dataset": str(Path(dataset_path).name),
                                                       "libraries": libraries})
    _guard([out / "report.json"], overwrite)
    save_report(report, out)
    return report


def cmd_full(cfg: PipelineConfig, out: Path, overwrite: bool = False):
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise OutputExists(f"output directory {out} is not empty (use --overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    ds_path = cmd_simulate(cfg, out, True)
    cmd_identify(cfg, "sindy", ds_path, out, True)
    cmd_identify(cfg, "dsr", ds_path, out, True)
    truth = None
    try:
        truth = library.ground_truth_coefficients(cfg.model, cfg.library)
        truth = truth.subset(list(cfg.sindy_targets or truth.target_names))
        truth.library = cfg.library.to_dict()
        save_model(truth, out / TRUTH_FILE)
    except library.UnrepresentableError as exc:
        _log(f"no ground-truth model for this library: {exc}")
    report = cmd_evaluate(cfg, [out / model_file("sindy"), out / model_file("dsr")], ds_path,
                          out, True, truth)
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gflid", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON/TOML config file or 'paper-protocol' (default)")
        sp.add_argument("--out", help="output directory (default: report.out from the config)")
        sp.add_argument("--overwrite", action="store_true", help="replace existing outputs")

    common(sub.add_parser("simulate", help="simulate the protocol and write the dataset"))
    sp = sub.add_parser("identify", help="fit models to a dataset")
    common(sp)
    sp.add_argument("--method", choices=("sindy", "dsr"), required=True)
    sp.add_argument("--dataset", help=f"dataset CSV (default: OUT/{DATASET_FILE})")
    sp = sub.add_parser("evaluate", help="score models and write the report")
    common(sp)
    sp.add_argument("--dataset", help=f"dataset CSV (default: OUT/{DATASET_FILE})")
    sp.add_argument("--truth", help="sparse ground-truth model for support comparison")
    sp.add_argument("models", nargs="+", help="model JSON files")
    common(sub.add_parser("full", help="simulate, identify with both methods, evaluate"))
    sp = sub.add_parser("sweep", help="STLSQ threshold sweep on a dataset")
    common(sp)
    sp.add_argument("--dataset", help=f"dataset CSV (default: OUT/{DATASET_FILE})")
    sp.add_argument("--thresholds", default="1e-6,1e-5,1e-4,1e-3,1e-2",
                    help="comma-separated thresholds")
    sp = sub.add_parser("config", help="print the resolved configuration")
    sp.add_argument("--config")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "config":
            print(dumps_config(cfg), end="")
            return EXIT_OK
        out = _outdir(args, cfg)
        ds_path = Path(getattr(args, "dataset", None) or out / DATASET_FILE)
        if args.command == "simulate":
            cmd_simulate(cfg, out, args.overwrite)
        elif args.command == "identify":
            cmd_identify(cfg, args.method, ds_path, out, args.overwrite)
        elif args.command == "evaluate":
            truth = load_model(args.truth) if args.truth else None
            report = cmd_evaluate(cfg, args.models, ds_path, out, args.overwrite, truth)
            print(report.summary())
        elif args.command == "full":
            report = cmd_full(cfg, out, args.overwrite)
            print(report.summary())
        elif args.command == "sweep":
            from .sindy import threshold_sweep
            path = out / "sweep.csv"
            _guard([path], args.overwrite)
            ds, _ = _load_dataset(cfg, ds_path)
            theta = library.build(cfg.library, ds)
            thr = [float(v) for v in args.thresholds.split(",")]
            rows = threshold_sweep(theta, ds.dXdt, thr, cfg.sindy.ridge, list(ds.target_names))
            with open(path, "w") as fh:
                fh.write("threshold,target,support,mse\n")
                for r in rows:
                    fh.write(f"{r['threshold']!r},{r['target']},{r['support']},{r['mse']!r}\n")
            _log(f"wrote {path}")
    except OutputExists as exc:
        _log(f"error: {exc}")
        return EXIT_EXISTS
    except (SimulationDiverged, NoConvergenceError, TrainingDiverged, FloatingPointError) as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (ConfigError, DatasetError, library.LibraryError, ModelFormatError, MetricsError,
            SindyError, DegenerateNetworkError, FileNotFoundError, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    warnings.simplefilter("default")
    np.seterr(all="ignore")
    sys.exit(run())


if __name__ == "__main__":
    main()
