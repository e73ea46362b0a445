"""Scores, support recovery and the comparison report."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import STATE_NAMES

REPORT_FILE = "report.json"
TIMING_FILE = "timing.json"


class MetricsError(ValueError):
    pass


def _pair(y, yhat):
    y = np.asarray(y, dtype=float).reshape(-1)
    yhat = np.asarray(yhat, dtype=float).reshape(-1)
    if y.size != yhat.size:
        raise MetricsError(f"length mismatch: {y.size} vs {yhat.size}")
    if y.size == 0:
        raise MetricsError("empty input")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def r2(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise MetricsError("r2 is undefined for a zero-variance target")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


@dataclass
class SupportRecovery:
    precision: float
    recall: float
    max_rel_error: float
    per_target: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "max_rel_error": self.max_rel_error, "per_target": self.per_target}


def _recovery(found: np.ndarray, true: np.ndarray) -> tuple[float, float, float]:
    s, t = found != 0, true != 0
    hit = int(np.sum(s & t))
    precision = hit / int(s.sum()) if s.any() else 1.0
    recall = hit / int(t.sum()) if t.any() else 1.0
    both = s & t
    err = float(np.max(np.abs(found[both] - true[both]) / np.abs(true[both]))) if both.any() else 0.0
    return precision, recall, err


def compare_support(model, truth) -> SupportRecovery:
    """Support precision/recall and worst relative coefficient error on shared terms."""
    if set(model.term_names) != set(truth.term_names):
        raise MetricsError("term vocabularies differ")
    missing = [t for t in truth.target_names if t not in model.target_names]
    if missing:
        raise MetricsError(f"model lacks targets {missing}")
    order = [model.term_names.index(n) for n in truth.term_names]
    found_all, true_all = [], []
    per = {}
    for t in truth.target_names:
        found = model.row(t)[order]
        true = truth.row(t)
        p, r, e = _recovery(found, true)
        per[t] = {"precision": p, "recall": r, "max_rel_error": e}
        found_all.append(found)
        true_all.append(true)
    p, r, e = _recovery(np.concatenate(found_all), np.concatenate(true_all))
    return SupportRecovery(p, r, e, per)


@dataclass
class ScoredRun:
    method: str
    targets: list
    predictions: np.ndarray  # rows x targets
    runtime: float | None = None
    expressions: dict = field(default_factory=dict)
    recovery: SupportRecovery | None = None
    reintegration: dict | None = None


@dataclass
class IdentificationReport:
    records: list
    runtime: dict
    settings: dict
    recovery: dict
    plot_data: dict  # target -> {"t": ..., "y_true": ..., "y_<method>": ...}
    reintegration: dict = field(default_factory=dict)

    @property
    def runtime_ratio(self) -> float | None:
        """DSR over SINDy wall-clock, when both were timed."""
        a, b = self.runtime.get("dsr"), self.runtime.get("sindy")
        if a is None or b is None or b <= 0:
            return None
        return a / b

    def table(self, method: str | None = None) -> list:
        return [r for r in self.records if method is None or r["method"] == method]

    def score(self, target: str, method: str, key: str = "r2") -> float:
        for r in self.records:
            if r["target"] == target and r["method"] == method:
                return r[key]
        raise KeyError((target, method))

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {"records": self.records, "settings": self.settings, "recovery": self.recovery}
        if self.reintegration:
            d["reintegration"] = self.reintegration
        if include_timing:
            d["runtime"] = self.runtime
            d["runtime_ratio"] = self.runtime_ratio
        return d

    def summary(self) -> str:
        lines = [f"{'target':<10} {'method':<8} {'mse':>12} {'r2':>12}"]
        for r in self.records:
            lines.append(f"{r['target']:<10} {r['method']:<8} {r['mse']:>12.4g} {r['r2']:>12.6f}")
        for m, s in self.runtime.items():
            lines.append(f"runtime {m}: {s:.3f} s")
        if self.runtime_ratio is not None:
            lines.append(f"runtime ratio dsr/sindy: {self.runtime_ratio:.2f}")
        return "\n".join(lines)


def _order(targets) -> list:
    known = [s for s in STATE_NAMES if s in targets]
    return known + [t for t in targets if t not in known]


def assemble_report(runs: list, y_true: dict, t: np.ndarray, settings: dict | None = None
                    ) -> IdentificationReport:
    """Score every run on every target it covers, in state order."""
    if not runs:
        raise MetricsError("at least one run is required")
    targets = _order([x for x in y_true])
    records = []
    plot = {tg: {"t": np.asarray(t), "y_true": np.asarray(y_true[tg])} for tg in targets}
    for tg in targets:
        for run in runs:
            if tg not in run.targets:
                continue
            yhat = run.predictions[:, run.targets.index(tg)]
            y = y_true[tg]
            try:
                score = r2(y, yhat)
            except MetricsError:
                score = 1.0 if np.array_equal(np.asarray(y), yhat) else -math.inf
            records.append({"target": tg, "method": run.method, "mse": mse(y, yhat),
                            "r2": score, "expression": run.expressions.get(tg, "")})
            plot[tg][f"y_{run.method}"] = yhat
    runtime = {r.method: r.runtime for r in runs if r.runtime is not None}
    recovery = {r.method: r.recovery.to_dict() for r in runs if r.recovery is not None}
    reint = {r.method: r.reintegration for r in runs if r.reintegration is not None}
    return IdentificationReport(records, runtime, dict(settings or {}), recovery, plot, reint)


def save_report(report: IdentificationReport, outdir, methods=("sindy", "dsr")) -> list:
    """report.json (no wall-clock), timing.json and plot_<target>.csv files."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    p = outdir / REPORT_FILE
    p.write_text(dumps(report.to_dict(include_timing=False)))
    written.append(p)
    if report.runtime:
        p = outdir / TIMING_FILE
        p.write_text(dumps({"runtime": report.runtime, "runtime_ratio": report.runtime_ratio}))
        written.append(p)
    extra = sorted({k[2:] for d in report.plot_data.values() for k in d
                    if k.startswith("y_") and k != "y_true"} - set(methods))
    cols = ["t", "y_true"] + [f"y_{m}" for m in list(methods) + extra]
    for tg, d in report.plot_data.items():
        p = outdir / f"plot_{tg}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            n = len(d["t"])
            series = [d.get(c) for c in cols]
            for i in range(n):
                w.writerow(["" if s is None else repr(float(s[i])) for s in series])
        written.append(p)
    return written


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps(d: dict) -> str:
    return json.dumps(_clean(d), indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())
