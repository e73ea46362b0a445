"""Regression datasets built from simulated trajectories, plus CSV persistence."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import INPUT_NAMES, STATE_NAMES

COLUMN_NAMES = STATE_NAMES + INPUT_NAMES
DERIV_NAMES = tuple(f"d_{s}" for s in STATE_NAMES)
CSV_HEADER = ("t",) + COLUMN_NAMES + DERIV_NAMES
EVENT_GUARD = 2  # samples within this many steps of an event are dropped in difference mode


class DatasetError(ValueError):
    pass


class SchemaError(DatasetError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    dXdt: np.ndarray
    t: np.ndarray
    meta: dict = field(default_factory=dict)
    column_names: tuple = COLUMN_NAMES
    target_names: tuple = STATE_NAMES

    def __post_init__(self):
        if not (len(self.X) == len(self.dXdt) == len(self.t)):
            raise DatasetError("X, dXdt and t must have the same number of rows")
        if self.X.shape[1] != len(self.column_names):
            raise DatasetError("X column count does not match column_names")
        if self.dXdt.shape[1] != len(self.target_names):
            raise DatasetError("dXdt column count does not match target_names")

    def __len__(self):
        return len(self.t)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.column_names.index(name)]

    def target(self, name: str) -> np.ndarray:
        return self.dXdt[:, self.target_names.index(name)]

    def rows(self, index) -> "Dataset":
        return replace(self, X=self.X[index], dXdt=self.dXdt[index], t=self.t[index],
                       meta=dict(self.meta))

    def split(self, holdout: float = 0.2) -> tuple["Dataset", "Dataset"]:
        """Chronological split: the last `holdout` fraction is the test part."""
        n_train = int(round(len(self) * (1.0 - holdout)))
        return self.rows(slice(0, n_train)), self.rows(slice(n_train, None))

    def equals(self, other: "Dataset") -> bool:
        return (self.column_names == other.column_names
                and np.array_equal(self.X, other.X) and np.array_equal(self.dXdt, other.dXdt)
                and np.array_equal(self.t, other.t) and self.meta == other.meta)


def build_dataset(traj, mode: str = "exact", stride: int = 10, gains: dict | None = None,
                  sigma: float = 0.0, seed: int = 0) -> Dataset:
    """Turn a trajectory into (X, dX/dt) rows.

    mode "exact" copies the recorded right-hand side. mode "central-difference"
    uses (x[k+1] - x[k-1]) / 2dt, drops both endpoints and every sample within
    EVENT_GUARD steps of a reference step. With sigma > 0 measurement noise is
    added to the states before differencing (difference mode) or to X (exact mode).
    Rows are kept where the original sample index is a multiple of `stride`.
    """
    if stride < 1:
        raise DatasetError("stride must be >= 1")
    if mode not in ("exact", "central-difference"):
        raise DatasetError(f"unknown derivative mode {mode!r}")
    n = len(traj.times)
    states = traj.states
    if mode == "exact":
        keep = np.arange(n)
        dxdt = traj.derivs
    else:
        if n < 3:
            raise DatasetError("central differences need at least 3 samples")
        if sigma > 0:
            states = states + np.random.default_rng(seed).normal(0.0, sigma, states.shape)
        dxdt = np.full_like(states, np.nan)
        dxdt[1:-1] = (states[2:] - states[:-2]) / (2.0 * traj.dt)
        ok = np.zeros(n, dtype=bool)
        ok[1:-1] = True
        for k in traj.event_steps:
            ok[max(0, k - EVENT_GUARD):k + EVENT_GUARD + 1] = False
        keep = np.flatnonzero(ok)
    keep = keep[keep % stride == 0]
    if keep.size == 0:
        raise DatasetError("no samples left after exclusions")
    X = np.hstack([states, traj.inputs])[keep]
    meta = {"dt": float(traj.dt), "mode": mode, "stride": int(stride), "sigma": 0.0,
            "seed": int(seed), "gains": dict(gains or {})}
    ds = Dataset(X=X, dXdt=np.array(dxdt[keep]), t=np.array(traj.times[keep]), meta=meta)
    if mode == "exact" and sigma > 0:
        ds = add_noise(ds, sigma, seed)
    ds.meta["sigma"] = float(sigma)
    return ds


def add_noise(ds: Dataset, sigma: float, seed: int) -> Dataset:
    """I.i.d. Gaussian noise of standard deviation sigma on every X column."""
    if sigma < 0:
        raise DatasetError("sigma must be >= 0")
    meta = dict(ds.meta, sigma=float(sigma), seed=int(seed))
    if sigma == 0:
        return replace(ds, X=ds.X.copy(), dXdt=ds.dXdt.copy(), t=ds.t.copy(), meta=meta)
    noise = np.random.default_rng(seed).normal(0.0, sigma, ds.X.shape)
    return replace(ds, X=ds.X + noise, dXdt=ds.dXdt.copy(), t=ds.t.copy(), meta=meta)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_csv(ds: Dataset, path) -> None:
    path = Path(path)
    data = np.hstack([ds.t[:, None], ds.X, ds.dXdt])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
    meta_path(path).write_text(json.dumps(ds.meta, indent=2, sort_keys=True) + "\n")


def load_csv(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if tuple(header) != CSV_HEADER:
            extra = [h for h in header if h not in CSV_HEADER]
            missing = [h for h in CSV_HEADER if h not in header]
            raise SchemaError(f"{path}: header does not match the expected columns "
                              f"(missing: {missing or 'none'}, unexpected: {extra or 'none'}, "
                              "or wrong order)")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise DatasetError(f"{path}: row {lineno} has {len(row)} cells, "
                                   f"expected {len(CSV_HEADER)}")
            vals = []
            for col, cell in zip(CSV_HEADER, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(f"{path}: row {lineno}, column {col!r}: "
                                       f"cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DatasetError(f"{path}: row {lineno}, column {col!r}: "
                                       f"non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(-1, len(CSV_HEADER))
    mp = meta_path(path)
    meta = json.loads(mp.read_text()) if mp.exists() else {}
    ns = len(COLUMN_NAMES)
    return Dataset(X=data[:, 1:1 + ns], dXdt=data[:, 1 + ns:], t=data[:, 0], meta=meta)
