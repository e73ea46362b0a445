"""Sequentially thresholded least squares (STLSQ)."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np


class SindyError(ValueError):
    pass


@dataclass
class SparseModel:
    term_names: list
    coefficients: np.ndarray  # targets x terms
    target_names: list = field(default_factory=list)
    threshold: float = 0.0
    ridge: float = 0.0
    iterations_used: list = field(default_factory=list)
    library: dict | None = None

    def __post_init__(self):
        self.term_names = list(self.term_names)
        self.coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if not self.target_names:
            self.target_names = [f"y{k}" for k in range(self.coefficients.shape[0])]
        self.target_names = list(self.target_names)
        if self.coefficients.shape != (len(self.target_names), len(self.term_names)):
            raise SindyError(f"coefficient shape {self.coefficients.shape} does not match "
                             f"{len(self.target_names)} targets x {len(self.term_names)} terms")

    @property
    def support(self) -> np.ndarray:
        return self.coefficients != 0

    def row(self, target: str) -> np.ndarray:
        return self.coefficients[self.target_names.index(target)]

    def equation(self, target: str, precision: int = 6) -> str:
        parts = [f"{c:+.{precision}g}*{n}" if n != "1" else f"{c:+.{precision}g}"
                 for c, n in zip(self.row(target), self.term_names) if c != 0]
        return " ".join(parts) if parts else "0"

    def subset(self, targets) -> "SparseModel":
        idx = [self.target_names.index(t) for t in targets]
        return SparseModel(self.term_names, self.coefficients[idx], list(targets),
                           self.threshold, self.ridge,
                           [self.iterations_used[i] for i in idx] if self.iterations_used else [],
                           self.library)

    def to_dict(self) -> dict:
        return {
            "kind": "sparse",
            "term_names": self.term_names,
            "target_names": self.target_names,
            "coefficients": {t: [float(c) for c in row]
                             for t, row in zip(self.target_names, self.coefficients)},
            "threshold": self.threshold,
            "ridge": self.ridge,
            "iterations_used": [int(i) for i in self.iterations_used],
            "library": self.library,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SparseModel":
        if d.get("kind", "sparse") != "sparse":
            raise SindyError(f"not a sparse model: kind={d.get('kind')!r}")
        targets = d["target_names"]
        coef = [d["coefficients"][t] for t in targets]
        return cls(d["term_names"], np.array(coef, dtype=float).reshape(len(targets), -1),
                   targets, d.get("threshold", 0.0), d.get("ridge", 0.0),
                   d.get("iterations_used", []), d.get("library"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SparseModel":
        return cls.from_dict(json.loads(text))


def _solve(R, b, cols, ridge):
    """Least squares on the columns `cols` of the triangular factor."""
    Rs = R[:, cols]
    if ridge > 0:
        Rs = np.vstack([Rs, np.sqrt(ridge) * np.eye(len(cols))])
        b = np.concatenate([b, np.zeros(len(cols))])
    return np.linalg.lstsq(Rs, b, rcond=None)[0]


def stlsq(theta, targets, threshold: float = 1e-4, ridge: float = 1e-10,
          max_iter: int = 20, target_names=None, trace: list | None = None) -> SparseModel:
    """Sparse regression of each target column on the library columns.

    Columns are scaled to unit RMS and each target is divided by its own RMS, so
    `threshold` and `ridge` act on dimensionless coefficients. Coefficients below
    the threshold are zeroed and the survivors refit until the support stops
    changing or `max_iter` fits have run. The reported coefficients are in the
    original units.

    The least-squares fits use one QR factorization of the scaled library, so
    each refit only touches an (n_terms x |support|) system.
    If `trace` is a list, the support size after every fit is appended per target.
    """
    if threshold < 0 or ridge < 0:
        raise SindyError("threshold and ridge must be >= 0")
    A = np.asarray(theta.values, dtype=float)
    names = list(theta.term_names)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if A.shape[0] != Y.shape[0]:
        raise SindyError(f"library has {A.shape[0]} rows but targets have {Y.shape[0]}")
    n_terms = A.shape[1]

    scale = np.sqrt(np.mean(A * A, axis=0))
    usable = scale > 0
    if not np.all(usable):
        dead = [n for n, u in zip(names, usable) if not u]
        warnings.warn(f"excluding {len(dead)} all-zero library columns: {', '.join(dead[:5])}",
                      RuntimeWarning, stacklevel=2)
    As = np.zeros_like(A)
    As[:, usable] = A[:, usable] / scale[usable]
    Q, R = np.linalg.qr(As)

    coef = np.zeros((Y.shape[1], n_terms))
    iters = []
    for j in range(Y.shape[1]):
        y = Y[:, j]
        y_scale = np.sqrt(np.mean(y * y))
        if y_scale == 0:
            iters.append(0)
            if trace is not None:
                trace.append([0])
            continue
        b = Q.T @ (y / y_scale)
        support = np.flatnonzero(usable)
        sizes = []
        w = np.zeros(0)
        it = 0
        while support.size and it < max_iter:
            it += 1
            w = _solve(R, b, support, ridge)
            sizes.append(support.size)
            small = np.abs(w) < threshold
            if not small.any():
                break
            support, w = support[~small], w[~small]
        if support.size == 0:
            name = target_names[j] if target_names is not None else j
            warnings.warn(f"no library terms survive for target {name}", RuntimeWarning,
                          stacklevel=2)
        elif it == max_iter and (np.abs(w) < threshold).any():
            # iteration cap reached mid-pruning: keep the last fit's survivors consistent
            keep = np.abs(w) >= threshold
            support, w = support[keep], w[keep]
        coef[j, support] = w * y_scale / scale[support]
        iters.append(it)
        if trace is not None:
            trace.append(sizes)
    return SparseModel(names, coef, list(target_names) if target_names is not None else [],
                       threshold, ridge, iters)


def predict(model: SparseModel, theta) -> np.ndarray:
    """Model output for every library row, aligned by term name."""
    have, need = set(theta.term_names), set(model.term_names)
    if have != need:
        diff = sorted(have ^ need)
        raise SindyError(f"term names differ: {', '.join(diff[:10])}"
                         f"{' ...' if len(diff) > 10 else ''}")
    order = [model.term_names.index(n) for n in theta.term_names]
    return theta.values @ model.coefficients[:, order].T


def threshold_sweep(theta, targets, thresholds, ridge: float = 1e-10, target_names=None):
    """Support size and fit error for each threshold; one row per (threshold, target)."""
    rows = []
    Y = np.asarray(targets, dtype=float)
    for thr in thresholds:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            m = stlsq(theta, Y, thr, ridge, target_names=target_names)
        pred = predict(m, theta)
        for j, name in enumerate(m.target_names):
            err = float(np.mean((pred[:, j] - Y[:, j]) ** 2))
            rows.append({"threshold": float(thr), "target": name,
                         "support": int(np.count_nonzero(m.coefficients[j])), "mse": err})
    return rows
