"""Prefix expression trees: evaluation, constant fitting, printing."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .grammar import BINARY, CONST, UNARY

PROTECT = 1e-9
PROTECTED_VALUE = 1e9
_ARITY = {**{b: 2 for b in BINARY}, **{u: 1 for u in UNARY}}


class ExpressionError(ValueError):
    pass


@dataclass
class ExpressionTree:
    tokens: tuple
    constants: np.ndarray = field(default=None)

    def __post_init__(self):
        self.tokens = tuple(self.tokens)
        n = self.n_constants
        if self.constants is None:
            self.constants = np.ones(n)
        self.constants = np.asarray(self.constants, dtype=float).reshape(-1)
        if self.constants.size != n:
            raise ExpressionError(f"{n} constant placeholders but {self.constants.size} values")
        need = 1
        for tok in self.tokens:
            if need == 0:
                raise ExpressionError(f"trailing tokens in {self.tokens}")
            need += _ARITY.get(tok, 0) - 1
        if need != 0 or not self.tokens:
            raise ExpressionError(f"incomplete prefix sequence {self.tokens}")

    @property
    def n_constants(self) -> int:
        return sum(1 for t in self.tokens if t == CONST)

    @property
    def arities(self) -> tuple:
        return tuple(_ARITY.get(t, 0) for t in self.tokens)

    def __len__(self):
        return len(self.tokens)

    def with_constants(self, constants) -> "ExpressionTree":
        return ExpressionTree(self.tokens, np.array(constants, dtype=float))

    def infix(self, precision: int = 12) -> str:
        consts = iter(self.constants)

        def build(k):
            tok = self.tokens[k]
            if tok in BINARY:
                left, k1 = build(k + 1)
                right, k2 = build(k1)
                op = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[tok]
                return f"({left} {op} {right})", k2
            if tok in UNARY:
                arg, k1 = build(k + 1)
                if arg.startswith("(") and arg.endswith(")"):
                    arg = arg[1:-1]
                return f"{tok}({arg})", k1
            if tok == CONST:
                return format(float(next(consts)), f".{precision}g"), k + 1
            return tok, k + 1

        s, _ = build(0)
        if s.startswith("(") and s.endswith(")") and self.tokens[0] in BINARY:
            s = s[1:-1]
        return s

    def to_dict(self) -> dict:
        return {"prefix": list(self.tokens), "constants": [float(c) for c in self.constants],
                "infix": self.infix()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpressionTree":
        return cls(tuple(d["prefix"]), np.array(d.get("constants", []), dtype=float))

    def __str__(self):
        return self.infix()


def compile_tree(tree: ExpressionTree, X: np.ndarray, column_names):
    """Closure consts -> (values, flagged) evaluating the tree on the rows of X."""
    index = {c: k for k, c in enumerate(column_names)}
    for tok in tree.tokens:
        if tok not in _ARITY and tok != CONST and tok not in index:
            raise ExpressionError(f"unknown column {tok!r}")
    n = X.shape[0]
    tokens = tree.tokens

    def build(k, ci):
        tok = tokens[k]
        if tok in BINARY:
            fa, k1, ci = build(k + 1, ci)
            fb, k2, ci = build(k1, ci)
            if tok == "add":
                return (lambda c, fl: fa(c, fl) + fb(c, fl)), k2, ci
            if tok == "sub":
                return (lambda c, fl: fa(c, fl) - fb(c, fl)), k2, ci
            if tok == "mul":
                return (lambda c, fl: fa(c, fl) * fb(c, fl)), k2, ci

            def div(c, fl):
                num, den = fa(c, fl), fb(c, fl)
                small = np.abs(den) < PROTECT
                if np.any(small):
                    fl.append(True)
                    safe = np.where(small, 1.0, den)
                    sign = np.where(np.signbit(num) != np.signbit(den), -1.0, 1.0)
                    return np.where(small, PROTECTED_VALUE * sign, num / safe)
                return num / den

            return div, k2, ci
        if tok in UNARY:
            fa, k1, ci = build(k + 1, ci)
            fn = np.sin if tok == "sin" else np.cos
            return (lambda c, fl: fn(fa(c, fl))), k1, ci
        if tok == CONST:
            j = ci
            return (lambda c, fl: np.full(n, c[j])), k + 1, ci + 1
        col = X[:, index[tok]]
        return (lambda c, fl: col), k + 1, ci

    f, _, _ = build(0, 0)

    def run(consts):
        flags: list = []
        with np.errstate(all="ignore"):
            out = np.asarray(f(np.asarray(consts, dtype=float), flags), dtype=float)
        if out.shape != (n,):
            out = np.broadcast_to(out, (n,)).copy()
        flagged = bool(flags) or not np.all(np.isfinite(out))
        return out, flagged

    return run


def evaluate(tree: ExpressionTree, X: np.ndarray, column_names) -> tuple[np.ndarray, bool]:
    """Row-wise values and whether any row hit protected division or went non-finite."""
    return compile_tree(tree, np.asarray(X, dtype=float), column_names)(tree.constants)


def fit_constants(tree: ExpressionTree, X, y, column_names, budget: int = 200,
                  _compiled=None) -> ExpressionTree:
    """Nelder-Mead on the constants from all-ones, minimizing mean squared error."""
    if tree.n_constants == 0:
        return tree
    run = _compiled or compile_tree(tree, np.asarray(X, dtype=float), column_names)
    y = np.asarray(y, dtype=float)

    def loss(c):
        yhat, flagged = run(c)
        if flagged:
            return np.inf
        return float(np.mean((yhat - y) ** 2))

    x0 = np.ones(tree.n_constants)
    best = [loss(x0), x0.copy()]

    def tracked(c):
        val = loss(c)
        if val < best[0]:
            best[0], best[1] = val, np.array(c, dtype=float)
        return val

    if budget > 1:
        minimize(tracked, x0, method="Nelder-Mead",
                 options={"maxfev": budget - 1, "xatol": 1e-12, "fatol": 0.0})
    return tree.with_constants(best[1])


def reward(yhat, y, flagged: bool = False) -> float:
    """1 / (1 + NRMSE), NRMSE = RMSE / std(y); 0 for flagged or non-finite predictions."""
    y = np.asarray(y, dtype=float)
    sd = float(np.std(y))
    if sd == 0:
        raise ValueError("target has zero variance; fit it as a constant instead of searching")
    if flagged:
        return 0.0
    yhat = np.asarray(yhat, dtype=float)
    if yhat.shape != y.shape:
        raise ValueError("prediction and target lengths differ")
    if not np.all(np.isfinite(yhat)):
        return 0.0
    nrmse = float(np.sqrt(np.mean((yhat - y) ** 2))) / sd
    if not np.isfinite(nrmse):
        return 0.0
    return 1.0 / (1.0 + nrmse)


def dumps(trees: dict) -> str:
    return json.dumps({k: t.to_dict() for k, t in trees.items()}, indent=2, sort_keys=True)
