"""Candidate-function library for sparse regression, and the exact coefficients
of the converter model expressed in that library."""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import INPUT_NAMES, STATE_NAMES

COLUMN_NAMES = STATE_NAMES + INPUT_NAMES


class LibraryError(ValueError):
    pass


class UnrepresentableError(LibraryError):
    pass


class RankWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LibrarySpec:
    include_constant: bool = True
    poly_degree: int = 2
    trig_variables: tuple[str, ...] = ("theta_pll",)
    trig_cross: bool = True
    custom_terms: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "trig_variables", tuple(self.trig_variables))
        object.__setattr__(self, "custom_terms", tuple(self.custom_terms))
        if self.poly_degree not in (1, 2):
            raise LibraryError(f"poly_degree must be 1 or 2, got {self.poly_degree}")

    @classmethod
    def polynomial_only(cls) -> "LibrarySpec":
        return cls(trig_variables=(), trig_cross=False)

    def to_dict(self) -> dict:
        return {"include_constant": self.include_constant, "poly_degree": self.poly_degree,
                "trig_variables": list(self.trig_variables), "trig_cross": self.trig_cross,
                "custom_terms": list(self.custom_terms)}

    @classmethod
    def from_dict(cls, d: dict) -> "LibrarySpec":
        known = {"include_constant", "poly_degree", "trig_variables", "trig_cross", "custom_terms"}
        unknown = set(d) - known
        if unknown:
            raise LibraryError(f"unknown library keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @property
    def label(self) -> str:
        return "trig-cross" if self.trig_variables and self.trig_cross else (
            "trig" if self.trig_variables else "polynomial-only")


@dataclass
class FeatureMatrix:
    term_names: list[str]
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[1] != len(self.term_names):
            raise LibraryError("column count does not match term names")
        if len(set(self.term_names)) != len(self.term_names):
            raise LibraryError("duplicate term names")


# -- term names ----------------------------------------------------------------------

_FACTOR = re.compile(r"^(?:(sin|cos)\((\w+)\)|(\w+)\^2|(\w+))$")


def parse_term(name: str) -> list[tuple[str, str]]:
    """Split a canonical term name into (kind, column) factors.

    kinds: 'id', 'sq', 'sin', 'cos'; the constant term '1' has no factors.
    """
    if name == "1":
        return []
    factors = []
    for part in name.split("*"):
        m = _FACTOR.match(part)
        if not m:
            raise LibraryError(f"cannot parse term {name!r}")
        if m.group(1):
            factors.append((m.group(1), m.group(2)))
        elif m.group(3):
            factors.append(("sq", m.group(3)))
        else:
            factors.append(("id", m.group(4)))
    return factors


def evaluate_term(name: str, X: np.ndarray, column_names) -> np.ndarray:
    index = {c: k for k, c in enumerate(column_names)}
    out = np.ones(X.shape[0])
    for kind, col in parse_term(name):
        if col not in index:
            raise LibraryError(f"term {name!r} references unknown column {col!r}")
        v = X[:, index[col]]
        if kind == "id":
            out = out * v
        elif kind == "sq":
            out = out * v * v
        elif kind == "sin":
            out = out * np.sin(v)
        else:
            out = out * np.cos(v)
    return out


def term_names(spec: LibrarySpec, column_names=COLUMN_NAMES) -> list[str]:
    cols = list(column_names)
    for v in spec.trig_variables:
        if v not in cols:
            raise LibraryError(f"trig variable {v!r} is not a dataset column")
    plain = [c for c in cols if c not in spec.trig_variables]
    names = ["1"] if spec.include_constant else []
    names += plain
    if spec.poly_degree == 2:
        for i, a in enumerate(plain):
            for b in plain[i:]:
                names.append(f"{a}^2" if a == b else f"{a}*{b}")
    for v in spec.trig_variables:
        names += [f"sin({v})", f"cos({v})"]
    if spec.trig_cross:
        for v in spec.trig_variables:
            for fn in ("sin", "cos"):
                names += [f"{fn}({v})*{c}" for c in plain]
    for t in spec.custom_terms:
        for _, col in parse_term(t):
            if col not in cols:
                raise LibraryError(f"custom term {t!r} references unknown column {col!r}")
        if t in names:
            raise LibraryError(f"custom term {t!r} duplicates a generated term")
        names.append(t)
    return names


def build(spec: LibrarySpec, ds) -> FeatureMatrix:
    """Evaluate every library term on the rows of a dataset (or any object with
    `X` and `column_names`)."""
    X, cols = ds.X, list(ds.column_names)
    names = term_names(spec, cols)
    values = np.column_stack([evaluate_term(n, X, cols) for n in names]) if len(X) else \
        np.empty((0, len(names)))
    if not np.all(np.isfinite(values)):
        raise LibraryError("non-finite library values")
    dead = [n for n, col in zip(names, values.T) if n != "1" and not np.any(col)]
    if dead:
        warnings.warn(f"library is rank deficient: {len(dead)} identically zero columns "
                      f"({', '.join(dead[:5])}{', ...' if len(dead) > 5 else ''})",
                      RankWarning, stacklevel=2)
    return FeatureMatrix(names, values)


# -- exact model coefficients ----------------------------------------------------------

def _symbolic_rhs(params):
    import sympy as sp

    from . import model

    xs = sp.symbols(STATE_NAMES)
    us = sp.symbols(INPUT_NAMES)
    C, S = sp.symbols("COS_THETA SIN_THETA")
    theta = xs[STATE_NAMES.index("theta_pll")]
    a, b = params.node_coefficients()

    def cos(arg):
        assert arg is theta
        return C

    def sin(arg):
        assert arg is theta
        return S

    exprs = model._rhs(list(xs), list(us), params, a, b, cos, sin)
    return exprs, xs, us, C, S


def ground_truth_coefficients(params, spec: LibrarySpec = LibrarySpec(),
                              column_names=COLUMN_NAMES, tol: float = 1e-13):
    """Coefficients of the true dynamics in the given library, one row per state.

    The model is expanded symbolically with sin/cos(theta_pll) kept as atoms and
    sin^2 + cos^2 = 1 applied; every resulting monomial must be a library term.
    Coefficients below `tol` times the row scale are rounding residue and dropped.
    """
    import sympy as sp

    from .sindy import SparseModel

    exprs, xs, us, C, S = _symbolic_rhs(params)
    sym = {s.name: s for s in (*xs, *us)}
    names = term_names(spec, column_names)
    position = {n: k for k, n in enumerate(names)}
    coef = np.zeros((len(STATE_NAMES), len(names)))
    theta_name = "theta_pll"
    trig_ok = theta_name in spec.trig_variables
    missing = set()
    gens = [C, S, *xs, *us]
    for row, e in enumerate(exprs):
        e = sp.expand(sp.sympify(e))
        e = sp.expand(e.subs(S**2, 1 - C**2))
        poly_terms = [(m, float(v)) for m, v in sp.Poly(e, *gens).terms()]
        scale = max((abs(v) for _, v in poly_terms), default=0.0)
        terms = []
        for monom, value in poly_terms:
            if abs(value) <= tol * scale:
                continue
            pc, ps = monom[0], monom[1]
            plain = []
            for g, power in zip(gens[2:], monom[2:]):
                plain += [g.name] * power
            if theta_name in plain:
                missing.add("raw theta_pll polynomial")
                continue
            if pc + ps > 1 or (pc + ps == 1 and len(plain) > 1):
                missing.add("higher-order trig products")
                continue
            if pc + ps == 1:
                fn = "cos" if pc else "sin"
                if not trig_ok:
                    missing.add("sin/cos(theta_pll) terms")
                    continue
                if plain and not spec.trig_cross:
                    missing.add("trig-cross terms")
                    continue
                name = f"{fn}({theta_name})" + (f"*{plain[0]}" if plain else "")
            elif not plain:
                name = "1"
            elif len(plain) == 1:
                name = plain[0]
            elif len(plain) == 2:
                i, j = (column_names.index(p) for p in plain)
                a_, b_ = (plain[0], plain[1]) if i <= j else (plain[1], plain[0])
                name = f"{a_}^2" if a_ == b_ else f"{a_}*{b_}"
            else:
                missing.add("polynomial degree > 2")
                continue
            terms.append((name, value))
        for name, value in terms:
            if name not in position:
                missing.add(f"term {name}")
                continue
            coef[row, position[name]] += value
    if missing:
        raise UnrepresentableError("library cannot represent the model; missing: "
                                   + ", ".join(sorted(missing)))
    return SparseModel(term_names=names, coefficients=coef, target_names=list(STATE_NAMES),
                       threshold=0.0, ridge=0.0, iterations_used=[0] * len(STATE_NAMES))
