"""Run either identification engine on a dataset and persist the resulting models."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import library
from .dataset import Dataset
from .sindy import SparseModel, predict, stlsq
from .symreg import ExpressionTree, Grammar, Policy, evaluate, gp_search, train


class ModelFormatError(ValueError):
    pass


@dataclass
class DsrSettings:
    engine: str = "policy"
    iterations: int = 200
    batch_size: int = 1000
    epsilon: float = 0.05
    entropy_weight: float = 0.005
    learning_rate: float = 0.01
    hidden: int = 32
    population: int = 500
    generations: int = 30
    const_budget: int = 200
    max_length: int = 32
    min_length: int = 3
    stop_reward: float | None = 0.99999
    seed: int = 0

    def __post_init__(self):
        if self.engine not in ("policy", "gp"):
            raise ValueError(f"engine must be 'policy' or 'gp', got {self.engine!r}")
        for name in ("iterations", "batch_size", "population", "generations", "const_budget",
                     "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")


@dataclass
class SymbolicModel:
    """One expression tree per target."""
    trees: dict
    rewards: dict = field(default_factory=dict)
    column_names: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)
    candidates: dict = field(default_factory=dict)

    @property
    def target_names(self) -> list:
        return list(self.trees)

    def predict(self, X) -> np.ndarray:
        cols = []
        for t, tree in self.trees.items():
            if tree.tokens == ("const",):
                cols.append(np.full(X.shape[0], tree.constants[0]))
                continue
            yhat, _ = evaluate(tree, X, self.column_names)
            cols.append(yhat)
        return np.column_stack(cols) if cols else np.zeros((X.shape[0], 0))

    def to_dict(self) -> dict:
        return {"kind": "symbolic", "column_names": self.column_names,
                "targets": {t: dict(tree.to_dict(), reward=self.rewards.get(t),
                                    candidates=self.candidates.get(t))
                            for t, tree in self.trees.items()},
                "settings": self.settings}

    @classmethod
    def from_dict(cls, d: dict) -> "SymbolicModel":
        trees, rewards, cands = {}, {}, {}
        for t, rec in d["targets"].items():
            trees[t] = ExpressionTree.from_dict(rec)
            rewards[t] = rec.get("reward")
            cands[t] = rec.get("candidates")
        return cls(trees, rewards, list(d["column_names"]), d.get("settings", {}), cands)


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        d = json.loads(path.read_text())
        kind = d.get("kind")
        if kind == "sparse":
            return SparseModel.from_dict(d)
        if kind == "symbolic":
            return SymbolicModel.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: malformed model file ({exc})") from None
    raise ModelFormatError(f"{path}: unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")


def predict_dataset(model, ds: Dataset) -> np.ndarray:
    """Derivative predictions, one column per model target."""
    if isinstance(model, SymbolicModel):
        missing = set(model.column_names) - set(ds.column_names)
        if missing or list(model.column_names) != list(ds.column_names):
            raise library.LibraryError(
                f"model columns do not match the dataset (missing: {sorted(missing)})")
        return model.predict(ds.X)
    if model.library is None:
        raise library.LibraryError("sparse model carries no library description")
    spec = library.LibrarySpec.from_dict(model.library)
    theta = library.build(spec, ds)
    return predict(model, theta)


def identify_sindy(ds: Dataset, spec: library.LibrarySpec, threshold: float = 1e-4,
                   ridge: float = 1e-10, targets=None) -> tuple[SparseModel, float]:
    """STLSQ fit of the requested targets; returns the model and wall-clock seconds."""
    targets = list(targets or ds.target_names)
    start = time.perf_counter()
    theta = library.build(spec, ds)
    Y = np.column_stack([ds.target(t) for t in targets])
    model = stlsq(theta, Y, threshold, ridge, target_names=targets)
    model.library = spec.to_dict()
    return model, time.perf_counter() - start


def identify_dsr(ds: Dataset, settings: DsrSettings, targets=None,
                 progress=None) -> tuple[SymbolicModel, float, dict]:
    """Independent symbolic search per target.

    Targets with zero variance are fitted as a constant. Returns the model,
    total wall-clock seconds and the per-target search reports.
    """
    targets = list(targets or ds.target_names)
    cols = list(ds.column_names)
    grammar = Grammar(tuple(cols), max_length=settings.max_length,
                      min_length=settings.min_length)
    trees, rewards, cands, reports = {}, {}, {}, {}
    start = time.perf_counter()
    for k, t in enumerate(targets):
        y = ds.target(t)
        if np.std(y) == 0:
            trees[t] = ExpressionTree(("const",), np.array([float(y[0]) if y.size else 0.0]))
            rewards[t], cands[t] = 1.0, 0
            continue
        seed = settings.seed + k
        if settings.engine == "policy":
            pol = Policy(grammar, settings.hidden, settings.learning_rate,
                         settings.entropy_weight, seed)
            rep = train(pol, grammar, ds.X, y, settings.iterations, settings.batch_size,
                        settings.epsilon, cols, settings.const_budget, settings.stop_reward)
        else:
            rep = gp_search(grammar, ds.X, y, settings.population, settings.generations, seed,
                            cols, settings.const_budget, settings.stop_reward)
        trees[t], rewards[t], cands[t], reports[t] = rep.best, rep.best_reward, rep.candidates, rep
        if progress:
            progress(t, rep)
    model = SymbolicModel(trees, rewards, cols, dict(vars(settings)), cands)
    return model, time.perf_counter() - start, reports


def model_rhs(model):
    """f(x_list, u_list) for a model that covers every state, for re-integration."""
    from .model import STATE_NAMES
    if list(model.target_names) != list(STATE_NAMES):
        raise ValueError("re-integration needs a model for every state, in state order")
    if isinstance(model, SymbolicModel):
        def f(x, u):
            return model.predict(np.array([list(x) + list(u)]))[0].tolist()
        return f
    cols = list(library.COLUMN_NAMES)
    factors = [[(k, cols.index(c)) for k, c in library.parse_term(n)] for n in model.term_names]
    coef = model.coefficients
    nz = [np.flatnonzero(coef[:, j]).size > 0 for j in range(coef.shape[1])]
    used = [j for j in range(coef.shape[1]) if nz[j]]
    coef_used = coef[:, used]
    fns = {"id": lambda v: v, "sq": lambda v: v * v, "sin": np.sin, "cos": np.cos}

    def f(x, u):
        row = list(x) + list(u)
        vals = np.empty(len(used))
        for m, j in enumerate(used):
            v = 1.0
            for kind, c in factors[j]:
                v *= fns[kind](row[c])
            vals[m] = v
        return (coef_used @ vals).tolist()
    return f


def reintegrate(model, ds: Dataset, schedule, params) -> dict:
    """Simulate the identified vector field from the first dataset row and score states."""
    from .metrics import mse, r2
    from .model import N_STATES, STATE_NAMES
    from .simulate import SimulationDiverged, integrate
    dts = np.diff(ds.t)
    if dts.size == 0 or not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise ValueError("re-integration needs uniformly spaced dataset rows")
    dt = float(dts[0])
    try:
        traj = integrate(params, ds.X[0, :N_STATES], _shifted(schedule, ds.t[0]), dt,
                         float(ds.t[-1] - ds.t[0]), rhs=model_rhs(model))
    except SimulationDiverged as exc:
        return {"diverged_at": exc.time + float(ds.t[0])}
    n = min(len(traj.times), len(ds))
    out = {}
    for k, s in enumerate(STATE_NAMES):
        y, yhat = ds.X[:n, k], traj.states[:n, k]
        out[s] = {"mse": mse(y, yhat), "r2": r2(y, yhat) if np.std(y) > 0 else None}
    return out


def _shifted(schedule, t0):
    from .simulate import ReferenceSchedule, inputs_at
    if t0 == 0:
        return schedule
    init = tuple(float(v) for v in inputs_at(schedule, t0))
    events = tuple((te - t0, n, v) for te, n, v in schedule.events if te > t0)
    return ReferenceSchedule(init, events)


__all__ = ["DsrSettings", "SymbolicModel", "load_model", "save_model", "predict_dataset",
           "identify_sindy", "identify_dsr", "model_rhs", "reintegrate"]
