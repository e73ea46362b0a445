"""Risk-seeking policy-gradient training and the genetic-programming fallback."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grammar import Grammar, random_prefix, subtree_end
from .policy import Policy, PolicyDiverged
from .tree import ExpressionTree, compile_tree, fit_constants, reward

TOURNAMENT = 4
P_CROSSOVER = 0.7
P_MUTATION = 0.2
TOP_FRACTION = 0.1  # share of each batch whose constants are fitted
FIT_ROWS = 1000  # row cap for constant fitting
DUPLICATE_RETRIES = 3  # extra mutations applied to a child already in the new population
SUBTREE_MAX = 7  # token cap for regrown subtrees


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, reason: str):
        super().__init__(f"policy diverged at iteration {iteration}: {reason}")
        self.iteration = iteration


@dataclass
class SearchReport:
    best: ExpressionTree
    best_reward: float
    trace: list
    candidates: int
    wall_clock: float
    iterations: int
    engine: str = "policy"
    settings: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"best": self.best.to_dict(), "best_reward": self.best_reward,
             "trace": [float(r) for r in self.trace], "candidates": int(self.candidates),
             "iterations": int(self.iterations), "engine": self.engine,
             "settings": self.settings}
        if include_timing:
            d["wall_clock"] = self.wall_clock
        return d


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GFLID_THREADS", "1")))
    except ValueError:
        return 1


class Scorer:
    """Evaluates and constant-fits trees against one target, memoized by token sequence."""

    def __init__(self, X, y, column_names, const_budget: int = 200, threads: int | None = None,
                 fit_rows: int | None = FIT_ROWS):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if np.std(self.y) == 0:
            raise ValueError("target has zero variance; fit it as a constant instead of searching")
        n = len(self.y)
        if fit_rows and n > fit_rows:
            # constants are fitted on evenly spaced rows; rewards always use every row
            idx = np.unique(np.linspace(0, n - 1, fit_rows).round().astype(int))
            self.X_fit, self.y_fit = self.X[idx], self.y[idx]
        else:
            self.X_fit, self.y_fit = self.X, self.y
        self.column_names = list(column_names)
        self.const_budget = const_budget
        self.threads = threads or worker_count()
        self._raw: dict = {}
        self._fitted: dict = {}

    def _map(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                return list(ex.map(fn, items))
        return [fn(it) for it in items]

    def _raw_one(self, tree):
        yhat, flagged = compile_tree(tree, self.X, self.column_names)(tree.constants)
        return reward(yhat, self.y, flagged)

    def _fit_one(self, tree):
        fitted = fit_constants(tree, self.X_fit, self.y_fit, self.column_names, self.const_budget)
        yhat, flagged = compile_tree(fitted, self.X, self.column_names)(fitted.constants)
        return fitted, reward(yhat, self.y, flagged)

    def raw(self, trees) -> np.ndarray:
        todo = list({t.tokens: t for t in trees if t.tokens not in self._raw}.values())
        for t, r in zip(todo, self._map(self._raw_one, todo)):
            self._raw[t.tokens] = r
        return np.array([self._raw[t.tokens] for t in trees])

    def fitted(self, trees) -> list:
        todo = list({t.tokens: t for t in trees
                     if t.n_constants and t.tokens not in self._fitted}.values())
        for t, res in zip(todo, self._map(self._fit_one, todo)):
            self._fitted[t.tokens] = res
        out = []
        for t in trees:
            if t.n_constants:
                out.append(self._fitted[t.tokens])
            else:
                out.append((t, self._raw[t.tokens]))
        return out

    def score(self, trees) -> tuple[list, np.ndarray]:
        """Raw rewards for all trees, then constant fitting on the top decile."""
        rewards = self.raw(trees)
        trees = list(trees)
        k = max(1, math.ceil(TOP_FRACTION * len(trees)))
        top = np.argsort(-rewards, kind="stable")[:k]
        top = [i for i in top if trees[i].n_constants]
        for i, (t, r) in zip(top, self.fitted([trees[i] for i in top])):
            trees[i], rewards[i] = t, r
        return trees, rewards


def _check_rows(X, y, column_names):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be 2-D with one row per target value")
    if column_names is None:
        column_names = [f"x{k}" for k in range(X.shape[1])]
    if len(column_names) != X.shape[1]:
        raise ValueError("column_names length does not match X")
    return X, y, list(column_names)


def risk_seeking_weights(rewards: np.ndarray, epsilon: float) -> tuple[np.ndarray, float, np.ndarray]:
    """Per-sample weights (r_i - r_eps) for the top ceil(eps*n) samples, zero elsewhere."""
    n = len(rewards)
    m = max(1, math.ceil(epsilon * n - 1e-9))
    order = np.argsort(-rewards, kind="stable")
    kept = order[:m]
    r_eps = float(rewards[kept[-1]])
    w = np.zeros(n)
    w[kept] = rewards[kept] - r_eps
    return w, r_eps, kept


def train(policy: Policy, grammar: Grammar, X, y, iterations: int = 200,
          batch_size: int = 1000, epsilon: float = 0.05, column_names=None,
          const_budget: int = 200, stop_reward: float | None = None,
          threads: int | None = None) -> SearchReport:
    """Risk-seeking policy-gradient search for one target."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if batch_size < 10:
        raise ValueError("batch_size must be >= 10")
    if grammar != policy.grammar:
        raise ValueError("policy was built for a different grammar")
    X, y, column_names = _check_rows(X, y, column_names)
    scorer = Scorer(X, y, column_names, const_budget, threads)
    start = time.perf_counter()
    best, best_r = None, -1.0
    trace = []
    it = 0
    for it in range(1, iterations + 1):
        try:
            batch = policy.sample(batch_size)
        except PolicyDiverged as exc:
            raise TrainingDiverged(it, str(exc)) from None
        trees, rewards = scorer.score(batch.trees)
        i_best = int(np.argmax(rewards))
        if rewards[i_best] > best_r:
            best, best_r = trees[i_best], float(rewards[i_best])
        trace.append(best_r)
        if stop_reward is not None and best_r >= stop_reward:
            break
        w, _, kept = risk_seeking_weights(rewards, epsilon)
        steps = batch.steps.select(kept)
        try:
            grad = policy.gradient(steps, w, policy.entropy_weight, 1.0 / len(kept))
            policy.ascend(grad)
        except PolicyDiverged as exc:
            raise TrainingDiverged(it, str(exc)) from None
    settings = {"iterations": iterations, "batch_size": batch_size, "epsilon": epsilon,
                "const_budget": const_budget, "stop_reward": stop_reward, "seed": policy.seed,
                "learning_rate": policy.learning_rate, "entropy_weight": policy.entropy_weight,
                "hidden": policy.hidden, "grammar": grammar.to_dict()}
    return SearchReport(best, best_r, trace, it * batch_size, time.perf_counter() - start, it,
                        "policy", settings)


# genetic programming -----------------------------------------------------------

def _length_ok(tokens, grammar: Grammar) -> bool:
    return grammar.min_length <= len(tokens) <= grammar.max_length


def crossover(a: tuple, b: tuple, grammar: Grammar, rng, tries: int = 10) -> tuple:
    """Replace a random subtree of `a` by a random subtree of `b`."""
    for _ in range(tries):
        i = int(rng.integers(len(a)))
        j = int(rng.integers(len(b)))
        child = a[:i] + b[j:subtree_end(b, j, grammar)] + a[subtree_end(a, i, grammar):]
        if _length_ok(child, grammar):
            return child
    return a


def mutate(a: tuple, grammar: Grammar, rng) -> tuple:
    """Point mutation (same-arity token swap) or subtree regrowth, chosen evenly."""
    i = int(rng.integers(len(a)))
    if rng.random() < 0.5:
        ar = grammar.arity(a[i])
        pool = [t for t in grammar.tokens if grammar.arity(t) == ar and t != a[i]]
        if pool:
            return a[:i] + (pool[int(rng.integers(len(pool)))],) + a[i + 1:]
        return a
    end = subtree_end(a, i, grammar)
    rest = len(a) - (end - i)
    new = random_prefix(grammar, rng, min(SUBTREE_MAX, grammar.max_length - rest),
                        max(1, grammar.min_length - rest))
    child = a[:i] + tuple(new) + a[end:]
    return child if _length_ok(child, grammar) else a


def gp_search(grammar: Grammar, X, y, population: int = 500, generations: int = 30,
              seed: int = 0, column_names=None, const_budget: int = 200,
              stop_reward: float | None = None, threads: int | None = None) -> SearchReport:
    """Generational GP with tournament selection and single elitism."""
    if population < 10:
        raise ValueError("population must be >= 10")
    X, y, column_names = _check_rows(X, y, column_names)
    scorer = Scorer(X, y, column_names, const_budget, threads)
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    init = Policy(grammar, seed=int(rng.integers(2**32)), init_scale=0.0)
    pop, fit = scorer.score(init.sample(population).trees)
    trace = []
    gen = 0
    candidates = population
    for gen in range(generations + 1):
        e = int(np.argmax(fit))
        trace.append(float(fit[e]))
        if gen == generations or (stop_reward is not None and fit[e] >= stop_reward):
            break

        sizes = np.array([len(t) for t in pop])

        def pick():
            # ties on reward go to the shorter tree (lexicographic parsimony)
            idx = rng.integers(population, size=TOURNAMENT)
            best = max(idx, key=lambda i: (fit[i], -sizes[i]))
            return pop[int(best)].tokens

        children = []
        seen = {pop[e].tokens}
        while len(children) < population - 1:
            child = pick()
            if rng.random() < P_CROSSOVER:
                child = crossover(child, pick(), grammar, rng)
            if rng.random() < P_MUTATION:
                child = mutate(child, grammar, rng)
            for _ in range(DUPLICATE_RETRIES):
                if child not in seen:
                    break
                child = mutate(child, grammar, rng)
            seen.add(child)
            children.append(ExpressionTree(child))
        kids, kid_fit = scorer.score(children)
        pop = [pop[e]] + kids
        fit = np.concatenate([[fit[e]], kid_fit])
        candidates += len(children)
    best = int(np.argmax(fit))
    settings = {"population": population, "generations": generations, "seed": seed,
                "const_budget": const_budget, "stop_reward": stop_reward,
                "grammar": grammar.to_dict()}
    return SearchReport(pop[best], float(fit[best]), trace, candidates,
                        time.perf_counter() - start, gen, "gp", settings)
