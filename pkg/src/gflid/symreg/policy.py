"""Autoregressive token policy conditioned on (parent, sibling, depth).

One hidden tanh layer of width `hidden` over summed embeddings, then a linear
map to token logits. Invalid tokens are masked before the softmax. Gradients
are written out by hand.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .grammar import CONST, NONE, Grammar
from .tree import ExpressionTree

PARAM_NAMES = ("emb_parent", "emb_sibling", "emb_depth", "b1", "W2", "b2")


class PolicyDiverged(FloatingPointError):
    pass


@dataclass
class Steps:
    """Every sampling decision of a batch, flattened over trees."""
    tree: np.ndarray     # owning tree index
    parent: np.ndarray   # token index, V for none
    sibling: np.ndarray
    depth: np.ndarray
    mask: np.ndarray     # bool, steps x V
    action: np.ndarray

    def select(self, trees) -> "Steps":
        keep = np.isin(self.tree, np.asarray(trees))
        return Steps(self.tree[keep], self.parent[keep], self.sibling[keep],
                     self.depth[keep], self.mask[keep], self.action[keep])


@dataclass
class Batch:
    trees: list
    log_probs: np.ndarray
    steps: Steps

    def __iter__(self):
        return iter(zip(self.trees, self.log_probs))

    def __len__(self):
        return len(self.trees)


class Policy:
    def __init__(self, grammar: Grammar, hidden: int = 32, learning_rate: float = 0.01,
                 entropy_weight: float = 0.005, seed: int = 0, init_scale: float = 0.5):
        self.grammar = grammar
        self.tokens = grammar.tokens
        self.n_tokens = V = len(self.tokens)
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.entropy_weight = entropy_weight
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        D = grammar.max_length
        r = self.rng
        # W2 and b2 start at zero, so the initial policy is uniform over valid tokens
        self.params = {
            "emb_parent": init_scale * r.standard_normal((V + 1, hidden)),
            "emb_sibling": init_scale * r.standard_normal((V + 1, hidden)),
            "emb_depth": init_scale * r.standard_normal((D, hidden)),
            "b1": np.zeros(hidden),
            "W2": np.zeros((hidden, V)),
            "b2": np.zeros(V),
        }
        self._adam_m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._adam_v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._adam_t = 0
        self._arity = grammar.arities
        self._unary_idx = np.array([self.tokens.index(u) for u in grammar.unary], dtype=int)
        self._const_idx = self.tokens.index(CONST) if grammar.use_const else -1

    def copy(self) -> "Policy":
        return copy.deepcopy(self)

    # forward pass -----------------------------------------------------------
    def _forward(self, parent, sibling, depth, mask):
        p = self.params
        a = p["emb_parent"][parent] + p["emb_sibling"][sibling] + p["emb_depth"][depth] + p["b1"]
        h = np.tanh(a)
        z = h @ p["W2"] + p["b2"]
        z = np.where(mask, z, -np.inf)
        zmax = z.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(zmax)):
            raise PolicyDiverged("non-finite logits")
        e = np.exp(z - zmax)
        s = e.sum(axis=1, keepdims=True)
        probs = e / s
        logp = np.where(mask, z - zmax - np.log(s), 0.0)
        return h, probs, logp

    def distribution(self, parent: str = NONE, sibling: str = NONE, depth: int = 0,
                     length: int = 0, open_slots: int = 1) -> np.ndarray:
        """Masked next-token probabilities for one context."""
        mask = self.grammar.valid_mask(length, open_slots, parent, sibling)[None]
        _, probs, _ = self._forward(np.array([self._ctx(parent)]), np.array([self._ctx(sibling)]),
                                    np.array([depth]), mask)
        return probs[0]

    def _ctx(self, token: str) -> int:
        return self.n_tokens if token == NONE else self.tokens.index(token)

    def _masks(self, length, open_slots, parent, sibling):
        g = self.grammar
        after = open_slots[:, None] - 1 + self._arity[None, :]
        base = length[:, None] + 1 + after <= g.max_length
        mask = base & ~((after == 0) & (length[:, None] + 1 < g.min_length))
        rows = np.arange(len(length))
        is_unary = np.isin(parent, self._unary_idx)
        mask[rows[is_unary], parent[is_unary]] = False
        if self._const_idx >= 0:
            mask[is_unary | (sibling == self._const_idx), self._const_idx] = False
        empty = ~mask.any(axis=1)
        if empty.any():
            mask[empty] = base[empty]
        return mask

    # sampling ---------------------------------------------------------------
    def sample(self, n: int) -> Batch:
        if n < 1:
            raise ValueError("n must be >= 1")
        V = self.n_tokens
        seqs = [[] for _ in range(n)]
        stacks = [[[V, V, 0, False]] for _ in range(n)]  # parent, sibling, depth, first-of-binary
        logp_tot = np.zeros(n)
        rec = {k: [] for k in ("tree", "parent", "sibling", "depth", "mask", "action")}
        active = np.arange(n)
        while active.size:
            tops = [stacks[i][-1] for i in active]
            parent = np.array([s[0] for s in tops])
            sibling = np.array([s[1] for s in tops])
            depth = np.array([s[2] for s in tops])
            length = np.array([len(seqs[i]) for i in active])
            open_slots = np.array([len(stacks[i]) for i in active])
            mask = self._masks(length, open_slots, parent, sibling)
            _, probs, logp = self._forward(parent, sibling, depth, mask)
            cdf = np.cumsum(probs, axis=1)
            u = self.rng.random(active.size) * cdf[:, -1]
            act = (cdf <= u[:, None]).sum(axis=1)
            act = np.minimum(act, V - 1)
            bad = ~mask[np.arange(active.size), act]
            if bad.any():  # guard against round-off landing on a masked token
                for r in np.flatnonzero(bad):
                    act[r] = np.flatnonzero(mask[r])[-1]
            logp_tot[active] += logp[np.arange(active.size), act]
            for key, val in (("tree", active), ("parent", parent), ("sibling", sibling),
                             ("depth", depth), ("mask", mask), ("action", act)):
                rec[key].append(val)
            still = []
            for r, i in enumerate(active):
                a = int(act[r])
                seqs[i].append(self.tokens[a])
                st = stacks[i]
                _, _, d, first = st.pop()
                if first:
                    st[-1][1] = a
                ar = self._arity[a]
                if ar == 2:
                    st.append([a, V, d + 1, False])
                    st.append([a, V, d + 1, True])
                elif ar == 1:
                    st.append([a, V, d + 1, False])
                if st:
                    still.append(i)
            active = np.array(still, dtype=int)
        steps = Steps(**{k: np.concatenate(v) for k, v in rec.items()})
        trees = [ExpressionTree(tuple(s)) for s in seqs]
        return Batch(trees, logp_tot, steps)

    # objective and gradient --------------------------------------------------
    def log_probs(self, steps: Steps, n_trees: int) -> np.ndarray:
        _, _, logp = self._forward(steps.parent, steps.sibling, steps.depth, steps.mask)
        out = np.zeros(n_trees)
        np.add.at(out, steps.tree, logp[np.arange(len(steps.action)), steps.action])
        return out

    def objective(self, steps: Steps, weights: np.ndarray, entropy_weight: float = 0.0,
                  scale: float = 1.0) -> float:
        """scale * (sum_i w_i log p_i + entropy_weight * sum of step entropies)."""
        _, probs, logp = self._forward(steps.parent, steps.sibling, steps.depth, steps.mask)
        lp = logp[np.arange(len(steps.action)), steps.action]
        ent = -np.sum(probs * logp, axis=1)
        return scale * float(np.sum(weights[steps.tree] * lp) + entropy_weight * np.sum(ent))

    def gradient(self, steps: Steps, weights: np.ndarray, entropy_weight: float = 0.0,
                 scale: float = 1.0) -> dict:
        """Analytic gradient of `objective` with respect to every parameter."""
        p = self.params
        h, probs, logp = self._forward(steps.parent, steps.sibling, steps.depth, steps.mask)
        m = len(steps.action)
        w = weights[steps.tree]
        onehot = np.zeros_like(probs)
        onehot[np.arange(m), steps.action] = 1.0
        dz = w[:, None] * (onehot - probs)
        if entropy_weight:
            ent = -np.sum(probs * logp, axis=1, keepdims=True)
            dz += entropy_weight * np.where(steps.mask, -probs * (logp + ent), 0.0)
        dz *= scale
        da = (dz @ p["W2"].T) * (1.0 - h * h)
        g = {k: np.zeros_like(v) for k, v in p.items()}
        g["W2"] = h.T @ dz
        g["b2"] = dz.sum(axis=0)
        g["b1"] = da.sum(axis=0)
        np.add.at(g["emb_parent"], steps.parent, da)
        np.add.at(g["emb_sibling"], steps.sibling, da)
        np.add.at(g["emb_depth"], steps.depth, da)
        return g

    def ascend(self, grad: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        """One Adam step in the direction of increasing objective."""
        self._adam_t += 1
        t = self._adam_t
        for k, g in grad.items():
            self._adam_m[k] = beta1 * self._adam_m[k] + (1 - beta1) * g
            self._adam_v[k] = beta2 * self._adam_v[k] + (1 - beta2) * g * g
            mhat = self._adam_m[k] / (1 - beta1 ** t)
            vhat = self._adam_v[k] / (1 - beta2 ** t)
            self.params[k] = self.params[k] + self.learning_rate * mhat / (np.sqrt(vhat) + eps)
            if not np.all(np.isfinite(self.params[k])):
                raise PolicyDiverged(f"non-finite policy parameter {k}")


def sample_batch(policy: Policy, grammar: Grammar, n: int) -> list:
    """List of (tree, log-probability) pairs."""
    if grammar != policy.grammar:
        raise ValueError("policy was built for a different grammar")
    return list(policy.sample(n))
