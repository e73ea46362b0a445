"""Token set and syntactic constraints shared by the policy sampler and GP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BINARY = ("add", "sub", "mul", "div")
UNARY = ("sin", "cos")
CONST = "const"
NONE = "<none>"  # parent/sibling placeholder


@dataclass(frozen=True)
class Grammar:
    terminals: tuple
    binary: tuple = BINARY
    unary: tuple = UNARY
    use_const: bool = True
    max_length: int = 32
    min_length: int = 3

    def __post_init__(self):
        object.__setattr__(self, "terminals", tuple(self.terminals))
        object.__setattr__(self, "binary", tuple(self.binary))
        object.__setattr__(self, "unary", tuple(self.unary))
        if not self.terminals:
            raise ValueError("grammar needs at least one terminal")
        if not self.max_length >= self.min_length >= 3:
            raise ValueError("need max_length >= min_length >= 3")
        if not self.binary and not self.unary:
            raise ValueError("grammar needs at least one operator")
        bad = set(self.binary) - set(BINARY) | set(self.unary) - set(UNARY)
        if bad:
            raise ValueError(f"unknown operators: {sorted(bad)}")
        if CONST in self.terminals:
            raise ValueError(f"{CONST!r} is reserved for the constant placeholder")

    @property
    def tokens(self) -> tuple:
        return self.binary + self.unary + self.terminals + ((CONST,) if self.use_const else ())

    @property
    def arities(self) -> np.ndarray:
        return np.array([2] * len(self.binary) + [1] * len(self.unary)
                        + [0] * (len(self.terminals) + int(self.use_const)))

    def index(self, token: str) -> int:
        return self.tokens.index(token)

    def arity(self, token: str) -> int:
        if token in self.binary:
            return 2
        if token in self.unary:
            return 1
        return 0

    def to_dict(self) -> dict:
        return {"terminals": list(self.terminals), "binary": list(self.binary),
                "unary": list(self.unary), "use_const": self.use_const,
                "max_length": self.max_length, "min_length": self.min_length}

    def valid_mask(self, length: int, open_slots: int, parent: str, sibling: str,
                   strict_min: bool = True) -> np.ndarray:
        """Tokens allowed at the next position.

        `length` tokens are already placed and `open_slots` (>= 1) slots remain,
        including the one being filled.
        """
        ar = self.arities
        after_open = open_slots - 1 + ar
        mask = length + 1 + after_open <= self.max_length
        if strict_min:
            mask &= ~((after_open == 0) & (length + 1 < self.min_length))
        toks = self.tokens
        if parent in self.unary:
            mask[toks.index(parent)] = False
        if self.use_const:
            k = len(toks) - 1
            if parent in self.unary or sibling == CONST:
                mask[k] = False
        if not mask.any():
            # min-length cannot be met from here; fall back to closing the tree
            mask = length + 1 + after_open <= self.max_length
        return mask


def is_complete(tokens, grammar: Grammar) -> bool:
    """Prefix sequence forms exactly one tree."""
    need = 1
    for k, tok in enumerate(tokens):
        if need == 0:
            return False
        need += grammar.arity(tok) - 1
    return need == 0 and len(tokens) > 0


def subtree_end(tokens, start: int, grammar: Grammar) -> int:
    """Index one past the subtree rooted at `start`."""
    need = 1
    k = start
    while need:
        need += grammar.arity(tokens[k]) - 1
        k += 1
    return k


def random_prefix(grammar: Grammar, rng: np.random.Generator, max_len: int,
                  min_len: int = 1, parent: str = NONE) -> list:
    """Uniformly sampled valid subtree of at most `max_len` tokens."""
    toks = grammar.tokens
    g = Grammar(grammar.terminals, grammar.binary, grammar.unary, grammar.use_const,
                max(max_len, 3), 3)
    out: list = []
    stack = [[parent, NONE, False]]  # slot: parent, sibling, first child of a binary
    while stack:
        par, sib, first = stack.pop()
        mask = g.valid_mask(len(out), len(stack) + 1, par, sib, strict_min=False)
        mask &= len(out) + 1 + (len(stack)) + g.arities <= max_len
        if len(out) + 1 < min_len and len(stack) == 0:
            m2 = mask & (g.arities > 0)
            if m2.any():
                mask = m2
        choices = np.flatnonzero(mask)
        tok = toks[int(rng.choice(choices))]
        out.append(tok)
        if first:
            stack[-1][1] = tok
        a = grammar.arity(tok)
        if a == 2:
            stack.append([tok, NONE, False])
            stack.append([tok, NONE, True])
        elif a == 1:
            stack.append([tok, NONE, False])
    return out
