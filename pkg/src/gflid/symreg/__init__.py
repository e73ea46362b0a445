"""Symbolic regression over expression trees."""
from .grammar import BINARY, CONST, UNARY, Grammar, is_complete, random_prefix
from .policy import Policy, sample_batch
from .search import SearchReport, TrainingDiverged, gp_search, risk_seeking_weights, train
from .tree import ExpressionError, ExpressionTree, evaluate, fit_constants, reward

__all__ = ["BINARY", "CONST", "UNARY", "Grammar", "is_complete", "random_prefix", "Policy",
           "sample_batch", "SearchReport", "TrainingDiverged", "gp_search",
           "risk_seeking_weights", "train", "ExpressionError", "ExpressionTree", "evaluate",
           "fit_constants", "reward"]
