"""Continuous logic with aggregation functions on random continuous structures."""

from .evaluate import EmptyAggregation, evaluate, evaluate_many
from .funcspace import (Aggregator, Connective, ConnectiveError, ContinuityReport,
                        TabulatedConnective, aggregator, builtin, eval_aggregator, eval_connective,
                        falsify_continuity, tabulate, threshold_aggregator, uniform_grid)
from .inference import (EliminationConfig, EliminationResult, HistogramProfile, Interval,
                        ProbabilityEstimate, build_D, eliminate, eliminate_once, histogram_profile,
                        independence_gap, limit_prob, prob_in_interval)
from .logic import (Agg, Atom, AtomicForm, Conn, Const, ConstantForm, Eq, FormulaError,
                    IdentityPattern, Signature, expand_fo_quantifier, extend_pattern_fresh,
                    flatten, free_vars, normalize_under, pattern_of, restrict_pattern)
from .measure import (ContinuousStructure, DensityError, DensityModel, DensitySpec, build_layout,
                      sample_structure, sample_value, validate_density)
from .parser import ParseError, parse

__version__ = "0.1.0"

__all__ = [
    "Agg",
    "Aggregator",
    "aggregator",
    "Atom",
    "AtomicForm",
    "build_D",
    "build_layout",
    "builtin",
    "Conn",
    "Connective",
    "ConnectiveError",
    "Const",
    "ConstantForm",
    "ContinuityReport",
    "ContinuousStructure",
    "DensityError",
    "DensityModel",
    "DensitySpec",
    "eliminate",
    "eliminate_once",
    "EliminationConfig",
    "EliminationResult",
    "EmptyAggregation",
    "Eq",
    "eval_aggregator",
    "eval_connective",
    "evaluate",
    "evaluate_many",
    "expand_fo_quantifier",
    "extend_pattern_fresh",
    "falsify_continuity",
    "flatten",
    "FormulaError",
    "free_vars",
    "histogram_profile",
    "HistogramProfile",
    "IdentityPattern",
    "independence_gap",
    "Interval",
    "limit_prob",
    "normalize_under",
    "parse",
    "ParseError",
    "pattern_of",
    "prob_in_interval",
    "ProbabilityEstimate",
    "restrict_pattern",
    "sample_structure",
    "sample_value",
    "Signature",
    "tabulate",
    "TabulatedConnective",
    "threshold_aggregator",
    "uniform_grid",
    "validate_density",
]
