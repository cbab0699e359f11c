"""Semantics of formulas on finite continuous structures.

Evaluation is vectorized over a batch of assignments.  Each aggregation
adds one trailing axis of length ``n`` that ranges over candidate elements;
elements already assigned (the declared tuple plus the variables bound by
enclosing aggregations) are masked out before aggregating.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .logic import Agg, Atom, Conn, Const, Eq, Formula, FormulaError, agg_depth, free_vars, free_tuple
from .measure import ContinuousStructure


class EmptyAggregation(ArithmeticError):
    """An aggregation ranged over no elements (domain too small)."""


_CHUNK_CELLS = 1 << 22


def _eval(A: ContinuousStructure, f: Formula, env: dict, shape: tuple):
    if isinstance(f, Const):
        return np.float64(f.value)
    if isinstance(f, Eq):
        return (env[f.left] == env[f.right]).astype(float)
    if isinstance(f, Atom):
        return A.values[f.rel][tuple(env[v] for v in f.args)]
    if isinstance(f, Conn):
        return f.conn(*[_eval(A, a, env, shape) for a in f.args])
    if isinstance(f, Agg):
        n = A.n
        inner = {v: a[..., None] for v, a in env.items()}
        b = np.arange(n).reshape((1,) * len(shape) + (n,))
        new_shape = shape + (n,)
        mask = np.ones((1,) * len(new_shape), dtype=bool)
        for a in inner.values():
            mask = mask & (b != a)
        mask = np.broadcast_to(mask, new_shape)
        if not mask.any(axis=-1).all():
            raise EmptyAggregation(
                f"{f.agg.label}{{{f.var}}} has nothing to range over in a domain of size {n}")
        inner[f.var] = b
        vals = np.broadcast_to(_eval(A, f.body, inner, new_shape), new_shape)
        return f.agg.reduce(vals, mask)
    raise TypeError(f"not a formula: {f!r}")


def _coerce_tuples(A, assignments, k):
    arr = np.asarray(assignments, dtype=np.int64)
    if arr.ndim != 2:
        arr = arr.reshape(-1, k)
    if arr.shape[1] != k:
        raise FormulaError(f"assignments must have {k} columns")
    if arr.size and (arr.min() < 1 or arr.max() > A.n):
        raise FormulaError(f"assigned elements must lie in 1..{A.n}")
    return arr - 1


def evaluate_many(A: ContinuousStructure, f: Formula, assignments,
                  variables: Sequence[str] | None = None) -> np.ndarray:
    """Values of ``f`` for each row of ``assignments`` (1-based elements).

    Rows are aligned with ``variables`` (default: free variables in order
    of occurrence).  For a sentence pass ``assignments=[()]``.
    """
    variables = tuple(free_tuple(f) if variables is None else variables)
    missing = free_vars(f) - set(variables)
    if missing:
        raise FormulaError(f"free variables {sorted(missing)} are not assigned")
    if len(set(variables)) != len(variables):
        raise FormulaError("declared variables must be distinct")
    k = len(variables)
    tuples = _coerce_tuples(A, assignments, k)
    B = len(tuples)
    depth = agg_depth(f)
    chunk = max(1, _CHUNK_CELLS // max(1, A.n ** depth))
    out = np.empty(B)
    for start in range(0, B, chunk):
        rows = tuples[start:start + chunk]
        env = {v: rows[:, i] for i, v in enumerate(variables)}
        shape = (len(rows),)
        out[start:start + chunk] = np.broadcast_to(_eval(A, f, env, shape), shape)
    return out


def evaluate(A: ContinuousStructure, f: Formula, assignment=(),
             variables: Sequence[str] | None = None) -> float:
    """The value of ``f`` in ``A`` under one assignment.

    ``assignment`` is a mapping from variables to elements or a sequence
    aligned with ``variables``.
    """
    if isinstance(assignment, Mapping):
        variables = tuple(assignment) if variables is None else tuple(variables)
        assignment = [assignment[v] for v in variables]
    return float(evaluate_many(A, f, [tuple(assignment)], variables)[0])
