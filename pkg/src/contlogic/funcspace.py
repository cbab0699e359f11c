"""Continuous connectives and aggregation functions.

Connectives are closed expression trees over a small set of continuous
primitives (plus grid-interpolated tables), so every connective built here
is continuous by construction.  Expressions evaluate equally well on Python
floats and on numpy arrays, which is what the vectorized evaluator and the
Monte Carlo integrators rely on.
"""

from __future__ import annotations

import functools
import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator


class ConnectiveError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Expression primitives


class Expr:
    """Base class of connective expression nodes."""

    __slots__ = ()

    def eval(self, xs):
        raise NotImplementedError

    def children(self) -> tuple:
        return ()

    def max_proj(self) -> int:
        return max((c.max_proj() for c in self.children()), default=-1)


@dataclass(frozen=True)
class Lit(Expr):
    value: float

    def eval(self, xs):
        return self.value


@dataclass(frozen=True)
class Proj(Expr):
    index: int

    def eval(self, xs):
        return xs[self.index]

    def max_proj(self):
        return self.index


@dataclass(frozen=True)
class _Nary(Expr):
    args: tuple

    def children(self):
        return self.args


class Add(_Nary):
    def eval(self, xs):
        vals = [a.eval(xs) for a in self.args]
        return functools.reduce(lambda u, v: u + v, vals)


class Mul(_Nary):
    def eval(self, xs):
        vals = [a.eval(xs) for a in self.args]
        return functools.reduce(lambda u, v: u * v, vals)


class Min(_Nary):
    def eval(self, xs):
        return functools.reduce(np.minimum, [a.eval(xs) for a in self.args])


class Max(_Nary):
    def eval(self, xs):
        return functools.reduce(np.maximum, [a.eval(xs) for a in self.args])


class Mean(_Nary):
    def eval(self, xs):
        vals = [a.eval(xs) for a in self.args]
        return functools.reduce(lambda u, v: u + v, vals) / len(vals)


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr

    def eval(self, xs):
        return self.left.eval(xs) - self.right.eval(xs)

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class _Unary(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


class Abs(_Unary):
    def eval(self, xs):
        return abs(self.arg.eval(xs))


class Compl(_Unary):
    def eval(self, xs):
        return 1.0 - self.arg.eval(xs)


class Clamp(_Unary):
    def eval(self, xs):
        return np.clip(self.arg.eval(xs), 0.0, 1.0)


@dataclass(frozen=True)
class Table(Expr):
    """A tabulated connective applied to argument expressions."""

    table: "TabulatedConnective"
    args: tuple

    def eval(self, xs):
        return self.table(*[a.eval(xs) for a in self.args])

    def children(self):
        return self.args


_NARY = {"add": Add, "mul": Mul, "min": Min, "max": Max, "mean": Mean}
_UNARY = {"abs": Abs, "compl": Compl, "clamp": Clamp}


def substitute(expr: Expr, replacements: Sequence[Expr]) -> Expr:
    """Replace every ``Proj(i)`` in ``expr`` with ``replacements[i]``."""
    if isinstance(expr, Proj):
        return replacements[expr.index]
    if isinstance(expr, Lit):
        return expr
    if isinstance(expr, Sub):
        return Sub(substitute(expr.left, replacements), substitute(expr.right, replacements))
    if isinstance(expr, _Unary):
        return type(expr)(substitute(expr.arg, replacements))
    if isinstance(expr, Table):
        return Table(expr.table, tuple(substitute(a, replacements) for a in expr.args))
    if isinstance(expr, _Nary):
        return type(expr)(tuple(substitute(a, replacements) for a in expr.args))
    raise TypeError(f"unknown expression node {expr!r}")


def expr_to_json(expr: Expr) -> dict:
    if isinstance(expr, Lit):
        return {"op": "const", "value": expr.value}
    if isinstance(expr, Proj):
        return {"op": "proj", "index": expr.index}
    if isinstance(expr, Sub):
        return {"op": "sub", "args": [expr_to_json(expr.left), expr_to_json(expr.right)]}
    if isinstance(expr, Table):
        return {"op": "table", "table": expr.table.to_json(),
                "args": [expr_to_json(a) for a in expr.args]}
    for name, cls in {**_NARY, **_UNARY}.items():
        if type(expr) is cls:
            return {"op": name, "args": [expr_to_json(c) for c in expr.children()]}
    raise TypeError(f"unknown expression node {expr!r}")


def expr_from_json(data: dict) -> Expr:
    op = data["op"]
    if op == "const":
        return Lit(float(data["value"]))
    if op == "proj":
        return Proj(int(data["index"]))
    args = tuple(expr_from_json(a) for a in data.get("args", []))
    if op == "sub":
        return Sub(*args)
    if op == "table":
        return Table(TabulatedConnective.from_json(data["table"]), args)
    if op in _NARY:
        return _NARY[op](args)
    if op in _UNARY:
        (arg,) = args
        return _UNARY[op](arg)
    raise ConnectiveError(f"unknown expression op {op!r}")


def _analyze(expr: Expr) -> tuple[float, float, float]:
    """Range ``(lo, hi)`` and sup-norm Lipschitz bound on ``[0,1]^k`` inputs."""
    if isinstance(expr, Lit):
        return expr.value, expr.value, 0.0
    if isinstance(expr, Proj):
        return 0.0, 1.0, 1.0
    if isinstance(expr, Sub):
        la, ha, La = _analyze(expr.left)
        lb, hb, Lb = _analyze(expr.right)
        return la - hb, ha - lb, La + Lb
    if isinstance(expr, Table):
        parts = [_analyze(a) for a in expr.args]
        slopes = expr.table.axis_slopes()
        lip = sum(s * p[2] for s, p in zip(slopes, parts))
        return float(expr.table.values.min()), float(expr.table.values.max()), lip
    if isinstance(expr, _Unary):
        lo, hi, L = _analyze(expr.arg)
        if isinstance(expr, Compl):
            return 1.0 - hi, 1.0 - lo, L
        if isinstance(expr, Clamp):
            return min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0), L
        # Abs
        if lo >= 0:
            return lo, hi, L
        if hi <= 0:
            return -hi, -lo, L
        return 0.0, max(-lo, hi), L
    parts = [_analyze(a) for a in expr.args]
    if isinstance(expr, (Add, Mean)):
        lo = sum(p[0] for p in parts)
        hi = sum(p[1] for p in parts)
        L = sum(p[2] for p in parts)
        if isinstance(expr, Mean):
            k = len(parts)
            return lo / k, hi / k, L / k
        return lo, hi, L
    if isinstance(expr, Min):
        return min(p[0] for p in parts), min(p[1] for p in parts), max(p[2] for p in parts)
    if isinstance(expr, Max):
        return max(p[0] for p in parts), max(p[1] for p in parts), max(p[2] for p in parts)
    if isinstance(expr, Mul):
        lo, hi, L = parts[0]
        for lo2, hi2, L2 in parts[1:]:
            mag1 = max(abs(lo), abs(hi))
            mag2 = max(abs(lo2), abs(hi2))
            L = L * mag2 + L2 * mag1
            corners = [lo * lo2, lo * hi2, hi * lo2, hi * hi2]
            lo, hi = min(corners), max(corners)
        return lo, hi, L
    raise TypeError(f"unknown expression node {expr!r}")


# ---------------------------------------------------------------------------
# Connectives


@dataclass(frozen=True)
class Connective:
    """A continuous function ``[0,1]^arity -> [0,1]``.

    The expression is always rooted at a clamp, which is what guarantees the
    codomain; inner nodes are free to leave ``[0,1]``.
    """

    arity: int
    expr: Expr
    name: str | None = None

    def __post_init__(self):
        if self.arity < 0:
            raise ConnectiveError("arity must be nonnegative")
        if not isinstance(self.expr, Clamp):
            object.__setattr__(self, "expr", Clamp(self.expr))
        if self.expr.max_proj() >= self.arity:
            raise ConnectiveError(
                f"expression projects coordinate {self.expr.max_proj()} "
                f"but arity is {self.arity}")

    def __call__(self, *args):
        return self.expr.eval(args)

    @property
    def label(self) -> str:
        return self.name or f"C{self.arity}"

    def lipschitz(self) -> float:
        """Sup-norm Lipschitz bound computed from the expression tree."""
        return _analyze(self.expr)[2]

    def compose(self, args: Sequence[Expr], arity: int) -> "Connective":
        """The connective ``x -> self(args[0](x), ..., args[k-1](x))``."""
        if len(args) != self.arity:
            raise ConnectiveError(f"{self.label} expects {self.arity} arguments, got {len(args)}")
        return Connective(arity, substitute(self.expr, list(args)))

    def to_json(self) -> dict:
        return {"arity": self.arity, "name": self.name, "expr": expr_to_json(self.expr)}

    @classmethod
    def from_json(cls, data: dict) -> "Connective":
        return cls(int(data["arity"]), expr_from_json(data["expr"]), data.get("name"))


def eval_connective(c: Connective, args: Sequence[float]) -> float:
    if len(args) != c.arity:
        raise ConnectiveError(f"{c.label} expects {c.arity} arguments, got {len(args)}")
    return float(c(*[float(a) for a in args]))


def _projections(k):
    return tuple(Proj(i) for i in range(k))


_FIXED = {
    "not": lambda: Connective(1, Compl(Proj(0)), "not"),
    "and": lambda: Connective(2, Max((Lit(0.0), Sub(Add((Proj(0), Proj(1))), Lit(1.0)))), "and"),
    "or": lambda: Connective(2, Min((Lit(1.0), Add((Proj(0), Proj(1))))), "or"),
    "implies": lambda: Connective(
        2, Min((Lit(1.0), Add((Compl(Proj(0)), Proj(1))))), "implies"),
    "abs_diff": lambda: Connective(2, Abs(Sub(Proj(0), Proj(1))), "abs_diff"),
    "identity": lambda: Connective(1, Proj(0), "identity"),
}
_ALIASES = {"neg": "not", "id": "identity"}
_INDEXED = re.compile(r"^(min|max|avg)(\d+)$")
_INDEXED_NODE = {"min": Min, "max": Max, "avg": Mean}


@functools.lru_cache(maxsize=None)
def builtin(name: str) -> Connective:
    """Look up a named connective.

    Besides the fixed Lukasiewicz connectives this accepts ``minK``, ``maxK``,
    ``avgK`` for any ``K >= 1`` and ``const_C`` for a unary constant ``C``.
    """
    key = _ALIASES.get(name, name)
    if key in _FIXED:
        return _FIXED[key]()
    m = _INDEXED.match(key)
    if m:
        k = int(m.group(2))
        if k < 1:
            raise ConnectiveError(f"{name}: arity must be positive")
        return Connective(k, _INDEXED_NODE[m.group(1)](_projections(k)), key)
    if key.startswith("const_"):
        c = float(key[len("const_"):])
        if not 0.0 <= c <= 1.0:
            raise ConnectiveError(f"{name}: constant outside [0,1]")
        return Connective(1, Lit(c), key)
    raise ConnectiveError(f"unknown connective {name!r}")


def is_builtin_name(name: str) -> bool:
    try:
        builtin(name)
    except (ConnectiveError, ValueError):
        return False
    return True


def constant(c: float, arity: int = 0) -> Connective:
    return Connective(arity, Lit(float(c)))


# ---------------------------------------------------------------------------
# Tabulated connectives


@dataclass(frozen=True, eq=False)
class TabulatedConnective:
    """A connective given by values on a tensor grid, evaluated multilinearly."""

    grids: tuple
    values: np.ndarray
    _interp: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        grids = tuple(np.asarray(g, dtype=float) for g in self.grids)
        values = np.asarray(self.values, dtype=float).reshape(tuple(len(g) for g in grids))
        for g in grids:
            if len(g) < 2 or g[0] != 0.0 or g[-1] != 1.0 or np.any(np.diff(g) <= 0):
                raise ConnectiveError("each grid axis needs >= 2 increasing nodes from 0 to 1")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ConnectiveError("tabulated values must lie in [0,1]")
        values.setflags(write=False)
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "values", values)
        if grids:
            object.__setattr__(self, "_interp", RegularGridInterpolator(grids, values))

    @property
    def arity(self) -> int:
        return len(self.grids)

    def __call__(self, *args):
        if len(args) != self.arity:
            raise ConnectiveError(f"table expects {self.arity} arguments, got {len(args)}")
        if not args:
            return float(self.values)
        arrays = np.broadcast_arrays(*[np.clip(np.asarray(a, dtype=float), 0.0, 1.0)
                                       for a in args])
        shape = arrays[0].shape
        pts = np.stack([a.ravel() for a in arrays], axis=-1)
        out = self._interp(pts).reshape(shape)
        return out if shape else float(out)

    def axis_slopes(self) -> list[float]:
        slopes = []
        for d, g in enumerate(self.grids):
            diffs = np.abs(np.diff(self.values, axis=d))
            steps = np.diff(g).reshape([-1 if i == d else 1 for i in range(self.arity)])
            slopes.append(float((diffs / steps).max()) if diffs.size else 0.0)
        return slopes

    def as_connective(self) -> Connective:
        return Connective(self.arity, Table(self, _projections(self.arity)), "D")

    def to_json(self) -> dict:
        return {"arity": self.arity, "grids": [g.tolist() for g in self.grids],
                "values": self.values.ravel().tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "TabulatedConnective":
        grids = [list(g) for g in data["grids"]]
        if len(grids) != int(data["arity"]):
            raise ConnectiveError("grid count does not match arity")
        return cls(tuple(grids), np.asarray(data["values"], dtype=float))


def uniform_grid(nodes: int = 17) -> np.ndarray:
    return np.linspace(0.0, 1.0, nodes)


def tabulate(arity: int, grid, oracle: Callable[..., float]) -> TabulatedConnective:
    """Tabulate ``oracle`` on the tensor grid ``grid`` (one axis, or one per dimension).

    Oracle values outside ``[0,1]`` are clamped with a warning.
    """
    if arity and np.ndim(grid[0]) == 0:
        grids = tuple(np.asarray(grid, dtype=float) for _ in range(arity))
    else:
        grids = tuple(np.asarray(g, dtype=float) for g in grid)[:arity]
    shape = tuple(len(g) for g in grids)
    values = np.empty(shape)
    for idx in np.ndindex(*shape):
        values[idx] = oracle(*[g[i] for g, i in zip(grids, idx)])
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        warnings.warn("tabulated oracle left [0,1]; clamping", RuntimeWarning, stacklevel=2)
        values = np.clip(values, 0.0, 1.0)
    return TabulatedConnective(grids, values)


# ---------------------------------------------------------------------------
# Aggregation functions


class EmptySequenceError(ValueError):
    """An aggregation function was applied to an empty sequence."""


AGGREGATOR_KINDS = ("min", "max", "am")


@dataclass(frozen=True)
class Aggregator:
    kind: str
    func: Callable[[np.ndarray], float] | None = field(default=None, compare=False)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in AGGREGATOR_KINDS + ("external",):
            raise ValueError(f"unknown aggregator kind {self.kind!r}")
        if self.kind == "external" and self.func is None:
            raise ValueError("external aggregators need a function")

    @property
    def label(self) -> str:
        return self.name or self.kind

    def __call__(self, values) -> float:
        return eval_aggregator(self, values)

    def reduce(self, values: np.ndarray, mask: np.ndarray, axis: int = -1) -> np.ndarray:
        """Aggregate ``values`` along ``axis`` over the entries where ``mask`` holds."""
        if self.kind == "max":
            return np.where(mask, values, -np.inf).max(axis=axis)
        if self.kind == "min":
            return np.where(mask, values, np.inf).min(axis=axis)
        if self.kind == "am":
            return np.where(mask, values, 0.0).sum(axis=axis) / mask.sum(axis=axis)
        vals = np.moveaxis(values, axis, -1)
        msk = np.moveaxis(mask, axis, -1)
        out = np.empty(vals.shape[:-1])
        for idx in np.ndindex(*out.shape):
            out[idx] = eval_aggregator(self, vals[idx][msk[idx]])
        return out


def eval_aggregator(a: Aggregator, values) -> float:
    seq = np.asarray(values, dtype=float).ravel()
    if seq.size == 0:
        raise EmptySequenceError(f"{a.label} applied to an empty sequence")
    if a.kind == "max":
        return float(seq.max())
    if a.kind == "min":
        return float(seq.min())
    if a.kind == "am":
        return math.fsum(seq) / seq.size
    return float(a.func(seq))


@functools.lru_cache(maxsize=None)
def aggregator(name: str) -> Aggregator:
    if name in AGGREGATOR_KINDS:
        return Aggregator(name)
    raise ValueError(f"unknown aggregator {name!r}")


def threshold_aggregator(level: float = 0.5) -> Aggregator:
    """1 if the mean exceeds ``level`` else 0; a discontinuous test subject."""
    return Aggregator("external", lambda q: 1.0 if math.fsum(q) / len(q) > level else 0.0,
                      name=f"threshold_{level:g}")


# ---------------------------------------------------------------------------
# Continuity falsifier


@dataclass
class ContinuityReport:
    verdict: str
    aggregator: str
    epsilon: float
    delta: float
    M: int
    N: int
    trials: int
    seed: int
    condition: str | None = None
    gap: float | None = None
    witness: dict | None = None
    trials_run: int = 0

    @property
    def falsified(self) -> bool:
        return self.verdict == "falsified"

    def to_json(self, include_sequences: bool = False) -> dict:
        out = {k: getattr(self, k) for k in
               ("verdict", "aggregator", "epsilon", "delta", "M", "N", "trials", "seed",
                "condition", "gap", "trials_run")}
        if self.witness is not None:
            w = dict(self.witness)
            if not include_sequences:
                w.pop("q", None)
                w.pop("q_prime", None)
            out["witness"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                              for k, v in w.items()}
        return out


def bin_counts(q: np.ndarray, M: int) -> np.ndarray:
    """Counts of entries in each closed bin ``[i/M, (i+1)/M]``; boundary points count twice."""
    q = np.asarray(q, dtype=float)
    edges = np.arange(M + 1) / M
    lo = np.searchsorted(q_sorted := np.sort(q), edges[:-1], side="left")
    hi = np.searchsorted(q_sorted, edges[1:], side="right")
    return hi - lo


def check_histogram_conditions(q, q_prime, alpha, delta: float, M: int, N: int) -> list[str]:
    """Return the list of violated conditions (2)(a)-(d); empty when all hold."""
    alpha = np.asarray(alpha, dtype=float)
    q = np.asarray(q, dtype=float)
    q_prime = np.asarray(q_prime, dtype=float)
    failed = []
    if len(q) < N or len(q_prime) < N:
        failed.append("a")
    if np.any((alpha > 0) & (alpha <= delta)):
        failed.append("b")
    else:
        for seq in (q, q_prime):
            props = bin_counts(seq, M) / len(seq)
            if np.any(np.abs(props - alpha) >= delta):
                failed.append("b")
                break
    pos = np.flatnonzero(alpha > 0)
    # (c): the positive bins form one contiguous run
    if pos.size and np.any(alpha[pos.min():pos.max() + 1] == 0):
        failed.append("c")
    # (d): zero bins separated from the support by another zero bin are empty
    if pos.size:
        far = [i for i in range(M) if i < pos.min() - 1 or i > pos.max() + 1]
        for seq in (q, q_prime):
            counts = bin_counts(seq, M)
            if far and np.any(counts[far] > 0):
                failed.append("d")
                break
    return failed


def _random_profile(rng: np.random.Generator, M: int, delta: float) -> np.ndarray:
    """A histogram profile whose positive bins are contiguous and each exceed ``delta``."""
    for _ in range(100):
        width = int(rng.integers(1, M + 1))
        start = int(rng.integers(0, M - width + 1))
        if width * delta * 1.5 >= 1.0:
            continue
        w = rng.dirichlet(np.full(width, float(rng.choice([0.5, 1.0, 5.0]))))
        floor = 1.5 * delta
        w = floor + (1.0 - floor * width) * w
        alpha = np.zeros(M)
        alpha[start:start + width] = w
        return alpha
    alpha = np.zeros(M)
    alpha[int(rng.integers(0, M))] = 1.0
    return alpha


def _sequence_from_profile(rng, alpha, length, delta, M):
    # per-bin counts jittered by up to delta/2 of the length, then renormalized
    target = alpha * length
    jitter = rng.uniform(-0.5, 0.5, size=len(alpha)) * delta * length * (alpha > 0)
    counts = np.maximum(np.floor(target + jitter), 0).astype(int)
    counts[alpha == 0] = 0
    short = length - counts.sum()
    support = np.flatnonzero(alpha > 0)
    if short > 0:
        counts[rng.choice(support, size=short)] += 1
    elif short < 0:
        for _ in range(-short):
            i = rng.choice(support[counts[support] > 0])
            counts[i] -= 1
    # interior positions only, so no entry lands on a shared bin boundary
    bins = np.repeat(np.arange(len(alpha)), counts)
    pos = rng.uniform(1e-9, 1.0 - 1e-9, size=bins.size)
    q = (bins + pos) / M
    rng.shuffle(q)
    return q


def falsify_continuity(a: Aggregator, epsilon: float = 0.1, delta: float = 0.01, M: int = 20,
                       N: int = 500, trials: int = 10_000, seed: int = 0) -> ContinuityReport:
    """Randomized search for violations of the two continuity conditions.

    Odd-numbered trials probe the sup-norm condition with perturbed pairs of
    equal length; even-numbered trials draw a histogram profile and two
    sequences realizing it.  A returned witness always re-checks against
    :func:`check_histogram_conditions`.  Finding nothing proves nothing.
    """
    if epsilon <= 0 or delta <= 0 or M < 1 or N < 1 or trials < 1:
        raise ValueError("epsilon, delta must be positive; M, N, trials positive")
    report = ContinuityReport("no-counterexample-found", a.label, epsilon, delta, M, N,
                              trials, seed)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        report.trials_run = t + 1
        if t % 2:
            length = int(rng.integers(N, 2 * N + 1))
            center = rng.uniform(0, 1)
            spread = rng.uniform(0, 0.5)
            q = np.clip(center + rng.uniform(-spread, spread, size=length), 0.0, 1.0)
            q_prime = np.clip(q + rng.uniform(-delta, delta, size=length), 0.0, 1.0)
            gap = abs(eval_aggregator(a, q) - eval_aggregator(a, q_prime))
            if gap > epsilon:
                report.verdict, report.condition, report.gap = "falsified", "1", gap
                report.witness = {"q": q, "q_prime": q_prime,
                                  "sup_distance": float(np.max(np.abs(q - q_prime)))}
                return report
        else:
            alpha = _random_profile(rng, M, delta)
            n = int(rng.integers(N, 4 * N + 1))
            m = int(rng.integers(N, 4 * N + 1))
            q = _sequence_from_profile(rng, alpha, n, delta, M)
            q_prime = _sequence_from_profile(rng, alpha, m, delta, M)
            if check_histogram_conditions(q, q_prime, alpha, delta, M, N):
                continue
            gap = abs(eval_aggregator(a, q) - eval_aggregator(a, q_prime))
            if gap > epsilon:
                report.verdict, report.condition, report.gap = "falsified", "2", gap
                report.witness = {"q": q, "q_prime": q_prime, "alpha": alpha,
                                  "proportions": (bin_counts(q, M) / len(q)).tolist(),
                                  "proportions_prime": (bin_counts(q_prime, M) / len(q_prime)).tolist()}
                return report
    return report
