"""Limit probabilities and asymptotic elimination of aggregation functions.

For an aggregation-free formula normalized to ``C(R_1(x_1), ..., R_s(x_s))``
the probability of landing in an interval is an integral of the indicator of
``C^{-1}(J)`` against a product of cell densities, independent of the domain
size.  Eliminating ``F(phi : y)`` replaces it by a function ``D`` of the
y-free atoms whose value at ``r`` summarizes the distribution of
``C_r(p_1, ..., p_s)``: its mean for ``am``, its essential supremum for
``max`` and essential infimum for ``min``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .funcspace import Aggregator, Connective, TabulatedConnective, uniform_grid
from .logic import (Agg, Atom, AtomicForm, Conn, Const, ConstantForm, Eq, Formula, FormulaError,
                    IdentityPattern, extend_pattern_fresh, free_tuple, is_aggregation_free,
                    normalize_under, restrict_pattern, to_text)
from .measure import DensityModel, DensitySpec, sample_structure
from .evaluate import evaluate_many

HOEFFDING_CONFIDENCE = 0.99
MC_BATCH = 1 << 16


def hoeffding_half_width(samples: int, confidence: float = HOEFFDING_CONFIDENCE) -> float:
    """Half-width of the two-sided Hoeffding interval for a [0,1]-valued mean."""
    return math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * samples))


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    closed_lo: bool = True
    closed_hi: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ValueError(f"interval [{self.lo}, {self.hi}] is not inside [0,1]")

    def contains(self, x):
        x = np.asarray(x)
        above = x >= self.lo if self.closed_lo else x > self.lo
        below = x <= self.hi if self.closed_hi else x < self.hi
        return above & below

    def boundary(self) -> list[float]:
        """Endpoints across which values in ``[0,1]`` can leave the interval."""
        pts = []
        if self.lo > 0.0 or not self.closed_lo:
            pts.append(self.lo)
        if self.hi < 1.0 or not self.closed_hi:
            pts.append(self.hi)
        return pts

    def __str__(self):
        return f"{'[' if self.closed_lo else '('}{self.lo:g}, {self.hi:g}{']' if self.closed_hi else ')'}"


def as_interval(J) -> Interval:
    return J if isinstance(J, Interval) else Interval(float(J[0]), float(J[1]))


def bin_intervals(M: int) -> list[Interval]:
    """``[i/M, (i+1)/M)`` for ``i < M-1`` and a closed last bin."""
    return [Interval(i / M, (i + 1) / M, True, i == M - 1) for i in range(M)]


def bin_index(values, M: int) -> np.ndarray:
    return np.minimum(np.floor(np.asarray(values) * M).astype(int), M - 1)


@dataclass
class ProbabilityEstimate:
    value: float
    method: str
    error: float
    budget: int
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"alpha": self.value, "half_width": self.error, "method": self.method,
                "budget": self.budget, **self.details}


@dataclass
class HistogramProfile:
    M: int
    alphas: np.ndarray

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        if len(self.alphas) != self.M:
            raise ValueError("profile length must equal the bin count")


# ---------------------------------------------------------------------------
# Value distributions of a connective applied to independent cells


def atom_densities(nf: AtomicForm, p: IdentityPattern, model: DensityModel) -> list[DensitySpec]:
    return [model.density(rel, restrict_pattern(p, positions)) for rel, positions in nf.atoms]


def _quadrature_mesh(densities: Sequence[DensitySpec], points: int):
    """Cell midpoints and exact cell masses of a tensor grid."""
    edges = np.linspace(0.0, 1.0, points + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    s = len(densities)
    axes, weights = [], None
    for j, d in enumerate(densities):
        shape = [1] * s
        shape[j] = points
        axes.append(mids.reshape(shape))
        w = d.mass(edges[:-1], edges[1:]).reshape(shape)
        weights = w if weights is None else weights * w
    return axes, weights


def _mc_draws(densities: Sequence[DensitySpec], samples: int, seed):
    """Independent draws per density, generated in fixed-size seeded batches."""
    cols = [[] for _ in densities]
    for batch, start in enumerate(range(0, samples, MC_BATCH)):
        size = min(MC_BATCH, samples - start)
        rng = np.random.default_rng([*_entropy(seed), batch])
        u = rng.random((len(densities), size))
        for j, d in enumerate(densities):
            cols[j].append(d.ppf(u[j]))
    return [np.concatenate(c) for c in cols]


def _entropy(seed):
    return list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]


def _check_method(method, s, limit=3):
    if method not in ("mc", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if method == "quadrature" and s > limit:
        raise ValueError(f"quadrature supports at most {limit} atoms, formula has {s}")


# ---------------------------------------------------------------------------
# Probabilities of aggregation-free formulas


def prob_in_interval(psi: Formula, p: IdentityPattern, J, model: DensityModel,
                     variables: Sequence[str] | None = None, method: str = "mc",
                     budget: int | None = None, seed=0) -> ProbabilityEstimate:
    """Probability that an aggregation-free formula takes a value in ``J``.

    The answer depends only on ``(psi, p, J)`` and the density model; there
    is no domain size and no particular tuple.  ``budget`` is the sample
    count for ``"mc"`` (default 100000) and the points per axis for
    ``"quadrature"`` (default 256).
    """
    J = as_interval(J)
    nf = normalize_under(psi, p, variables)
    if isinstance(nf, ConstantForm):
        return ProbabilityEstimate(float(J.contains(nf.value)), "exact", 0.0, 0)
    densities = atom_densities(nf, p, model)
    s = len(densities)
    _check_method(method, s)
    if method == "mc":
        budget = budget or 100_000
        values = nf.conn(*_mc_draws(densities, budget, seed))
        alpha = float(np.mean(J.contains(values)))
        return ProbabilityEstimate(alpha, "mc", hoeffding_half_width(budget), budget)
    budget = budget or 256
    axes, weights = _quadrature_mesh(densities, budget)
    values = np.broadcast_to(nf.conn(*axes), weights.shape)
    alpha = float(np.sum(weights * J.contains(values)))
    # cells whose midpoint value is within L*h/2 of an endpoint may be misclassified
    reach = nf.conn.lipschitz() * 0.5 / budget
    uncertain = np.zeros(weights.shape, dtype=bool)
    for b in J.boundary():
        uncertain |= np.abs(values - b) <= reach
    error = float(np.sum(np.broadcast_to(weights, values.shape)[uncertain]))
    return ProbabilityEstimate(min(max(alpha, 0.0), 1.0), "quadrature", error, budget)


# ---------------------------------------------------------------------------
# Splitting a body into y-free and y-dependent atoms


@dataclass
class AggregationSplit:
    """A body normalized under the fresh extension, atoms split by use of ``y``."""

    normalized: object
    variables: tuple
    pattern: IdentityPattern
    free_slots: list
    y_slots: list

    @property
    def t(self) -> int:
        return len(self.free_slots)

    @property
    def s(self) -> int:
        return len(self.y_slots)

    def free_atoms(self) -> tuple:
        return tuple(Atom(rel, tuple(self.variables[i - 1] for i in positions))
                     for rel, positions in (self.normalized.atoms[j] for j in self.free_slots))

    def y_densities(self, model: DensityModel) -> list[DensitySpec]:
        atoms = [self.normalized.atoms[j] for j in self.y_slots]
        return [model.density(rel, restrict_pattern(self.pattern, positions))
                for rel, positions in atoms]

    def evaluate_at(self, fixed: Sequence, y_values: Sequence):
        """``C_r(p)``: the connective with y-free slots fixed to ``fixed``."""
        args = [None] * (self.t + self.s)
        for j, r in zip(self.free_slots, fixed):
            args[j] = r
        for j, v in zip(self.y_slots, y_values):
            args[j] = v
        return self.normalized.conn(*args)


def split_for_aggregation(phi: Formula, p: IdentityPattern, variables: Sequence[str],
                          y: str) -> AggregationSplit:
    variables = tuple(variables)
    if y in variables:
        raise FormulaError(f"aggregated variable {y} is already declared")
    ext = extend_pattern_fresh(p)
    ext_vars = variables + (y,)
    nf = normalize_under(phi, ext, ext_vars)
    if isinstance(nf, ConstantForm):
        return AggregationSplit(nf, ext_vars, ext, [], [])
    ypos = len(ext_vars)
    free_slots = [j for j, (_, pos) in enumerate(nf.atoms) if ypos not in pos]
    y_slots = [j for j, (_, pos) in enumerate(nf.atoms) if ypos in pos]
    return AggregationSplit(nf, ext_vars, ext, free_slots, y_slots)


def histogram_profile(phi: Formula, p: IdentityPattern, y: str, model: DensityModel,
                      variables: Sequence[str] | None = None, fixed: Sequence[float] = (),
                      M: int = 10, method: str = "quadrature", budget: int | None = None,
                      seed=0) -> HistogramProfile:
    """Per-bin probabilities of ``phi(a, b)`` for a fresh element ``b``.

    ``fixed`` supplies values of the y-free atoms in the order they occur in
    the normalized body.
    """
    if variables is None:
        variables = tuple(v for v in free_tuple(phi) if v != y)
    split = split_for_aggregation(phi, p, variables, y)
    if len(fixed) != split.t:
        raise ValueError(f"body has {split.t} y-free atoms but {len(fixed)} values were fixed")
    if isinstance(split.normalized, ConstantForm) or split.s == 0:
        value = (split.normalized.value if isinstance(split.normalized, ConstantForm)
                 else float(split.evaluate_at(fixed, ())))
        alphas = np.zeros(M)
        alphas[bin_index(value, M)] = 1.0
        return HistogramProfile(M, alphas)
    densities = split.y_densities(model)
    _check_method(method, split.s)
    if method == "mc":
        draws = _mc_draws(densities, budget or 100_000, seed)
        values = split.evaluate_at(fixed, draws)
        weights = np.full(values.shape, 1.0 / values.size)
    else:
        axes, weights = _quadrature_mesh(densities, budget or 256)
        values = np.broadcast_to(split.evaluate_at(fixed, axes), weights.shape)
    alphas = np.bincount(bin_index(values, M).ravel(),
                         weights=np.broadcast_to(weights, values.shape).ravel(), minlength=M)
    return HistogramProfile(M, alphas / alphas.sum())


# ---------------------------------------------------------------------------
# Construction of D


@dataclass
class EliminationConfig:
    grid: int = 17
    budget: int = 20_000
    method: str = "auto"          # "auto": quadrature for s <= 3, else Monte Carlo
    quadrature_points: int = 256
    scan_resolution: int = 512
    seed: int = 0
    stability_check: bool = False

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _node_summaries(kind: str, split: AggregationSplit, nodes: np.ndarray, model, config, seed):
    """Summary of the distribution of ``C_r`` at each grid node ``r``; returns (values, tolerance, method)."""
    s = split.s
    densities = split.y_densities(model)
    method = config.method
    if method == "auto":
        method = "quadrature" if s <= 3 else "mc"
    _check_method(method, s)
    lip = split.normalized.conn.lipschitz()
    out = np.empty(len(nodes))
    if kind == "am":
        if method == "quadrature":
            axes, weights = _quadrature_mesh(densities, config.quadrature_points)
            for i, r in enumerate(nodes):
                vals = np.broadcast_to(split.evaluate_at(r, axes), weights.shape)
                out[i] = float(np.sum(weights * vals))
            return out, lip * 0.5 / config.quadrature_points, "quadrature"
        draws = _mc_draws(densities, config.budget, seed)
        for i, r in enumerate(nodes):
            out[i] = float(np.mean(split.evaluate_at(r, draws)))
        return out, hoeffding_half_width(config.budget), "mc"
    reduce = np.max if kind == "max" else np.min
    if method == "quadrature":
        pts = [d.support_points(config.scan_resolution) for d in densities]
        if any(len(q) == 0 for q in pts):
            raise ArithmeticError("a density has empty support")
        axes = [q.reshape([-1 if j == i else 1 for j in range(s)]) for i, q in enumerate(pts)]
        for i, r in enumerate(nodes):
            out[i] = float(reduce(split.evaluate_at(r, axes)))
        return out, lip * 0.5 / config.scan_resolution, "support-scan"
    draws = _mc_draws(densities, config.budget, seed)
    for i, r in enumerate(nodes):
        out[i] = float(reduce(split.evaluate_at(r, draws)))
    return out, float("nan"), "mc"


@dataclass
class DConstruction:
    """Result of building ``D`` for one aggregation."""

    connective: Connective | None
    constant: float | None
    free_atoms: tuple
    record: dict


def build_D(F: Aggregator, phi: Formula, p: IdentityPattern, model: DensityModel,
            variables: Sequence[str], y: str, config: EliminationConfig | None = None,
            seed=None) -> DConstruction:
    """Tabulate the function replacing ``F(phi : y)`` for tuples satisfying ``p``."""
    config = config or EliminationConfig()
    if F.kind not in ("min", "max", "am"):
        raise ValueError(f"no elimination rule for aggregator {F.label!r}")
    if not is_aggregation_free(phi):
        raise FormulaError("build_D requires an aggregation-free body")
    seed = config.seed if seed is None else seed
    split = split_for_aggregation(phi, p, variables, y)
    record = {"aggregator": F.kind, "t": split.t, "s": split.s, "grid": None,
              "budget": None, "method": None, "tolerance": 0.0}
    if isinstance(split.normalized, ConstantForm):
        record["method"] = "constant"
        return DConstruction(None, split.normalized.value, (), record)
    if split.s == 0:
        # F of replicas of one value is that value for min, max and am
        record["method"] = "identity"
        if split.t == 0:
            return DConstruction(None, float(split.evaluate_at((), ())), (), record)
        conn = split.normalized.conn
        return DConstruction(conn, None, split.free_atoms(), record)
    grid = uniform_grid(config.grid)
    points = list(itertools.product(grid, repeat=split.t))
    nodes = np.array(points, dtype=float).reshape(len(points), split.t)
    values, tol, method = _node_summaries(F.kind, split, nodes, model, config, seed)
    values = np.clip(values, 0.0, 1.0)
    record.update(grid=config.grid if split.t else None, method=method, tolerance=tol,
                  budget=(config.quadrature_points if method == "quadrature"
                          else config.scan_resolution if method == "support-scan"
                          else config.budget))
    if config.stability_check and method == "mc":
        doubled = EliminationConfig(**{**config.__dict__, "budget": 2 * config.budget})
        again, _, _ = _node_summaries(F.kind, split, nodes, model, doubled, [*_entropy(seed), 1])
        record["stability_max_change"] = float(np.max(np.abs(np.clip(again, 0, 1) - values)))
    if split.t == 0:
        return DConstruction(None, float(values[0]), (), record)
    table = TabulatedConnective(tuple(grid for _ in range(split.t)),
                                values.reshape((config.grid,) * split.t))
    return DConstruction(table.as_connective(), None, split.free_atoms(), record)


# ---------------------------------------------------------------------------
# Elimination


@dataclass
class EliminationResult:
    output: Formula
    trace: list

    @property
    def tolerance(self) -> float:
        tols = [r["tolerance"] for r in self.trace if r.get("tolerance") is not None]
        tols = [t for t in tols if not math.isnan(t)]
        return float(sum(tols))


def eliminate_once(node: Agg, p: IdentityPattern, model: DensityModel,
                   variables: Sequence[str], config: EliminationConfig | None = None,
                   seed=None) -> tuple[Formula, dict]:
    """Replace one aggregation over an aggregation-free body."""
    if not isinstance(node, Agg):
        raise FormulaError("eliminate_once expects an aggregation node")
    d = build_D(node.agg, node.body, p, model, variables, node.var, config, seed)
    d.record["node"] = to_text(node)
    if d.constant is not None:
        return Const(min(max(d.constant, 0.0), 1.0)), d.record
    return Conn(d.connective, d.free_atoms), d.record


def eliminate(f: Formula, p: IdentityPattern, model: DensityModel,
              variables: Sequence[str] | None = None,
              config: EliminationConfig | None = None) -> EliminationResult:
    """An aggregation-free formula asymptotically equivalent to ``f`` under ``p``.

    Connective nodes recurse with the same pattern; an aggregation first has
    its body eliminated under the pattern extended by a fresh element.
    """
    config = config or EliminationConfig()
    variables = tuple(free_tuple(f) if variables is None else variables)
    if len(variables) != p.size:
        raise FormulaError(f"pattern has size {p.size} but {len(variables)} variables are declared")
    trace: list = []
    counter = itertools.count()

    def go(g, pat, vs):
        if isinstance(g, (Const, Eq, Atom)):
            return g
        if isinstance(g, Conn):
            return Conn(g.conn, tuple(go(a, pat, vs) for a in g.args))
        body = go(g.body, extend_pattern_fresh(pat), vs + (g.var,))
        out, record = eliminate_once(Agg(g.agg, g.var, body), pat, model, vs, config,
                                     seed=[config.seed, next(counter)])
        trace.append(record)
        return out

    return EliminationResult(go(f, p, variables), trace)


def limit_prob(f: Formula, p: IdentityPattern, I, model: DensityModel,
               variables: Sequence[str] | None = None, config: EliminationConfig | None = None,
               method: str = "mc", budget: int | None = None, seed=0,
               elimination: EliminationResult | None = None) -> ProbabilityEstimate:
    """The limit of ``P_n(f(a) in I)`` for tuples satisfying ``p``.

    The reported error adds the integration error to the summed node
    tolerances of the elimination.
    """
    variables = tuple(free_tuple(f) if variables is None else variables)
    elim = elimination or eliminate(f, p, model, variables, config)
    est = prob_in_interval(elim.output, p, I, model, variables, method, budget, seed)
    est.details["integration_error"] = est.error
    est.details["elimination_tolerance"] = elim.tolerance
    est.error = est.error + elim.tolerance
    return est


# ---------------------------------------------------------------------------
# Independence of per-element events


def canonical_tuple(p: IdentityPattern) -> tuple:
    """The tuple satisfying ``p`` that uses elements ``1..#blocks``."""
    tup = [0] * p.size
    for j, block in enumerate(p.blocks, start=1):
        for i in block:
            tup[i - 1] = j
    return tuple(tup)


def independence_gap(psi: Formula, p: IdentityPattern, J, n: int, m: int, samples: int,
                     model: DensityModel, y: str = "y", variables: Sequence[str] | None = None,
                     seed=0) -> dict:
    """Worst empirical product-rule gap among events ``psi(a, b_i) in J``.

    Checks every pair and the conjunction of all ``m`` events over
    ``samples`` sampled structures of size ``n``.
    """
    J = as_interval(J)
    if variables is None:
        variables = tuple(v for v in free_tuple(psi) if v != y)
    variables = tuple(variables)
    a = canonical_tuple(p)
    used = len(p.blocks)
    if n < used + m:
        raise ValueError(f"need n >= {used + m} to place {m} fresh elements")
    rows = np.array([a + (used + i + 1,) for i in range(m)], dtype=np.int64).reshape(m, -1)
    events = np.empty((samples, m), dtype=bool)
    for k in range(samples):
        A = sample_structure(n, model, _entropy(seed), k)
        events[k] = J.contains(evaluate_many(A, psi, rows, variables + (y,)))
    marg = events.mean(axis=0)
    gaps = {}
    for i, j in itertools.combinations(range(m), 2):
        joint = np.mean(events[:, i] & events[:, j])
        gaps[f"{i + 1},{j + 1}"] = float(abs(joint - marg[i] * marg[j]))
    if m > 2:
        gaps["all"] = float(abs(np.mean(events.all(axis=1)) - np.prod(marg)))
    return {"gap": max(gaps.values(), default=0.0), "pairs": gaps,
            "marginals": marg.tolist(), "samples": samples, "n": n, "m": m}
