"""Experiment runner: convergence and concentration reports.

Structures for domain size ``n`` are drawn with master seed ``(seed, n)`` and
structure index ``0..samples-1``; per-structure results are reduced in index
order, so reports do not depend on the thread count.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .evaluate import evaluate_many
from .inference import (EliminationConfig, as_interval, bin_index, eliminate, histogram_profile,
                        limit_prob, split_for_aggregation)
from .logic import (FormulaError, IdentityPattern, Signature, count_satisfying, free_tuple,
                    is_aggregation_free, pattern_from_json, satisfying_tuples, to_text, walk, Atom)
from .measure import DensityModel, sample_structure
from .parser import parse

TUPLE_CAP = 10_000
CONVERGENCE_COLUMNS = ("n", "samples", "closeness_freq", "membership_freq", "alpha_hat",
                       "alpha_err", "wall_ms")
CONCENTRATION_COLUMNS = ("n", "samples", "pass_freq", "worst_deviation", "wall_ms")


@dataclass
class ExperimentConfig:
    formula: str
    ladder: list
    samples: int = 100
    signature: object = None        # path, inline dict, or None to infer from the formula
    model: object = None            # path, inline dict, or None for all-uniform
    variables: list | None = None
    pattern: list | None = None     # blocks of 1-based positions; default all distinct
    interval: list = field(default_factory=lambda: [0.4, 0.6])
    epsilon: float = 0.1
    seed: int = 0
    grid: int = 17
    budget: int = 20_000
    tuple_cap: int = TUPLE_CAP
    y: str = "y"                    # concentration: the per-element variable
    M: int = 4
    delta: float = 0.15
    base_dir: str = "."

    def __post_init__(self):
        if not self.ladder:
            raise ValueError("the n-ladder is empty")
        self.ladder = [int(n) for n in self.ladder]
        if any(b <= a for a, b in zip(self.ladder, self.ladder[1:])):
            raise ValueError("the n-ladder must be strictly increasing")
        if self.samples < 1:
            raise ValueError("samples per rung must be at least 1")
        if self.tuple_cap < 1:
            raise ValueError("tuple_cap must be positive")

    @classmethod
    def from_json(cls, data: dict, base_dir: str = ".") -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{**data, "base_dir": data.get("base_dir", base_dir)})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_json(data, os.path.dirname(os.path.abspath(path)))

    def to_json(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out.pop("base_dir")
        return out

    def _resolve(self, item):
        if isinstance(item, str):
            path = item if os.path.isabs(item) else os.path.join(self.base_dir, item)
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        return item


@dataclass
class Setup:
    """Parsed, validated inputs shared by the experiments."""

    signature: Signature
    model: DensityModel
    formula: object
    variables: tuple
    pattern: IdentityPattern


def infer_signature(text: str) -> Signature:
    f = parse(text)
    arities = {}
    for g in walk(f):
        if isinstance(g, Atom):
            arities[g.rel] = len(g.args)
    if not arities:
        raise FormulaError("cannot infer a signature from a formula without relations")
    return Signature(tuple(sorted(arities.items())))


def load_inputs(signature=None, model=None, formula: str = "", variables=None, pattern=None,
                exclude: Sequence[str] = ()) -> Setup:
    sig = Signature.from_json(signature) if signature is not None else infer_signature(formula)
    dm = DensityModel.from_json(sig, model) if model is not None else DensityModel.uniform(sig)
    f = parse(formula, sig, variables)
    if variables is None:
        variables = [v for v in free_tuple(f) if v not in exclude]
    variables = tuple(variables)
    p = pattern_from_json(pattern, len(variables))
    return Setup(sig, dm, f, variables, p)


def setup_from_config(config: ExperimentConfig, exclude: Sequence[str] = ()) -> Setup:
    return load_inputs(config._resolve(config.signature), config._resolve(config.model),
                       config.formula, config.variables, config.pattern, exclude)


def tuples_for(p: IdentityPattern, n: int, cap: int, rng: np.random.Generator):
    """All tuples satisfying ``p`` over ``1..n``, or ``cap`` uniform draws beyond the cap.

    Returns ``(tuples, subsampled)``; tuples are 1-based rows.
    """
    k, nb = p.size, len(p.blocks)
    if nb > n:
        raise FormulaError(f"pattern needs {nb} distinct elements but n = {n}")
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64), False
    total = count_satisfying(p, n)
    if total <= cap:
        return np.array(list(satisfying_tuples(p, n)), dtype=np.int64).reshape(total, k), False
    vals = np.argsort(rng.random((cap, n)), axis=1)[:, :nb] + 1
    rows = np.empty((cap, k), dtype=np.int64)
    for j, block in enumerate(p.blocks):
        for i in block:
            rows[:, i - 1] = vals[:, j]
    return rows, True


def _run_tasks(fn, count: int, threads: int):
    if threads <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def rows_to_csv(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _nondecreasing(xs) -> bool:
    return all(b >= a for a, b in zip(xs, xs[1:]))


# ---------------------------------------------------------------------------
# Convergence


def run_convergence(config: ExperimentConfig, threads: int = 1, timing: bool = False) -> dict:
    """Closeness to the eliminated formula and interval membership across the ladder."""
    s = setup_from_config(config)
    f, variables, p = s.formula, s.variables, s.pattern
    I = as_interval(config.interval)
    ecfg = EliminationConfig(grid=config.grid, budget=config.budget, seed=config.seed)
    elim = eliminate(f, p, s.model, variables, ecfg)
    psi = elim.output
    try:
        alpha = limit_prob(f, p, I, s.model, variables, method="quadrature", seed=config.seed,
                           elimination=elim)
    except ValueError:
        alpha = limit_prob(f, p, I, s.model, variables, method="mc", seed=config.seed,
                           elimination=elim)
    same = is_aggregation_free(f)

    rows, notes = [], []
    for n in config.ladder:
        start = time.perf_counter()

        def task(idx, n=n):
            A = sample_structure(n, s.model, (config.seed, n), idx)
            rng = np.random.default_rng([config.seed, n, idx, 1])
            tuples, sub = tuples_for(p, n, config.tuple_cap, rng)
            vf = evaluate_many(A, f, tuples, variables)
            vpsi = vf if same else evaluate_many(A, psi, tuples, variables)
            close = bool(np.all(np.abs(vf - vpsi) <= config.epsilon))
            return close, int(np.count_nonzero(I.contains(vf))), len(tuples), sub

        results = _run_tasks(task, config.samples, threads)
        evaluated = sum(r[2] for r in results)
        subsampled = any(r[3] for r in results)
        rows.append({
            "n": n, "samples": config.samples,
            "closeness_freq": sum(r[0] for r in results) / config.samples,
            "membership_freq": sum(r[1] for r in results) / evaluated,
            "alpha_hat": alpha.value, "alpha_err": alpha.error,
            "wall_ms": round((time.perf_counter() - start) * 1000, 1) if timing else None,
            "tuples_per_structure": evaluated // config.samples, "subsampled": subsampled,
        })
        if subsampled:
            notes.append(f"n={n}: closeness checked on {config.tuple_cap} sampled tuples per "
                         "structure, not on all satisfying tuples")
    return {
        "kind": "convergence",
        "config": config.to_json(),
        "formula": to_text(f),
        "variables": list(variables),
        "pattern": p.to_json(),
        "interval": [I.lo, I.hi],
        "eliminated": to_text(psi),
        "elimination_trace": elim.trace,
        "alpha": alpha.to_json(),
        "rows": rows,
        "closeness_nondecreasing": _nondecreasing([r["closeness_freq"] for r in rows]),
        "notes": notes,
    }


# ---------------------------------------------------------------------------
# Concentration


def run_concentration(config: ExperimentConfig, threads: int = 1, timing: bool = False) -> dict:
    """How often every tuple's bin proportions sit within ``delta`` of the profile."""
    y = config.y
    s = setup_from_config(config, exclude=(y,))
    inner, variables, p = s.formula, s.variables, s.pattern
    if not is_aggregation_free(inner):
        raise FormulaError("the inner formula must be aggregation-free")
    split = split_for_aggregation(inner, p, variables, y)
    if split.t:
        raise FormulaError("the inner formula may only use atoms that mention "
                           f"{y}; found {split.t} atom(s) without it")
    profile = histogram_profile(inner, p, y, s.model, variables, M=config.M, seed=config.seed)
    M, target = config.M, profile.alphas
    rows = []
    for n in config.ladder:
        start = time.perf_counter()

        def task(idx, n=n):
            A = sample_structure(n, s.model, (config.seed, n), idx)
            rng = np.random.default_rng([config.seed, n, idx, 1])
            tuples, _ = tuples_for(p, n, config.tuple_cap, rng)
            B = len(tuples)
            bs = np.arange(1, n + 1)
            full = np.concatenate([np.repeat(tuples, n, axis=0), np.tile(bs, B)[:, None]], axis=1)
            vals = evaluate_many(A, inner, full, variables + (y,)).reshape(B, n)
            keep = np.all(full[:, :-1].reshape(B, n, -1) != bs[None, :, None], axis=2)
            if not keep.any(axis=1).all():
                raise ArithmeticError(f"no element outside the tuple at n={n}")
            idxs = bin_index(vals, M)
            counts = np.stack([np.sum((idxs == i) & keep, axis=1) for i in range(M)], axis=1)
            props = counts / keep.sum(axis=1, keepdims=True)
            dev = float(np.max(np.abs(props - target)))
            return dev <= config.delta, dev

        results = _run_tasks(task, config.samples, threads)
        rows.append({
            "n": n, "samples": config.samples,
            "pass_freq": sum(r[0] for r in results) / config.samples,
            "worst_deviation": max(r[1] for r in results),
            "wall_ms": round((time.perf_counter() - start) * 1000, 1) if timing else None,
        })
    return {
        "kind": "concentration",
        "config": config.to_json(),
        "inner": to_text(inner),
        "variables": list(variables),
        "pattern": p.to_json(),
        "profile": target.tolist(),
        "rows": rows,
        "pass_nondecreasing": _nondecreasing([r["pass_freq"] for r in rows]),
    }


def write_report(report: dict, out_dir: str, stem: str, columns: Sequence[str]) -> dict:
    """Write ``<stem>.json`` and ``<stem>.csv``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"json": os.path.join(out_dir, f"{stem}.json"),
             "csv": os.path.join(out_dir, f"{stem}.csv")}
    with open(paths["json"], "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths["csv"], "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(report["rows"], columns))
    return paths
