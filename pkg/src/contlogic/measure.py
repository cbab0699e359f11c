"""Cell densities, the flat cell layout, and the structure sampler."""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .logic import IdentityPattern, Signature, pattern_from_json, pattern_of


class DensityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Densities


@dataclass(frozen=True, eq=False)
class DensitySpec:
    """A continuous piecewise-polynomial density on ``[0,1]``.

    ``pieces[j]`` holds ascending power coefficients (in absolute ``x``) valid
    on ``[breakpoints[j], breakpoints[j+1]]``.  Build instances with
    :func:`validate_density`, which normalizes them.
    """

    breakpoints: tuple
    pieces: tuple
    kind: str = "piecewise"
    _cdf_pieces: tuple = field(default=(), init=False, repr=False)
    _cum: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        cdf, cum = [], [0.0]
        for (a, b), c in zip(zip(self.breakpoints, self.breakpoints[1:]), self.pieces):
            anti = P.polyint(np.asarray(c, dtype=float))
            anti = P.polysub(anti, [P.polyval(a, anti)])
            cdf.append(anti)
            cum.append(cum[-1] + float(P.polyval(b, anti)))
        object.__setattr__(self, "_cdf_pieces", tuple(cdf))
        object.__setattr__(self, "_cum", np.asarray(cum))

    @property
    def is_uniform(self) -> bool:
        return self.kind == "uniform"

    def total_mass(self) -> float:
        return float(self._cum[-1])

    def _piece(self, x):
        bp = np.asarray(self.breakpoints)
        return np.clip(np.searchsorted(bp, x, side="right") - 1, 0, len(self.pieces) - 1)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_uniform:
            return np.ones_like(x)
        if len(self.pieces) == 1:
            out = P.polyval(x, self.pieces[0])
        else:
            idx = self._piece(x)
            out = np.empty_like(x)
            for j, c in enumerate(self.pieces):
                sel = idx == j
                out[sel] = P.polyval(x[sel], c)
        return np.where((x < 0) | (x > 1), 0.0, np.maximum(out, 0.0))

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        if self.is_uniform:
            return x
        if len(self.pieces) == 1:
            return np.clip(P.polyval(x, self._cdf_pieces[0]), 0.0, 1.0)
        idx = self._piece(x)
        out = np.empty_like(x)
        for j, anti in enumerate(self._cdf_pieces):
            sel = idx == j
            out[sel] = self._cum[j] + P.polyval(x[sel], anti)
        return np.clip(out, 0.0, 1.0)

    def mass(self, a, b):
        return self.cdf(b) - self.cdf(a)

    def ppf(self, u, tol: float = 1e-12):
        """Inverse CDF: bracket from a CDF table, then safeguarded Newton steps.

        Each entry stops updating once its step falls below ``tol``, so the
        result for one entry does not depend on the rest of the batch.
        """
        u = np.asarray(u, dtype=float)
        if self.is_uniform:
            return u.copy()
        xs, cs = self._table
        k = np.clip(np.searchsorted(cs, u, side="right") - 1, 0, len(xs) - 2)
        lo, hi = xs[k].copy(), xs[k + 1].copy()
        x = 0.5 * (lo + hi)
        done = np.zeros(u.shape, dtype=bool)
        for _ in range(100):
            f = self.cdf(x) - u
            lo = np.where(f < 0, x, lo)
            hi = np.where(f < 0, hi, x)
            d = self.pdf(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = x - f / d
            bad = ~np.isfinite(newton) | (newton < lo) | (newton > hi)
            nxt = np.where(bad, 0.5 * (lo + hi), newton)
            step_done = (np.abs(nxt - x) < tol) | (hi - lo < tol)
            x = np.where(done, x, nxt)
            done |= step_done
            if done.all():
                break
        return x

    @property
    def _table(self):
        table = self.__dict__.get("_ppf_table")
        if table is None:
            xs = np.union1d(np.linspace(0.0, 1.0, 1025), self.breakpoints)
            table = (xs, self.cdf(xs))
            object.__setattr__(self, "_ppf_table", table)
        return table

    def support_cells(self, resolution: int = 512) -> np.ndarray:
        """Mask of the cells ``[j/res, (j+1)/res]`` meeting the positivity region."""
        if self.is_uniform:
            return np.ones(resolution, dtype=bool)
        probe = (np.arange(resolution)[:, None] + np.linspace(0.05, 0.95, 7)[None, :]) / resolution
        pos = self.pdf(probe) > 0
        # cell masses catch positivity missed by the probes
        masses = self.mass(np.arange(resolution) / resolution,
                           np.arange(1, resolution + 1) / resolution)
        return pos.any(axis=1) | (masses > 0)

    def support_points(self, resolution: int = 512) -> np.ndarray:
        """Grid points of spacing ``1/resolution`` in the closed support."""
        cells = self.support_cells(resolution)
        pts = np.zeros(resolution + 1, dtype=bool)
        pts[:-1] |= cells
        pts[1:] |= cells
        return np.flatnonzero(pts) / resolution

    def to_json(self) -> dict:
        if self.is_uniform:
            return {"type": "uniform"}
        if len(self.pieces) == 1:
            return {"type": "poly", "coeffs": list(self.pieces[0])}
        return {"type": "piecewise", "breakpoints": list(self.breakpoints),
                "pieces": [list(c) for c in self.pieces]}


def validate_density(spec) -> DensitySpec:
    """Check and normalize a density given as a spec object or JSON mapping.

    Rejects negative regions, jumps at breakpoints and zero total mass.
    """
    if isinstance(spec, DensitySpec):
        data = spec.to_json()
    elif isinstance(spec, str):
        data = {"type": spec}
    else:
        data = dict(spec)
    kind = data.get("type", "uniform")
    if kind == "uniform":
        return DensitySpec((0.0, 1.0), ((1.0,),), "uniform")
    if kind == "poly":
        breakpoints, pieces = [0.0, 1.0], [data["coeffs"]]
    elif kind == "piecewise":
        breakpoints, pieces = list(data["breakpoints"]), list(data["pieces"])
    else:
        raise DensityError(f"unknown density type {kind!r}")
    breakpoints = [float(b) for b in breakpoints]
    pieces = [np.trim_zeros(np.asarray(c, dtype=float), "b") for c in pieces]
    pieces = [c if c.size else np.zeros(1) for c in pieces]
    if breakpoints[0] != 0.0 or breakpoints[-1] != 1.0 or np.any(np.diff(breakpoints) <= 0):
        raise DensityError("breakpoints must increase from 0 to 1")
    if len(pieces) != len(breakpoints) - 1:
        raise DensityError("need one coefficient list per piece")
    scale = max(float(np.max(np.abs(c))) for c in pieces) or 1.0
    for j, b in enumerate(breakpoints[1:-1]):
        left, right = P.polyval(b, pieces[j]), P.polyval(b, pieces[j + 1])
        if abs(left - right) > 1e-9 * max(1.0, scale):
            raise DensityError(f"density jumps at breakpoint {b}: {left} vs {right}")
    for (a, b), c in zip(zip(breakpoints, breakpoints[1:]), pieces):
        xs = [np.linspace(a, b, 2049)]
        if c.size > 2:
            crit = P.polyroots(P.polyder(c))
            crit = crit[np.isreal(crit)].real
            xs.append(crit[(crit >= a) & (crit <= b)])
        lowest = float(np.min(P.polyval(np.concatenate(xs), c)))
        if lowest < -1e-12 * max(1.0, scale):
            raise DensityError(f"density is negative on [{a}, {b}] (min {lowest:.3g})")
    mass = sum(float(P.polyval(b, P.polyint(c)) - P.polyval(a, P.polyint(c)))
               for (a, b), c in zip(zip(breakpoints, breakpoints[1:]), pieces))
    if mass <= 0:
        raise DensityError("density has zero total mass")
    pieces = tuple(tuple((c / mass).tolist()) for c in pieces)
    return DensitySpec(tuple(breakpoints), pieces, "poly" if len(pieces) == 1 else "piecewise")


UNIFORM = validate_density("uniform")


def sample_value(spec: DensitySpec, stream) -> float:
    """One draw from ``spec``; ``stream`` is a Generator or a uniform in ``[0,1)``."""
    u = stream.random() if hasattr(stream, "random") else float(stream)
    return float(spec.ppf(np.asarray([u]))[0])


# ---------------------------------------------------------------------------
# Density models


@dataclass(frozen=True, eq=False)
class DensityModel:
    signature: Signature
    table: Mapping = field(default_factory=dict)

    def __post_init__(self):
        table = {}
        for (rel, pattern), spec in dict(self.table).items():
            k = self.signature.arity(rel)
            if pattern.size != k:
                raise DensityError(f"pattern {pattern} for {rel} has size {pattern.size}, arity is {k}")
            table[(rel, pattern)] = spec if isinstance(spec, DensitySpec) else validate_density(spec)
        object.__setattr__(self, "table", table)

    def density(self, rel: str, pattern: IdentityPattern) -> DensitySpec:
        return self.table.get((rel, pattern), UNIFORM)

    @classmethod
    def uniform(cls, signature: Signature) -> "DensityModel":
        return cls(signature, {})

    @classmethod
    def from_json(cls, signature: Signature, data: Mapping | None) -> "DensityModel":
        table = {}
        for entry in (data or {}).get("densities", []):
            rel = entry["relation"]
            pattern = pattern_from_json(entry["pattern"], signature.arity(rel))
            table[(rel, pattern)] = validate_density(entry["density"])
        return cls(signature, table)

    @classmethod
    def load(cls, signature: Signature, path) -> "DensityModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(signature, json.load(fh))

    def to_json(self) -> dict:
        return {"densities": [{"relation": rel, "pattern": p.to_json(), "density": s.to_json()}
                              for (rel, p), s in self.table.items()]}


# ---------------------------------------------------------------------------
# Layout


def _pattern_codes(tuples: np.ndarray) -> np.ndarray:
    """Integer code of the equality pattern of each row (pairwise-equality bitmask)."""
    k = tuples.shape[1]
    code = np.zeros(len(tuples), dtype=np.int64)
    bit = 0
    for i in range(k):
        for j in range(i + 1, k):
            code |= (tuples[:, i] == tuples[:, j]).astype(np.int64) << bit
            bit += 1
    return code


@dataclass(frozen=True, eq=False)
class FlatLayout:
    """The cells ``(R, a)`` of a domain of size ``n`` in canonical order.

    Cells are ordered by largest element, then relation name,
    then lexicographically, so the layout for ``n`` is a prefix of the layout
    for any larger domain.
    """

    n: int
    signature: Signature
    rel_of_cell: np.ndarray      # relation position in the signature, per cell
    flat_of_cell: np.ndarray     # row-major index into that relation's array
    position: dict               # relation -> array (n,)*arity of layout positions
    groups: dict                 # (relation, pattern) -> layout positions of its cells

    @property
    def xi(self) -> int:
        return len(self.rel_of_cell)

    def cell(self, i: int) -> tuple:
        name, k = self.signature.relations[self.rel_of_cell[i]]
        tup = np.unravel_index(self.flat_of_cell[i], (self.n,) * k)
        return name, tuple(int(t) + 1 for t in tup)

    def cells(self):
        return [self.cell(i) for i in range(self.xi)]

    def index_of(self, rel: str, tup: Sequence[int]) -> int:
        return int(self.position[rel][tuple(t - 1 for t in tup)])


@functools.lru_cache(maxsize=32)
def build_layout(n: int, signature: Signature) -> FlatLayout:
    if n < 1:
        raise ValueError("domain size must be positive")
    keys_max, keys_rel, keys_flat = [], [], []
    for r, (name, k) in enumerate(signature.relations):
        size = n ** k
        tuples = np.indices((n,) * k).reshape(k, size).T
        keys_max.append(tuples.max(axis=1))
        keys_rel.append(np.full(size, r))
        keys_flat.append(np.arange(size))
    mx, rel, flat = (np.concatenate(a) for a in (keys_max, keys_rel, keys_flat))
    # ties on the max element break by relation name, then lexicographically
    name_rank = np.argsort(np.argsort([name for name, _ in signature.relations]))
    order = np.lexsort((flat, name_rank[rel], mx))
    rel_of_cell, flat_of_cell = rel[order], flat[order]
    position, groups = {}, {}
    for r, (name, k) in enumerate(signature.relations):
        cells = np.flatnonzero(rel_of_cell == r)
        pos = np.empty(n ** k, dtype=np.int64)
        pos[flat_of_cell[cells]] = cells
        position[name] = pos.reshape((n,) * k)
        tuples = np.stack(np.unravel_index(flat_of_cell[cells], (n,) * k), axis=1)
        codes = _pattern_codes(tuples)
        for code in np.unique(codes):
            sel = cells[codes == code]
            first = tuples[np.flatnonzero(codes == code)[0]]
            groups[(name, pattern_of(tuple(first)))] = sel
    for arr in (rel_of_cell, flat_of_cell):
        arr.setflags(write=False)
    return FlatLayout(n, signature, rel_of_cell, flat_of_cell, position, groups)


# ---------------------------------------------------------------------------
# Structures


@dataclass(frozen=True, eq=False)
class ContinuousStructure:
    """A finite continuous structure on ``{1..n}``; arrays are 0-indexed."""

    n: int
    signature: Signature
    values: Mapping

    def __post_init__(self):
        for name, k in self.signature:
            arr = np.asarray(self.values[name], dtype=float)
            if arr.shape != (self.n,) * k:
                raise ValueError(f"{name} values must have shape {(self.n,) * k}")
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError(f"{name} values must lie in [0,1]")

    def value(self, rel: str, tup: Sequence[int]) -> float:
        return float(self.values[rel][tuple(t - 1 for t in tup)])

    def to_vector(self, layout: FlatLayout | None = None) -> np.ndarray:
        layout = layout or build_layout(self.n, self.signature)
        out = np.empty(layout.xi)
        for name, _ in self.signature:
            out[layout.position[name].ravel()] = np.asarray(self.values[name]).ravel()
        return out

    @classmethod
    def from_vector(cls, vec, n: int, signature: Signature,
                    layout: FlatLayout | None = None) -> "ContinuousStructure":
        layout = layout or build_layout(n, signature)
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (layout.xi,):
            raise ValueError(f"expected a vector of length {layout.xi}")
        values = {name: vec[layout.position[name]] for name, _ in signature}
        return cls(n, signature, values)

    def relabel(self, perm: Sequence[int]) -> "ContinuousStructure":
        """The isomorphic copy sending element ``i`` to ``perm[i-1]``."""
        inv = np.empty(self.n, dtype=int)
        inv[np.asarray(perm) - 1] = np.arange(self.n)
        values = {}
        for name, k in self.signature:
            arr = np.asarray(self.values[name])
            values[name] = arr[np.ix_(*([inv] * k))] if k > 1 else arr[inv]
        return ContinuousStructure(self.n, self.signature, values)

    def to_json(self) -> dict:
        return {"n": self.n, "relations": {name: np.asarray(self.values[name]).tolist()
                                           for name, _ in self.signature}}


def structure_stream(master_seed, structure_index: int) -> np.random.Generator:
    """Counter-based stream whose i-th double feeds layout cell i."""
    entropy = list(master_seed) if isinstance(master_seed, (tuple, list)) else [master_seed]
    key = np.random.SeedSequence(entropy + [structure_index]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_structure(n: int, model: DensityModel, master_seed, structure_index: int = 0
                     ) -> ContinuousStructure:
    """Draw every cell independently from its (relation, pattern) density.

    Cell ``i`` of the layout consumes the ``i``-th output of a Philox stream
    keyed by ``(master_seed, structure_index)``; the result does not depend
    on evaluation order, and restricting to a smaller domain gives the
    structure that the same seed produces there.
    """
    layout = build_layout(n, model.signature)
    u = structure_stream(master_seed, structure_index).random(layout.xi)
    vec = np.empty(layout.xi)
    for (rel, pattern), cells in layout.groups.items():
        vec[cells] = model.density(rel, pattern).ppf(u[cells])
    return ContinuousStructure.from_vector(vec, n, model.signature, layout)


def structure_from_json(data: Mapping, signature: Signature) -> ContinuousStructure:
    return ContinuousStructure(int(data["n"]), signature,
                               {k: np.asarray(v, dtype=float) for k, v in data["relations"].items()})
