"""Signatures, formulas, identity patterns and the two normalization passes."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence, Union

from .funcspace import Aggregator, Connective, Expr, Lit, Proj, aggregator, builtin, substitute


class FormulaError(ValueError):
    """A formula is ill-formed or used outside an operation's precondition."""


# ---------------------------------------------------------------------------
# Signatures


@dataclass(frozen=True)
class Signature:
    relations: tuple  # of (name, arity), in declaration order

    def __post_init__(self):
        rels = tuple((str(name), int(arity)) for name, arity in self.relations)
        if not rels:
            raise FormulaError("signature must be nonempty")
        names = [name for name, _ in rels]
        if len(set(names)) != len(names):
            raise FormulaError("relation names must be unique")
        for name, arity in rels:
            if arity < 1:
                raise FormulaError(f"relation {name} has arity {arity}; must be >= 1")
        object.__setattr__(self, "relations", rels)

    def __contains__(self, name) -> bool:
        return any(name == r for r, _ in self.relations)

    def __iter__(self):
        return iter(self.relations)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.relations]

    def arity(self, name: str) -> int:
        for r, k in self.relations:
            if r == name:
                return k
        raise FormulaError(f"unknown relation {name!r}")

    @classmethod
    def from_json(cls, data: Mapping) -> "Signature":
        try:
            return cls(tuple((r["name"], int(r["arity"])) for r in data["relations"]))
        except (TypeError, KeyError) as exc:
            raise FormulaError('signature JSON must look like {"relations": '
                               '[{"name": "E", "arity": 2}, ...]}') from exc

    @classmethod
    def load(cls, path) -> "Signature":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {"relations": [{"name": n, "arity": k} for n, k in self.relations]}


# ---------------------------------------------------------------------------
# Formulas


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise FormulaError(f"constant {self.value} outside [0,1]")


@dataclass(frozen=True)
class Eq:
    left: str
    right: str


@dataclass(frozen=True)
class Atom:
    rel: str
    args: tuple


@dataclass(frozen=True)
class Conn:
    conn: Connective
    args: tuple

    def __post_init__(self):
        if len(self.args) != self.conn.arity:
            raise FormulaError(
                f"{self.conn.label} has arity {self.conn.arity} but got {len(self.args)} arguments")


@dataclass(frozen=True)
class Agg:
    agg: Aggregator
    var: str
    body: "Formula"


Formula = Union[Const, Eq, Atom, Conn, Agg]
ATOMIC = (Const, Eq, Atom)


def children(f: Formula) -> tuple:
    if isinstance(f, Conn):
        return f.args
    if isinstance(f, Agg):
        return (f.body,)
    return ()


def walk(f: Formula) -> Iterator[Formula]:
    yield f
    for c in children(f):
        yield from walk(c)


def free_vars(f: Formula) -> frozenset:
    if isinstance(f, Const):
        return frozenset()
    if isinstance(f, Eq):
        return frozenset((f.left, f.right))
    if isinstance(f, Atom):
        return frozenset(f.args)
    if isinstance(f, Conn):
        return frozenset().union(*[free_vars(a) for a in f.args])
    return free_vars(f.body) - {f.var}


def free_tuple(f: Formula) -> tuple:
    """Free variables in order of first (left-to-right) occurrence."""
    seen: dict = {}

    def visit(g, bound):
        if isinstance(g, Eq):
            names = (g.left, g.right)
        elif isinstance(g, Atom):
            names = g.args
        else:
            names = ()
        for v in names:
            if v not in bound:
                seen.setdefault(v, None)
        if isinstance(g, Agg):
            visit(g.body, bound | {g.var})
        else:
            for c in children(g):
                visit(c, bound)

    visit(f, frozenset())
    return tuple(seen)


def bound_vars(f: Formula) -> list:
    return [g.var for g in walk(f) if isinstance(g, Agg)]


def is_aggregation_free(f: Formula) -> bool:
    return not any(isinstance(g, Agg) for g in walk(f))


def agg_depth(f: Formula) -> int:
    if isinstance(f, Agg):
        return 1 + agg_depth(f.body)
    return max((agg_depth(c) for c in children(f)), default=0)


def check_formula(f: Formula, signature: Signature | None = None) -> None:
    """Raise :class:`FormulaError` unless ``f`` is well-formed against ``signature``."""
    binders = bound_vars(f)
    if len(set(binders)) != len(binders):
        raise FormulaError("aggregations must bind pairwise distinct variables")
    if set(binders) & free_vars(f):
        raise FormulaError("a bound variable also occurs free")
    if signature is None:
        return
    for g in walk(f):
        if isinstance(g, Atom):
            k = signature.arity(g.rel)
            if len(g.args) != k:
                raise FormulaError(f"{g.rel} has arity {k} but got {len(g.args)} arguments")


def substitute_var(f: Formula, old: str, new: str) -> Formula:
    """Replace free occurrences of ``old`` by ``new`` (binders assumed renamed apart)."""
    if isinstance(f, Const):
        return f
    if isinstance(f, Eq):
        return Eq(new if f.left == old else f.left, new if f.right == old else f.right)
    if isinstance(f, Atom):
        return Atom(f.rel, tuple(new if v == old else v for v in f.args))
    if isinstance(f, Conn):
        return Conn(f.conn, tuple(substitute_var(a, old, new) for a in f.args))
    if f.var == old:
        return f
    if f.var == new:
        raise FormulaError(f"substituting {new} would be captured by its binder")
    return Agg(f.agg, f.var, substitute_var(f.body, old, new))


def rename_apart(f: Formula, reserved: Iterable[str] = ()) -> Formula:
    """Give every aggregation a binder name used nowhere else in the formula."""
    taken = set(reserved) | set(free_vars(f))

    def fresh(name):
        if name not in taken:
            taken.add(name)
            return name
        for i in itertools.count(1):
            cand = f"{name}_{i}"
            if cand not in taken and cand not in all_names:
                taken.add(cand)
                return cand

    all_names = {v for g in walk(f) for v in
                 ((g.left, g.right) if isinstance(g, Eq) else g.args if isinstance(g, Atom)
                  else (g.var,) if isinstance(g, Agg) else ())}

    def go(g):
        if isinstance(g, Conn):
            return Conn(g.conn, tuple(go(a) for a in g.args))
        if isinstance(g, Agg):
            name = fresh(g.var)
            body = g.body if name == g.var else substitute_var(g.body, g.var, name)
            return Agg(g.agg, name, go(body))
        return g

    return go(f)


def to_text(f: Formula) -> str:
    if isinstance(f, Const):
        return repr(float(f.value))
    if isinstance(f, Eq):
        return f"{f.left} = {f.right}"
    if isinstance(f, Atom):
        return f"{f.rel}({', '.join(f.args)})"
    if isinstance(f, Conn):
        return f"{f.conn.label}({', '.join(to_text(a) for a in f.args)})"
    return f"{f.agg.label}{{{f.var}}}({to_text(f.body)})"


def formula_to_json(f: Formula) -> dict:
    if isinstance(f, Const):
        return {"type": "const", "value": f.value}
    if isinstance(f, Eq):
        return {"type": "eq", "vars": [f.left, f.right]}
    if isinstance(f, Atom):
        return {"type": "atom", "rel": f.rel, "args": list(f.args)}
    if isinstance(f, Conn):
        return {"type": "conn", "conn": f.conn.to_json(),
                "args": [formula_to_json(a) for a in f.args]}
    if f.agg.kind == "external":
        raise FormulaError("external aggregators cannot be serialized")
    return {"type": "agg", "agg": f.agg.kind, "var": f.var, "body": formula_to_json(f.body)}


def formula_from_json(data: Mapping) -> Formula:
    kind = data["type"]
    if kind == "const":
        return Const(float(data["value"]))
    if kind == "eq":
        return Eq(*data["vars"])
    if kind == "atom":
        return Atom(data["rel"], tuple(data["args"]))
    if kind == "conn":
        spec = data["conn"]
        conn = (builtin(spec["name"]) if spec.get("name") and "expr" not in spec
                else Connective.from_json(spec))
        return Conn(conn, tuple(formula_from_json(a) for a in data["args"]))
    if kind == "agg":
        return Agg(aggregator(data["agg"]), data["var"], formula_from_json(data["body"]))
    raise FormulaError(f"unknown formula type {kind!r}")


# ---------------------------------------------------------------------------
# Identity patterns


@dataclass(frozen=True)
class IdentityPattern:
    """Which positions of a k-tuple are equal: a set partition of ``1..k``.

    Blocks are stored canonically: each block sorted, blocks ordered by their
    least element.
    """

    size: int
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(sorted((tuple(sorted(int(i) for i in b)) for b in self.blocks),
                              key=lambda b: b[0] if b else 0))
        flat = [i for b in blocks for i in b]
        if any(not b for b in blocks):
            raise FormulaError("pattern blocks must be nonempty")
        if sorted(flat) != list(range(1, self.size + 1)):
            raise FormulaError(f"blocks {blocks} do not partition 1..{self.size}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Sequence[int]]) -> "IdentityPattern":
        return cls(sum(len(b) for b in blocks), tuple(tuple(b) for b in blocks))

    @classmethod
    def discrete(cls, k: int) -> "IdentityPattern":
        return cls(k, tuple((i,) for i in range(1, k + 1)))

    def block_index(self, position: int) -> int:
        for j, b in enumerate(self.blocks):
            if position in b:
                return j
        raise IndexError(position)

    def representative(self, position: int) -> int:
        return self.blocks[self.block_index(position)][0]

    def equal(self, i: int, j: int) -> bool:
        return self.block_index(i) == self.block_index(j)

    def satisfied_by(self, tup: Sequence) -> bool:
        return len(tup) == self.size and pattern_of(tup) == self

    def to_json(self) -> list:
        return [list(b) for b in self.blocks]

    def __str__(self):
        return "{" + ",".join("{" + ",".join(map(str, b)) + "}" for b in self.blocks) + "}"


def pattern_of(tup: Sequence) -> IdentityPattern:
    """The unique identity pattern satisfied by ``tup``."""
    groups: dict = {}
    for pos, elem in enumerate(tup, start=1):
        groups.setdefault(elem, []).append(pos)
    return IdentityPattern(len(tup), tuple(tuple(g) for g in groups.values()))


def restrict_pattern(p: IdentityPattern, positions: Sequence[int]) -> IdentityPattern:
    """The pattern induced on the (possibly repeated) ``positions`` of ``p``."""
    if not positions:
        raise FormulaError("restriction to an empty position list")
    for i in positions:
        if not 1 <= i <= p.size:
            raise FormulaError(f"position {i} outside 1..{p.size}")
    return pattern_of([p.block_index(i) for i in positions])


def extend_pattern_fresh(p: IdentityPattern) -> IdentityPattern:
    """Append a position that differs from every existing one."""
    return IdentityPattern(p.size + 1, p.blocks + ((p.size + 1,),))


def pattern_from_json(data, size: int | None = None) -> IdentityPattern:
    if data is None:
        return IdentityPattern.discrete(size or 0)
    if isinstance(data, str):
        data = json.loads(data)
    p = IdentityPattern.from_blocks(data)
    if size is not None and p.size != size:
        raise FormulaError(f"pattern has size {p.size} but {size} variables are declared")
    return p


def satisfying_tuples(p: IdentityPattern, n: int) -> Iterator[tuple]:
    """All tuples over ``1..n`` satisfying ``p``, in lexicographic order of block values."""
    nb = len(p.blocks)
    for vals in itertools.permutations(range(1, n + 1), nb):
        tup = [0] * p.size
        for b, v in zip(p.blocks, vals):
            for i in b:
                tup[i - 1] = v
        yield tuple(tup)


def count_satisfying(p: IdentityPattern, n: int) -> int:
    out = 1
    for j in range(len(p.blocks)):
        out *= n - j
    return max(out, 0)


# ---------------------------------------------------------------------------
# Flattening and normalization


def _composed(f: Formula, slot_of) -> Expr:
    """Expression for ``f`` with atomic subformulas replaced by projections.

    ``slot_of`` maps an equality or atom to a projection index, or to a float
    when the caller has already resolved it.
    """
    if isinstance(f, Const):
        return Lit(f.value)
    if isinstance(f, (Eq, Atom)):
        slot = slot_of(f)
        return Lit(slot) if isinstance(slot, float) else Proj(slot)
    if isinstance(f, Conn):
        return substitute(f.conn.expr, [_composed(a, slot_of) for a in f.args])
    raise FormulaError("formula contains an aggregation")


def flatten(f: Formula) -> Formula:
    """Rewrite an aggregation-free formula as one connective over distinct atoms."""
    if not is_aggregation_free(f):
        raise FormulaError("flatten requires an aggregation-free formula")
    atoms: list = []
    index: dict = {}

    def slot_of(g):
        key = Eq(*sorted((g.left, g.right))) if isinstance(g, Eq) else g
        if key not in index:
            index[key] = len(atoms)
            atoms.append(key)
        return index[key]

    expr = _composed(f, slot_of)
    if not atoms:
        return Const(float(Connective(0, expr)()))
    return Conn(Connective(len(atoms), expr), tuple(atoms))


@dataclass(frozen=True)
class ConstantForm:
    value: float

    def evaluate(self, *_):
        return self.value


@dataclass(frozen=True)
class AtomicForm:
    """``conn`` applied to pairwise-distinct atoms ``(relation, positions)``.

    Positions are 1-based indices into the declared variable tuple, each
    replaced by its block representative under the normalizing pattern.
    """

    conn: Connective
    atoms: tuple

    def __post_init__(self):
        if len(set(self.atoms)) != len(self.atoms):
            raise FormulaError("atoms must be pairwise distinct")
        if self.conn.arity != len(self.atoms):
            raise FormulaError("connective arity does not match the atom list")


NormalizedFormula = Union[ConstantForm, AtomicForm]


def normalize_under(f: Formula, p: IdentityPattern,
                    variables: Sequence[str] | None = None) -> NormalizedFormula:
    """Resolve equalities under ``p`` and merge atoms naming the same cell.

    ``variables`` is the declared variable tuple that ``p`` speaks about; it
    defaults to the free variables of ``f`` in order of occurrence.
    """
    if not is_aggregation_free(f):
        raise FormulaError("normalize_under requires an aggregation-free formula")
    variables = tuple(free_tuple(f) if variables is None else variables)
    if len(variables) != p.size:
        raise FormulaError(f"pattern has size {p.size} but {len(variables)} variables are declared")
    pos = {v: i for i, v in enumerate(variables, start=1)}
    missing = free_vars(f) - set(pos)
    if missing:
        raise FormulaError(f"free variables {sorted(missing)} are not declared")
    atoms: list = []
    index: dict = {}

    def slot_of(g):
        if isinstance(g, Eq):
            return 1.0 if p.equal(pos[g.left], pos[g.right]) else 0.0
        key = (g.rel, tuple(p.representative(pos[v]) for v in g.args))
        if key not in index:
            index[key] = len(atoms)
            atoms.append(key)
        return index[key]

    expr = _composed(f, slot_of)
    if not atoms:
        return ConstantForm(float(Connective(0, expr)()))
    return AtomicForm(Connective(len(atoms), expr), tuple(atoms))


def normalized_to_formula(nf: NormalizedFormula, variables: Sequence[str]) -> Formula:
    if isinstance(nf, ConstantForm):
        return Const(nf.value)
    atoms = tuple(Atom(rel, tuple(variables[i - 1] for i in positions))
                  for rel, positions in nf.atoms)
    return Conn(nf.conn, atoms)


# ---------------------------------------------------------------------------
# First-order quantifiers


def expand_fo_quantifier(kind: str, var: str, body: Formula,
                         scope: Sequence[str] | None = None) -> Formula:
    """Express ``exists var. body`` (or ``forall``) with max/min aggregation.

    ``scope`` lists every variable assigned where the quantifier occurs; the
    aggregation skips those elements, so each is tried explicitly.  Defaults
    to the free variables of ``body`` other than ``var``.
    """
    if kind not in ("exists", "forall"):
        raise FormulaError(f"unknown quantifier {kind!r}")
    if scope is None:
        scope = [v for v in free_tuple(body) if v != var]
    scope = [v for v in scope if v != var]
    agg = aggregator("max" if kind == "exists" else "min")
    tail = Agg(agg, var, body)
    if not scope:
        return tail
    cases = [substitute_var(body, var, x) for x in scope]
    conn = builtin(f"{'max' if kind == 'exists' else 'min'}{len(scope) + 1}")
    return Conn(conn, tuple(cases) + (tail,))
