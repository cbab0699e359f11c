"""Recursive-descent parser for the formula DSL.

Grammar::

    formula := NUMBER
             | VAR "=" VAR
             | REL "(" varlist ")"
             | CONN "(" formulalist ")"
             | AGG "{" VAR "}" "(" formula ")"
             | ("exists" | "forall") VAR "." formula

A name followed by ``(`` is a relation when the signature knows it (or when
no signature is given and the name is not a connective), otherwise a
connective.  ``const(c)`` is accepted as a spelling of the constant ``c``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .funcspace import AGGREGATOR_KINDS, ConnectiveError, aggregator, builtin, is_builtin_name
from .logic import (Agg, Atom, Conn, Const, Eq, Formula, FormulaError, Signature,
                    expand_fo_quantifier, rename_apart)


class ParseError(FormulaError):
    def __init__(self, message, text=None, pos=None):
        if text is not None and pos is not None:
            message = f"{message} at column {pos + 1}\n  {text}\n  {' ' * pos}^"
        super().__init__(message)
        self.pos = pos


_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
                    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<sym>[(){},.=]))")


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[_Tok]:
    toks = []
    i = 0
    while i < len(text):
        if text[i:].strip() == "":
            break
        m = _TOKEN.match(text, i)
        if not m:
            j = i + len(text[i:]) - len(text[i:].lstrip())
            raise ParseError(f"unexpected character {text[j]!r}", text, j)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        i = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


@dataclass
class _Quant:
    """Placeholder for a first-order quantifier, expanded after parsing."""

    kind: str
    var: str
    body: object


class _Parser:
    def __init__(self, text, signature):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0
        self.signature = signature
        self.arities: dict = {}

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        tok = self.next()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text or 'end of input'!r}",
                             self.text, tok.pos)
        return tok

    def name(self):
        tok = self.next()
        if tok.kind != "name":
            raise ParseError(f"expected a variable, found {tok.text or 'end of input'!r}",
                             self.text, tok.pos)
        return tok.text

    def is_relation(self, name):
        if self.signature is not None:
            return name in self.signature
        return not is_builtin_name(name) and name != "const"

    def formula(self):
        tok = self.peek()
        if tok.kind == "num":
            self.next()
            value = float(tok.text)
            if not 0.0 <= value <= 1.0:
                raise ParseError(f"constant {tok.text} outside [0,1]", self.text, tok.pos)
            return Const(value)
        if tok.kind != "name":
            raise ParseError(f"unexpected {tok.text or 'end of input'!r}", self.text, tok.pos)
        name = tok.text
        nxt = self.peek(1).text
        if name in ("exists", "forall") and self.peek(1).kind == "name":
            self.next()
            var = self.name()
            self.expect(".")
            return _Quant(name, var, self.formula())
        if nxt == "=":
            self.next()
            self.next()
            return Eq(name, self.name())
        if nxt == "{":
            if name not in AGGREGATOR_KINDS:
                raise ParseError(f"unknown aggregation function {name!r}", self.text, tok.pos)
            self.next()
            self.next()
            var = self.name()
            self.expect("}")
            self.expect("(")
            body = self.formula()
            self.expect(")")
            return _Agg(name, var, body)
        if nxt == "(":
            self.next()
            self.next()
            if name == "const" and not self.is_relation(name):
                num = self.next()
                if num.kind != "num":
                    raise ParseError("const expects a number", self.text, num.pos)
                self.expect(")")
                return self.finish_const(num)
            if self.is_relation(name):
                args = self.varlist()
                self.check_arity(name, len(args), tok.pos)
                return Atom(name, tuple(args))
            try:
                conn = builtin(name)
            except ConnectiveError:
                raise ParseError(f"unknown connective or relation {name!r}", self.text, tok.pos)
            args = [self.formula()]
            while self.peek().text == ",":
                self.next()
                args.append(self.formula())
            self.expect(")")
            if len(args) != conn.arity:
                raise ParseError(f"{name} takes {conn.arity} arguments, got {len(args)}",
                                 self.text, tok.pos)
            return _Conn(conn, args)
        raise ParseError(f"unexpected name {name!r}", self.text, tok.pos)

    def finish_const(self, num):
        value = float(num.text)
        if not 0.0 <= value <= 1.0:
            raise ParseError(f"constant {num.text} outside [0,1]", self.text, num.pos)
        return Const(value)

    def varlist(self):
        args = [self.name()]
        while self.peek().text == ",":
            self.next()
            args.append(self.name())
        self.expect(")")
        return args

    def check_arity(self, name, k, pos):
        if self.signature is not None:
            expected = self.signature.arity(name)
        else:
            expected = self.arities.setdefault(name, k)
        if k != expected:
            raise ParseError(f"{name} has arity {expected}, got {k} arguments", self.text, pos)

    def parse(self):
        f = self.formula()
        tok = self.peek()
        if tok.kind != "eof":
            raise ParseError(f"trailing input {tok.text!r}", self.text, tok.pos)
        return f


@dataclass
class _Agg:
    kind: str
    var: str
    body: object


@dataclass
class _Conn:
    conn: object
    args: list


def _free_raw(node, bound=frozenset()):
    if isinstance(node, Const):
        return []
    if isinstance(node, Eq):
        return [v for v in (node.left, node.right) if v not in bound]
    if isinstance(node, Atom):
        return [v for v in node.args if v not in bound]
    if isinstance(node, _Conn):
        return [v for a in node.args for v in _free_raw(a, bound)]
    return _free_raw(node.body, bound | {node.var})


def _build(node, scope):
    """Turn the raw tree into a Formula, expanding quantifiers against ``scope``."""
    if isinstance(node, (Const, Eq, Atom)):
        return node
    if isinstance(node, _Conn):
        return Conn(node.conn, tuple(_build(a, scope) for a in node.args))
    inner = scope + [node.var]
    body = _build(node.body, inner)
    if isinstance(node, _Agg):
        return Agg(aggregator(node.kind), node.var, body)
    return expand_fo_quantifier(node.kind, node.var, body, scope)


def _rename_raw(node, taken, mapping=None):
    """Rename binders apart before quantifier expansion looks at scopes."""
    mapping = mapping or {}
    if isinstance(node, Const):
        return node
    if isinstance(node, Eq):
        return Eq(mapping.get(node.left, node.left), mapping.get(node.right, node.right))
    if isinstance(node, Atom):
        return Atom(node.rel, tuple(mapping.get(v, v) for v in node.args))
    if isinstance(node, _Conn):
        return _Conn(node.conn, [_rename_raw(a, taken, mapping) for a in node.args])
    name = node.var
    k = 0
    while name in taken:
        k += 1
        name = f"{node.var}_{k}"
    taken.add(name)
    body = _rename_raw(node.body, taken, {**mapping, node.var: name})
    return type(node)(node.kind, name, body)


def parse(text: str, signature: Signature | None = None,
          variables: Sequence[str] | None = None) -> Formula:
    """Parse DSL text into a formula with binders renamed apart.

    ``variables`` is the declared free-variable tuple used when expanding
    ``exists``/``forall``; by default the free variables in order of
    occurrence.
    """
    raw = _Parser(text, signature).parse()
    free = list(dict.fromkeys(_free_raw(raw)))
    declared = list(variables) if variables is not None else free
    missing = set(free) - set(declared)
    if missing:
        raise ParseError(f"free variables {sorted(missing)} are not declared")
    raw = _rename_raw(raw, set(declared) | set(free))
    f = _build(raw, declared)
    # expansion copies bodies, so binders may repeat across the copies
    return rename_apart(f, declared)
