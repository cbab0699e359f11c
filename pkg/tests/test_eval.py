import importlib
import random

import numpy as np
import pytest

from contlogic import (ContinuousStructure, DensityModel, EmptyAggregation, FormulaError, Signature,
                       evaluate, evaluate_many, parse, sample_structure)

from reference import RefEmpty, make_signature, random_formula, random_structure, ref_eval, render

SIG = Signature((("R", 1), ("E", 2)))


def structure(n, R=None, E=None):
    R = np.zeros(n) if R is None else np.asarray(R, dtype=float)
    E = np.zeros((n, n)) if E is None else np.asarray(E, dtype=float)
    return ContinuousStructure(n, SIG, {"R": R, "E": E})


def test_atom():
    assert evaluate(structure(2, R=[0.3, 0.9]), parse("R(x)", SIG), (1,)) == pytest.approx(0.3)


def test_equality():
    A = structure(2)
    f = parse("x = y", SIG)
    assert evaluate(A, f, {"x": 1, "y": 1}) == 1.0
    assert evaluate(A, f, {"x": 1, "y": 2}) == 0.0


def test_sentence_mean():
    A = structure(3, R=[0.0, 0.5, 1.0])
    assert evaluate(A, parse("am{y}(R(y))", SIG)) == pytest.approx(0.5)


def test_excludes_assigned_elements():
    E = np.zeros((3, 3))
    E[1, 0], E[1, 2], E[1, 1] = 0.2, 0.8, 0.99
    assert evaluate(structure(3, E=E), parse("am{y}(E(x, y))", SIG), (2,)) == pytest.approx(0.5)


def test_empty_aggregation():
    with pytest.raises(EmptyAggregation):
        evaluate(structure(1), parse("am{y}(E(x, y))", SIG), (1,))


def test_nested_binders_join_the_tuple():
    # the inner aggregation skips both x and the outer y
    n = 3
    E = np.arange(9, dtype=float).reshape(3, 3) / 10
    A = structure(n, E=E)
    f = parse("am{y}(am{z}(E(y, z)))", SIG, variables=["x"])
    # x=1: y in {2,3}; z ranges over {1,2,3} minus {1, y}
    expected = np.mean([E[1, 2], E[2, 1]])
    assert evaluate(A, f, (1,), ("x",)) == pytest.approx(expected)


def test_range_and_batch():
    A = sample_structure(6, DensityModel.uniform(SIG), 0)
    f = parse("implies(max{y}(E(x, y)), min{y}(avg2(R(y), E(y, x))))", SIG)
    rows = [(i,) for i in range(1, 7)]
    batch = evaluate_many(A, f, rows)
    single = [evaluate(A, f, r) for r in rows]
    assert np.all((batch >= 0) & (batch <= 1))
    assert np.array_equal(batch, single)


def test_assignment_errors():
    A = structure(2)
    with pytest.raises(FormulaError):
        evaluate(A, parse("R(x)", SIG), (3,))
    with pytest.raises(FormulaError):
        evaluate_many(A, parse("E(x, y)", SIG), [(1,)], ("x",))


def test_isomorphism_invariance():
    rng = random.Random(1)
    sig = make_signature()
    for _ in range(100):
        node = random_formula(rng, ["x", "z"], 4)
        f = parse(render(node), sig, ["x", "z"])
        n = rng.randint(3, 6)
        A = random_structure(rng, n, seed=1)
        perm = list(range(1, n + 1))
        rng.shuffle(perm)
        B = A.relabel(perm)
        tup = (rng.randint(1, n), rng.randint(1, n))
        try:
            a = evaluate(A, f, tup, ("x", "z"))
        except EmptyAggregation:
            continue
        b = evaluate(B, f, tuple(perm[t - 1] for t in tup), ("x", "z"))
        assert a == pytest.approx(b, abs=1e-12)


def test_fo_quantifiers_range_over_everything():
    rng = random.Random(2)
    sig = make_signature()
    for _ in range(200):
        n = rng.randint(2, 6)
        A = random_structure(rng, n, seed=2)
        x = rng.randint(1, n)
        for kind in ("exists", "forall"):
            node = ("quant", kind, "y", ("atom", "E", ("x", "y")))
            f = parse(render(node), sig, ["x"])
            vals = [A.value("E", (x, b)) for b in range(1, n + 1)]
            expected = max(vals) if kind == "exists" else min(vals)
            assert evaluate(A, f, (x,), ("x",)) == pytest.approx(expected, abs=1e-15)
            assert ref_eval(node, A, {"x": x}) == pytest.approx(expected, abs=1e-15)


def test_exhausted_expansion_raises():
    # x and z use both elements, so the expansion's max{y} has nothing left
    A = random_structure(random.Random(0), 2, seed=0)
    f = parse("exists y. E(x, y)", make_signature(), ["x", "z"])
    with pytest.raises(EmptyAggregation):
        evaluate(A, f, (1, 2), ("x", "z"))
    with pytest.raises(RefEmpty):
        ref_eval(("quant", "exists", "y", ("atom", "E", ("x", "y"))), A, {"x": 1, "z": 2})


def test_chunking_matches():
    E = importlib.import_module("contlogic.evaluate")
    A = sample_structure(8, DensityModel.uniform(SIG), 3)
    f = parse("am{y}(max{z}(and(E(x, y), E(y, z))))", SIG)
    rows = [(i,) for i in range(1, 9)]
    full = evaluate_many(A, f, rows)
    old = E._CHUNK_CELLS
    try:
        E._CHUNK_CELLS = 64
        chunked = evaluate_many(A, f, rows)
    finally:
        E._CHUNK_CELLS = old
    assert np.array_equal(full, chunked)
