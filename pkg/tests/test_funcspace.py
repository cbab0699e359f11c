import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contlogic import (ConnectiveError, TabulatedConnective, aggregator, builtin, eval_aggregator,
                       eval_connective, falsify_continuity, tabulate, threshold_aggregator)
from contlogic.funcspace import (Connective, EmptySequenceError, bin_counts,
                                 check_histogram_conditions, constant, uniform_grid)

unit = st.floats(0.0, 1.0, allow_nan=False)


class TestBuiltins:
    @pytest.mark.parametrize("name, args, expected", [
        ("and", (0.7, 0.6), 0.3), ("not", (0.25,), 0.75), ("implies", (0.9, 0.2), 0.3),
        ("max3", (0.1, 0.8, 0.5), 0.8), ("abs_diff", (0.4, 0.4), 0.0), ("or", (0.7, 0.6), 1.0),
        ("min2", (0.2, 0.9), 0.2), ("avg4", (0.0, 1.0, 0.5, 0.5), 0.5), ("identity", (0.3,), 0.3),
    ])
    def test_values(self, name, args, expected):
        assert eval_connective(builtin(name), args) == pytest.approx(expected)

    def test_unknown(self):
        with pytest.raises(ConnectiveError):
            builtin("xor")

    def test_arity_mismatch(self):
        with pytest.raises(ConnectiveError):
            eval_connective(builtin("and"), (0.1,))

    def test_constant(self):
        assert constant(0.4)() == pytest.approx(0.4)


class TestConnectiveProperties:
    NAMES = ["not", "and", "or", "implies", "abs_diff", "min3", "max2", "avg3"]

    def test_range(self):
        rng = np.random.default_rng(0)
        for name in self.NAMES:
            c = builtin(name)
            x = rng.random((c.arity, 100_000))
            out = c(*x)
            assert np.all((out >= 0) & (out <= 1))

    def test_lipschitz_bound(self):
        rng = np.random.default_rng(1)
        eta = 1e-3
        for name in self.NAMES:
            c = builtin(name).compose([builtin("and").expr, builtin("not").expr], 2) \
                if builtin(name).arity == 2 else builtin(name)
            x = rng.random((c.arity, 20_000))
            y = np.clip(x + rng.uniform(-eta, eta, x.shape), 0, 1)
            assert np.max(np.abs(c(*x) - c(*y))) <= c.lipschitz() * eta + 1e-12

    def test_json_roundtrip(self):
        c = builtin("implies").compose([builtin("and").expr, builtin("avg2").expr], 2)
        d = Connective.from_json(json.loads(json.dumps(c.to_json())))
        x = np.random.default_rng(2).random((2, 50))
        assert np.array_equal(c(*x), d(*x))

    @given(unit, unit)
    def test_compose_matches_nested(self, a, b):
        outer = builtin("implies")
        c = outer.compose([builtin("and").expr, builtin("or").expr], 2)
        expected = outer(builtin("and")(a, b), builtin("or")(a, b))
        assert c(a, b) == pytest.approx(expected, abs=1e-15)


class TestTabulated:
    def test_exact_at_nodes_and_identity(self):
        t = tabulate(1, [0.0, 0.5, 1.0], lambda r: r)
        for x in np.linspace(0, 1, 37):
            assert t(x) == pytest.approx(x)

    def test_constant_table(self):
        t = tabulate(0, [], lambda: 0.3)
        assert t() == pytest.approx(0.3)

    def test_min_interpolation(self):
        g = uniform_grid(5)
        t = tabulate(2, g, lambda r, s: min(r, s))
        assert abs(t(0.3, 0.7) - 0.3) <= 0.125
        for r, s in itertools.product(g, g):
            assert t(r, s) == pytest.approx(min(r, s))

    def test_r_squared_half(self):
        t = tabulate(1, uniform_grid(11), lambda r: r * r / 2)
        assert abs(t(0.5) - 0.125) <= 0.01

    def test_clamps_with_warning(self):
        with pytest.warns(RuntimeWarning):
            t = tabulate(1, [0.0, 1.0], lambda r: 2 * r)
        assert t(1.0) == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            TabulatedConnective((np.array([0.1, 1.0]),), np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            TabulatedConnective((np.array([0.0, 1.0]),), np.array([0.0, 1.5]))

    def test_monotone_between_nodes(self):
        g = uniform_grid(9)
        t = tabulate(1, g, lambda r: r ** 3)
        xs = np.linspace(0, 1, 500)
        assert np.all(np.diff(t(xs)) >= -1e-15)

    def test_json(self):
        t = tabulate(2, uniform_grid(3), lambda r, s: (r + s) / 2)
        data = json.loads(json.dumps(t.to_json()))
        assert data["arity"] == 2 and len(data["values"]) == 9
        u = TabulatedConnective.from_json(data)
        assert u(0.2, 0.9) == pytest.approx(t(0.2, 0.9))


class TestAggregators:
    @pytest.mark.parametrize("kind, seq, expected", [("am", (0.2, 0.4, 0.6), 0.4),
                                                     ("max", (0.2, 0.9, 0.4), 0.9),
                                                     ("min", (0.5,), 0.5)])
    def test_values(self, kind, seq, expected):
        assert eval_aggregator(aggregator(kind), seq) == pytest.approx(expected)

    def test_empty(self):
        with pytest.raises(EmptySequenceError):
            eval_aggregator(aggregator("am"), [])

    @settings(max_examples=60)
    @given(st.lists(unit, min_size=1, max_size=40), st.randoms())
    def test_symmetric(self, seq, rnd):
        perm = list(seq)
        rnd.shuffle(perm)
        for kind in ("min", "max", "am"):
            assert eval_aggregator(aggregator(kind), seq) == eval_aggregator(aggregator(kind), perm)

    def test_condition_one(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            q = rng.random(rng.integers(1, 300))
            d = rng.uniform(0, 0.05)
            q2 = np.clip(q + rng.uniform(-d, d, q.shape), 0, 1)
            for kind in ("min", "max", "am"):
                a = aggregator(kind)
                assert abs(eval_aggregator(a, q) - eval_aggregator(a, q2)) <= d + 1e-12

    def test_reduce_matches_scalar(self):
        rng = np.random.default_rng(4)
        vals = rng.random((5, 7))
        mask = rng.random((5, 7)) < 0.7
        mask[:, 0] = True
        for kind in ("min", "max", "am"):
            a = aggregator(kind)
            got = a.reduce(vals, mask)
            for i in range(5):
                assert got[i] == pytest.approx(eval_aggregator(a, vals[i][mask[i]]), abs=1e-15)


class TestFalsifier:
    def test_threshold_falsified_with_valid_witness(self):
        rep = falsify_continuity(threshold_aggregator(), trials=2000, seed=0)
        assert rep.falsified and rep.gap == 1.0
        w = rep.witness
        if rep.condition == "2":
            assert check_histogram_conditions(w["q"], w["q_prime"], w["alpha"], rep.delta,
                                              rep.M, rep.N) == []
        else:
            assert w["sup_distance"] <= rep.delta
        json.dumps(rep.to_json())

    @pytest.mark.parametrize("kind", ["min", "max", "am"])
    def test_continuous_kinds_survive(self, kind):
        rep = falsify_continuity(aggregator(kind), trials=1000, seed=1)
        assert not rep.falsified and rep.trials_run == 1000

    def test_bin_counts_closed(self):
        assert bin_counts(np.array([0.0, 0.5, 1.0]), 2).tolist() == [2, 2]

    def test_conditions_detect_violation(self):
        q = np.full(600, 0.1)
        q2 = np.full(600, 0.9)
        alpha = np.zeros(20)
        alpha[2] = 1.0
        assert check_histogram_conditions(q, q2, alpha, 0.01, 20, 500)

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            falsify_continuity(aggregator("am"), delta=0)
