import numpy as np
import pytest
from scipy import stats

from contlogic import (DensityError, DensityModel, IdentityPattern, Signature, build_layout,
                       sample_structure, sample_value, validate_density)
from contlogic.logic import pattern_of
from contlogic.measure import ContinuousStructure, structure_from_json

SIG = Signature((("R", 1), ("E", 2)))
DIAG = IdentityPattern.from_blocks([[1, 2]])
OFF = IdentityPattern.discrete(2)


class TestDensities:
    def test_uniform(self):
        d = validate_density("uniform")
        assert d.pdf(np.array([0.1, 0.9])).tolist() == [1.0, 1.0]

    def test_poly_accepted(self):
        d = validate_density({"type": "poly", "coeffs": [0, 2]})
        assert d.cdf(0.5) == pytest.approx(0.25)

    def test_poly_normalized(self):
        d = validate_density({"type": "poly", "coeffs": [0, 1]})
        assert d.pdf(0.5) == pytest.approx(1.0)
        assert d.cdf(1.0) == pytest.approx(1.0, abs=1e-12)

    def test_piecewise(self):
        d = validate_density({"type": "piecewise", "breakpoints": [0, 0.5, 1],
                              "pieces": [[0, 4], [4, -4]]})
        assert d.cdf(0.5) == pytest.approx(0.5)
        assert d.mass(0.25, 0.75) == pytest.approx(0.75)

    @pytest.mark.parametrize("spec", [
        {"type": "poly", "coeffs": [1, -2]},
        {"type": "poly", "coeffs": [0]},
        {"type": "piecewise", "breakpoints": [0, 0.5, 1], "pieces": [[1], [2]]},
        {"type": "spline"},
    ])
    def test_rejected(self, spec):
        with pytest.raises(DensityError):
            validate_density(spec)

    def test_inverse_cdf(self):
        d = validate_density({"type": "poly", "coeffs": [0, 2]})
        u = np.linspace(0, 1, 101)
        assert np.allclose(d.ppf(u), np.sqrt(u), atol=1e-12)
        assert sample_value(validate_density("uniform"), 0.37) == 0.37
        assert sample_value(d, 0.25) == pytest.approx(0.5)

    @pytest.mark.parametrize("spec", ["uniform", {"type": "poly", "coeffs": [0, 2]},
                                      {"type": "piecewise", "breakpoints": [0, 0.3, 1],
                                       "pieces": [[0, 10 / 3], [1, 0]]}])
    def test_ks(self, spec):
        d = validate_density(spec)
        draws = d.ppf(np.random.default_rng(0).random(100_000))
        assert stats.kstest(draws, d.cdf).pvalue > 0.01

    def test_support(self):
        d = validate_density({"type": "piecewise", "breakpoints": [0, 0.5, 1],
                              "pieces": [[0], [-1, 2]]})
        pts = d.support_points(8)
        assert pts.min() == pytest.approx(0.5) and pts.max() == 1.0


class TestLayout:
    def test_size_and_order(self):
        L = build_layout(3, SIG)
        assert L.xi == 3 + 9
        assert L.cells()[:4] == [("E", (1, 1)), ("R", (1,)), ("E", (1, 2)), ("E", (2, 1))]

    def test_single_cell(self):
        L = build_layout(1, Signature((("E", 2),)))
        assert L.cells() == [("E", (1, 1))]

    def test_prefix_property(self):
        sig = Signature((("R", 1), ("E", 2), ("T", 3)))
        for n in range(1, 5):
            assert build_layout(n + 1, sig).cells()[:build_layout(n, sig).xi] == \
                build_layout(n, sig).cells()

    def test_groups_match_patterns(self):
        L = build_layout(4, SIG)
        rng = np.random.default_rng(1)
        for i in rng.integers(0, L.xi, 40):
            rel, tup = L.cell(int(i))
            assert int(i) in L.groups[(rel, pattern_of(tup))]
            assert L.index_of(rel, tup) == i

    def test_bijective(self):
        A = sample_structure(5, DensityModel.uniform(SIG), 0)
        B = ContinuousStructure.from_vector(A.to_vector(), 5, SIG)
        for name, _ in SIG:
            assert np.array_equal(A.values[name], B.values[name])


class TestSampling:
    def test_uniform_mean(self):
        A = sample_structure(100, DensityModel.uniform(SIG), 7)
        off = ~np.eye(100, dtype=bool)
        assert A.values["E"][off].mean() == pytest.approx(0.5, abs=0.01)

    def test_diagonal_density(self):
        model = DensityModel.from_json(SIG, {"densities": [
            {"relation": "E", "pattern": [[1, 2]], "density": {"type": "poly", "coeffs": [0, 2]}}]})
        diag = np.concatenate([np.diag(sample_structure(50, model, 3, i).values["E"])
                               for i in range(40)])
        assert stats.kstest(diag, lambda x: np.clip(x, 0, 1) ** 2).pvalue > 0.01
        assert model.density("E", OFF).is_uniform

    def test_deterministic(self):
        m = DensityModel.uniform(SIG)
        a, b = sample_structure(6, m, (1, 2), 3), sample_structure(6, m, (1, 2), 3)
        c = sample_structure(6, m, (1, 2), 4)
        assert all(np.array_equal(a.values[k], b.values[k]) for k, _ in SIG)
        assert not np.array_equal(a.values["E"], c.values["E"])

    def test_restriction_consistent(self):
        m = DensityModel.uniform(SIG)
        small, big = sample_structure(3, m, 9, 0), sample_structure(5, m, 9, 0)
        assert np.array_equal(small.values["E"], big.values["E"][:3, :3])

    def test_pattern_marginals_and_independence(self):
        model = DensityModel.from_json(SIG, {"densities": [
            {"relation": "E", "pattern": [[1], [2]], "density": {"type": "poly", "coeffs": [0, 2]}},
            {"relation": "R", "pattern": [[1]], "density": {"type": "poly", "coeffs": [2, -2]}}]})
        samples = [sample_structure(3, model, 11, i) for i in range(10_000)]
        e12 = np.array([A.values["E"][0, 1] for A in samples])
        e21 = np.array([A.values["E"][1, 0] for A in samples])
        r1 = np.array([A.values["R"][0] for A in samples])
        assert stats.kstest(e12, lambda x: np.clip(x, 0, 1) ** 2).pvalue > 0.01
        assert stats.kstest(r1, lambda x: 2 * x - x * x).pvalue > 0.01
        assert abs(np.corrcoef(e12, e21)[0, 1]) <= 0.05
        assert abs(np.corrcoef(e12, r1)[0, 1]) <= 0.05

    def test_json_roundtrip(self):
        A = sample_structure(4, DensityModel.uniform(SIG), 0)
        B = structure_from_json(A.to_json(), SIG)
        assert np.array_equal(A.values["E"], B.values["E"])

    def test_model_pattern_size_checked(self):
        with pytest.raises(ValueError):
            DensityModel.from_json(SIG, {"densities": [
                {"relation": "E", "pattern": [[1]], "density": "uniform"}]})
