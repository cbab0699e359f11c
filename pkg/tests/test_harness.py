import json

import numpy as np
import pytest

from contlogic import IdentityPattern
from contlogic.harness import (CONCENTRATION_COLUMNS, CONVERGENCE_COLUMNS, ExperimentConfig,
                               infer_signature, rows_to_csv, run_concentration, run_convergence,
                               tuples_for, write_report)
from contlogic.logic import FormulaError


class TestConfig:
    def test_empty_ladder(self):
        with pytest.raises(ValueError):
            ExperimentConfig(formula="E(x,y)", ladder=[])

    def test_ladder_increasing(self):
        with pytest.raises(ValueError):
            ExperimentConfig(formula="E(x,y)", ladder=[10, 10])

    def test_samples_positive(self):
        with pytest.raises(ValueError):
            ExperimentConfig(formula="E(x,y)", ladder=[5], samples=0)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            ExperimentConfig.from_json({"formula": "E(x,y)", "ladder": [5], "sample": 3})

    def test_load_resolves_relative_paths(self, tmp_path):
        (tmp_path / "sig.json").write_text(json.dumps({"relations": [{"name": "E", "arity": 2}]}))
        (tmp_path / "cfg.json").write_text(json.dumps({"formula": "am{y}(E(x,y))", "ladder": [5],
                                                       "samples": 2, "signature": "sig.json"}))
        cfg = ExperimentConfig.load(tmp_path / "cfg.json")
        rep = run_convergence(cfg)
        assert rep["rows"][0]["n"] == 5

    def test_roundtrip(self):
        cfg = ExperimentConfig(formula="E(x,y)", ladder=[3, 5], seed=4)
        assert ExperimentConfig.from_json(cfg.to_json()) == cfg


def test_bad_signature_json():
    from contlogic import Signature
    with pytest.raises(FormulaError):
        Signature.from_json({"relations": [["E", 2]]})


def test_infer_signature():
    sig = infer_signature("and(E(x, y), R(x))")
    assert sig.to_json() == infer_signature("and(R(z), E(z, z))").to_json()
    with pytest.raises(FormulaError):
        infer_signature("0.5")


class TestTuples:
    def test_enumerated(self):
        rows, sub = tuples_for(IdentityPattern.discrete(2), 4, 100, np.random.default_rng(0))
        assert not sub and len(rows) == 12 and np.all(rows[:, 0] != rows[:, 1])

    def test_subsampled_respects_pattern(self):
        p = IdentityPattern.from_blocks([[1, 3], [2]])
        rows, sub = tuples_for(p, 50, 200, np.random.default_rng(0))
        assert sub and rows.shape == (200, 3)
        assert np.all(rows[:, 0] == rows[:, 2]) and np.all(rows[:, 0] != rows[:, 1])
        assert rows.min() >= 1 and rows.max() <= 50

    def test_too_small(self):
        with pytest.raises(FormulaError):
            tuples_for(IdentityPattern.discrete(3), 2, 100, np.random.default_rng(0))


class TestConvergence:
    def test_aggregation_free_is_close(self):
        rep = run_convergence(ExperimentConfig(formula="and(R(x), E(x, y))", ladder=[3, 6],
                                               samples=5))
        assert [r["closeness_freq"] for r in rep["rows"]] == [1.0, 1.0]
        assert rep["eliminated"] == rep["formula"]

    def test_membership_matches_alpha(self):
        rep = run_convergence(ExperimentConfig(formula="R(x)", ladder=[50], samples=40,
                                               interval=[0, 0.25]))
        assert rep["alpha"]["alpha"] == pytest.approx(0.25)
        assert rep["rows"][0]["membership_freq"] == pytest.approx(0.25, abs=0.03)

    def test_thread_count_irrelevant(self):
        cfg = ExperimentConfig(formula="am{y}(E(x,y))", ladder=[10, 20], samples=8, seed=3)
        assert run_convergence(cfg, threads=1) == run_convergence(cfg, threads=3)

    def test_subsample_noted(self):
        rep = run_convergence(ExperimentConfig(formula="am{y}(E(x,y))", ladder=[30], samples=2,
                                               tuple_cap=10))
        assert rep["rows"][0]["subsampled"] and rep["notes"]

    def test_wall_ms_only_with_timing(self):
        cfg = ExperimentConfig(formula="R(x)", ladder=[5], samples=2)
        assert run_convergence(cfg)["rows"][0]["wall_ms"] is None
        assert run_convergence(cfg, timing=True)["rows"][0]["wall_ms"] >= 0


class TestConcentration:
    def test_single_bin(self):
        rep = run_concentration(ExperimentConfig(formula="E(x,y)", ladder=[20], samples=10, M=1))
        assert rep["rows"][0]["pass_freq"] == 1.0

    def test_zero_delta(self):
        rep = run_concentration(ExperimentConfig(formula="E(x,y)", ladder=[30], samples=20,
                                                 delta=0.0))
        assert rep["rows"][0]["pass_freq"] == 0.0

    def test_tightens_with_n(self):
        rep = run_concentration(ExperimentConfig(formula="E(x,y)", ladder=[20, 200], samples=20,
                                                 delta=0.2))
        devs = [r["worst_deviation"] for r in rep["rows"]]
        assert devs[1] < devs[0]

    def test_rejects_y_free_atoms(self):
        with pytest.raises(FormulaError):
            run_concentration(ExperimentConfig(formula="and(R(x), E(x,y))", ladder=[5], samples=1))

    def test_rejects_aggregation(self):
        with pytest.raises(FormulaError):
            run_concentration(ExperimentConfig(formula="am{z}(E(y,z))", ladder=[5], samples=1,
                                               variables=[]))


def test_report_files(tmp_path):
    rep = run_convergence(ExperimentConfig(formula="R(x)", ladder=[4], samples=2))
    paths = write_report(rep, str(tmp_path), "convergence", CONVERGENCE_COLUMNS)
    assert json.loads(open(paths["json"]).read())["kind"] == "convergence"
    text = open(paths["csv"]).read()
    assert text == rows_to_csv(rep["rows"], CONVERGENCE_COLUMNS)
    assert text.splitlines()[0] == ",".join(CONVERGENCE_COLUMNS)


def test_csv_blank_wall_ms():
    text = rows_to_csv([{"n": 5, "samples": 2, "pass_freq": 1.0, "worst_deviation": 0.1,
                         "wall_ms": None}], CONCENTRATION_COLUMNS)
    assert text.splitlines()[1] == "5,2,1.0,0.1,"
