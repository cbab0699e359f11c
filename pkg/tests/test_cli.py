import json

import pytest

from contlogic.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_check(capsys):
    code, out, _ = run(capsys, "check", "--formula", "and(R(x), am{y}(E(x, y)))")
    info = json.loads(out)
    assert code == 0 and info["free_variables"] == ["x"] and info["aggregation_depth"] == 1


def test_parse_error_exit(capsys):
    code, _, err = run(capsys, "check", "--formula", "and(R(x")
    assert code == 2 and "column" in err


def test_missing_file_exit(capsys, tmp_path):
    code, _, _ = run(capsys, "check", "--formula", "R(x)", "--signature", str(tmp_path / "nope.json"))
    assert code == 2


def test_sample(capsys):
    code, out, _ = run(capsys, "sample", "--formula", "E(x, y)", "--n", "3", "--seed", "4")
    assert code == 0
    again = run(capsys, "sample", "--formula", "E(x, y)", "--n", "3", "--seed", "4")[1]
    assert out == again and json.loads(out)


def test_eval(capsys):
    code, out, _ = run(capsys, "eval", "--formula", "am{y}(E(x, y))", "--n", "5", "--assign", "2",
                       "--samples", "3")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "sample_index,value" and len(lines) == 4
    assert all(0 <= float(line.split(",")[1]) <= 1 for line in lines[1:])


def test_eval_wrong_assign(capsys):
    code, _, _ = run(capsys, "eval", "--formula", "E(x, y)", "--n", "3", "--assign", "1")
    assert code == 2


def test_empty_aggregation_exit(capsys):
    code, _, err = run(capsys, "eval", "--formula", "am{y}(E(x, y))", "--n", "1", "--assign", "1")
    assert code == 3 and "nothing to range over" in err


def test_prob(capsys):
    code, out, _ = run(capsys, "prob", "--formula", "min2(R(x), Q(x))", "--interval", "0", "0.5",
                       "--method", "quadrature")
    est = json.loads(out)
    assert code == 0 and est["alpha"] == pytest.approx(0.75, abs=est["half_width"])


def test_prob_with_aggregation(capsys):
    code, out, _ = run(capsys, "prob", "--formula", "am{y}(E(x, y))", "--interval", "0.4", "0.6")
    assert code == 0 and json.loads(out)["alpha"] == 1.0


def test_eliminate(capsys, tmp_path):
    out = tmp_path / "sub" / "elim.json"
    code, _, _ = run(capsys, "eliminate", "--formula", "am{y}(and(P(x), E(x, y)))", "--out", str(out))
    data = json.loads(out.read_text())
    assert code == 0 and data["output"] == "D(P(x))" and len(data["trace"]) == 1


def test_aggcheck(capsys):
    code, out, _ = run(capsys, "aggcheck", "--agg", "threshold", "--trials", "500")
    assert code == 0 and json.loads(out)["verdict"] == "falsified"
    code, out, _ = run(capsys, "aggcheck", "--agg", "am", "--trials", "200")
    assert json.loads(out)["verdict"] != "falsified"


@pytest.mark.parametrize("command, stem, extra", [
    ("converge", "convergence", {"formula": "am{y}(E(x,y))"}),
    ("concentrate", "concentration", {"formula": "E(x,y)"}),
])
def test_experiments_write_reports_and_figures(capsys, tmp_path, command, stem, extra):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**extra, "ladder": [5, 10], "samples": 4}))
    out = tmp_path / "out"
    code, stdout, err = run(capsys, command, "--config", str(cfg), "--out", str(out), "--threads", "2")
    assert code == 0
    assert (out / f"{stem}.json").exists() and (out / f"{stem}.csv").exists()
    assert (out / f"{stem}.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert stdout == (out / f"{stem}.csv").read_text()
    assert "wrote figure" in err


def test_bad_config_exit(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"formula": "E(x,y)", "ladder": [], "samples": 4}))
    code, _, _ = run(capsys, "converge", "--config", str(cfg))
    assert code == 2


def test_global_flags_after_subcommand(capsys):
    a = run(capsys, "--seed", "7", "sample", "--formula", "R(x)", "--n", "2")[1]
    b = run(capsys, "sample", "--formula", "R(x)", "--n", "2", "--seed", "7")[1]
    assert a == b
