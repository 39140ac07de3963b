import json
import math

import pytest

from destress_sim.cli import main
from destress_sim.trace import RunTrace


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "exp.json"
    p.write_text(json.dumps({
        "algorithm": "destress",
        "topology": {"kind": "path", "n": 20},
        "hyperparams": {"eta": 0.5, "s_inner": 10, "batch": 10, "k_in": 1, "k_out": 1},
        "budget": {"max_outer": 2},
    }))
    return p


def test_run_writes_trace(config_file, tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["run", "--config", str(config_file), "--trace", str(out), "--print-config"]) == 0
    printed = capsys.readouterr().out
    assert json.loads(printed)["trace_path"] == str(out)
    trace = RunTrace.read(out)
    assert trace.rows[-1].comm_rounds == 2 * 11


def test_run_overrides_and_stdout(config_file, capsys):
    assert main(["run", "--config", str(config_file), "--set", "hyperparams.k_in=3",
                 "--max-comm", "40"]) == 0
    trace = RunTrace.from_csv(capsys.readouterr().out)
    assert trace.rows[-1].comm_rounds == 62


def test_run_plot(config_file, tmp_path):
    figs = tmp_path / "figs"
    assert main(["run", "--config", str(config_file), "--plot", str(figs)]) == 0
    names = sorted(p.name for p in figs.iterdir())
    assert "grad_norm_vs_comm.png" in names and "loss_vs_ifo.png" in names


def test_config_errors_exit_2(tmp_path, config_file):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(config_file), "--set", "algorithm=\"adam\""]) == 2


def test_divergence_exits_3(config_file):
    code = main(["run", "--config", str(config_file), "--algorithm", "dsgd",
                 "--set", "hyperparams={\"eta0\": 1e300}", "--set", "model={\"kind\": \"mlp\", \"hidden\": 8, \"classes\": 3}",
                 "--max-comm", "50"])
    assert code == 3


def test_check_mixing(capsys):
    assert main(["check-mixing", "--topology", "path", "--n", "3"]) == 0
    lines = dict(line.split(",", 1) for line in capsys.readouterr().out.splitlines())
    assert math.isclose(float(lines["alpha"]), 2 / 3, abs_tol=1e-10)
    assert lines["gap_order"] == "1/n^2"


def test_check_mixing_csv_errors(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("0.5,0.5\n0.4,0.5\n")
    assert main(["check-mixing", "--topology", "path", "--n", "2", "--mixing-csv", str(p)]) == 2


@pytest.mark.parametrize("model", ["reg_logistic", "mlp"])
def test_gradcheck(model, capsys):
    assert main(["gradcheck", "--model", model, "--points", "10"]) == 0
    assert "result,pass" in capsys.readouterr().out


def test_gradcheck_failure_exit_1():
    assert main(["gradcheck", "--model", "reg_logistic", "--points", "3", "--tol", "0"]) == 1


def test_compare(tmp_path, capsys):
    paths = []
    for name, algo, hp in (("d", "destress", {"eta": 0.5, "s_inner": 10, "batch": 10, "k_in": 1, "k_out": 1}),
                           ("g", "gtsarah", {"eta": 0.5, "batch": 10, "q": 10})):
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps({"algorithm": algo, "hyperparams": hp, "budget": {"max_comm": 1},
                                 "topology": {"kind": "grid", "n": 20}}))
        paths.append(str(p))
    figs = tmp_path / "figs"
    assert main(["compare", "--configs", *paths, "--budget", "comm=100", "--figures", str(figs)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and lines[1].startswith("d,destress")
    assert (figs / "grad_norm_vs_comm.png").stat().st_size > 0
