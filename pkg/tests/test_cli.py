import json

import pytest

from fbma import cli
from fbma.errors import ConvergenceError

SMALL_1D = {"k": 1, "simplex": 1, "piece_budget": 32, "refinement_schedule": [8, 16, 32],
            "max_outer_iterations": 2,
            "verification": {"mc_samples": 20000, "perturbations": 5}}


def _config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture(scope="module")
def solved_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("solve")
    cfg = _config(tmp, SMALL_1D)
    code = cli.main(["solve", "--config", cfg, "--out", str(tmp / "a")])
    return tmp, cfg, code


def test_solve_writes_artifacts(solved_run):
    tmp, _, code = solved_run
    out = tmp / "a"
    assert code in (cli.EXIT_OK, cli.EXIT_CHECKS)
    for name in ("manifest.json", "report.json", "timing.json", "pair.json", "pieces.csv",
                 "profile.csv"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["version"] and len(report["config_hash"]) == 64
    assert report["solve"]["convergence_flag"] in ("converged", "budget-exhausted")
    assert code == (cli.EXIT_OK if report["passed"] else cli.EXIT_CHECKS)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "solve" and manifest["seed"] == 0


def test_solve_report_is_reproducible(solved_run):
    tmp, cfg, _ = solved_run
    cli.main(["solve", "--config", cfg, "--out", str(tmp / "b")])
    assert (tmp / "a" / "report.json").read_bytes() == (tmp / "b" / "report.json").read_bytes()


def test_verify_and_fit_on_saved_pair(solved_run, capsys):
    tmp, _, _ = solved_run
    pair = str(tmp / "a" / "pair.json")
    opts = json.dumps({"skip": ["pushforward"]})
    code = cli.main(["verify", "--pair", pair, "--options", opts, "--out", str(tmp / "v")])
    data = json.loads((tmp / "v" / "verify.json").read_text())
    assert code == (cli.EXIT_OK if data["passed"] else cli.EXIT_CHECKS)
    assert "pushforward" not in data["verdicts"]
    code = cli.main(["fit-expansion", "--pair", pair, "--out", str(tmp / "fit.json")])
    fits = json.loads((tmp / "fit.json").read_text())["fits"]
    assert len(fits) == 2
    assert all(abs(f["fitted_exponent"] - 1.5) < 0.15 for f in fits)


def test_oracle_1d(tmp_path, capsys):
    code = cli.main(["oracle-1d", "--k", "1", "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    info = json.loads((tmp_path / "oracle_k1.json").read_text())
    assert info["exponent_fit"]["fitted_exponent"] == pytest.approx(1.5, rel=0.01)
    header = (tmp_path / "oracle_k1.csv").read_text().splitlines()[0]
    assert header == "y,v,dv,vstar"
    assert cli.main(["oracle-1d", "--k", "0", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_inequalities(tmp_path, capsys):
    code = cli.main(["inequalities", "--seed", "7", "--count", "3", "--out", str(tmp_path / "i.json")])
    assert code == cli.EXIT_OK
    data = json.loads((tmp_path / "i.json").read_text())
    assert data["passed"] == data["count"] == 6
    assert "6/6 pass" in capsys.readouterr().out


@pytest.mark.parametrize("data", [
    {"simplex": 1},                                    # no k
    {"k": 1, "simplex": 1, "unknown_key": 3},
    {"k": 1, "simplex": 1, "piece_budget": 1},
    {"k": 1, "simplex": 1, "verification": {"bad": 1}},
    [1, 2, 3],
])
def test_malformed_config_exits_2(tmp_path, data, capsys):
    cfg = _config(tmp_path, data)
    assert cli.main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_files_and_bad_arguments(tmp_path, capsys):
    assert cli.main(["solve", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG
    assert cli.main(["verify", "--pair", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG
    assert cli.main(["frobnicate"]) == cli.EXIT_CONFIG
    assert cli.main([]) == cli.EXIT_CONFIG


def test_solver_error_exits_3_with_partial_report(tmp_path, monkeypatch, capsys):
    import fbma.solver

    def boom(cfg, progress=None):
        raise ConvergenceError("line search failed", {"iterations": 3})

    monkeypatch.setattr(fbma.solver, "minimize_energy", boom)
    cfg = _config(tmp_path, SMALL_1D)
    out = tmp_path / "o"
    assert cli.main(["solve", "--config", cfg, "--out", str(out)]) == cli.EXIT_SOLVER
    report = json.loads((out / "report.json").read_text())
    assert report["error"] == "line search failed"
    assert report["diagnostics"] == {"iterations": 3}
    assert (out / "manifest.json").exists()


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("MA_FB_THREADS", "1")
    for var in cli._THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    cli._cap_threads()
    import os
    assert all(os.environ[var] == "1" for var in cli._THREAD_VARS)
