import json
import subprocess
import sys

import pytest

from oulab.cli import EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_OK, bundled_scenarios, main

EIGEN1 = {
    "name": "tiny",
    "dim": 1,
    "mode": "pure",
    "initial": {"hermite": [{"index": [1], "coeff": 1}]},
    "growth": {"A": 1.0},
    "T": 10.0,
    "grid": {"degree": 4, "nodes": 8},
    "tau_grid": {"points": 10},
    "checks": [{"name": "check_monotone", "tol": 1e-8}],
}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_bundled_scenarios_listed(capsys):
    assert main(["scenarios"]) == EXIT_OK
    names = capsys.readouterr().out.split()
    assert {"eigen1", "drift-bounded", "potential-inverse-square"} <= set(names)
    assert set(names) == set(bundled_scenarios())


def test_run_eigen1_writes_report_and_trace(tmp_path, capsys):
    assert main(["run", "eigen1", "--outdir", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "eigen1.report.json").read_text())
    assert doc["pass"] is True and doc["scenario"] == "eigen1"
    assert {c["check"] for c in doc["checks"]} >= {"check_monotone", "hardy"}
    assert (tmp_path / "eigen1.trace.csv").read_text().startswith("tau,H,I,N,N_prime,flags")
    assert "PASS  scenario eigen1" in capsys.readouterr().out


def test_run_drift_reports_constant(tmp_path):
    assert main(["run", "drift-bounded", "--outdir", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "drift-bounded.report.json").read_text())
    almost = next(c for c in doc["checks"] if c["check"] == "check_almost_monotone")
    assert almost["inputs"]["C"] == pytest.approx(0.5)


def test_run_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = write_config(tmp_path, EIGEN1)
    assert main(["run", cfg, "--outdir", str(a)]) == EXIT_OK
    assert main(["run", cfg, "--outdir", str(b), "--threads", "3"]) == EXIT_OK
    for name in ("tiny.report.json", "tiny.trace.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_malformed_config_names_missing_field(tmp_path, capsys):
    doc = dict(EIGEN1)
    del doc["dim"]
    assert main(["run", write_config(tmp_path, doc)]) == EXIT_ERROR
    assert "missing required field 'dim'" in capsys.readouterr().err


def test_unreadable_and_unknown_check(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.json")]) == EXIT_ERROR
    doc = dict(EIGEN1, checks=[{"name": "check_everything"}])
    assert main(["run", write_config(tmp_path, doc)]) == EXIT_ERROR
    assert "check_everything" in capsys.readouterr().err


def test_precondition_violation_is_an_error(tmp_path, capsys):
    doc = dict(EIGEN1, mode="lower_order", coefficients={"b": ["2"], "L": 0.5},
               grid={"degree": 4, "nodes": 8, "dt": 0.01})
    assert main(["run", write_config(tmp_path, doc), "--outdir", str(tmp_path)]) == EXIT_ERROR
    assert "bound" in capsys.readouterr().err


def test_failing_check_exits_two(tmp_path):
    doc = dict(EIGEN1, checks=[{"name": "frequency_reference", "expected": "2", "tol": 1e-8}])
    assert main(["run", write_config(tmp_path, doc), "--outdir", str(tmp_path)]) == EXIT_CHECK_FAILED


def test_bad_thread_count(capsys):
    assert main(["run", "eigen1", "--threads", "0"]) == EXIT_ERROR


def test_t0_command(capsys):
    assert main(["t0", "--A", "1", "--T", "10"]) == EXIT_OK
    assert float(capsys.readouterr().out) == pytest.approx(0.0148676, abs=5e-8)
    assert main(["t0", "--A", "-1", "--T", "10"]) == EXIT_ERROR


def test_hardy_suite_with_fault_exits_two(tmp_path, capsys):
    assert main(["suite", "hardy", "--inject-fault", "hardy_rhs_sign"]) == EXIT_CHECK_FAILED
    assert "FAIL" in capsys.readouterr().out
    # the hook is cleared afterwards
    from oulab.inequalities import hardy_quadratic
    from oulab.gaussian import SpectralField

    assert hardy_quadratic(SpectralField.mode((1,)), 0.1).passed


def test_invalid_seed_is_reported(monkeypatch, capsys):
    monkeypatch.setenv("OULAB_SEED", "forty-two")
    assert main(["suite", "hardy"]) == EXIT_ERROR
    assert "OULAB_SEED" in capsys.readouterr().err


def test_figures_and_plot_command(tmp_path):
    cfg = write_config(tmp_path, EIGEN1)
    assert main(["run", cfg, "--outdir", str(tmp_path), "--figures"]) == EXIT_OK
    assert (tmp_path / "tiny.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    out = tmp_path / "plots"
    assert main(["plot", str(tmp_path / "tiny.trace.csv"), "--outdir", str(out)]) == EXIT_OK
    assert (out / "tiny.png").exists()
    (tmp_path / "junk.csv").write_text("a,b\n1,2\n")
    assert main(["plot", str(tmp_path / "junk.csv")]) == EXIT_ERROR


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "oulab.cli", "t0", "--A", "1", "--T", "10"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.strip() == "0.014867561248909608"
