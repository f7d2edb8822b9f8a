import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from picard_lod.cli import (
    EXIT_DIVERGING,
    EXIT_ERROR,
    EXIT_INCONCLUSIVE,
    EXIT_OK,
    main,
)

PI = math.pi


def write_problem(path: Path, **overrides) -> Path:
    doc = {
        "schema_version": 1,
        "domain": {"t0": 0.0, "a": 0.1, "b": 0.1, "S": [[-PI, PI]]},
        "order": {"d": 1, "p": 0, "L": 2},
        "rhs": "Dx2(y1)",
        "initial": ["sin(x1)"],
        "growth": [{"kind": "exponential", "C": 1.0}],
        "solver": {"tol": 1e-11, "n_max": 10, "k_check": [0]},
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return path


class TestSchema:
    def test_missing_key_names_it(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        doc = json.loads(write_problem(tmp_path / "ok.json").read_text())
        del doc["order"]["d"]
        p.write_text(json.dumps(doc))
        assert main(["solve", str(p)]) == EXIT_ERROR
        assert "'d'" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        p = write_problem(tmp_path / "extra.json", extra_knob=1)
        assert main(["solve", str(p)]) == EXIT_ERROR
        assert "extra_knob" in capsys.readouterr().err

    def test_malformed_json_reports_line_and_column(self, tmp_path, capsys):
        p = tmp_path / "broken.json"
        p.write_text("{\n  \"schema_version\": 1,,\n}")
        assert main(["solve", str(p)]) == EXIT_ERROR
        err = capsys.readouterr().err
        assert "line 2" in err and "column" in err

    def test_bad_expression_position(self, tmp_path, capsys):
        p = write_problem(tmp_path / "expr.json", rhs="Dx9(y1)")
        assert main(["solve", str(p)]) == EXIT_ERROR
        assert "exceeds declared L" in capsys.readouterr().err


class TestSolveCommand:
    def test_heat_converges(self, tmp_path, capsys):
        p = write_problem(tmp_path / "heat.json")
        assert main(["solve", str(p), "--out", str(tmp_path / "out")]) == EXIT_OK
        report = json.loads((tmp_path / "out" / "heat.report.json").read_text())
        assert report["status"] == "converged"
        assert report["residuals"]["pde_residual"] <= 1e-7
        csv = (tmp_path / "out" / "heat.norms.csv").read_text().splitlines()
        assert csv[0] == "n,k0"
        assert len(csv) == report["n_steps"] + 1

    def test_exhaustion_is_inconclusive(self, tmp_path):
        p = write_problem(
            tmp_path / "slow.json",
            solver={"tol": 1e-30, "n_max": 2, "k_check": [0]},
        )
        assert main(["solve", str(p), "--out", str(tmp_path)]) == EXIT_INCONCLUSIVE

    def test_certify_first_divergence(self, tmp_path):
        p = write_problem(
            tmp_path / "kow.json",
            initial=["1/(1+x1^2)"],
            growth=[{"kind": "analytic", "C": 1.0}],
        )
        code = main([
            "solve", str(p), "--certify-first", "--out", str(tmp_path / "o")
        ])
        assert code == EXIT_DIVERGING

    def test_reports_are_deterministic(self, tmp_path):
        p = write_problem(tmp_path / "het.json")
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["solve", str(p), "--out", str(out1)]) == EXIT_OK
        assert main(["solve", str(p), "--out", str(out2)]) == EXIT_OK
        assert (out1 / "het.report.json").read_bytes() == \
            (out2 / "het.report.json").read_bytes()
        assert (out1 / "het.norms.csv").read_bytes() == \
            (out2 / "het.norms.csv").read_bytes()


class TestCertifyCommand:
    def test_heat_exponential(self, tmp_path):
        p = write_problem(tmp_path / "heat.json")
        assert main(["certify", str(p), "--out", str(tmp_path), "--nmax", "40"]) == EXIT_OK

    def test_kowalevski_diverges(self, tmp_path):
        p = write_problem(
            tmp_path / "kow.json",
            initial=["1/(1+x1^2)"],
            growth=[{"kind": "analytic", "C": 1.0}],
        )
        assert main(["certify", str(p), "--out", str(tmp_path)]) == EXIT_DIVERGING
        cert = json.loads((tmp_path / "kow.certificate.report.json").read_text())
        assert cert["verdict"] == "diverging"

    def test_ode_always_converges(self, tmp_path):
        p = write_problem(
            tmp_path / "ode.json",
            domain={"t0": 0.0, "a": 0.8, "b": 0.8, "S": []},
            order={"d": 1, "p": 0, "L": 0},
            rhs="3.0*y1",
            initial=["1"],
            growth=None,
        )
        doc = json.loads(p.read_text())
        del doc["growth"]
        p.write_text(json.dumps(doc))
        assert main(["certify", str(p), "--out", str(tmp_path), "--nmax", "40"]) == EXIT_OK

    def test_quadratic_demo_diverges_with_witness(self, tmp_path):
        p = write_problem(
            tmp_path / "burgers.json",
            domain={"t0": 0.0, "a": 0.25, "b": 0.25, "S": [[0.0, 1.0]]},
            order={"d": 1, "p": 0, "L": 1},
            rhs="y1*Dx1(y1)",
            initial=["x1"],
            radii=[1.0],
            growth=[{"kind": "sigma", "sigma": 1.0}],
        )
        assert main(["certify", str(p), "--out", str(tmp_path), "--nmax", "20"]) \
            == EXIT_DIVERGING
        cert = json.loads((tmp_path / "burgers.certificate.report.json").read_text())
        assert "hyperfactorial" in cert["meta"]["witness"]

    def test_numeric_only_certificate_is_inconclusive(self, tmp_path):
        p = write_problem(tmp_path / "nogrowth.json")
        doc = json.loads(p.read_text())
        del doc["growth"]
        p.write_text(json.dumps(doc))
        assert main(["certify", str(p), "--out", str(tmp_path)]) == EXIT_INCONCLUSIVE


class TestSeriesCommand:
    def test_zero_terms_emits_i0(self, tmp_path):
        p = write_problem(tmp_path / "heat.json")
        assert main(["series", str(p), "--terms", "0", "--out", str(tmp_path)]) == EXIT_OK
        rep = json.loads((tmp_path / "heat.series.report.json").read_text())
        assert rep["diagnostics"]["terms"] == 0
        assert rep["solution"]["degrees"][0] == 0  # time-constant

    def test_nonlinear_rejected_with_explanation(self, tmp_path, capsys):
        p = write_problem(
            tmp_path / "burgers.json",
            domain={"t0": 0.0, "a": 0.25, "b": 0.25, "S": [[0.0, 1.0]]},
            order={"d": 1, "p": 0, "L": 1},
            rhs="y1*Dx1(y1)",
            initial=["x1"],
        )
        assert main(["series", str(p), "--out", str(tmp_path)]) == EXIT_ERROR
        assert "linear class" in capsys.readouterr().err


class TestCompareCommand:
    def test_generic_route_agreement(self, tmp_path, capsys):
        p = write_problem(tmp_path / "heat.json")
        assert main([
            "compare", str(p), "--against", "generic", "--terms", "5",
            "--out", str(tmp_path),
        ]) == EXIT_OK
        rep = json.loads((tmp_path / "heat.compare.report.json").read_text())
        assert rep["max_coefficient_deviation"] <= 1e-10

    def test_oracle_route(self, tmp_path):
        p = write_problem(tmp_path / "heat.json")
        assert main([
            "compare", str(p), "--against", "oracle", "--out", str(tmp_path),
        ]) == EXIT_OK
        rep = json.loads((tmp_path / "heat.compare.report.json").read_text())
        assert rep["max_grid_deviation"] <= 1e-8


class TestDemoCommand:
    @pytest.mark.parametrize("case", ["heat", "transport", "wave", "mixed_dt_dx", "dt2_dx"])
    def test_catalog_cases(self, tmp_path, case):
        assert main(["demo", case, "--out", str(tmp_path)]) == EXIT_OK
        rep = json.loads((tmp_path / f"demo_{case}.report.json").read_text())
        assert rep["oracle_distance"] <= 1e-8

    def test_unknown_case(self, tmp_path, capsys):
        assert main(["demo", "laplace", "--out", str(tmp_path)]) == EXIT_ERROR


def test_console_script_entry_point(tmp_path):
    p = write_problem(tmp_path / "heat.json")
    proc = subprocess.run(
        [sys.executable, "-m", "picard_lod.cli", "solve", str(p),
         "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_OK
    assert "converged" in proc.stdout
