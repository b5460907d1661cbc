import json
import math
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from lyocert.cli import main
from lyocert.lyapunov import LyapunovEvaluator
from lyocert.system import load_system

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
FAST_PLAN = {"radii": [0.5, 1.0], "horizon": 20.0, "eps_levels": 2,
             "ensemble": {"seed": 0, "n_random": 4, "max_switches": 3}}


def cfg(name):
    return str(CONFIGS / f"{name}.json")


@pytest.fixture
def plan_file(tmp_path):
    p = tmp_path / "plan.json"
    p.write_text(json.dumps(FAST_PLAN))
    return str(p)


def run(argv, tmp_path, name="report.json"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out), "--deterministic"])
    report = json.loads(out.read_text()) if out.exists() else None
    return code, report


class TestAxioms:
    @pytest.mark.parametrize("name", ["scalar_stable", "scalar_unstable", "bilinear", "switched_2d", "saturating",
                                      "ode_stable", "ode_additive"])
    def test_pass(self, name, tmp_path):
        code, report = run(["axioms", cfg(name)], tmp_path)
        assert code == 0 and report["status"] == "Supported"

    def test_broken(self, tmp_path):
        code, report = run(["axioms", cfg("broken_cocycle_demo")], tmp_path)
        assert code == 1
        w = report["axioms"]["cocycle"]["witness"]
        assert (w["t"], w["h"]) == (1.0, 1.0)

    def test_escape_inconclusive(self, tmp_path):
        code, _ = run(["axioms", cfg("ode_escape")], tmp_path)
        assert code == 3

    def test_missing_file(self, tmp_path, capsys):
        assert main(["axioms", str(tmp_path / "nope.json")]) == 2
        err = capsys.readouterr().err
        assert "usage:" in err and "nope.json" in err

    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text('{"catalogue": {"name": "nope"}}')
        assert main(["axioms", str(p)]) == 2
        assert "catalogue.name" in capsys.readouterr().err


class TestCertify:
    def test_ugas(self, tmp_path, plan_file):
        code, report = run(["certify", cfg("scalar_stable"), "--property", "UGAS", "--beta", "r*exp(-t)",
                            "--plan", plan_file], tmp_path)
        assert code == 0 and report["evidence"]["scope"] == "desk-scale evidence"

    def test_ugwa_refuted(self, tmp_path, plan_file):
        code, report = run(["certify", cfg("scalar_unstable"), "--property", "UGWA", "--plan", plan_file], tmp_path)
        assert code == 1
        assert report["evidence"]["witness"]["x"]

    def test_unknown_property(self, tmp_path):
        assert main(["certify", cfg("scalar_stable"), "--property", "XYZ"]) == 2

    def test_missing_beta(self, tmp_path, plan_file):
        assert main(["certify", cfg("scalar_stable"), "--property", "UGAS", "--plan", plan_file]) == 2

    def test_integral_with_weights(self, tmp_path, plan_file):
        code, report = run(["certify", cfg("scalar_unstable"), "--property", "iUGS", "--alpha", "r/(1+r^2)",
                            "--psi", "r+2", "--plan", plan_file], tmp_path)
        assert code == 0

    def test_weights_in_plan(self, tmp_path):
        p = tmp_path / "plan.json"
        p.write_text(json.dumps({**FAST_PLAN, "weights": {"alpha": "r", "psi": "r/2"}}))
        code, _ = run(["certify", cfg("scalar_stable"), "--property", "iUGS", "--plan", str(p)], tmp_path)
        assert code == 1

    def test_tailnorm(self, tmp_path, plan_file):
        code, _ = run(["certify", cfg("scalar_stable"), "--property", "UGATT-tailnorm", "--plan", plan_file],
                      tmp_path)
        assert code == 0


class TestLyap:
    def test_construct(self, tmp_path, plan_file):
        code, report = run(["lyap", cfg("scalar_stable"), "--construct", "--plan", plan_file], tmp_path)
        assert code == 0
        values = {tuple(v["x"]): v["V"] for v in report["values"]}
        ev = LyapunovEvaluator.from_dict(report["evaluator"], load_system(cfg("scalar_stable")))
        assert ev([2.0]) == pytest.approx(math.log(2) + 1, abs=1e-3)
        assert values[(1.0,)] == pytest.approx(1.0, abs=1e-3)

    def test_verify_refuted(self, tmp_path, plan_file):
        v = tmp_path / "V.json"
        v.write_text(json.dumps({"kind": "closed", "expr": "abs(x1)", "dimension": 1}))
        code, report = run(["lyap", cfg("scalar_unstable"), "--verify", str(v), "--alpha", "r", "--plan", plan_file],
                           tmp_path)
        assert code == 1 and report["checks"]["decay"]["status"] == "Refuted"

    def test_verify_roundtrip(self, tmp_path, plan_file):
        # a construct report stores psi2 as null when no bound was given
        code, _ = run(["lyap", cfg("scalar_stable"), "--construct", "--plan", plan_file], tmp_path, "V.json")
        assert code == 0
        code, report = run(["lyap", cfg("scalar_stable"), "--verify", str(tmp_path / "V.json"), "--plan", plan_file],
                           tmp_path)
        assert code == 0 and report["alpha"]["expr"] == "min(r, 1)"

    def test_rho_kinf(self, capsys):
        assert main(["lyap", cfg("scalar_stable"), "--rho", "r", "--rho-class", "Kinf"]) == 2
        assert "hypothesis" in capsys.readouterr().err


class TestKlfit:
    def test_csv(self, tmp_path):
        rows = ["r,t,value"]
        for r in np.geomspace(0.125, 8, 7):
            for t in np.linspace(0, 8, 17):
                rows.append(f"{float(r)!r},{float(t)!r},{float(r) * math.exp(-t)!r}")
        p = tmp_path / "psi.csv"
        p.write_text("\n".join(rows) + "\n")
        code, report = run(["klfit", "--psi", str(p)], tmp_path)
        assert code == 0 and report["majorant_margin"] >= 0

    def test_from_decay(self, tmp_path, plan_file):
        code, report = run(["klfit", "--from-decay", cfg("switched_2d"), "--plan", plan_file], tmp_path)
        assert code == 0 and report["kl_check"]["status"] == "Supported"

    def test_needs_one_source(self):
        assert main(["klfit"]) == 2


class TestInfer:
    def test_assume(self, tmp_path):
        code, report = run(["infer", "--assume", "NCLF"], tmp_path)
        assert code == 0 and "iUGAS" in report["closure"]

    def test_dot(self, tmp_path):
        dot = tmp_path / "g.dot"
        code, _ = run(["infer", "--dot", str(dot)], tmp_path)
        nodes = {l.strip() for l in dot.read_text().splitlines() if l.strip().endswith('";')}
        assert code == 0 and len(nodes) == 17

    def test_unknown(self):
        assert main(["infer", "--assume", "NCLF,XYZ"]) == 2

    def test_certs_contradiction(self, tmp_path, plan_file):
        certs = tmp_path / "certs"
        certs.mkdir()
        main(["certify", cfg("scalar_unstable"), "--property", "iUGS", "--alpha", "r/(1+r^2)", "--psi", "r+2",
              "--plan", plan_file, "--out", str(certs / "iUGS.json"), "--deterministic"])
        main(["certify", cfg("scalar_unstable"), "--property", "UGWA", "--plan", plan_file,
              "--out", str(certs / "UGWA.json"), "--deterministic"])
        code, report = run(["infer", "--certs", str(certs)], tmp_path)
        assert code == 1
        assert report["contradictions"][0]["property"] == "UGWA"


class TestDeterminism:
    def test_byte_identical(self, tmp_path, plan_file, monkeypatch):
        argv = ["certify", cfg("bilinear"), "--property", "REP", "--plan", plan_file]
        run(argv, tmp_path, "a.json")
        monkeypatch.setenv("LYOCERT_THREADS", "4")
        run(argv, tmp_path, "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_timestamp_without_flag(self, tmp_path):
        out = tmp_path / "r.json"
        main(["infer", "--assume", "REP", "--out", str(out)])
        assert "generated_at" in json.loads(out.read_text())

    @pytest.mark.skipif(shutil.which("lyocert") is None, reason="console script not installed")
    def test_console_script(self):
        res = subprocess.run(["lyocert", "infer", "--assume", "CLF", "--deterministic"], capture_output=True,
                             text=True, check=False)
        assert res.returncode == 0 and "UGAS" in json.loads(res.stdout)["closure"]
