import io
import json
import re

import numpy as np
import pytest

from smartsize.cli import EXIT_INFEASIBLE, EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main
from smartsize.simulator import canonical_spec


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def field(text, name):
    return re.search(rf"^{re.escape(name)}\s+(\S+)", text, re.M).group(1)


class TestSize:
    def test_design_ii_reference(self):
        code, out, _ = run("size", "--design", "II", "--delta", 0.3, "--rho", 0, "--r1", 0.4, "--r-1", 0.4)
        assert code == EXIT_OK
        assert field(out, "n") == "559"
        assert field(out, "n (sharp)") == "559"

    def test_design_i_reference(self):
        code, out, _ = run("size", "--design", "I", "--delta", 0.5, "--rho", 0.8)
        assert field(out, "n") == "91"
        assert float(field(out, "design effect")) == 2.0
        assert float(field(out, "correlation factor")) == pytest.approx(0.36)

    def test_missing_delta(self):
        code, _, err = run("size", "--design", "I")
        assert code == EXIT_INVALID and "delta" in err

    @pytest.mark.parametrize("args", [("--rho", 1.2), ("--delta", -1), ("--r1", 2)])
    def test_invalid_values(self, args):
        base = {"--design": "II", "--delta": 0.3}
        base.update({args[0]: args[1]})
        code, _, err = run("size", *[x for kv in base.items() for x in kv])
        assert code == EXIT_INVALID and err

    def test_unknown_flag(self):
        assert run("size", "--design", "I", "--delta", 0.3, "--bogus")[0] == EXIT_INVALID


class TestConfig:
    def test_print_config_round_trip(self, tmp_path):
        code, out, _ = run("size", "--design", "III", "--delta", 0.4, "--rho", 0.2, "--r1", 0.3, "--print-config")
        assert code == EXIT_OK
        cfg = tmp_path / "cfg.json"
        cfg.write_text(out)
        direct = run("size", "--design", "III", "--delta", 0.4, "--rho", 0.2, "--r1", 0.3)[1]
        assert run("size", "--config", cfg)[1] == direct

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"design": "I", "delta": 0.3}))
        assert field(run("size", "--config", cfg, "--delta", 0.5)[1], "n") == "252"

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"design": "I", "delta": 0.3, "speed": 1}))
        code, _, err = run("size", "--config", cfg)
        assert code == EXIT_INVALID and "speed" in err


class TestSimulate:
    args = ("simulate", "--design", "II", "--delta", 0.5, "--r1", 0.4, "--r-1", 0.4, "--rho", 0.3)

    def test_same_seed_same_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(*self.args, "--n", 40, "--seed", 5, "--out", a)[0] == EXIT_OK
        run(*self.args, "--n", 40, "--seed", 5, "--out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_zero_n(self):
        code, out, _ = run(*self.args, "--n", 0)
        assert code == EXIT_OK and out == "subject,a1,r,a2,t,y\n"

    def test_infeasible(self):
        code, _, err = run("simulate", "--design", "II", "--delta", 0.5, "--r1", 0.4, "--rho", 0,
                           "--violation", "1b", "--n", 5)
        assert code == EXIT_INFEASIBLE and "rho=0" in err

    def test_spec_file(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(canonical_spec("III", 0.3, 0.5, rho=0.4).to_json())
        code, out, _ = run("simulate", "--spec", path, "--n", 3, "--seed", 1)
        assert code == EXIT_OK and len(out.splitlines()) == 10


class TestAnalyze:
    def test_round_trip_recovers_gamma(self, tmp_path):
        spec = canonical_spec("II", 0.5, 0.4, rho=0.3)
        path = tmp_path / "d.csv"
        run(*TestSimulate.args, "--n", 2000, "--seed", 11, "--out", path)
        code, out, _ = run("analyze", path, "--design", "II")
        assert code == EXIT_OK
        rows = re.findall(r"^\s+g(\d+)\s+(\S+)\s+(\S+)$", out, re.M)
        est = np.array([float(r[1]) for r in rows])
        se = np.array([float(r[2]) for r in rows])
        assert np.all(np.abs(est - np.array(spec.mean.gamma)) < 3 * se)
        assert "converged = True" in out

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("subject,a1,r,a2,t,y\n1,1,0,1,0,0.5\n1,1,0,1,1\n")
        code, _, err = run("analyze", path, "--design", "II")
        assert code == EXIT_INVALID and "line 3" in err

    def test_same_regimen_contrast(self, tmp_path):
        path = tmp_path / "d.csv"
        run(*TestSimulate.args, "--n", 100, "--seed", 1, "--out", path)
        code, _, _ = run("analyze", path, "--design", "II", "--contrast", "1,0,1", "1,0,1")
        assert code == EXIT_INVALID

    def test_singular(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = ["subject,a1,r,a2,t,y"]
        for i, (a1, r, a2) in enumerate([(1, 0, 1), (-1, 0, 1), (-1, 0, -1), (-1, 1, 0)] * 5):
            rows += [f"{i},{a1},{r},{a2},{t},{0.1 * i + t}" for t in (0, 1, 2)]
        path.write_text("\n".join(rows) + "\n")
        code, _, err = run("analyze", path, "--design", "II")
        assert code == EXIT_NUMERICAL and "(1, 0, -1)" in err

    def test_wrong_design(self, tmp_path):
        path = tmp_path / "d.csv"
        run(*TestSimulate.args, "--n", 30, "--seed", 1, "--out", path)
        assert run("analyze", path, "--design", "III")[0] == EXIT_INVALID


class TestPower:
    def test_single_cell(self, tmp_path):
        out = tmp_path / "p.csv"
        code, _, _ = run("power", "--design", "III", "--delta", 0.5, "--r1", 0.4, "--r-1", 0.4, "--rho", 0.3,
                         "--reps", 20, "--seed", 7, "--out", out)
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0] == "design,delta,r,rho,violation,n,reps,power,mc_se,flag"
        assert lines[1].startswith("III,0.5,0.4,0.3,none,149,20,")
        manifest = json.loads((tmp_path / "p.csv.manifest.json").read_text())
        assert manifest["seed"] == 7

    def test_zero_reps(self):
        assert run("power", "--table4", "--reps", 0)[0] == EXIT_INVALID

    def test_needs_design(self):
        assert run("power", "--delta", 0.3)[0] == EXIT_INVALID
