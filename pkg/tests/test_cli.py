from __future__ import annotations

import json

import numpy as np
import pytest

from pwlcone import cli


def run(tmp_path, *argv):
    return cli.main(list(argv) + ["--out", str(tmp_path)])


class TestSimulate:
    def test_sdof_cycle(self, tmp_path):
        assert run(tmp_path, "simulate", "--bench", "sdof", "--kn", "3", "--x0", "0,-1", "--tend", "4.72") == 0
        ev = (tmp_path / "events.csv").read_text().splitlines()
        assert len(ev) == 3
        assert float(ev[1].split(",")[0]) == pytest.approx(np.pi, abs=1e-12)
        assert float(ev[2].split(",")[0]) == pytest.approx(1.5 * np.pi, abs=1e-12)
        head = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
        assert head == "t,x1,x2,mode,event_flag"

    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["simulate", "--bench", "chain3", "--kn", "1.5", "--x0", "0.1,0.2,0,-0.3,0.1,0.5", "--tend", "20"]
        assert run(a, *args) == 0 and run(b, *args) == 0
        ra, rb = (a / "trajectory.csv").read_bytes(), (b / "trajectory.csv").read_bytes()
        assert ra == rb
        assert b"\r\n" not in ra

    def test_x0_file(self, tmp_path):
        f = tmp_path / "x0.txt"
        f.write_text("0 -1\n")
        assert run(tmp_path, "simulate", "--bench", "sdof", "--kn", "3", "--x0", str(f), "--tend", "1") == 0

    def test_invalid(self, tmp_path, capsys):
        assert run(tmp_path, "simulate", "--bench", "sdof", "--x0", "0,-1,2", "--tend", "1") == 1
        assert "x0 must have 2 entries" in capsys.readouterr().err
        assert run(tmp_path, "simulate", "--bench", "sdof", "--x0", "0,-1", "--tend", "-1") == 1
        assert "tend must be > 0" in capsys.readouterr().err
        assert run(tmp_path, "simulate", "--bench", "sdof", "--x0", "0,-1") == 1

    def test_usage_error_is_not_expected_failure(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate", "--bench", "nope"])
        assert exc.value.code == 1


class TestCone:
    def test_chain(self, tmp_path, capsys):
        assert run(tmp_path, "cone", "--kn", "1.5", "--k", "1") == 0
        d = json.loads((tmp_path / "cone.json").read_text())
        assert d["k"] == 1 and abs(d["mu"] - 1) <= 1e-9
        assert "attractive" in json.loads((tmp_path / "attractivity.json").read_text())

    def test_internal_resonance(self, tmp_path):
        assert run(tmp_path, "cone", "--kn", "0.018", "--k", "4") == 0
        assert json.loads((tmp_path / "cone.json").read_text())["k"] == 4

    def test_damped(self, tmp_path, capsys):
        assert run(tmp_path, "cone", "--kn", "10", "--c", "0.0295", "--k", "1") == 0
        mu = json.loads((tmp_path / "cone.json").read_text())["mu"]
        assert mu == pytest.approx(0.8066, abs=5e-4)
        assert "closes after 2 crossings" in capsys.readouterr().out

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bench": "sdof", "kn": 3.0}))
        assert run(tmp_path, "cone", "--config", str(cfg)) == 0
        assert json.loads((tmp_path / "cone.json").read_text())["T"] == pytest.approx(1.5 * np.pi, abs=1e-10)
        assert run(tmp_path, "cone", "--config", str(cfg), "--kn", "8") == 0
        assert json.loads((tmp_path / "cone.json").read_text())["T"] == pytest.approx(4 * np.pi / 3, abs=1e-10)

    def test_bad_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert run(tmp_path, "cone", "--config", str(cfg)) == 1
        assert "bogus" in capsys.readouterr().err
        assert run(tmp_path, "cone", "--config", str(tmp_path / "missing.json")) == 1
        assert run(tmp_path, "cone", "--k", "0") == 1

    def test_system_file(self, tmp_path):
        from pwlcone.bench import make_sdof
        from pwlcone.system import save_system

        save_system(make_sdof(3.0), tmp_path / "s.json")
        assert run(tmp_path, "cone", "--system", str(tmp_path / "s.json")) == 0
        assert json.loads((tmp_path / "cone.json").read_text())["mu"] == pytest.approx(1.0, abs=1e-10)


class TestParametrizations:
    def test_graphstyle_success(self, tmp_path):
        assert run(tmp_path, "graphstyle", "--kn", "1.5", "--nh", "20") == 0
        for f in ("theta_curve.json", "rom.csv", "reconstructed.csv", "diagnosis.json"):
            assert (tmp_path / f).exists()
        assert (tmp_path / "rom.csv").read_text().startswith("t,u,v,r,theta\n")

    def test_graphstyle_fold_exit_code(self, tmp_path, capsys):
        assert run(tmp_path, "graphstyle", "--kn", "10") == cli.EXIT_EXPECTED_FAILURE == 2
        assert json.loads((tmp_path / "diagnosis.json").read_text())["kind"] == "fold_point"
        assert "arc-length" in capsys.readouterr().out

    def test_arclength_discontinuous(self, tmp_path):
        assert run(tmp_path, "arclength", "--kn", "2.5377", "--cn", "1", "--nh", "12", "--method", "shooting") == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["N_h"] == 12 and summary["mu"] < 1
        assert (tmp_path / "reduced.csv").read_text().startswith("t,r,s\n")
        curve = json.loads((tmp_path / "spherical_curve.json").read_text())
        assert len(curve["Xc"]) == 12 and len(curve["X0"]) == 6


class TestFspValidate:
    def test_fsp(self, tmp_path):
        assert run(tmp_path, "fsp", "--kn-values", "0.0001,0.1,1.5") == 0
        rows = (tmp_path / "fsp.csv").read_text().splitlines()
        assert rows[0] == "kn_over_k,omega,mu,T" and len(rows) == 4
        om = [float(r.split(",")[1]) for r in rows[1:]]
        assert om == sorted(om)
        assert (tmp_path / "fsp_normalized.csv").exists()

    def test_fsp_bad_range(self, tmp_path):
        assert run(tmp_path, "fsp", "--kn-range", "1,0.1,5") == 1

    def test_validate(self, tmp_path, capsys):
        assert run(tmp_path, "validate", "sdof_analytic") == 0
        assert "PASS" in capsys.readouterr().out
        assert (tmp_path / "sdof_analytic" / "report.json").exists()

    def test_list(self, tmp_path, capsys):
        assert cli.main(["list"]) == 0
        assert "al_damped_10" in capsys.readouterr().out

    def test_env_out(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
        assert cli.main(["cone", "--bench", "sdof", "--kn", "3"]) == 0
        assert (tmp_path / "envout" / "cone.json").exists()
