import csv
import json

import pytest

from ifrpref.cli import EXIT_DATA, EXIT_IDENT, EXIT_OK, main, read_config, resolve_options, build_parser
from ifrpref.errors import DataError


class TestConfig:
    def test_parse(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("# run settings\nseed = 7\nburn-in = 0.3\nfixed_effects = yes\n")
        assert read_config(p) == {"seed": 7, "burn_in": 0.3, "fixed_effects": True}

    def test_flags_win(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("seed = 7\neta = 0.5\n")
        args = build_parser().parse_args(["invert-ci", "0.1", "0.2", "--config", str(p), "--seed", "3"])
        opts = resolve_options(args)
        assert opts["seed"] == 3 and opts["eta"] == 0.5 and opts["lambda"] == 0.05

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("colour = red\n")
        with pytest.raises(DataError, match="line 1"):
            read_config(p)


class TestCommands:
    def test_invert_ci(self, capsys):
        assert main(["invert-ci", "0.1231", "0.2440"]) == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert (out["confirmed"], out["tests"]) == (27, 153)

    def test_identify_example(self, tmp_path):
        assert main(["identify", "--example", "22", "--tau-bar", "0.002", "--output-dir", str(tmp_path)]) == EXIT_OK
        res = json.loads((tmp_path / "identification.json").read_text())
        lo, hi = res["global_interval"]
        assert lo == pytest.approx(0.0137, abs=5e-4) and hi == pytest.approx(0.0386, abs=5e-4)
        assert (tmp_path / "identification_intervals.csv").exists()

    def test_identify_infeasible(self, tmp_path):
        sig = tmp_path / "s.csv"
        sig.write_text("a,b,phi_lo,phi_hi\n0.01,0.5,1,1\n0.01,0.05,1,1\n")
        assert main(["identify", "--signals", str(sig), "--output-dir", str(tmp_path)]) == EXIT_IDENT

    def test_identify_bad_signals(self, tmp_path):
        sig = tmp_path / "s.csv"
        sig.write_text("a,b,phi_lo,phi_hi\n0.01,0.5,3,1\n")
        assert main(["identify", "--signals", str(sig), "--output-dir", str(tmp_path)]) == EXIT_DATA

    def test_fit_and_summarize(self, tmp_path, capsys):
        code = main(["fit", "--subset", "representative", "--chains", "2", "--draws", "4000", "--thin", "5",
                     "--seed", "2", "--output-dir", str(tmp_path)])
        assert code == EXIT_OK
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["converged"] and rep["n_chains"] == 2
        capsys.readouterr()
        assert main(["summarize", str(tmp_path / "draws.csv")]) == EXIT_OK
        rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
        assert rows[0]["parameter"] == "theta"

    def test_fit_missing_file(self, tmp_path):
        assert main(["fit", "--data", str(tmp_path / "nope.csv"), "--output-dir", str(tmp_path)]) == EXIT_DATA

    def test_fit_malformed(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("label,tests\n")
        assert main(["fit", "--data", str(p), "--output-dir", str(tmp_path)]) == EXIT_DATA

    def test_simulate(self, tmp_path):
        code = main(["simulate", "--reps", "1", "--gammas", "2", "--lambdas", "0.05", "--etas", "0.1",
                     "--models", "M3", "--chains", "2", "--draws", "2000", "--output-dir", str(tmp_path)])
        assert code == EXIT_OK
        with open(tmp_path / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1 and rows[0]["model"] == "M3"
        assert (tmp_path / "records.csv").exists()

    def test_fit_not_converged(self, tmp_path, monkeypatch):
        import ifrpref.sampler as sampler
        from ifrpref.cli import EXIT_CONVERGENCE

        real = sampler.run_chains

        def flagged(model, config):
            res = real(model, config)
            res.converged = False
            return res

        monkeypatch.setattr(sampler, "run_chains", flagged)
        code = main(["fit", "--subset", "representative", "--chains", "2", "--draws", "1000", "--thin", "5",
                     "--output-dir", str(tmp_path)])
        assert code == EXIT_CONVERGENCE
        assert json.loads((tmp_path / "report.json").read_text())["converged"] is False
