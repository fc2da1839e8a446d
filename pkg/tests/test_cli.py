import json
import subprocess
import sys

import pytest

from trsmpc import bench, cli
from trsmpc.lcd import load_sample_set


def parse(argv):
    return cli.experiment_config(cli.build_parser().parse_args(argv))


class TestParsing:
    def test_sweep_defaults(self):
        cfg = parse(["sweep-eps"])
        assert cfg.axis == "epsilon" and cfg.values == (0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0)
        assert cfg.runs == bench.DEFAULT_RUNS
        assert parse(["sweep-samples"]).values == (20, 40, 100, 300)
        assert parse(["sweep-iters"]).values == (1, 3, 5, 10)
        assert parse(["single"]).axis == "none"

    def test_flags(self):
        cfg = parse(["sweep-iters", "--env", "truck", "--rule", "tr,mppi", "--sampler",
                     "lcd,sobol", "--n", "40", "--eps", "1.5", "--hmin", "-10", "--full",
                     "--seed", "9", "--out-dir", "x"])
        assert cfg.env == "truck" and cfg.rules == ("tr", "mppi")
        assert cfg.samplers == ("lcd", "sobol_scrambled")
        assert cfg.n_samples == 40 and cfg.epsilon == 1.5 and cfg.h_min == -10.0
        assert cfg.runs == bench.FULL_RUNS and cfg.seed == 9 and cfg.out_dir == "x"

    def test_eps_list_sets_eps_sweep(self):
        assert parse(["sweep-eps", "--eps", "0.5,2"]).values == (0.5, 2.0)

    def test_runs_beats_full(self):
        assert parse(["single", "--full", "--runs", "3"]).runs == 3

    def test_config_file_then_flags(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[experiment]\nenv = truck\nruns = 4\n")
        cfg = parse(["single", "--config", str(p), "--runs", "2"])
        assert cfg.env == "truck" and cfg.runs == 2 and cfg.axis == "none"

    def test_unknown_rule_is_an_error(self, capsys):
        assert cli.main(["single", "--rule", "ilqr"]) == 1
        assert "ilqr" in capsys.readouterr().err

    def test_bad_env_choice(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(["single", "--env", "pendulum"])


def test_single_run_writes_outputs(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TRSMPC_THREADS", "1")
    ini = tmp_path / "c.ini"
    ini.write_text("[env]\nhorizon = 6\nsteps = 3\n")
    code = cli.main(["single", "--config", str(ini), "--rule", "tr,mppi", "--n", "6",
                     "--iters", "1", "--runs", "2", "--out-dir", str(tmp_path / "out")])
    assert code == 0
    records = bench.read_records(tmp_path / "out" / "single_records.csv")
    assert len(records) == 4
    doc = json.loads((tmp_path / "out" / "single_summary.json").read_text())
    assert set(doc["cells"]) == {"cartpole/tr/random", "cartpole/mppi/random"}
    assert "cartpole/tr/random" in capsys.readouterr().out


def test_lcd_gen(tmp_path):
    out = tmp_path / "s.txt"
    assert cli.main(["lcd-gen", "--n", "12", "--dim", "3", "--budget", "200", "--out",
                     str(out)]) == 0
    s = load_sample_set(out)
    assert s.points.shape == (12, 3) and s.quality_ok


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "trsmpc", "--help"], capture_output=True,
                         text=True, check=False)
    assert res.returncode == 0 and "sweep-eps" in res.stdout
