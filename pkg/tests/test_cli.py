import json
import subprocess
import sys

import numpy as np
import pytest

from rovernav.ace import AceLimits, RoverGeometry, build_ground_truth_acemap
from rovernav.bridge import acemap_to_grid, read_grid, write_grid
from rovernav.cli import main
from rovernav.heightmap import HeightMap


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestGenTerrain:
    def test_writes_grid(self, tmp_path, capsys):
        code, out, _ = run_cli(["--out", str(tmp_path), "gen-terrain",
                                "--seed", "3", "--cfa", "0.05",
                                "--extent", "20"], capsys)
        assert code == 0
        grid = read_grid((tmp_path / "terrain.grid").read_bytes())
        assert grid.values.shape == (200, 200)

    def test_bad_spec_errors(self, tmp_path, capsys):
        code, _, err = run_cli(["--out", str(tmp_path), "gen-terrain",
                                "--slope", "60"], capsys)
        assert code == 2
        assert "error" in err


class TestEvalAcemap:
    def make_maps(self, tmp_path):
        n = 60
        hm = HeightMap((0, 0), 0.1, n, n, np.zeros((n, n)), np.ones((n, n), bool))
        xs = (np.arange(n) + 0.5) * 0.1
        rr = ((xs[None, :] - 3.0) ** 2 + (xs[:, None] - 3.0) ** 2) / 0.6 ** 2
        hm.heights = np.where(rr < 1, 0.55 * np.sqrt(np.maximum(0, 1 - rr)), 0.0)
        truth = build_ground_truth_acemap(hm, RoverGeometry(), AceLimits())
        tfile = tmp_path / "truth.grid"
        tfile.write_bytes(write_grid(acemap_to_grid(truth)))
        return truth, tfile

    def test_identity_predictions_score_perfect(self, tmp_path, capsys):
        truth, tfile = self.make_maps(tmp_path)
        code, out, _ = run_cli(["eval-acemap", str(tfile), str(tfile)], capsys)
        assert code == 0
        assert "accuracy=100.00%" in out

    def test_all_negative_predictions(self, tmp_path, capsys):
        truth, tfile = self.make_maps(tmp_path)
        zeros = truth.values.copy()
        zeros[np.isfinite(zeros)] = 0.0
        import rovernav.ace as ace_mod
        pred = ace_mod.AceMap(truth.origin, truth.cell_size, zeros)
        pfile = tmp_path / "pred.grid"
        pfile.write_bytes(write_grid(acemap_to_grid(pred)))
        code, out, _ = run_cli(["eval-acemap", str(pfile), str(tfile)], capsys)
        assert code == 0
        # confusion-matrix arithmetic: accuracy = negative fraction, recall 0
        finite = np.isfinite(truth.values)
        neg = float((truth.values[finite] < 0.5).mean())
        line = out.splitlines()[0]
        acc = float(line.split("accuracy=")[1].split("%")[0])
        assert acc == pytest.approx(100 * neg, abs=0.01)
        assert "recall=0.000" in out


class TestRunExperimentDeterminism:
    def test_byte_identical_reruns(self, tmp_path, capsys):
        cfg = tmp_path / "tiny.toml"
        cfg.write_text(
            "slopes = [0.0]\ncfas = [0.03]\nseeds_per_terrain = 2\n"
            "goal_distance = 12.0\ntimeout_cycles = 40\nworkers = 1\n")
        outs = []
        for rep in ("a", "b"):
            od = tmp_path / rep
            code, _, _ = run_cli(["--out", str(od), "run-experiment", "baseline",
                                  "--config", str(cfg), "--seed", "7"], capsys)
            assert code == 0
            outs.append(((od / "summary.csv").read_bytes(),
                         (od / "trials_baseline.jsonl").read_bytes()))
        assert outs[0] == outs[1]


class TestRunTrialCommand:
    def test_trial_json_written(self, tmp_path, capsys):
        code, out, _ = run_cli(["--out", str(tmp_path), "run-trial",
                                "--seed", "2", "--goal-distance", "10"], capsys)
        assert code == 0
        row = json.loads((tmp_path / "trial_2.json").read_text())
        assert row["outcome"] == "success"

    def test_report_rbuilds_csv(self, tmp_path, capsys):
        cfg = tmp_path / "tiny.toml"
        cfg.write_text(
            "slopes = [0.0]\ncfas = [0.0]\nseeds_per_terrain = 1\n"
            "goal_distance = 10.0\ntimeout_cycles = 30\nworkers = 1\n")
        code, _, _ = run_cli(["--out", str(tmp_path), "run-experiment",
                              "baseline", "--config", str(cfg)], capsys)
        assert code == 0
        code, out, _ = run_cli(["--out", str(tmp_path), "report",
                                str(tmp_path / "trials_baseline.jsonl")], capsys)
        assert code == 0
        assert (tmp_path / "report.csv").exists()
        assert "baseline" in out
