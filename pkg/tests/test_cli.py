import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mvsde import (
    build_model,
    euler_maruyama_particles,
    linear_closed_form_mle,
    linear_exact_paths,
    strong_error,
)
from mvsde.cli import main


def read_csv(path):
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    return rows[0], rows[1:]


def run(args):
    return main([str(a) for a in args])


class TestSimulate:
    def test_row_counts_and_reference(self, tmp_path):
        out = tmp_path / "run"
        assert run(["simulate", "--N", 12, "--M", 16, "--T", 1.0, "--seed", 3,
                    "--particles", "0,5", "--out", out]) == 0
        header, rows = read_csv(out / "paths.csv")
        assert header == ["t", "particle_id", "y"]
        assert len(rows) == 2 * 17
        ref_header, ref_rows = read_csv(out / "reference.csv")
        assert ref_header == ["t", "x"]
        assert len(ref_rows) == 17

    def test_single_step_run(self, tmp_path):
        out = tmp_path / "run"
        assert run(["simulate", "--N", 2, "--M", 1, "--out", out]) == 0
        _, rows = read_csv(out / "paths.csv")
        assert len(rows) == 2

    def test_round_trip_is_bit_exact(self, tmp_path):
        out = tmp_path / "run"
        run(["simulate", "--N", 6, "--M", 8, "--T", 2.0, "--seed", 11,
             "--particles", "2", "--out", out])
        _, rows = read_csv(out / "paths.csv")
        model = build_model("linear")
        ens = euler_maruyama_particles(model, -0.5, 1.0, 6, 8, 2.0, 11)
        ref = linear_exact_paths(model.linear, 6, 8, 2.0, 11)
        for k, (t, pid, y) in enumerate(rows):
            assert int(pid) == 2
            assert float(t) == ens.times()[k]
            assert float(y) == ens.paths[2, k]
        _, ref_rows = read_csv(out / "reference.csv")
        for k, (t, x) in enumerate(ref_rows):
            assert float(x) == ref.paths[2, k]

    def test_manifest_records_resolved_config(self, tmp_path):
        out = tmp_path / "run"
        run(["simulate", "--N", 4, "--M", 2, "--seed", 9, "--out", out])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["config"]["N"] == 4
        assert manifest["config"]["M"] == 2
        assert manifest["config"]["seed"] == 9
        assert manifest["seeds"] == [9]

    def test_particle_out_of_range(self, tmp_path):
        assert run(["simulate", "--N", 4, "--M", 2, "--particles", "4",
                    "--out", tmp_path / "x"]) == 2


class TestErrorTable:
    def test_grid_shape_and_round_trip(self, tmp_path):
        out = tmp_path / "run"
        assert run(["error-table", "--N", "8,12", "--M", "4,8", "--T", 1.0,
                    "--seed", 5, "--replications", 2, "--out", out]) == 0
        header, rows = read_csv(out / "errors.csv")
        assert header == ["N", "M", "mean_sq_sup_error", "ci_halfwidth", "replications"]
        assert [(r[0], r[1]) for r in rows] == [("8", "4"), ("8", "8"), ("12", "4"), ("12", "8")]
        model = build_model("linear")
        for n_str, m_str, err, ci, reps in rows:
            report = strong_error(model, -0.5, int(n_str), int(m_str), 1.0, 5, int(reps))
            assert float(err) == report.mean_sq_sup_error
            assert float(ci) == report.ci_halfwidth

    def test_zero_drift_rows_exactly_zero(self, tmp_path):
        out = tmp_path / "run"
        assert run(["error-table", "--N", "4", "--M", "2,4", "--theta", 0.0,
                    "--beta", 0.0, "--replications", 1, "--out", out]) == 0
        _, rows = read_csv(out / "errors.csv")
        assert [r[2] for r in rows] == ["0", "0"]

    def test_deterministic_across_runs_and_workers(self, tmp_path):
        args = ["error-table", "--N", "6,10", "--M", "4", "--replications", 2, "--seed", 1]
        run(args + ["--out", tmp_path / "a", "--workers", 1])
        run(args + ["--out", tmp_path / "b", "--workers", 1])
        run(args + ["--out", tmp_path / "c", "--workers", 2])
        a = (tmp_path / "a" / "errors.csv").read_bytes()
        assert (tmp_path / "b" / "errors.csv").read_bytes() == a
        assert (tmp_path / "c" / "errors.csv").read_bytes() == a


class TestEstimate:
    def test_estimate_csv_and_curve(self, tmp_path):
        out = tmp_path / "run"
        assert run(["estimate", "--N", 64, "--M", 32, "--T", 2.0, "--seed", 2,
                    "--grid-points", 41, "--curve", "--out", out]) == 0
        header, rows = read_csv(out / "estimate.csv")
        assert header == ["theta_hat", "method", "loglik_at_hat", "boundary_flag"]
        assert len(rows) == 1
        theta_hat, method, loglik, boundary = rows[0]
        assert method == "closed-form"
        assert boundary == "false"
        model = build_model("linear")
        ens = euler_maruyama_particles(model, -0.5, 1.0, 64, 32, 2.0, 2)
        expected = linear_closed_form_mle(ens, beta=1.0)
        assert float(theta_hat) == expected.theta_hat
        assert float(loglik) == expected.loglik_at_hat

        curve_header, curve_rows = read_csv(out / "loglik_curve.csv")
        assert curve_header == ["theta", "loglik"]
        assert len(curve_rows) == 41
        thetas = [float(r[0]) for r in curve_rows]
        assert thetas == sorted(thetas)

    def test_grid_refine_method(self, tmp_path):
        out = tmp_path / "run"
        assert run(["estimate", "--N", 32, "--M", 16, "--T", 1.0,
                    "--method", "grid-refine", "--grid-points", 51, "--out", out]) == 0
        _, rows = read_csv(out / "estimate.csv")
        assert rows[0][1] == "grid-refine"


class TestSweep:
    def test_sweep_rows(self, tmp_path):
        out = tmp_path / "run"
        assert run(["sweep", "--horizons", "1,4", "--N", 64,
                    "--steps-per-unit-time", 8, "--n-seeds", 3, "--seed", 10,
                    "--out", out]) == 0
        header, rows = read_csv(out / "sweep.csv")
        assert header == ["T", "mean_abs_err", "sd", "n_seeds"]
        assert len(rows) == 2
        assert [r[0] for r in rows] == ["1", "4"]
        assert all(r[3] == "3" for r in rows)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [10, 11, 12]

    def test_sweep_workers_deterministic(self, tmp_path):
        args = ["sweep", "--horizons", "1,2", "--N", 32, "--steps-per-unit-time", 8,
                "--n-seeds", 2, "--seed", 4]
        run(args + ["--out", tmp_path / "a"])
        run(args + ["--out", tmp_path / "b", "--workers", 2])
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


class TestPicard:
    def test_converged_run(self, tmp_path):
        out = tmp_path / "run"
        assert run(["picard", "--P", 300, "--M", 16, "--T", 1.0, "--tol", 1e-3,
                    "--out", out]) == 0
        header, rows = read_csv(out / "picard.csv")
        assert header == ["iteration", "sup_w2"]
        assert [r[0] for r in rows] == [str(i + 1) for i in range(len(rows))]
        assert float(rows[-1][1]) < 1e-3

    def test_forced_non_convergence_exit_code(self, tmp_path):
        out = tmp_path / "run"
        assert run(["picard", "--P", 50, "--M", 8, "--max-iter", 1,
                    "--tol", 1e-15, "--out", out]) == 3
        _, rows = read_csv(out / "picard.csv")
        assert len(rows) == 1


class TestConfigHandling:
    def test_file_flag_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"N": 4, "M": 2, "seed": 1}))
        out = tmp_path / "run"
        assert run(["simulate", "--config", cfg, "--N", 6, "--out", out]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["N"] == 6  # flag wins
        assert manifest["config"]["M"] == 2  # file wins over default
        assert manifest["config"]["seed"] == 1

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_particles": 4}))
        assert run(["simulate", "--config", cfg, "--out", tmp_path / "x"]) == 2

    def test_invalid_json_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert run(["simulate", "--config", cfg]) == 2

    def test_missing_config_file(self, tmp_path):
        assert run(["simulate", "--config", tmp_path / "absent.json"]) == 2

    def test_non_object_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]")
        assert run(["simulate", "--config", cfg]) == 2

    def test_bad_values_rejected(self, tmp_path):
        assert run(["simulate", "--N", 0]) == 2
        assert run(["simulate", "--T", -1.0]) == 2
        assert run(["picard", "--tol", 0.0]) == 2
        assert run(["simulate", "--theta-domain", "2,1"]) == 2

    def test_unknown_model_rejected(self, tmp_path):
        assert run(["simulate", "--model", "bogus", "--out", tmp_path / "x"]) == 2


class TestExitCodes:
    def test_divergence_exit_code(self, tmp_path):
        # Values that begin with a dash need the --flag=value spelling.
        assert run(["simulate", "--N", 2, "--M", 8, "--theta", 5000.0, "--beta", 0.0,
                    "--theta-domain=-6000,6000", "--out", tmp_path / "x"]) == 4

    def test_io_error_exit_code(self):
        assert run(["simulate", "--N", 2, "--M", 2, "--out", "/dev/null/sub"]) == 5


class TestConsoleScript:
    def test_entry_point_runs(self):
        proc = subprocess.run(
            [sys.executable, "-m", "mvsde.cli", "--version"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "mvsde" in proc.stdout
