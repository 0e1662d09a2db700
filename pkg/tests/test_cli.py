import csv
import json

import numpy as np
import pytest
from scipy.special import expit

from factorbal.cli import (
    EXIT_DATA,
    EXIT_IDENTIFICATION,
    EXIT_OK,
    main,
)
from factorbal.design import enumerate_combinations


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def make_survey_like(path, n=1500, seed=0, coding="pm1", drop_cells=()):
    """Four factors, six covariates, mild confounding, all cells populated
    unless explicitly dropped."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 6))
    Z = np.empty((n, 4), dtype=int)
    for j in range(4):
        p = expit(0.35 * X[:, j] - 0.2 * X[:, (j + 1) % 6])
        Z[:, j] = np.where(rng.random(n) < p, 1, -1)
    if drop_cells:
        bad = {tuple(c) for c in drop_cells}
        keep = np.array([tuple(z) not in bad for z in Z])
        X, Z = X[keep], Z[keep]
        n = keep.sum()
    Y = X[:, 0] + 0.5 * X[:, 1] + Z[:, 0] + 0.25 * Z[:, 1] * Z[:, 2] + rng.normal(size=n)
    zcols = Z if coding == "pm1" else (Z + 1) // 2
    header = [f"t{j}" for j in range(1, 5)] + [f"x{j}" for j in range(1, 7)] + ["y"]
    rows = np.column_stack([zcols, X, Y])
    write_csv(path, header, rows.tolist())
    return header


def base_args(data, out, coding="pm1", extra=()):
    return [
        "estimate",
        "--data", str(data),
        "--factors", "t1,t2,t3,t4",
        "--covariates", "x1,x2,x3,x4,x5,x6",
        "--outcome", "y",
        "--coding", coding,
        "--max-order", "2",
        "--out", str(out),
        *extra,
    ]


class TestEstimate:
    def test_survey_shaped_run(self, tmp_path):
        data = tmp_path / "data.csv"
        make_survey_like(data)
        out = tmp_path / "run"
        assert main(base_args(data, out)) == EXIT_OK
        effects = (tmp_path / "run_effects.csv").read_text().strip().splitlines()
        # header + 4 main effects + 6 pairwise interactions
        assert len(effects) == 11
        weights = (tmp_path / "run_weights.csv").read_text().strip().splitlines()
        assert weights[0] == "unit_index,weight"
        assert len(weights) == 1501
        # every reported effect carries a finite CI
        for line in effects[1:]:
            fields = line.split(",")
            assert len(fields) == 5
            assert np.isfinite([float(v) for v in fields[1:]]).all()

    def test_json_output(self, tmp_path):
        data = tmp_path / "data.csv"
        make_survey_like(data)
        out = tmp_path / "run"
        assert main(base_args(data, out, extra=("--format", "json"))) == EXIT_OK
        payload = json.loads((tmp_path / "run_effects.json").read_text())
        assert len(payload) == 10

    def test_zero_one_coding_round_trip(self, tmp_path):
        d1, d2 = tmp_path / "pm1.csv", tmp_path / "01.csv"
        make_survey_like(d1, coding="pm1", seed=4)
        make_survey_like(d2, coding="zero_one", seed=4)
        assert main(base_args(d1, tmp_path / "a")) == EXIT_OK
        assert main(base_args(d2, tmp_path / "b", coding="zero_one")) == EXIT_OK
        a = (tmp_path / "a_effects.csv").read_text()
        b = (tmp_path / "b_effects.csv").read_text()
        assert a == b

    def test_empty_cells_auto_mode_identification_failure(self, tmp_path):
        # dropping two adjacent cells of a three-factor design leaves the
        # pairwise effects unidentified at order-2 retention
        rng = np.random.default_rng(1)
        n = 900
        X = rng.normal(size=(n, 2))
        combos = enumerate_combinations(3)
        Z = combos[rng.integers(0, 6, n)]  # cells 6, 7 never observed
        Y = rng.normal(size=n)
        data = tmp_path / "missing.csv"
        write_csv(
            data,
            ["t1", "t2", "t3", "x1", "x2", "y"],
            np.column_stack([Z, X, Y]).tolist(),
        )
        code = main(
            [
                "estimate",
                "--data", str(data),
                "--factors", "t1,t2,t3",
                "--covariates", "x1,x2",
                "--outcome", "y",
                "--max-order", "2",
                "--unobserved", "auto",
                "--out", str(tmp_path / "x"),
            ]
        )
        assert code == EXIT_IDENTIFICATION

    def test_incomplete_single_cell_runs(self, tmp_path):
        rng = np.random.default_rng(2)
        n = 1400
        X = rng.normal(size=(n, 2))
        combos = enumerate_combinations(3)
        Z = combos[rng.integers(0, 7, n)]  # cell (+1,+1,+1) unobserved
        Y = X[:, 0] + Z[:, 0] + rng.normal(size=n)
        data = tmp_path / "seven.csv"
        write_csv(
            data,
            ["t1", "t2", "t3", "x1", "x2", "y"],
            np.column_stack([Z, X, Y]).tolist(),
        )
        code = main(
            [
                "estimate",
                "--data", str(data),
                "--factors", "t1,t2,t3",
                "--covariates", "x1,x2",
                "--outcome", "y",
                "--max-order", "2",
                "--unobserved", "auto",
                "--out", str(tmp_path / "inc"),
            ]
        )
        assert code == EXIT_OK
        lines = (tmp_path / "inc_effects.csv").read_text().strip().splitlines()
        assert len(lines) == 7  # header + 3 main + 3 pairwise

    def test_missing_column_is_data_error(self, tmp_path):
        data = tmp_path / "data.csv"
        make_survey_like(data, n=200)
        code = main(
            [
                "estimate",
                "--data", str(data),
                "--factors", "t1,t2,t3,t9",
                "--covariates", "x1",
                "--outcome", "y",
                "--out", str(tmp_path / "x"),
            ]
        )
        assert code == EXIT_DATA

    def test_unparseable_value_reports_line(self, tmp_path, capsys):
        data = tmp_path / "bad.csv"
        write_csv(
            data,
            ["t1", "t2", "x1", "y"],
            [[1, -1, 0.5, 1.0], [-1, "oops", 0.1, 2.0]],
        )
        code = main(
            [
                "estimate",
                "--data", str(data),
                "--factors", "t1,t2",
                "--covariates", "x1",
                "--outcome", "y",
                "--out", str(tmp_path / "x"),
            ]
        )
        assert code == EXIT_DATA
        assert "line 3" in capsys.readouterr().err

    def test_config_file(self, tmp_path):
        data = tmp_path / "data.csv"
        make_survey_like(data, n=1200, seed=8)
        cfg = tmp_path / "run.json"
        cfg.write_text(
            json.dumps(
                {
                    "data_path": str(data),
                    "factor_columns": ["t1", "t2", "t3", "t4"],
                    "covariate_columns": ["x1", "x2", "x3", "x4", "x5", "x6"],
                    "outcome_column": "y",
                    "max_order": 1,
                    "out_prefix": str(tmp_path / "cfg"),
                }
            )
        )
        assert main(["estimate", "--config", str(cfg)]) == EXIT_OK
        lines = (tmp_path / "cfg_effects.csv").read_text().strip().splitlines()
        assert len(lines) == 5  # header + 4 main effects


class TestDiagnose:
    def test_round_trip_after_estimate(self, tmp_path):
        data = tmp_path / "data.csv"
        make_survey_like(data)
        out = tmp_path / "run"
        assert main(base_args(data, out)) == EXIT_OK
        code = main(
            [
                "diagnose",
                "--data", str(data),
                "--factors", "t1,t2,t3,t4",
                "--covariates", "x1,x2,x3,x4,x5,x6",
                "--outcome", "y",
                "--max-order", "2",
                "--weights", str(tmp_path / "run_weights.csv"),
                "--out", str(tmp_path / "run"),
            ]
        )
        assert code == EXIT_OK
        rows = (tmp_path / "run_smd.csv").read_text().strip().splitlines()[1:]
        assert len(rows) == 10 * 6
        after = [float(r.split(",")[3]) for r in rows]
        assert max(after) <= 1e-6

    def test_unit_weights_reproduce_before(self, tmp_path):
        data = tmp_path / "data.csv"
        make_survey_like(data, n=400, seed=3)
        wfile = tmp_path / "w.csv"
        write_csv(wfile, ["unit_index", "weight"], [[i, 1.0] for i in range(400)])
        code = main(
            [
                "diagnose",
                "--data", str(data),
                "--factors", "t1,t2,t3,t4",
                "--covariates", "x1,x2,x3,x4,x5,x6",
                "--outcome", "y",
                "--weights", str(wfile),
                "--out", str(tmp_path / "unit"),
            ]
        )
        assert code == EXIT_OK
        rows = (tmp_path / "unit_smd.csv").read_text().strip().splitlines()[1:]
        for r in rows:
            _, _, before, after = r.split(",")
            assert float(before) == pytest.approx(float(after))

    def test_misaligned_weights(self, tmp_path):
        data = tmp_path / "data.csv"
        make_survey_like(data, n=300, seed=5)
        wfile = tmp_path / "w.csv"
        write_csv(wfile, ["unit_index", "weight"], [[i, 1.0] for i in range(299)])
        code = main(
            [
                "diagnose",
                "--data", str(data),
                "--factors", "t1,t2,t3,t4",
                "--covariates", "x1,x2,x3,x4,x5,x6",
                "--outcome", "y",
                "--weights", str(wfile),
                "--out", str(tmp_path / "m"),
            ]
        )
        assert code == EXIT_DATA


class TestSimulate:
    def test_three_factor_row_count(self, tmp_path):
        out = tmp_path / "study"
        code = main(
            [
                "simulate",
                "--scenario", "three-factor",
                "--n", "300",
                "--reps", "2",
                "--seed", "42",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        lines = (tmp_path / "study.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 4 * 3  # four estimators, three effects
        assert (tmp_path / "study.json").exists()

    def test_reps_zero_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(
                [
                    "simulate",
                    "--scenario", "three-factor",
                    "--reps", "0",
                    "--out", str(tmp_path / "s"),
                ]
            )
        assert exc.value.code == 2

    def test_estimator_subset(self, tmp_path):
        out = tmp_path / "sub"
        code = main(
            [
                "simulate",
                "--scenario", "three-factor",
                "--n", "300",
                "--reps", "1",
                "--estimators", "regression",
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        lines = (tmp_path / "sub.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 3
