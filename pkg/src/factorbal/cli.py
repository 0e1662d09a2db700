"""Command-line interface: estimate effects on CSV data, run simulation
studies, and report covariate balance diagnostics.

Exit codes: 0 success, 2 data or usage error, 3 identification error,
4 infeasible balance constraints, 5 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .balance import BasisSpec, build_balance_system
from .data import Dataset
from .design import (
    FactorialDesign,
    build_incomplete_design,
    combination_bits,
    effect_index_set,
    enumerate_combinations,
    full_design,
)
from .errors import (
    ConfigurationError,
    DataError,
    FactorbalError,
    IdentificationError,
    InfeasibleProblemError,
)
from .estimation import smd_report, weighted_estimates
from .simulation import ESTIMATORS, Scenario, run_study
from .solver import INFEASIBLE, SolverOptions, solve_dual

EXIT_OK = 0
EXIT_DATA = 2
EXIT_IDENTIFICATION = 3
EXIT_INFEASIBLE = 4
EXIT_NONCONVERGENCE = 5


@dataclass
class RunConfig:
    """Configuration of an estimation or diagnostics run."""

    data_path: str
    factor_columns: list[str]
    covariate_columns: list[str]
    outcome_column: str
    factor_coding: str = "pm1"
    max_order: int = 2
    model_flavor: str = "heterogeneous"
    unobserved: str | list = "none"  # "none", "auto", or explicit combinations
    out_prefix: str = "factorbal"
    out_format: str = "csv"
    solver: SolverOptions = field(default_factory=SolverOptions)

    def validate(self) -> None:
        cols = self.factor_columns + self.covariate_columns + [self.outcome_column]
        if len(set(cols)) != len(cols):
            raise ConfigurationError("factor, covariate and outcome columns overlap")
        if self.factor_coding not in ("pm1", "zero_one"):
            raise ConfigurationError(f"unknown factor coding {self.factor_coding!r}")
        if self.max_order < 1:
            raise ConfigurationError("max interaction order must be at least 1")
        if self.out_format not in ("csv", "json"):
            raise ConfigurationError(f"unknown output format {self.out_format!r}")


def read_table(path: str) -> tuple[list[str], list[list[str]]]:
    """Read a comma-separated file with a mandatory header row."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if not body:
        raise DataError(f"{path} has a header but no data rows")
    width = len(header)
    for i, row in enumerate(body, start=2):
        if len(row) != width:
            raise DataError(f"{path} line {i}: expected {width} fields, got {len(row)}")
    return header, body


def _column(header: list[str], body: list[list[str]], name: str, path: str) -> np.ndarray:
    if name not in header:
        raise DataError(f"{path}: column {name!r} not found in header")
    j = header.index(name)
    vals = np.empty(len(body))
    for i, row in enumerate(body):
        try:
            vals[i] = float(row[j])
        except ValueError:
            raise DataError(
                f"{path} line {i + 2}: cannot parse {row[j]!r} in column {name!r}"
            ) from None
    return vals


def load_dataset(config: RunConfig) -> Dataset:
    header, body = read_table(config.data_path)
    z_cols = [_column(header, body, c, config.data_path) for c in config.factor_columns]
    Z = np.column_stack(z_cols)
    if config.factor_coding == "zero_one":
        if not np.all(np.isin(Z, (0, 1))):
            raise DataError("factor columns must contain only 0/1 under zero_one coding")
        Z = 2 * Z - 1
    if not np.all(np.isin(Z, (-1, 1))):
        raise DataError("factor columns must contain only -1/+1 under pm1 coding")
    X = np.column_stack(
        [_column(header, body, c, config.data_path) for c in config.covariate_columns]
    )
    Y = _column(header, body, config.outcome_column, config.data_path)
    return Dataset(Z.astype(int), X, Y)


def resolve_design(config: RunConfig, dataset: Dataset) -> FactorialDesign:
    k = dataset.k
    k_prime = min(config.max_order, k)
    if config.unobserved == "none" or config.unobserved is None:
        return full_design(k, k_prime)
    if config.unobserved == "auto":
        cells = enumerate_combinations(k)
        present = set(int(b) for b in combination_bits(dataset.Z))
        missing = [c for c, b in zip(cells, combination_bits(cells)) if int(b) not in present]
        if not missing:
            return full_design(k, k_prime)
        return build_incomplete_design(k, k_prime, np.array(missing))
    return build_incomplete_design(k, k_prime, np.asarray(config.unobserved))


def _write_effects(path_prefix: str, fmt: str, estimates) -> list[str]:
    written = []
    rows = [
        {
            "effect": e.effect.label(),
            "estimate": e.tau_hat,
            "variance": e.sigma2_hat,
            "ci_low": e.ci_low,
            "ci_high": e.ci_high,
        }
        for e in estimates
    ]
    if fmt == "json":
        out = Path(f"{path_prefix}_effects.json")
        out.write_text(json.dumps(rows, indent=2))
        written.append(str(out))
    else:
        out = Path(f"{path_prefix}_effects.csv")
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["effect", "estimate", "variance", "ci_low", "ci_high"])
            for r in rows:
                w.writerow(
                    [
                        r["effect"],
                        f"{r['estimate']:.10g}",
                        f"{r['variance']:.10g}",
                        f"{r['ci_low']:.10g}",
                        f"{r['ci_high']:.10g}",
                    ]
                )
        written.append(str(out))
    return written


def _write_weights(path_prefix: str, weights: np.ndarray) -> str:
    out = Path(f"{path_prefix}_weights.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_index", "weight"])
        for i, v in enumerate(weights):
            w.writerow([i, f"{v:.12g}"])
    return str(out)


def cmd_estimate(config: RunConfig) -> int:
    config.validate()
    dataset = load_dataset(config)
    design = resolve_design(config, dataset)
    basis = BasisSpec(model_flavor=config.model_flavor)
    system = build_balance_system(dataset, basis, design, drop_redundant="numeric")
    solution = solve_dual(system, config.solver)
    if solution.status == INFEASIBLE:
        print(
            "error: balance constraints are infeasible on this sample; "
            f"largest residual at best iterate {solution.grad_norm:.3e}",
            file=sys.stderr,
        )
        return EXIT_INFEASIBLE
    if not solution.converged:
        print(
            f"error: solver stopped after {solution.iterations} iterations with "
            f"gradient norm {solution.grad_norm:.3e}",
            file=sys.stderr,
        )
        return EXIT_NONCONVERGENCE
    effects = effect_index_set(dataset.k, design.k_prime)
    estimates = weighted_estimates(dataset, system, solution.weights, solution.lam, effects)
    written = _write_effects(config.out_prefix, config.out_format, estimates)
    written.append(_write_weights(config.out_prefix, solution.weights))
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_diagnose(config: RunConfig, weights_path: str) -> int:
    config.validate()
    dataset = load_dataset(config)
    design = resolve_design(config, dataset)
    header, body = read_table(weights_path)
    if "weight" not in header:
        raise DataError(f"{weights_path}: missing 'weight' column")
    weights = _column(header, body, "weight", weights_path)
    if "unit_index" in header:
        idx = _column(header, body, "unit_index", weights_path)
        if not np.array_equal(idx, np.arange(len(idx))):
            raise DataError(f"{weights_path}: unit_index must be 0..N-1 in order")
    if weights.shape[0] != dataset.n:
        raise DataError(
            f"{weights_path} has {weights.shape[0]} weights for {dataset.n} data rows"
        )
    effects = effect_index_set(dataset.k, design.k_prime)
    rows = smd_report(dataset, weights, effects, design)
    out = Path(f"{config.out_prefix}_smd.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["effect", "covariate", "smd_before", "smd_after"])
        for r in rows:
            if r.skipped:
                print(
                    f"note: covariate {config.covariate_columns[r.covariate]} has zero "
                    "spread; skipped",
                    file=sys.stderr,
                )
                continue
            w.writerow(
                [
                    r.effect.label(),
                    config.covariate_columns[r.covariate],
                    f"{r.before:.10g}",
                    f"{r.after:.10g}",
                ]
            )
    print(f"wrote {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = Scenario(
        name=args.scenario.replace("-", "_"),
        n=args.n,
        outcome=args.outcome,
        hetero_c=args.hetero_c,
        seed=args.seed,
    )
    estimators = (
        tuple(e.strip().replace("-", "_") for e in args.estimators.split(","))
        if args.estimators
        else (
            ESTIMATORS
            if scenario.name == "three_factor"
            else ("regression", "weighting_interaction")
        )
    )
    report = run_study(scenario, args.reps, estimators, parallelism=args.threads)
    base = Path(args.out)
    report.to_csv(base.with_suffix(".csv"))
    report.to_json(base.with_suffix(".json"))
    print(f"wrote {base.with_suffix('.csv')} and {base.with_suffix('.json')}")
    return EXIT_OK


def _add_data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="input CSV path")
    p.add_argument("--factors", help="comma-separated factor column names")
    p.add_argument("--covariates", help="comma-separated covariate column names")
    p.add_argument("--outcome", help="outcome column name")
    p.add_argument("--coding", choices=["pm1", "zero_one"], default=None)
    p.add_argument("--max-order", type=int, default=None)
    p.add_argument(
        "--flavor", choices=["additive", "heterogeneous"], default=None
    )
    p.add_argument(
        "--unobserved",
        default=None,
        help="'none', 'auto' (treat empty cells as unobserved), or a "
        "semicolon-separated list like '1,1,-1;1,1,1'",
    )
    p.add_argument("--out", default=None, help="output path prefix")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--max-iters", type=int, default=None)


def _build_config(args) -> RunConfig:
    file_cfg = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc

    def pick(flag_value, key, default=None):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key, default)

    def split_cols(v):
        if v is None:
            return None
        if isinstance(v, list):
            return v
        return [c.strip() for c in str(v).split(",") if c.strip()]

    data_path = pick(args.data, "data_path")
    factors = split_cols(pick(args.factors, "factor_columns"))
    covariates = split_cols(pick(args.covariates, "covariate_columns"))
    outcome = pick(args.outcome, "outcome_column")
    if not data_path or not factors or not covariates or not outcome:
        raise ConfigurationError(
            "data path, factor, covariate and outcome columns are all required "
            "(via flags or --config)"
        )
    unobserved = pick(args.unobserved, "unobserved_combinations", "none")
    if isinstance(unobserved, str) and unobserved not in ("none", "auto"):
        cells = []
        for part in unobserved.split(";"):
            cells.append([int(v) for v in part.split(",")])
        unobserved = cells
    solver = SolverOptions()
    max_iters = pick(args.max_iters, "max_iters")
    if max_iters is not None:
        solver = SolverOptions(max_iters=int(max_iters))
    return RunConfig(
        data_path=data_path,
        factor_columns=factors,
        covariate_columns=covariates,
        outcome_column=outcome,
        factor_coding=pick(args.coding, "factor_coding", "pm1"),
        max_order=int(pick(args.max_order, "max_order", 2)),
        model_flavor=pick(args.flavor, "model_flavor", "heterogeneous"),
        unobserved=unobserved,
        out_prefix=pick(args.out, "out_prefix", "factorbal"),
        out_format=pick(args.format, "out_format", "csv"),
        solver=solver,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factorbal",
        description="Balancing weights for factorial effects in observational data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="estimate factorial effects from a CSV file")
    _add_data_options(p_est)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo study")
    p_sim.add_argument(
        "--scenario", choices=["three-factor", "five-factor"], required=True
    )
    p_sim.add_argument("--n", type=int, default=1000)
    p_sim.add_argument("--reps", type=int, default=1000)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--outcome", choices=["Y1", "Y2", "Y3"], default="Y1")
    p_sim.add_argument(
        "--estimators",
        default=None,
        help="comma-separated subset of: " + ", ".join(ESTIMATORS),
    )
    p_sim.add_argument("--hetero-c", type=float, default=None)
    p_sim.add_argument("--threads", type=int, default=1)
    p_sim.add_argument("--out", default="study")

    p_diag = sub.add_parser("diagnose", help="covariate balance diagnostics")
    _add_data_options(p_diag)
    p_diag.add_argument("--weights", required=True, help="weights CSV from estimate")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(_build_config(args))
        if args.command == "diagnose":
            return cmd_diagnose(_build_config(args), args.weights)
        if args.command == "simulate":
            if args.reps < 1:
                parser.error("--reps must be at least 1")
            if args.n < 100:
                parser.error("--n must be at least 100")
            return cmd_simulate(args)
        parser.error(f"unknown command {args.command}")
    except IdentificationError as exc:
        print(f"identification error: {exc}", file=sys.stderr)
        return EXIT_IDENTIFICATION
    except InfeasibleProblemError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FactorbalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
