"""
Command-line front end.

    causalfuse estimate --data FILE [--schema FILE] --method aipw ...
    causalfuse sensitivity --data FILE --delta-grid=-1:1:0.25 ...
    causalfuse simulate --preset paper --seed 1 --out-dir results/
    causalfuse plan --c1 1 --c2 4 --budget 1000 --r2 0.5

Reports are JSON with sorted keys and no timestamps; each embeds the
package version, the configuration, its SHA-256 and the seed. Exit codes:
0 success, 2 data or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import set_num_threads
from .data import DatasetSchema, Design, FusedDataset, load_csv
from .design import AllocationProblem, allocation_variance, optimal_allocation
from .errors import DataError, NumericalError
from .estimators import (
    Estimand,
    EstimatorOptions,
    Method,
    error_prone_pair,
    initial_estimate,
)
from .fusion import (
    BootstrapSpec,
    FusionInputs,
    FusionResult,
    ResampleScheme,
    VarianceSource,
    fuse,
    fuse_ratio_estimand,
    sensitivity_from_result,
)
from .matching import DistanceScaling
from .sim import SimConfig, preset, run_monte_carlo

logger = logging.getLogger(__name__)

EXIT_DATA = 2
EXIT_NUMERICAL = 3

_REGIMES = {"srs": Design.SIMPLE_RANDOM, "known-pi": Design.KNOWN_INCLUSION}


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _envelope(config: dict, seed: int | None, body: dict) -> dict:
    return {
        "version": __version__,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        **body,
    }


def _write_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).write_text(text, encoding="utf-8")


def _file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _methods(text: str) -> tuple[Method, ...]:
    try:
        return tuple(Method(m.strip()) for m in text.split(",") if m.strip())
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def parse_delta_grid(text: str) -> np.ndarray:
    """Expand ``a:b:step`` to a, a + step, ..., b (inclusive)."""
    try:
        start, stop, step = (float(part) for part in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"delta grid must be 'a:b:step', got {text!r}"
        ) from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("delta grid needs a <= b, step > 0")
    return np.arange(start, stop + step / 2.0, step)


def _add_estimation_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="fused dataset CSV")
    parser.add_argument("--schema", help="JSON mapping of column roles")
    parser.add_argument(
        "--method",
        type=_methods,
        default=(Method.AIPW,),
        help="initial method(s), comma separated: reg, ipw, aipw, match",
    )
    parser.add_argument(
        "--ep-methods",
        type=_methods,
        default=None,
        help="error-prone methods fused with every initial method "
        "(default: the same method)",
    )
    parser.add_argument(
        "--variance",
        choices=[v.value for v in VarianceSource],
        default=VarianceSource.ANALYTIC.value,
    )
    parser.add_argument("--boot-reps", type=int, default=2000)
    parser.add_argument(
        "--scheme",
        choices=[s.value for s in ResampleScheme],
        help="bootstrap scheme (default: joint, or weighted for known-pi)",
    )
    parser.add_argument("--seed", type=int)
    parser.add_argument("--level", type=float, default=0.95)
    parser.add_argument(
        "--estimand",
        choices=[
            Estimand.ATE.value,
            Estimand.LOG_CRR.value,
            Estimand.LOG_COR.value,
        ],
        default=Estimand.ATE.value,
    )
    parser.add_argument("--regime", choices=sorted(_REGIMES), default="srs")
    parser.add_argument("--M", type=int, default=1, help="matches per unit")
    parser.add_argument(
        "--distance-scaling",
        choices=[s.value for s in DistanceScaling],
        default=DistanceScaling.RAW.value,
    )
    parser.add_argument(
        "--main-fixed",
        action="store_true",
        help="treat main-data error-prone estimates as fixed",
    )
    parser.add_argument("--out", help="report path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalfuse",
        description="Fuse validation-data causal estimators with error-prone "
        "main-data estimators.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, help="worker thread cap")
    parser.add_argument("--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    estimate = commands.add_parser("estimate", help="fused estimates")
    _add_estimation_arguments(estimate)
    estimate.set_defaults(func=cmd_estimate)

    sensitivity = commands.add_parser(
        "sensitivity", help="estimates under a shift between datasets"
    )
    _add_estimation_arguments(sensitivity)
    sensitivity.add_argument(
        "--delta-grid", type=parse_delta_grid, required=True
    )
    sensitivity.add_argument("--csv", help="also write the curve as CSV")
    sensitivity.set_defaults(func=cmd_sensitivity)

    simulate = commands.add_parser("simulate", help="Monte Carlo study")
    source = simulate.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", help="named configuration set")
    source.add_argument("--config", help="JSON simulation configuration")
    simulate.add_argument("--seed", type=int, required=True)
    simulate.add_argument("--reps", type=int, help="override replications")
    simulate.add_argument("--out-dir", default=".")
    simulate.set_defaults(func=cmd_simulate)

    plan = commands.add_parser("plan", help="optimal two-phase allocation")
    plan.add_argument("--c1", type=float, required=True)
    plan.add_argument("--c2", type=float, required=True)
    plan.add_argument("--budget", type=float, required=True)
    plan.add_argument("--r2", type=float, required=True)
    plan.add_argument("--out")
    plan.set_defaults(func=cmd_plan)
    return parser


# ---------------------------------------------------------------------------
# estimate / sensitivity
# ---------------------------------------------------------------------------


def _estimation_config(args: argparse.Namespace) -> dict:
    return {
        "command": args.command,
        "data": args.data,
        "data_sha256": _file_digest(args.data),
        "schema": args.schema,
        "method": [str(m) for m in args.method],
        "ep_methods": None
        if args.ep_methods is None
        else [str(m) for m in args.ep_methods],
        "variance": args.variance,
        "boot_reps": args.boot_reps,
        "scheme": args.scheme,
        "level": args.level,
        "estimand": args.estimand,
        "regime": args.regime,
        "M": args.M,
        "distance_scaling": args.distance_scaling,
        "main_fixed": args.main_fixed,
    }


def _load(args: argparse.Namespace) -> FusedDataset:
    schema = DatasetSchema.from_json(args.schema) if args.schema else None
    d = load_csv(args.data, schema)
    regime = _REGIMES[args.regime]
    if regime is Design.SIMPLE_RANDOM and d.pi is not None:
        raise DataError(
            "inclusion probabilities require known-inclusion regime"
        )
    if regime is Design.KNOWN_INCLUSION and d.pi is None:
        raise DataError(
            "known-inclusion regime needs an inclusion probability column"
        )
    return d


def _variance(args: argparse.Namespace, regime: Design):
    if args.variance == VarianceSource.ANALYTIC:
        return VarianceSource.ANALYTIC
    if args.scheme is not None:
        scheme = ResampleScheme(args.scheme)
    elif regime is Design.KNOWN_INCLUSION:
        scheme = ResampleScheme.WEIGHTED
    else:
        scheme = ResampleScheme.JOINT
    return BootstrapSpec(args.boot_reps, args.seed, scheme)


def _inputs(
    d: FusedDataset,
    initial: Method,
    error_prone: tuple[Method, ...],
    options: EstimatorOptions,
    main_fixed: bool,
) -> FusionInputs:
    return FusionInputs(
        tau2=initial_estimate(d, initial, options),
        ep_pairs=tuple(error_prone_pair(d, m, options) for m in error_prone),
        main_fixed=main_fixed,
    )


def _fuse_all(args: argparse.Namespace) -> dict[str, FusionResult]:
    if args.variance == VarianceSource.BOOTSTRAP and args.seed is None:
        raise DataError("--seed is required with the bootstrap variance")
    d = _load(args)
    variance = _variance(args, d.design)
    estimand = Estimand(args.estimand)
    options = EstimatorOptions(
        M=args.M, distance_scaling=DistanceScaling(args.distance_scaling)
    )

    results: dict[str, FusionResult] = {}
    for initial in args.method:
        error_prone = args.ep_methods or (initial,)
        label = f"{initial}&{'+'.join(error_prone)}"
        logger.info("fusing %s", label)
        if estimand.is_ratio:
            arms = [
                _inputs(
                    d,
                    initial,
                    error_prone,
                    replace(options, estimand=target),
                    args.main_fixed,
                )
                for target in (Estimand.TREATED_MEAN, Estimand.CONTROL_MEAN)
            ]
            results[label] = fuse_ratio_estimand(
                arms[0], arms[1], estimand, variance, args.level
            )
        else:
            inputs = _inputs(d, initial, error_prone, options, args.main_fixed)
            results[label] = fuse(inputs, variance, args.level)
    return results


def cmd_estimate(args: argparse.Namespace) -> None:
    results = _fuse_all(args)
    body = {"results": {k: r.to_dict() for k, r in results.items()}}
    _write_json(_envelope(_estimation_config(args), args.seed, body), args.out)


def _delta_rows(grid: np.ndarray, L: int) -> np.ndarray:
    # one shift applied to every error-prone component
    return grid if L == 1 else np.repeat(grid[:, None], L, axis=1)


def cmd_sensitivity(args: argparse.Namespace) -> None:
    results = _fuse_all(args)
    curves = {}
    records = []
    for label, result in results.items():
        rows = _delta_rows(args.delta_grid, result.ep_diff.shape[0])
        points = sensitivity_from_result(result, rows)
        curves[label] = [
            {
                "delta": list(p.delta),
                "tau_adj": p.tau_adj,
                "lower": p.ci[0],
                "upper": p.ci[1],
            }
            for p in points
        ]
        records.extend(
            {
                "combination": label,
                "delta": p.delta[0],
                "tau_adj": p.tau_adj,
                "lower": p.ci[0],
                "upper": p.ci[1],
            }
            for p in points
        )

    config = _estimation_config(args)
    config["delta_grid"] = args.delta_grid.tolist()
    body = {
        "curves": curves,
        "results": {k: r.to_dict() for k, r in results.items()},
    }
    _write_json(_envelope(config, args.seed, body), args.out)
    if args.csv:
        pd.DataFrame.from_records(records).to_csv(
            args.csv, index=False, float_format="%.17g"
        )


# ---------------------------------------------------------------------------
# simulate / plan
# ---------------------------------------------------------------------------


def _simulation_configs(args: argparse.Namespace) -> tuple[SimConfig, ...]:
    if args.preset:
        configs = preset(args.preset)
    else:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        entries = raw if isinstance(raw, list) else [raw]
        configs = tuple(SimConfig.from_dict(e) for e in entries)
    overrides: dict = {"seed": args.seed}
    if args.reps is not None:
        overrides["reps"] = args.reps
    return tuple(replace(c, **overrides) for c in configs)


def cmd_simulate(args: argparse.Namespace) -> None:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for config in _simulation_configs(args):
        report = run_monte_carlo(config)
        stem = f"sim_{config.design}_n1_{config.n1}_n2_{config.n2}"
        payload = _envelope(config.to_dict(), config.seed, report.to_dict())
        _write_json(payload, str(out_dir / f"{stem}.json"))
        report.to_csv(out_dir / f"{stem}.csv")
        logger.info("wrote %s", out_dir / stem)


def cmd_plan(args: argparse.Namespace) -> None:
    problem = AllocationProblem(args.c1, args.c2, args.budget, args.r2)
    allocation = optimal_allocation(problem)
    config = {
        "command": "plan",
        "c1": args.c1,
        "c2": args.c2,
        "budget": args.budget,
        "r2": args.r2,
    }
    body = {
        "allocation": allocation.to_dict(),
        "relative_variance": allocation_variance(
            allocation.n1, allocation.n2, args.r2
        ),
    }
    _write_json(_envelope(config, None, body), args.out)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)

    try:
        if args.threads is not None:
            set_num_threads(args.threads)
        args.func(args)
    except (DataError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
