"""
Command-line entry point: polypin <verb> --config PATH [--out DIR].

Exit codes: 0 success, 2 configuration error or failed conditions,
3 non-convergence, 4 oracle mismatch.
"""

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .config_parser import ExperimentConfig, config_parser
from .environment import (
    Environment,
    constant_environment,
    find_regeneration_times,
    sample_environment,
    uniform01,
)
from .errors import (
    ConfigError,
    EnvironmentRangeError,
    KernelConfigurationError,
    ParameterError,
    PreconditionError,
)
from .gibbs import (
    Pinned,
    pinned_approximant_marginal,
    sample_path,
    two_point_boundary,
    uniqueness_diagnostic,
)
from .hilbert import contraction_audit
from .lattice_potential import Window
from .oracle_suite import run_oracle_suite
from .spectral import (
    dominant_eigenpair,
    localization_fit,
    lyapunov_exponent,
    pullback_eigenfunction,
    verify_eigen_relation,
)
from .transfer import Field, kappa_log_series

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_ORACLE = 4


def provenance(command: str, config: Optional[ExperimentConfig]) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config_sha256": None if config is None else config.sha256,
        "seed": None if config is None else config.seed,
    }


def write_json(path: Path, document: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, meta: dict, header: Sequence[str], rows) -> None:
    """CSV with a leading '#' provenance line; floats as shortest round-trip repr."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _point_columns(d: int, prefix: str = "x") -> List[str]:
    return [f"{prefix}{i + 1}" for i in range(d)]


def build_environment(config: ExperimentConfig, n_lo: int, n_hi: int) -> Environment:
    if config.all_plus:
        return constant_environment(1, n_lo, n_hi)
    return sample_environment(config.seed, n_lo, n_hi)


def _require_conditions(config: ExperimentConfig) -> None:
    report = config.conditions()
    if not report.ok:
        raise PreconditionError(f"Potential fails the standing conditions:{report}")


def cmd_check(config: ExperimentConfig, out: Optional[Path]) -> int:
    report = config.conditions()
    document = {"provenance": provenance("check", config), "report": report.to_dict()}
    if out is None:
        print(json.dumps(document, sort_keys=True, indent=2))
    else:
        write_json(out / "check.json", document)
    return EXIT_OK if report.ok else EXIT_CONFIG


def cmd_eigen(config: ExperimentConfig, out: Path) -> int:
    _require_conditions(config)
    spec, window = config.potential_spec(), config.window()
    env = build_environment(config, -config.max_depth - 1, config.horizon + 2)
    meta = provenance("eigen", config)

    pair = pullback_eigenfunction(
        spec, env, Field.constant(window), config.tol_sup, config.max_depth
    )
    document = {
        "provenance": meta,
        "converged": pair.converged,
        "pullback_depth": pair.pullback_depth,
        "last_change": pair.last_change if math.isfinite(pair.last_change) else None,
        "residual": pair.residual,
        "field": [
            [x, float(v)] for x, v in zip(window.points.tolist(), pair.u.values)
        ],
    }
    if pair.converged:
        residuals = verify_eigen_relation(pair, spec, env, config.horizon)
        document["eigen_residuals_max"] = max(residuals)
        document["localization"] = localization_fit(
            pair.u, config.lambda_target()
        ).to_dict()
        document["lyapunov"] = lyapunov_exponent(pair.kappa_log).to_dict()
        if config.all_plus:
            oracle = dominant_eigenpair(spec, window, 1)
            document["oracle_sup_distance"] = pair.u.sup_distance(oracle.vector)
    else:
        document["partial"] = True

    write_json(out / "eigen.json", document)
    depth = pair.pullback_depth
    write_csv(
        out / "kappa.csv",
        meta,
        ["step", "kappa_log"],
        ((step, float(v)) for step, v in zip(range(-depth + 1, 1), pair.kappa_log)),
    )
    if not pair.converged:
        logger.error("Pullback did not converge; eigen.json is partial")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_lyapunov(config: ExperimentConfig, out: Path) -> int:
    spec, window = config.potential_spec(), config.window()
    horizon = config.lyapunov_horizon
    env = build_environment(config, 0, horizon)
    meta = provenance("lyapunov", config)

    increments, _ = kappa_log_series(spec, env, Field.constant(window), 0, horizon)
    discard = min(2 * window.radius * window.d, horizon // 2)
    estimate = lyapunov_exponent(increments, discard=discard)
    document = {
        "provenance": meta,
        "horizon": horizon,
        "discard": discard,
        "lyapunov": estimate.to_dict(),
    }
    if config.all_plus:
        document["autonomous_log_eigenvalue"] = dominant_eigenpair(
            spec, window, 1
        ).log_eigenvalue

    write_json(out / "lyapunov.json", document)
    write_csv(
        out / "kappa.csv",
        meta,
        ["step", "kappa_log"],
        ((step, float(v)) for step, v in enumerate(increments, start=1)),
    )
    return EXIT_OK


def cmd_gibbs(config: ExperimentConfig, args: argparse.Namespace) -> int:
    spec, window = config.potential_spec(), config.window()
    out: Path = args.out
    d = window.d
    command = f"gibbs {args.gibbs_command}"
    meta = provenance(command, config)

    if args.gibbs_command == "marginal":
        env = build_environment(config, -args.m - 1, args.m + 1)
        marginal = pinned_approximant_marginal(spec, env, args.m, args.n, window)
        rows = (list(x) + [float(p)] for x, p in marginal.rows())
        write_csv(out / "marginal.csv", meta, _point_columns(d) + ["probability"], rows)
    elif args.gibbs_command == "boundary":
        env = build_environment(config, -args.m - 1, args.m + 1)
        joint = two_point_boundary(spec, env, args.l, args.m, window)
        points = window.points.tolist()
        rows = (
            points[i] + points[j] + [float(joint.probabilities[i, j])]
            for i in range(window.size)
            for j in range(window.size)
        )
        header = _point_columns(d, "x") + _point_columns(d, "y") + ["probability"]
        write_csv(out / "boundary.csv", meta, header, rows)
    elif args.gibbs_command == "uniqueness":
        reach = max(args.m1, args.m2)
        env = build_environment(config, -reach - 1, reach + 1)
        report = uniqueness_diagnostic(
            spec,
            env,
            args.m1,
            args.m2,
            args.l,
            window,
            config.coupling_radius,
            config.n2_hat,
        )
        document = {"provenance": meta, "uniqueness": report.to_dict()}
        write_json(out / "uniqueness.json", document)
    else:
        env = build_environment(config, -args.m - 1, args.m + 1)
        origin = (0,) * d
        paths = sample_path(
            spec,
            env,
            -args.m,
            args.m,
            Pinned(origin, origin),
            config.seed,
            args.count,
            window,
        )
        header = ["path"] + [f"t{n}" for n in range(-args.m, args.m + 1)]
        rows = (
            [i] + [":".join(str(c) for c in p) for p in path.key()]
            for i, path in enumerate(paths)
        )
        write_csv(out / "samples.csv", meta, header, rows)
    return EXIT_OK


def _trial_fields(config: ExperimentConfig, window: Window) -> List[Field]:
    """Constant, exponentially decaying and hashed positive fields."""
    decay = np.exp(-config.lambda_target() * window.norms)
    hashed = 0.5 + uniform01(config.seed, np.arange(window.size), 1)
    return [Field.constant(window), Field(window, decay), Field(window, hashed)]


def cmd_hilbert(config: ExperimentConfig, args: argparse.Namespace) -> int:
    _require_conditions(config)
    spec, window = config.potential_spec(), config.window()
    r = config.regeneration_r if args.r is None else args.r
    if r > window.radius:
        raise KernelConfigurationError(
            f"r={r} exceeds the window radius {window.radius}"
        )
    horizon = config.regeneration_search_horizon
    env = build_environment(config, -2 * horizon - r - 1, horizon + r + 1)
    meta = provenance("hilbert", config)

    times = find_regeneration_times(
        env,
        spec,
        config.regeneration_lam(),
        r,
        args.intervals + 1,
        horizon,
        config.k1_hat,
    )
    document = {"provenance": meta, "regeneration": times.to_dict()}
    if len(times.intervals) < 2:
        document["error"] = "fewer than two regeneration intervals within the horizon"
        write_json(args.out / "hilbert.json", document)
        logger.error("Found %d regeneration times; need at least 3", len(times.times))
        return EXIT_NOT_CONVERGED

    earliest = min(times.times)
    fields = [f.normalized() for f in _trial_fields(config, window)]
    audit = contraction_audit(spec, env, times, r, fields)
    document["audit"] = audit.to_dict()
    document["trial_fields_at"] = earliest
    write_json(args.out / "hilbert.json", document)
    return EXIT_OK


def cmd_oracle(config: ExperimentConfig, args: argparse.Namespace) -> int:
    report = run_oracle_suite(
        config.seed,
        args.instances,
        args.max_steps,
        args.max_radius,
        corrupt=args.corrupt_kernel,
    )
    write_json(
        args.out / "oracle.json",
        {"provenance": provenance("oracle", config), "oracle": report.to_dict()},
    )
    if not report.passed:
        for failure in report.failures:
            logger.error("Oracle mismatch: %s", json.dumps(failure, sort_keys=True))
        return EXIT_ORACLE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polypin",
        description="Directed polymers in a random-sign pinning potential.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_common(sub: argparse.ArgumentParser, out_required: bool = True) -> None:
        sub.add_argument("--config", type=Path, required=True, help="JSON config")
        sub.add_argument(
            "--out",
            type=Path,
            required=out_required,
            default=None,
            help="output directory",
        )

    add_common(commands.add_parser("check", help="derived exponents"), False)
    add_common(commands.add_parser("eigen", help="pullback eigenfunction"))
    add_common(commands.add_parser("lyapunov", help="forward Lyapunov estimate"))

    hilbert = commands.add_parser("hilbert", help="contraction audit")
    add_common(hilbert)
    hilbert.add_argument("--r", type=int, default=None)
    hilbert.add_argument("--intervals", type=int, default=3)

    oracle = commands.add_parser("oracle", help="enumeration equivalence suite")
    add_common(oracle)
    oracle.add_argument("--instances", type=int, default=100)
    oracle.add_argument("--max-steps", type=int, default=6)
    oracle.add_argument("--max-radius", type=int, default=3)
    oracle.add_argument(
        "--corrupt-kernel",
        action="store_true",
        help="perturb partition functions; the suite must fail",
    )

    gibbs = commands.add_parser("gibbs", help="finite-volume Gibbs measures")
    gibbs_commands = gibbs.add_subparsers(dest="gibbs_command", required=True)
    marginal = gibbs_commands.add_parser("marginal")
    add_common(marginal)
    marginal.add_argument("--n", type=int, required=True)
    marginal.add_argument("--m", type=int, required=True)
    boundary = gibbs_commands.add_parser("boundary")
    add_common(boundary)
    boundary.add_argument("--l", type=int, required=True)
    boundary.add_argument("--m", type=int, required=True)
    uniqueness = gibbs_commands.add_parser("uniqueness")
    add_common(uniqueness)
    uniqueness.add_argument("--l", type=int, required=True)
    uniqueness.add_argument("--m1", type=int, required=True)
    uniqueness.add_argument("--m2", type=int, required=True)
    sample = gibbs_commands.add_parser("sample")
    add_common(sample)
    sample.add_argument("--count", type=int, required=True)
    sample.add_argument("--m", type=int, default=10)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )

    try:
        config = config_parser(args.config)
        if args.command == "check":
            return cmd_check(config, args.out)
        if args.command == "eigen":
            return cmd_eigen(config, args.out)
        if args.command == "lyapunov":
            return cmd_lyapunov(config, args.out)
        if args.command == "gibbs":
            return cmd_gibbs(config, args)
        if args.command == "hilbert":
            return cmd_hilbert(config, args)
        return cmd_oracle(config, args)
    except (
        ConfigError,
        PreconditionError,
        KernelConfigurationError,
        ParameterError,
        EnvironmentRangeError,
    ) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
