"""Command line entrypoint for recovery runs and theory experiments."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
from typing import Any, Callable

import numpy as np

from alecton import __version__
from alecton.algorithm import ComponentError, DivergenceError, one_at_a_time, recover
from alecton.analysis import (
    divergence_demo,
    failure_bound,
    lower_bound_experiment,
    step_schedule,
    stuck_demo,
    z1_closed_form,
    zp_monte_carlo,
)
from alecton.config import (
    SAMPLER_CHOICES,
    ConfigError,
    apply_cli_overrides,
    load_config,
    resolve_alecton_config,
    validate_config,
)
from alecton.linalg import LinalgError
from alecton.models import AlectonConfig, RecoveryResult
from alecton.sampling import ParameterError, Sampler, make_sampler, wrap_noisy
from alecton.storage import StorageError, read_triplets, read_truth, write_csv, write_trace, write_truth
from alecton.trials import run_trials
from alecton.truth import (
    COHERENCE_MODES,
    GroundTruth,
    ProjectionTruth,
    TripletTruth,
    estimate_rectangular,
    synthetic_truth,
)
from alecton.utils import derive_seed, make_rng, parse_float_list, parse_int_list, wilson_interval

LOGGER = logging.getLogger(__name__)

DEFAULT_ZP_PS = "1,2,5,20"
DEFAULT_ZP_GAMMAS = ",".join(f"{0.01 * k:.2f}" for k in range(11))
DEFAULT_ZP_SAMPLES = 100_000
BOUND_ZP_SAMPLES = 10_000
STUCK_ESCAPE_TOL = 1e-3
STUCK_MIN_DISTANCE = 3.0


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_input_flags(cmd: argparse.ArgumentParser) -> None:
    cmd.add_argument("--truth", help="Spectral ground-truth file written by synth")
    cmd.add_argument("--triplets", help="row,col,value file of rectangular data")
    cmd.add_argument("--rows", type=int, help="Row count for --triplets")
    cmd.add_argument("--cols", type=int, help="Column count for --triplets")


def _add_run_flags(cmd: argparse.ArgumentParser) -> None:
    _add_input_flags(cmd)
    cmd.add_argument("--config", help="Optional JSON run configuration")
    cmd.add_argument("--seed", type=int, help="64-bit seed (default 0)")
    cmd.add_argument("--eta", type=float, help="Step size (default: largest step with gamma = 1)")
    cmd.add_argument("--k-steps", type=int, help="Angular steps (default ceil(50 n ln n / epsilon))")
    cmd.add_argument("--l-steps", type=int, help="Radial samples (default 1000)")
    cmd.add_argument("--p", type=int, help="Rank to recover (default 1)")
    cmd.add_argument("--q", type=int, help="Success subspace dimension (default p)")
    cmd.add_argument("--epsilon", type=float, help="Success threshold (default 0.1)")
    cmd.add_argument("--eigengap", type=float, help="Known lambda_q - lambda_q+1 when no truth spectrum is available")
    cmd.add_argument("--sampler", choices=sorted(SAMPLER_CHOICES), help="Sampling model (default entrywise)")
    cmd.add_argument("--m-keep", type=int, help="Revealed coordinates per subspace sample")
    cmd.add_argument("--noise-add", type=float, help="Additive noise standard deviation")
    cmd.add_argument("--noise-mul", type=float, help="Multiplicative noise standard deviation")
    cmd.add_argument("--renorm-every", type=int, help="Renormalise Y every N steps, 0 disables (default 1000)")
    cmd.add_argument("--trace-every", type=int, help="Trace interval (default max(1, K/1000))")
    cmd.add_argument("--angular-only", action="store_true", help="Skip the radial phase")
    cmd.add_argument("--force", action="store_true", help="Run even if the step size condition fails")
    cmd.add_argument("--threads", type=int, help="Worker threads for independent trials")


def build_parser() -> _Parser:
    parser = _Parser(prog="alecton-studio", description="Stochastic low-rank PSD recovery experiments")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    subparsers = parser.add_subparsers(dest="command", required=True)

    synth_cmd = subparsers.add_parser("synth", help="Write a synthetic spectral ground truth")
    synth_cmd.add_argument("--n", type=int, required=True, help="Matrix dimension")
    synth_cmd.add_argument("--rank", type=int, required=True, help="Number of nonzero eigenvalues")
    synth_cmd.add_argument("--eigenvalues", help="Comma-separated descending eigenvalues (default rank..1)")
    synth_cmd.add_argument("--coherence", choices=COHERENCE_MODES, default="random", help="Eigenvector basis")
    synth_cmd.add_argument("--seed", type=int, default=0)
    synth_cmd.add_argument("--out", default="truth.txt")

    run_cmd = subparsers.add_parser("run", help="Recover a low-rank factor and write its trace CSV")
    _add_run_flags(run_cmd)
    run_cmd.add_argument("--trials", type=int, help="Independent seeded runs, one trace file each")
    run_cmd.add_argument("--out", default="trace.csv")

    oaat_cmd = subparsers.add_parser("oaat", help="Recover --p components one at a time by deflation")
    _add_run_flags(oaat_cmd)
    oaat_cmd.add_argument("--out", default="oaat.csv")

    zp_cmd = subparsers.add_parser("zp", help="Tabulate the initialisation failure term")
    zp_cmd.add_argument("--p-list", default=DEFAULT_ZP_PS)
    zp_cmd.add_argument("--gammas", default=DEFAULT_ZP_GAMMAS)
    zp_cmd.add_argument("--samples", type=int, default=DEFAULT_ZP_SAMPLES)
    zp_cmd.add_argument("--seed", type=int, default=0)
    zp_cmd.add_argument("--threads", type=int, default=1)
    zp_cmd.add_argument("--out", default="zp.csv")

    demo_cmd = subparsers.add_parser("demo", help="Run a counterexample or the rate lower bound")
    demo_cmd.add_argument("kind", choices=("diverge", "stuck", "lowerbound"))
    demo_cmd.add_argument("--alpha", type=float, help="Step size (diverge: 1.0, stuck: 0.01)")
    demo_cmd.add_argument("--c", type=float, default=2.0, help="Growth constant for diverge")
    demo_cmd.add_argument("--x0", type=float, default=2.0, help="Start point for diverge")
    demo_cmd.add_argument("--y0", default="0,0.5", help="Start point for stuck")
    demo_cmd.add_argument("--steps", type=int, help="Iterations (diverge: 20, stuck: 10000)")
    demo_cmd.add_argument("--n", type=int, default=32, help="Dimension for lowerbound")
    demo_cmd.add_argument("--k-steps", type=int, default=10_000, help="Steps for lowerbound")
    demo_cmd.add_argument("--trials", type=int, default=500, help="Trials for lowerbound")
    demo_cmd.add_argument("--schedule", choices=("constant", "harmonic", "aggressive"), default="constant")
    demo_cmd.add_argument("--eta0", type=float, default=0.01, help="Base step for lowerbound schedules")
    demo_cmd.add_argument("--seed", type=int, default=0)

    ingest_cmd = subparsers.add_parser("ingest", help="Validate a triplet file and print its statistics")
    ingest_cmd.add_argument("--triplets", required=True)
    ingest_cmd.add_argument("--rows", type=int, required=True)
    ingest_cmd.add_argument("--cols", type=int, required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
    )

    handler = COMMANDS[args.command]
    try:
        return handler(args)
    except (ConfigError, ParameterError, StorageError) as exc:
        LOGGER.error("Config error: %s", exc)
        return 1
    except OSError as exc:
        LOGGER.error("I/O error: %s", exc)
        return 1
    except (DivergenceError, LinalgError, ComponentError) as exc:
        LOGGER.error("Run failed: %s", exc)
        return 2


def _check_output(path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise ConfigError(f"output directory does not exist: {directory}")


def _load_run_config(args: argparse.Namespace) -> dict[str, Any]:
    config = load_config(args.config)
    config = apply_cli_overrides(config, vars(args))
    validate_config(config)
    return config


def _load_truth(args: argparse.Namespace, sampler_kind: str) -> GroundTruth:
    if args.truth and args.triplets:
        raise ConfigError("use either --truth or --triplets, not both")
    if args.triplets:
        if args.rows is None or args.cols is None:
            raise ConfigError("--triplets needs --rows and --cols")
        if not os.path.isfile(args.triplets):
            raise ConfigError(f"triplet file not found: {args.triplets}")
        return read_triplets(args.triplets, args.rows, args.cols)
    if not args.truth:
        raise ConfigError("--truth or --triplets is required")
    if not os.path.isfile(args.truth):
        raise ConfigError(f"truth file not found: {args.truth}")
    truth = read_truth(args.truth)
    if sampler_kind in {"subspace", "subspace-split"}:
        return ProjectionTruth(truth.eigenvectors)
    return truth


def _build_sampler(config: dict[str, Any], truth: GroundTruth) -> Sampler:
    sampler = make_sampler(config["sampler"], truth, config.get("m_keep"))
    noise = config.get("noise", {})
    return wrap_noisy(sampler, noise.get("additive", 0.0), noise.get("multiplicative", 0.0))


def _resolve(config: dict[str, Any], truth: GroundTruth, sampler: Sampler) -> AlectonConfig:
    q = int(config.get("q") or config.get("p") or 1)
    return resolve_alecton_config(config, truth.dim, truth.eigengap(q), sampler.params.sigma_a_sq)


def _meta(command: str, config: dict[str, Any], run_config: AlectonConfig, **extra: Any) -> dict[str, Any]:
    meta: dict[str, Any] = {
        "command": command,
        "version": __version__,
        "sampler": config["sampler"],
        "m_keep": config.get("m_keep"),
        "noise": dict(config.get("noise", {})),
        "force": bool(config.get("force")),
        "angular_only": bool(config.get("angular_only")),
        "config": dataclasses.asdict(run_config),
    }
    meta.update(extra)
    return meta


def _steps(result: RecoveryResult, k_steps: int) -> int:
    trace = result.trace
    if trace.first_success is not None:
        return trace.first_success
    return trace.points[-1].step if trace.points else k_steps


def format_summary(result: RecoveryResult, k_steps: int, angular_only: bool) -> str:
    rho = result.trace.final_rho
    line = (
        f"converged={str(result.trace.converged).lower()} steps={_steps(result, k_steps)} "
        f"rho_final={(rho if rho is not None else math.nan):.6g} wall_ms={result.wall_ms:.1f}"
    )
    if not angular_only and result.r_bar is not None:
        line += f" radial_trace={float(np.trace(result.r_bar)):.6g} clipped={result.clipped}"
    return line


def _trial_path(out: str, trial: int, trials: int) -> str:
    if trials == 1:
        return out
    root, ext = os.path.splitext(out)
    return f"{root}-{trial}{ext or '.csv'}"


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    truth = _load_truth(args, config["sampler"])
    _check_output(args.out)
    sampler = _build_sampler(config, truth)
    run_config = _resolve(config, truth, sampler)
    trials = int(config["trials"])
    force = bool(config["force"])
    angular_only = bool(config["angular_only"])

    def trial_config(trial: int) -> AlectonConfig:
        if trials == 1:
            return run_config
        return dataclasses.replace(run_config, seed=derive_seed(run_config.seed, trial))

    def one(trial: int) -> RecoveryResult:
        cfg = trial_config(trial)
        LOGGER.debug("Trial %s seed %s", trial, cfg.seed)
        return recover(sampler, cfg, truth, force=force, angular_only=angular_only)

    LOGGER.info(
        "Running %s trial(s): n=%s p=%s K=%s L=%s eta=%.4g sampler=%s",
        trials, run_config.n, run_config.p, run_config.k_steps, run_config.l_steps, run_config.eta, config["sampler"],
    )
    results = run_trials(one, trials, threads=int(config["threads"]))
    for trial, result in enumerate(results):
        cfg = trial_config(trial)
        meta = _meta("run", config, cfg, trial=trial) if trials > 1 else _meta("run", config, cfg)
        write_trace(_trial_path(args.out, trial, trials), result.trace, meta)
        print(format_summary(result, cfg.k_steps, angular_only))

    if trials > 1:
        _report_trials(args.out, config, run_config, results, sampler)
    return 0 if all(result.trace.converged for result in results) else 2


def _report_trials(
    out: str,
    config: dict[str, Any],
    run_config: AlectonConfig,
    results: list[RecoveryResult],
    sampler: Sampler,
) -> None:
    root, ext = os.path.splitext(out)
    rows = [
        (trial, str(result.trace.converged).lower(), result.trace.first_success)
        for trial, result in enumerate(results)
    ]
    write_csv(f"{root}-trials{ext or '.csv'}", ("trial", "converged", "steps_to_success"), rows,
              _meta("run", config, run_config, trials=len(results)))
    failures = sum(1 for result in results if not result.trace.converged)
    low, high = wilson_interval(failures, len(results))
    LOGGER.info("Failure rate %s/%s (95%% CI %.3f-%.3f)", failures, len(results), low, high)

    step = results[0].step_size
    if step is None or not 0.0 < step.gamma <= 1.0 or run_config.eigengap is None:
        return
    p = run_config.p
    zp = None
    if p > 1:
        zp = zp_monte_carlo(p, step.gamma, BOUND_ZP_SAMPLES, make_rng(run_config.seed, 2))
    bound = failure_bound(
        run_config.k_steps, step.gamma, run_config.n, p, run_config.q, run_config.epsilon,
        sampler.params.sigma_a_sq, run_config.eigengap, zp,
    )
    LOGGER.info("Failure bound at t=%s: %.4g (Z_p %.4g + %.4g)", run_config.k_steps, bound.total,
                bound.zp_term, bound.log_term)


def _cmd_oaat(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    truth = _load_truth(args, config["sampler"])
    _check_output(args.out)
    count = int(config.get("p") or 1)
    sampler = _build_sampler(config, truth)
    component_settings = dict(config, p=1, q=1)
    # One step size serves every component, so it must satisfy gamma <= 1 at the narrowest gap.
    smallest_gap = min(truth.eigengap(index) for index in range(1, count + 1))
    run_config = resolve_alecton_config(component_settings, truth.dim, smallest_gap, sampler.params.sigma_a_sq)

    LOGGER.info("Recovering %s component(s) one at a time: n=%s K=%s", count, run_config.n, run_config.k_steps)
    result = one_at_a_time(sampler, count, run_config, truth, force=bool(config["force"]))

    rows = []
    if isinstance(truth, TripletTruth):
        for index, component in enumerate(result.results):
            estimate = estimate_rectangular(result.components[: index + 1], truth.rows)
            rows.append((index + 1, _steps(component, run_config.k_steps), truth.rmse(estimate),
                         round(component.wall_ms, 3)))
    else:
        target = truth.dense()
        scale = float(np.linalg.norm(target))
        for index, (component, partial) in enumerate(zip(result.results, result.partial_estimates())):
            residual = float(np.linalg.norm(partial - target)) / scale
            rows.append((index + 1, _steps(component, run_config.k_steps), residual, round(component.wall_ms, 3)))
    write_csv(args.out, ("component", "steps", "residual_fro", "wall_ms"), rows,
              _meta("oaat", config, run_config, components=count))
    for component in result.results:
        print(format_summary(component, run_config.k_steps, angular_only=False))
    return 0 if all(component.trace.converged for component in result.results) else 2


def _cmd_synth(args: argparse.Namespace) -> int:
    if args.n < 1 or args.rank < 1:
        raise ConfigError("n and rank must be > 0")
    if args.rank > args.n:
        raise ConfigError(f"rank must be <= n, got rank={args.rank} n={args.n}")
    if args.eigenvalues:
        values = parse_float_list(args.eigenvalues)
    else:
        values = [float(args.rank - k) for k in range(args.rank)]
    if len(values) != args.rank:
        raise ConfigError(f"expected {args.rank} eigenvalues, got {len(values)}")
    if any(value <= 0 for value in values) or any(b > a for a, b in zip(values, values[1:])):
        raise ConfigError("eigenvalues must be positive and descending")
    if args.coherence == "hadamard" and args.n & (args.n - 1):
        raise ConfigError(f"hadamard coherence needs n a power of two, got {args.n}")
    _check_output(args.out)

    truth = synthetic_truth(args.n, values, make_rng(args.seed), mode=args.coherence)
    write_truth(args.out, truth)
    read_truth(args.out)
    print(f"n={truth.dim} rank={truth.rank} eigengap={truth.eigengap(truth.rank):.6g} path={args.out}")
    return 0


def _cmd_zp(args: argparse.Namespace) -> int:
    try:
        ps = parse_int_list(args.p_list)
        gammas = parse_float_list(args.gammas)
    except ValueError as exc:
        raise ConfigError(f"bad grid: {exc}") from exc
    errors = []
    if not ps or any(p < 1 for p in ps):
        errors.append("p-list must contain integers >= 1")
    if not gammas or any(not gamma >= 0 for gamma in gammas):
        errors.append("gammas must be >= 0")
    if args.samples < 1:
        errors.append("samples must be > 0")
    if args.threads < 1:
        errors.append("threads must be > 0")
    if errors:
        raise ConfigError("Config errors:\n- " + "\n- ".join(errors))
    _check_output(args.out)

    grid = [(p, gamma_index, gamma) for p in ps for gamma_index, gamma in enumerate(gammas)]

    def one(index: int):
        p, gamma_index, gamma = grid[index]
        return zp_monte_carlo(p, gamma, args.samples, make_rng(args.seed, p, gamma_index))

    estimates = run_trials(one, len(grid), threads=args.threads)
    rows = []
    for estimate in estimates:
        closed = z1_closed_form(estimate.gamma) if estimate.p == 1 else None
        rows.append((estimate.gamma, estimate.p, estimate.num_samples, estimate.value, estimate.std_err, closed))
    meta = {"command": "zp", "version": __version__, "seed": args.seed, "samples": args.samples,
            "p_list": args.p_list, "gammas": args.gammas}
    write_csv(args.out, ("gamma", "p", "n_samples", "value", "std_err", "closed_form"), rows, meta)
    LOGGER.info("Tabulated %s grid points", len(rows))
    return 0


def _verdict(name: str, passed: bool, detail: str) -> int:
    print(f"{name}: {'PASS' if passed else 'FAIL'} {detail}")
    return 0 if passed else 2


def _cmd_demo(args: argparse.Namespace) -> int:
    if args.kind == "diverge":
        alpha = 1.0 if args.alpha is None else args.alpha
        report = divergence_demo(alpha, args.c, args.x0, 20 if args.steps is None else args.steps)
        return _verdict("diverge", report.holds, f"overflow_step={report.overflow_step} steps={len(report.xs) - 1}")

    if args.kind == "stuck":
        alpha = 0.01 if args.alpha is None else args.alpha
        try:
            y0 = parse_float_list(args.y0)
        except ValueError as exc:
            raise ConfigError(f"bad --y0: {exc}") from exc
        if len(y0) != 2:
            raise ConfigError("--y0 needs two values")
        report = stuck_demo(alpha, tuple(y0), 10_000 if args.steps is None else args.steps)
        if y0[0] == 0.0:
            passed = report.absorbed and report.distance_to_optimum >= STUCK_MIN_DISTANCE
        else:
            passed = report.distance_to_optimum < STUCK_ESCAPE_TOL
        return _verdict(
            "stuck",
            passed,
            f"absorbed={str(report.absorbed).lower()} final=({report.final[0]:.6g}, {report.final[1]:.6g}) "
            f"distance_to_optimum={report.distance_to_optimum:.6g}",
        )

    schedule: Callable[[int], float] = step_schedule(args.schedule, args.eta0)
    report = lower_bound_experiment(args.n, args.k_steps, schedule, args.trials, make_rng(args.seed))
    return _verdict(
        "lowerbound",
        report.holds,
        f"mean_rho={report.mean_rho:.6g} std_err={report.std_err:.3g} floor={report.floor:.6g}",
    )


def _cmd_ingest(args: argparse.Namespace) -> int:
    if not os.path.isfile(args.triplets):
        raise ConfigError(f"triplet file not found: {args.triplets}")
    truth = read_triplets(args.triplets, args.rows, args.cols)
    print(
        f"m={truth.rows} n={truth.cols} count={truth.count} xi={truth.xi:.6g} "
        f"frobenius={math.sqrt(truth.data_frobenius_sq):.6g}"
    )
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "synth": _cmd_synth,
    "run": _cmd_run,
    "oaat": _cmd_oaat,
    "zp": _cmd_zp,
    "demo": _cmd_demo,
    "ingest": _cmd_ingest,
}
