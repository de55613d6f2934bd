"""Alecton: angular phase, radial phase, assembly and one-at-a-time deflation."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from alecton.config import ConfigError
from alecton.linalg import (
    LinalgError,
    RankDeficiencyError,
    SmallSymmetric,
    TallMatrix,
    Vector,
    det_small,
    gram,
    inv_sqrt_psd,
    random_orthonormal,
    small_eigs,
    sqrt_psd,
    symmetric,
)
from alecton.models import (
    AlectonConfig,
    ConvergenceTrace,
    RecoveryResult,
    StepSizeReport,
    SuccessCheck,
    TracePoint,
)
from alecton.sampling import Sampler, deflate
from alecton.truth import GroundTruth, SpectralTruth
from alecton.utils import derive_seed, make_rng

LOGGER = logging.getLogger(__name__)

OVERFLOW_LIMIT = 1e100
GUARD_EVERY = 64
GAMMA_ROUNDING = 1e-12
ANGULAR_STREAM = 0
RADIAL_STREAM = 1


class DivergenceError(RuntimeError):
    def __init__(self, step: int, message: str) -> None:
        super().__init__(message)
        self.step = step


class ComponentError(RuntimeError):
    def __init__(self, index: int, cause: Exception) -> None:
        super().__init__(f"component {index + 1} failed: {cause}")
        self.index = index
        self.cause = cause


def check_config(config: AlectonConfig) -> None:
    errors: list[str] = []
    if config.n < 1:
        errors.append("n must be > 0")
    if config.p < 1:
        errors.append("p must be > 0")
    if config.q < config.p:
        errors.append("q must be >= p")
    if config.p > config.n:
        errors.append("p must be <= n")
    if not 0.0 < config.epsilon < 1.0:
        errors.append("epsilon must be in (0, 1)")
    if not math.isfinite(config.eta) or config.eta < 0:
        errors.append("eta must be finite and >= 0")
    if config.k_steps < 1:
        errors.append("k_steps must be >= 1")
    if config.l_steps < 1:
        errors.append("l_steps must be >= 1")
    if config.renorm_every < 0:
        errors.append("renorm_every must be >= 0")
    if config.trace_every < 0:
        errors.append("trace_every must be >= 0")
    if errors:
        raise ConfigError("Config errors:\n- " + "\n- ".join(errors))


def compute_gamma(
    eta: float,
    n: int,
    p: int,
    epsilon: float,
    sigma_a_sq: float,
    delta: float,
) -> StepSizeReport:
    if delta <= 0:
        raise ConfigError(f"eigengap must be > 0 (lambda_q = lambda_q+1 makes recovery ill-posed), got {delta}")
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"epsilon must be in (0, 1), got {epsilon}")
    coefficient = 2.0 * n * sigma_a_sq * p * p * (p + epsilon) / (delta * epsilon)
    gamma = coefficient * eta
    if 1.0 < gamma <= 1.0 + GAMMA_ROUNDING:
        # eta sized as eta_max round-trips to a hair above 1.
        gamma = 1.0
    eta_max = 1.0 / coefficient if coefficient > 0 else math.inf
    return StepSizeReport(gamma=gamma, satisfied=gamma <= 1.0, eta_max=eta_max)


def success_metric(y: TallMatrix, basis: TallMatrix, epsilon: float) -> SuccessCheck:
    """Smallest Rayleigh quotient ||U Y z||^2 / ||Y z||^2 over z."""
    whiten = inv_sqrt_psd(gram(y))
    inside = basis.T @ y @ whiten
    ratio = float(small_eigs(inside.T @ inside)[-1])
    ratio = min(1.0, max(0.0, ratio))
    return SuccessCheck(lambda_min_ratio=ratio, succeeded=ratio >= 1.0 - epsilon)


def tau_metric(y: TallMatrix, basis: TallMatrix, gamma: float, n: int, p: int, q: int) -> float:
    """det(Y^T U Y) / det(Y^T W Y) with W = c I + (1 - c) U, c = gamma q / (n p^2)."""
    c = gamma * q / (n * p * p)
    if not 0.0 < c <= 1.0:
        raise ValueError(f"gamma q / (n p^2) must be in (0, 1], got {c}")
    inside = basis.T @ y
    numerator = det_small(inside.T @ inside)
    weighted = symmetric(c * gram(y) + (1.0 - c) * (inside.T @ inside))
    denominator = det_small(weighted)
    if denominator <= 0.0:
        raise RankDeficiencyError(f"tau denominator is singular ({denominator:.3e})", eigenvalue=denominator)
    return min(1.0, max(0.0, numerator / denominator))


def _check_rank_condition(sampler: Sampler, config: AlectonConfig) -> None:
    if config.n != sampler.dim:
        raise ConfigError(f"config n={config.n} does not match sampler dimension {sampler.dim}")
    if sampler.stochastic and sampler.max_rank > 1 and config.p > 1:
        raise ConfigError(
            f"samples have rank {sampler.max_rank}; rank-1 samples are required unless p = 1"
        )


def _guard(y: TallMatrix, step: int) -> None:
    peak = float(np.abs(y).max())
    if not math.isfinite(peak) or peak > OVERFLOW_LIMIT:
        raise DivergenceError(step, f"iterate diverged by step {step} (max |Y| = {peak:.3e})")


@dataclass
class _Diagnostics:
    basis: TallMatrix
    epsilon: float
    gamma: float | None
    n: int
    p: int
    q: int
    started: float = field(default_factory=time.perf_counter)

    def point(self, step: int, y: TallMatrix) -> TracePoint:
        rho = success_metric(y, self.basis, self.epsilon).lambda_min_ratio
        tau = None
        if self.gamma is not None:
            tau = tau_metric(y, self.basis, self.gamma, self.n, self.p, self.q)
        return TracePoint(step=step, rho=rho, tau=tau, wall_ms=(time.perf_counter() - self.started) * 1000.0)


def _diagnostics(sampler: Sampler, config: AlectonConfig, truth: GroundTruth) -> _Diagnostics:
    gamma = None
    delta = truth.eigengap(config.q)
    params = sampler.params
    if delta > 0 and not params.degenerate:
        gamma = compute_gamma(config.eta, config.n, config.p, config.epsilon, params.sigma_a_sq, delta).gamma
        if not 0.0 < gamma * config.q / (config.n * config.p**2) <= 1.0:
            gamma = None
    return _Diagnostics(
        basis=truth.dominant_basis(config.q),
        epsilon=config.epsilon,
        gamma=gamma,
        n=config.n,
        p=config.p,
        q=config.q,
    )


def angular_phase(
    sampler: Sampler,
    config: AlectonConfig,
    truth: GroundTruth | None = None,
    *,
    y0: TallMatrix | None = None,
    rng: np.random.Generator | None = None,
    stop_on_success: bool = False,
) -> tuple[TallMatrix, ConvergenceTrace]:
    check_config(config)
    _check_rank_condition(sampler, config)
    if rng is None:
        rng = make_rng(config.seed, ANGULAR_STREAM)
    if y0 is None:
        y = random_orthonormal(config.n, config.p, rng)
    else:
        y = np.array(y0, dtype=np.float64, copy=True).reshape(config.n, config.p)

    trace = ConvergenceTrace(epsilon=config.epsilon)
    diagnostics = _diagnostics(sampler, config, truth) if truth is not None else None
    if diagnostics is not None:
        trace.record(diagnostics.point(0, y))

    eta = config.eta
    steps = config.k_steps
    renorm_every = config.renorm_every
    trace_every = config.trace_every
    draws = sampler.stream(rng)
    LOGGER.debug("Angular phase: n=%s p=%s K=%s eta=%.3e", config.n, config.p, steps, eta)
    for step in range(1, steps + 1):
        next(draws).apply(y, eta)
        last = step == steps
        if step % GUARD_EVERY == 0 or last:
            _guard(y, step)
        if renorm_every and step % renorm_every == 0:
            _guard(y, step)
            y = y @ inv_sqrt_psd(gram(y))
        if diagnostics is not None and (last or (trace_every and step % trace_every == 0)):
            _guard(y, step)
            point = diagnostics.point(step, y)
            trace.record(point)
            if stop_on_success and point.rho >= 1.0 - config.epsilon:
                break
    _guard(y, step)
    return y @ inv_sqrt_psd(gram(y)), trace


def radial_phase(sampler: Sampler, y_hat: TallMatrix, l_steps: int, rng: np.random.Generator) -> SmallSymmetric:
    if l_steps < 1:
        raise ConfigError(f"l_steps must be >= 1, got {l_steps}")
    total = np.zeros((y_hat.shape[1], y_hat.shape[1]))
    draws = sampler.stream(rng)
    for _ in range(l_steps):
        total += next(draws).sandwich(y_hat)
    return symmetric(total / l_steps)


def assemble(y_hat: TallMatrix, r_bar: SmallSymmetric) -> tuple[TallMatrix, int]:
    root, clipped = sqrt_psd(r_bar)
    if clipped:
        LOGGER.warning("Clipped %s negative eigenvalue(s) of the radial estimate to 0", clipped)
    return y_hat @ root, clipped


def step_size_report(
    sampler: Sampler,
    config: AlectonConfig,
    truth: GroundTruth | None,
) -> StepSizeReport | None:
    delta = config.eigengap
    if delta is None and truth is not None:
        delta = truth.eigengap(config.q)
    if delta is None:
        return None
    return compute_gamma(config.eta, config.n, config.p, config.epsilon, sampler.params.sigma_a_sq, delta)


def recover(
    sampler: Sampler,
    config: AlectonConfig,
    truth: GroundTruth | None = None,
    *,
    force: bool = False,
    angular_only: bool = False,
) -> RecoveryResult:
    check_config(config)
    started = time.perf_counter()
    step = step_size_report(sampler, config, truth)
    if sampler.stochastic:
        if step is None and not force:
            raise ConfigError("eigengap unknown: cannot check the step size condition (set eigengap or force)")
        if step is not None and not step.satisfied:
            if not force:
                raise ConfigError(
                    f"step size condition violated: gamma={step.gamma:.4g} > 1 (eta_max={step.eta_max:.4g})"
                )
            LOGGER.warning("Running with gamma=%.4g > 1 because force is set", step.gamma)
    if step is not None:
        LOGGER.info("Step size: eta=%.4g gamma=%.4g eta_max=%.4g", config.eta, step.gamma, step.eta_max)

    y_hat, trace = angular_phase(sampler, config, truth)
    if angular_only:
        return RecoveryResult(
            y_hat=y_hat,
            r_bar=None,
            factor=y_hat,
            trace=trace,
            step_size=step,
            wall_ms=(time.perf_counter() - started) * 1000.0,
        )
    r_bar = radial_phase(sampler, y_hat, config.l_steps, make_rng(config.seed, RADIAL_STREAM))
    factor, clipped = assemble(y_hat, r_bar)
    return RecoveryResult(
        y_hat=y_hat,
        r_bar=r_bar,
        factor=factor,
        trace=trace,
        step_size=step,
        clipped=clipped,
        wall_ms=(time.perf_counter() - started) * 1000.0,
    )


@dataclass
class OneAtATimeResult:
    components: list[Vector]
    results: list[RecoveryResult]

    def estimate(self) -> np.ndarray:
        stacked = np.column_stack(self.components)
        return stacked @ stacked.T

    def partial_estimates(self) -> list[np.ndarray]:
        out = []
        total = np.zeros((self.components[0].shape[0],) * 2)
        for vec in self.components:
            total = total + np.outer(vec, vec)
            out.append(total)
        return out


def _component_view(truth: GroundTruth | None, index: int) -> SpectralTruth | None:
    if truth is None:
        return None
    values, vectors = truth.spectrum()
    if index >= values.shape[0]:
        return None
    return SpectralTruth(values[index:], vectors[:, index:])


def one_at_a_time(
    base: Sampler,
    count: int,
    config: AlectonConfig,
    truth: GroundTruth | None = None,
    *,
    force: bool = False,
) -> OneAtATimeResult:
    """Recover count rank-1 components, deflating the sampler after each one."""
    if count < 1:
        raise ConfigError(f"component count must be >= 1, got {count}")
    components: list[Vector] = []
    results: list[RecoveryResult] = []
    for index in range(count):
        sampler = deflate(base, components)
        view = _component_view(truth, index)
        component_config = dataclasses.replace(
            config,
            p=1,
            q=1,
            seed=config.seed if index == 0 else derive_seed(config.seed, index),
            eigengap=config.eigengap if view is None else None,
        )
        try:
            result = recover(sampler, component_config, view, force=force)
        except (DivergenceError, LinalgError, ConfigError) as exc:
            raise ComponentError(index, exc) from exc
        components.append(result.factor[:, 0].copy())
        results.append(result)
        LOGGER.info("Recovered component %s/%s in %.1f ms", index + 1, count, result.wall_ms)
    return OneAtATimeResult(components=components, results=results)
