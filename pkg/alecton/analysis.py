"""Theory checks: Z_p, the failure bound, counterexamples and the rate lower bound."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import integrate
from scipy.special import erfcx
from scipy.stats import norm

from alecton.algorithm import DivergenceError, angular_phase
from alecton.models import AlectonConfig
from alecton.sampling import ParameterError, Sampler
from alecton.trials import run_trials
from alecton.truth import GroundTruth
from alecton.utils import derive_seed, mean_and_stderr, wilson_interval

LOGGER = logging.getLogger(__name__)

ZP_CHUNK = 100_000
OVERFLOW_LIMIT = 1e100

Schedule = Union[float, Callable[[int], float]]


@dataclass(frozen=True)
class ZpEstimate:
    p: int
    gamma: float
    num_samples: int
    value: float
    std_err: float


def zp_monte_carlo(p: int, gamma: float, num_samples: int, rng: np.random.Generator) -> ZpEstimate:
    """Z_p(gamma) = 2 (1 - E[det(R^T R) / det(R^T R + gamma/p I)]) for standard normal p x p R."""
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    if num_samples < 1:
        raise ParameterError(f"num_samples must be >= 1, got {num_samples}")
    ratios = np.empty(num_samples)
    shift = gamma / p * np.eye(p)
    for start in range(0, num_samples, ZP_CHUNK):
        stop = min(num_samples, start + ZP_CHUNK)
        r = rng.standard_normal((stop - start, p, p))
        g = np.einsum("kji,kjl->kil", r, r)
        if gamma == 0:
            ratios[start:stop] = 1.0
            continue
        sign_g, log_g = np.linalg.slogdet(g)
        _, log_shifted = np.linalg.slogdet(g + shift)
        ratios[start:stop] = np.where(sign_g > 0, np.exp(log_g - log_shifted), 0.0)
    mean, err = mean_and_stderr(ratios)
    return ZpEstimate(p=p, gamma=float(gamma), num_samples=num_samples, value=2.0 * (1.0 - mean), std_err=2.0 * err)


def z1_closed_form(gamma: float) -> float:
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    if gamma == 0:
        return 0.0
    # erfcx(x) = exp(x^2) erfc(x) keeps large gamma finite.
    return float(math.sqrt(2.0 * math.pi * gamma) * erfcx(math.sqrt(gamma / 2.0)))


def z1_quadrature(gamma: float) -> float:
    """2 E[gamma / (x^2 + gamma)] for x ~ N(0, 1), by adaptive quadrature."""
    if gamma == 0:
        return 0.0

    def integrand(x: float) -> float:
        return gamma / (x * x + gamma) * norm.pdf(x)

    head, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    tail, _ = integrate.quad(integrand, 1.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    return 4.0 * (head + tail)


@dataclass(frozen=True)
class BoundReport:
    t: float
    gamma: float
    n: int
    p: int
    q: int
    epsilon: float
    sigma_a_sq: float
    delta: float
    zp_term: float
    log_term: float
    total: float
    log_argument_ok: bool


def failure_bound(
    t: float,
    gamma: float,
    n: int,
    p: int,
    q: int,
    epsilon: float,
    sigma_a_sq: float,
    delta: float,
    zp: ZpEstimate | float | None = None,
) -> BoundReport:
    """Upper bound on the probability that the angular phase has not succeeded by time t."""
    for name, value in (("t", t), ("gamma", gamma), ("n", n), ("p", p), ("q", q),
                        ("epsilon", epsilon), ("sigma_a_sq", sigma_a_sq), ("delta", delta)):
        if not value > 0:
            raise ParameterError(f"{name} must be > 0, got {value}")
    if gamma > 1:
        raise ParameterError(f"gamma must be <= 1, got {gamma}")
    if isinstance(zp, ZpEstimate):
        zp_term = zp.value
    elif zp is not None:
        zp_term = float(zp)
    elif p == 1:
        zp_term = z1_closed_form(gamma)
    else:
        raise ParameterError("a Z_p value is required for p > 1")
    log_argument = n * p * p / (gamma * q * epsilon)
    log_ok = log_argument > 1.0
    if not log_ok:
        LOGGER.warning("Failure bound log argument %.4g <= 1; the bound does not apply", log_argument)
    log_term = 4.0 * n * sigma_a_sq * p * p * (p + epsilon) / (delta * delta * gamma * epsilon * t) * math.log(log_argument)
    return BoundReport(
        t=float(t), gamma=float(gamma), n=n, p=p, q=q, epsilon=float(epsilon),
        sigma_a_sq=float(sigma_a_sq), delta=float(delta),
        zp_term=zp_term, log_term=log_term, total=zp_term + log_term, log_argument_ok=log_ok,
    )


@dataclass(frozen=True)
class TrialOutcome:
    trial: int
    converged: bool
    steps_to_success: int | None


@dataclass(frozen=True)
class FailureRateReport:
    rate: float
    ci: tuple[float, float]
    trials: int
    outcomes: tuple[TrialOutcome, ...]


def empirical_failure_rate(
    sampler: Sampler,
    config: AlectonConfig,
    truth: GroundTruth,
    trials: int,
    t: int,
    seed: int,
    threads: int = 1,
) -> FailureRateReport:
    """Fraction of independent angular phases that never meet the success condition within t steps."""

    def one(trial: int) -> TrialOutcome:
        trial_config = dataclasses.replace(config, k_steps=t, seed=derive_seed(seed, trial))
        try:
            _, trace = angular_phase(sampler, trial_config, truth, stop_on_success=True)
        except DivergenceError as exc:
            LOGGER.warning("Trial %s diverged at step %s", trial, exc.step)
            return TrialOutcome(trial, False, None)
        return TrialOutcome(trial, trace.converged, trace.first_success)

    outcomes = run_trials(one, trials, threads=threads)
    failures = sum(1 for outcome in outcomes if not outcome.converged)
    return FailureRateReport(
        rate=failures / trials,
        ci=wilson_interval(failures, trials),
        trials=trials,
        outcomes=tuple(outcomes),
    )


@dataclass(frozen=True)
class DivergenceReport:
    xs: tuple[float, ...]
    holds: bool
    overflow_step: int | None


def divergence_demo(alpha: float, c: float, x0: float, steps: int) -> DivergenceReport:
    """Iterate x <- (1 - alpha x^2) x and check x_k^2 > C^(2k) (C + 1) / alpha."""
    if alpha <= 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    if c <= 1:
        raise ParameterError(f"C must be > 1, got {c}")
    if x0 * x0 < (c + 1.0) / alpha or x0 == 0:
        raise ParameterError(f"x0^2 must be >= (C + 1) / alpha = {(c + 1.0) / alpha:.4g}, got x0={x0}")
    log_base = math.log(c + 1.0) - math.log(alpha)
    xs = [float(x0)]
    holds = True
    overflow_step = None
    x = float(x0)
    for k in range(1, steps + 1):
        if abs(x) > OVERFLOW_LIMIT:
            overflow_step = k - 1
            break
        x = (1.0 - alpha * x * x) * x
        xs.append(x)
        if not 2.0 * math.log(abs(x)) > log_base + 2.0 * k * math.log(c):
            holds = False
            LOGGER.warning("Divergence bound violated at step %s (x=%.6g)", k, x)
    return DivergenceReport(xs=tuple(xs), holds=holds, overflow_step=overflow_step)


@dataclass(frozen=True)
class StuckReport:
    first_coordinate: tuple[float, ...]
    final: tuple[float, float]
    absorbed: bool
    distance_to_optimum: float


STUCK_TARGET = np.diag([4.0, 1.0])
STUCK_OPTIMUM = np.diag([4.0, 0.0])


def _as_schedule(schedule: Schedule) -> Callable[[int], float]:
    if callable(schedule):
        return schedule
    value = float(schedule)
    return lambda _k: value


def stuck_demo(alpha_schedule: Schedule, y0: tuple[float, float] | np.ndarray, steps: int) -> StuckReport:
    """Exact-sample SGD on ||A - y y^T||_F^2 with A = diag(4, 1)."""
    alpha = _as_schedule(alpha_schedule)
    y = np.array(y0, dtype=np.float64).reshape(2)
    started_orthogonal = y[0] == 0.0
    first = [float(y[0])]
    for k in range(steps):
        y = y - 4.0 * alpha(k) * (y * float(y @ y) - STUCK_TARGET @ y)
        first.append(float(y[0]))
    distance = float(np.linalg.norm(np.outer(y, y) - STUCK_OPTIMUM))
    absorbed = bool(started_orthogonal and all(value == 0.0 for value in first))
    return StuckReport(
        first_coordinate=tuple(first),
        final=(float(y[0]), float(y[1])),
        absorbed=absorbed,
        distance_to_optimum=distance,
    )


def step_schedule(name: str, eta0: float) -> Callable[[int], float]:
    if name == "constant":
        return lambda _k: eta0
    if name == "harmonic":
        return lambda k: eta0 / (k + 1)
    if name == "aggressive":
        return lambda _k: 10.0 * eta0
    raise ParameterError(f"unknown schedule {name!r}; use constant, harmonic or aggressive")


@dataclass(frozen=True)
class LowerBoundReport:
    n: int
    k_steps: int
    trials: int
    mean_rho: float
    std_err: float
    floor: float
    sigma_sq: float
    c: float
    measured_sigma_sq: float
    measured_c: float
    holds: bool


LOWER_BOUND_TOP = 2.0
LOWER_BOUND_REST = 1.0
LOWER_BOUND_ZETA = 0.5


def _unit_columns(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    cols = rng.standard_normal((n, count))
    return cols / np.linalg.norm(cols, axis=0)


def lower_bound_experiment(
    n: int,
    k_steps: int,
    eta_schedule: Schedule,
    trials: int,
    rng: np.random.Generator,
) -> LowerBoundReport:
    """Mean rho_K toward a non-optimal eigenvector u against sigma^2 / (sigma^2 n + C^2 K).

    Samples are A + zeta (u v^T + v u^T) with A = diag(2, 1, ..., 1), u = e_2 and
    v uniform on the sphere, so ||A~|| <= 2 + 2 zeta = C and
    E[A~^T u u^T A~] >= zeta^2 / n I.
    """
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    if trials < 2:
        raise ParameterError(f"trials must be >= 2, got {trials}")
    eta = _as_schedule(eta_schedule)
    diag = np.full(n, LOWER_BOUND_REST)
    diag[0] = LOWER_BOUND_TOP
    u_index = 1
    zeta = LOWER_BOUND_ZETA
    c = LOWER_BOUND_TOP + 2.0 * zeta
    sigma_sq = zeta * zeta / n

    # Check both constants on fresh draws before running.
    probe = _unit_columns(rng, n, 100 * n)
    a_u = np.zeros((n, probe.shape[1]))
    a_u[u_index] = diag[u_index] + zeta * probe[u_index]
    a_u += zeta * probe
    measured_sigma_sq = float(np.linalg.eigvalsh(a_u @ a_u.T / probe.shape[1])[0])
    measured_c = 0.0
    for v in probe[:, : min(200, probe.shape[1])].T:
        sample = np.diag(diag)
        sample[:, u_index] += zeta * v
        sample[u_index, :] += zeta * v
        measured_c = max(measured_c, float(np.linalg.norm(sample, 2)))
    if measured_c > c * (1.0 + 1e-12):
        raise ParameterError(f"operator norm {measured_c:.6g} exceeds C={c:.6g}")
    if measured_sigma_sq < 0.5 * sigma_sq:
        raise ParameterError(f"directional variance {measured_sigma_sq:.3g} is far below {sigma_sq:.3g}")

    y = _unit_columns(rng, n, trials)
    for k in range(k_steps):
        v = _unit_columns(rng, n, trials)
        vy = np.einsum("ij,ij->j", v, y)
        step = diag[:, None] * y + zeta * v * y[u_index]
        step[u_index] += zeta * vy
        y = y + eta(k) * step
        y /= np.linalg.norm(y, axis=0)
    rho = y[u_index] ** 2
    mean, err = mean_and_stderr(rho)
    floor = sigma_sq / (sigma_sq * n + c * c * k_steps)
    report = LowerBoundReport(
        n=n, k_steps=k_steps, trials=trials, mean_rho=mean, std_err=err, floor=floor,
        sigma_sq=sigma_sq, c=c, measured_sigma_sq=measured_sigma_sq, measured_c=measured_c,
        holds=mean >= floor - 3.0 * err,
    )
    LOGGER.info("Lower bound: mean rho_K=%.4g (se %.2g) floor=%.4g", mean, err, floor)
    return report
