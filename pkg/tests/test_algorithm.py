import math

import numpy as np
import pytest

from alecton.algorithm import (
    ComponentError,
    DivergenceError,
    angular_phase,
    assemble,
    compute_gamma,
    one_at_a_time,
    radial_phase,
    recover,
    success_metric,
    tau_metric,
)
from alecton.config import ConfigError
from alecton.linalg import gram, principal_cosines, random_orthonormal, subspace_distance
from alecton.models import AlectonConfig, ConvergenceTrace, TracePoint
from alecton.sampling import deflate, make_sampler
from alecton.truth import SpectralTruth, synthetic_truth
from alecton.utils import make_rng


def _config(n: int, **overrides) -> AlectonConfig:
    values = dict(n=n, p=1, q=1, epsilon=0.1, eta=0.5, k_steps=200, l_steps=10, seed=0, renorm_every=10, trace_every=1)
    values.update(overrides)
    return AlectonConfig(**values)


def _hadamard_rank_three() -> SpectralTruth:
    return synthetic_truth(8, [3.0, 2.0, 1.0], make_rng(4), mode="hadamard")


def _incoherent_truth() -> SpectralTruth:
    return synthetic_truth(16, [4.0, 2.0], make_rng(5), mode="hadamard")


def test_compute_gamma_matches_formula() -> None:
    report = compute_gamma(1e-5, 100, 1, 0.1, 1.0, 1.0)

    assert report.gamma == pytest.approx(0.022)
    assert report.satisfied
    assert compute_gamma(report.eta_max, 100, 1, 0.1, 1.0, 1.0).gamma == pytest.approx(1.0)
    assert compute_gamma(2e-5, 100, 1, 0.1, 1.0, 1.0).gamma == pytest.approx(0.044)


def test_compute_gamma_rejects_zero_eigengap() -> None:
    with pytest.raises(ConfigError):
        compute_gamma(1e-5, 100, 1, 0.1, 1.0, 0.0)


@pytest.mark.parametrize("n", [8, 16, 100, 1000])
@pytest.mark.parametrize("sigma_a_sq", [3.7, 14.0, 21.0])
def test_compute_gamma_accepts_its_own_largest_step(n: int, sigma_a_sq: float) -> None:
    eta = 0.1 / (2.0 * n * sigma_a_sq * 1.1)

    report = compute_gamma(eta, n, 1, 0.1, sigma_a_sq, 1.0)

    assert report.satisfied
    assert report.gamma == pytest.approx(1.0)


def test_success_metric_examples() -> None:
    basis = np.array([[1.0], [0.0]])
    theta = math.pi / 6

    inside = success_metric(np.array([[3.0], [0.0]]), basis, 0.1)
    outside = success_metric(np.array([[0.0], [2.0]]), basis, 0.1)
    tilted = success_metric(np.array([[math.cos(theta)], [math.sin(theta)]]), basis, 0.1)

    assert inside.lambda_min_ratio == pytest.approx(1.0)
    assert inside.succeeded
    assert outside.lambda_min_ratio == pytest.approx(0.0, abs=1e-15)
    assert tilted.lambda_min_ratio == pytest.approx(0.75)
    assert not tilted.succeeded


def test_success_metric_depends_only_on_column_space() -> None:
    rng = make_rng(12)
    truth = synthetic_truth(12, [3.0, 2.0, 1.0], rng)
    y = rng.standard_normal((12, 3))
    mix = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)

    first = success_metric(y, truth.dominant_basis(3), 0.1).lambda_min_ratio
    second = success_metric(y @ mix, truth.dominant_basis(3), 0.1).lambda_min_ratio

    assert first == pytest.approx(second, abs=1e-8)


def test_tau_metric_examples() -> None:
    basis = np.array([[1.0], [0.0]])
    diagonal = np.array([[1.0], [1.0]]) / math.sqrt(2.0)
    # c = gamma q / (n p^2) = 0.2 / 2 = 0.1
    gamma = 0.2

    assert tau_metric(np.array([[1.0], [0.0]]), basis, gamma, 2, 1, 1) == pytest.approx(1.0)
    assert tau_metric(np.array([[0.0], [1.0]]), basis, gamma, 2, 1, 1) == pytest.approx(0.0, abs=1e-15)
    assert tau_metric(diagonal, basis, gamma, 2, 1, 1) == pytest.approx(0.5 / 0.55)


def test_angular_phase_matches_power_iteration_closed_form() -> None:
    truth = SpectralTruth(np.array([4.0, 1.0]), np.eye(2))
    sampler = make_sampler("exact", truth)
    config = _config(2, eta=0.1, k_steps=20, renorm_every=0)

    y_hat, trace = angular_phase(sampler, config, y0=np.array([[0.6], [0.8]]))

    expected = (1.4**20 * 0.6) / (1.1**20 * 0.8)
    assert y_hat[0, 0] / y_hat[1, 0] == pytest.approx(expected, rel=1e-8)
    assert trace.points == []


def test_angular_phase_with_zero_step_returns_start() -> None:
    truth = SpectralTruth(np.array([4.0, 1.0]), np.eye(2))
    sampler = make_sampler("exact", truth)

    y_hat, _ = angular_phase(sampler, _config(2, eta=0.0, k_steps=5), y0=np.array([[3.0], [4.0]]))

    np.testing.assert_allclose(y_hat[:, 0], [0.6, 0.8], atol=1e-15)


def test_angular_phase_renormalisation_keeps_diagnostics() -> None:
    truth = synthetic_truth(8, [3.0, 1.0], make_rng(4))
    sampler = make_sampler("exact", truth)

    _, plain = angular_phase(sampler, _config(8, eta=0.05, k_steps=60, renorm_every=0), truth)
    _, renormed = angular_phase(sampler, _config(8, eta=0.05, k_steps=60, renorm_every=10), truth)

    np.testing.assert_allclose(
        [point.rho for point in plain.points],
        [point.rho for point in renormed.points],
        atol=1e-6,
    )


def test_angular_phase_equals_dense_power_iteration() -> None:
    truth = synthetic_truth(10, [3.0, 2.0, 0.5], make_rng(6))
    sampler = make_sampler("exact", truth)
    config = _config(10, p=2, q=2, eta=0.2, k_steps=30)
    y0 = np.linalg.qr(make_rng(1).standard_normal((10, 2)))[0]

    y_hat, _ = angular_phase(sampler, config, y0=y0)

    oracle = np.linalg.matrix_power(np.eye(10) + 0.2 * truth.dense(), 30) @ y0
    cosines = principal_cosines(y_hat, oracle)
    assert np.all(np.arccos(np.clip(cosines, -1.0, 1.0)) < 1e-6)


def test_angular_phase_reports_divergence_step() -> None:
    truth = SpectralTruth(np.array([4.0, 1.0]), np.eye(2))
    sampler = make_sampler("exact", truth)

    with pytest.raises(DivergenceError) as exc:
        angular_phase(sampler, _config(2, eta=1000.0, k_steps=100, renorm_every=0))

    assert exc.value.step == 64


def test_angular_phase_rejects_multi_term_samples_for_p_above_one() -> None:
    truth = synthetic_truth(6, [2.0, 1.0], make_rng(0))
    sampler = make_sampler("trace", truth)
    deflated = deflate(sampler, [np.ones(6) / 6.0])

    with pytest.raises(ConfigError):
        angular_phase(deflated, _config(6, p=2, q=2, k_steps=5))


def test_radial_phase_with_exact_sampler_is_exact() -> None:
    truth = synthetic_truth(6, [3.0, 1.0], make_rng(2))
    sampler = make_sampler("exact", truth)
    y_hat = truth.dominant_basis(1)

    r_bar = radial_phase(sampler, y_hat, 3, make_rng(0))

    np.testing.assert_allclose(r_bar, [[3.0]], atol=1e-12)


def test_assemble_scales_by_square_root() -> None:
    y_hat = np.eye(3)[:, :2]

    factor, clipped = assemble(y_hat, np.diag([4.0, 1.0]))
    same, _ = assemble(y_hat, np.eye(2))
    repaired, repaired_count = assemble(y_hat, np.diag([4.0, -0.01]))

    np.testing.assert_allclose(factor, y_hat @ np.diag([2.0, 1.0]), atol=1e-14)
    np.testing.assert_allclose(same, y_hat, atol=1e-14)
    assert clipped == 0
    assert repaired_count == 1
    np.testing.assert_allclose(repaired[:, 1], 0.0, atol=1e-14)


def test_recover_exact_rank_two_reproduces_target() -> None:
    truth = synthetic_truth(8, [3.0, 1.0], make_rng(9))
    sampler = make_sampler("exact", truth)

    result = recover(sampler, _config(8, p=2, q=2, k_steps=400), truth)

    estimate = result.factor @ result.factor.T
    assert np.linalg.norm(estimate - truth.dense()) / np.linalg.norm(truth.dense()) < 1e-6
    np.testing.assert_allclose(gram(result.y_hat), np.eye(2), atol=1e-8)
    assert result.trace.converged


def test_recover_entrywise_finds_top_component() -> None:
    truth = _incoherent_truth()
    sampler = make_sampler("entrywise", truth)
    config = _config(16, eta=2.5e-4, k_steps=20_000, l_steps=10_000, renorm_every=1000, trace_every=100, seed=3)

    result = recover(sampler, config, truth)

    assert result.step_size is not None
    assert result.step_size.gamma == pytest.approx(0.88)
    assert result.trace.converged
    assert result.trace.points[-1].tau is not None
    assert result.trace.points[-1].tau > 0.9
    assert float(result.r_bar[0, 0]) == pytest.approx(4.0, abs=0.5)


def test_recover_rejects_infeasible_step_unless_forced() -> None:
    truth = _incoherent_truth()
    sampler = make_sampler("entrywise", truth)
    config = _config(16, eta=0.01, k_steps=10, trace_every=0)

    with pytest.raises(ConfigError):
        recover(sampler, config, truth)

    result = recover(sampler, config, truth, force=True, angular_only=True)
    assert result.r_bar is None
    assert result.step_size.gamma > 1.0


def test_recover_needs_eigengap_for_stochastic_sampler() -> None:
    truth = _incoherent_truth()
    sampler = make_sampler("entrywise", truth)

    with pytest.raises(ConfigError):
        recover(sampler, _config(16, eta=1e-4, k_steps=10))


def test_one_at_a_time_recovers_diagonal_target() -> None:
    truth = SpectralTruth(np.array([4.0, 1.0]), np.eye(2))
    sampler = make_sampler("exact", truth)

    result = one_at_a_time(sampler, 2, _config(2, k_steps=300), truth)

    np.testing.assert_allclose(np.abs(result.components[0]), [2.0, 0.0], atol=1e-4)
    np.testing.assert_allclose(np.abs(result.components[1]), [0.0, 1.0], atol=1e-4)
    np.testing.assert_allclose(result.estimate(), np.diag([4.0, 1.0]), atol=1e-4)


def test_one_at_a_time_residual_shrinks_and_spans_top_space() -> None:
    truth = synthetic_truth(8, [4.0, 2.0, 1.0], make_rng(1))
    sampler = make_sampler("exact", truth)

    result = one_at_a_time(sampler, 3, _config(8, k_steps=300), truth)

    target = truth.dense()
    residuals = [np.linalg.norm(partial - target) for partial in result.partial_estimates()]
    assert residuals[0] > residuals[1] > residuals[2]
    assert residuals[2] < 1e-6
    assert subspace_distance(np.column_stack(result.components), truth.dominant_basis(3)) < 1e-6


def test_one_at_a_time_single_component_matches_recover() -> None:
    truth = synthetic_truth(6, [3.0, 1.0], make_rng(8))
    sampler = make_sampler("exact", truth)
    config = _config(6, k_steps=100)

    single = recover(sampler, config, truth)
    sequence = one_at_a_time(sampler, 1, config, truth)

    np.testing.assert_allclose(sequence.components[0], single.factor[:, 0], atol=1e-12)


def test_one_at_a_time_reports_failed_component() -> None:
    truth = SpectralTruth(np.array([4.0, 1.0]), np.eye(2))
    sampler = make_sampler("exact", truth)

    with pytest.raises(ComponentError) as exc:
        one_at_a_time(sampler, 2, _config(2, eta=1000.0, k_steps=100, renorm_every=0), truth)

    assert exc.value.index == 0


def test_convergence_trace_requires_increasing_steps() -> None:
    trace = ConvergenceTrace(epsilon=0.1)
    trace.record(TracePoint(step=0, rho=0.2, tau=None, wall_ms=0.0))
    trace.record(TracePoint(step=5, rho=0.95, tau=None, wall_ms=1.0))

    with pytest.raises(ValueError):
        trace.record(TracePoint(step=5, rho=0.99, tau=None, wall_ms=2.0))

    assert trace.first_success == 5
    assert trace.final_rho == 0.95


def test_tau_never_decreases_under_exact_updates() -> None:
    truth = synthetic_truth(6, [3.0, 1.0, 0.5], make_rng(12))
    sampler = make_sampler("exact", truth)
    config = _config(6, eta=0.1, k_steps=1, renorm_every=0, trace_every=0)
    basis = truth.dominant_basis(1)
    y = np.ones((6, 1)) / math.sqrt(6.0)

    taus = [tau_metric(y, basis, 0.5, 6, 1, 1)]
    for _ in range(60):
        y, _ = angular_phase(sampler, config, y0=y)
        taus.append(tau_metric(y, basis, 0.5, 6, 1, 1))

    assert all(later >= earlier - 1e-12 for earlier, later in zip(taus, taus[1:]))
    assert taus[-1] > taus[0]


def test_radial_estimate_concentrates_within_chebyshev_bound() -> None:
    truth = _hadamard_rank_three()
    sampler = make_sampler("entrywise", truth)
    y_hat = random_orthonormal(8, 1, make_rng(41))
    target = float(y_hat[:, 0] @ truth.dense() @ y_hat[:, 0])
    l_steps, repetitions = 500, 200
    # p^2 sigma_r^2 / (L psi) = 0.2
    psi = sampler.params.sigma_r_sq / (l_steps * 0.2)

    misses = 0
    for rep in range(repetitions):
        r_bar = radial_phase(sampler, y_hat, l_steps, make_rng(42, rep))
        misses += float(r_bar[0, 0] - target) ** 2 >= psi

    assert sampler.params.sigma_r_sq == pytest.approx(36.0)
    assert misses / repetitions <= 0.2


def test_one_at_a_time_with_entrywise_samples_spans_top_space() -> None:
    truth = _hadamard_rank_three()
    sampler = make_sampler("entrywise", truth)
    # gamma = 2 n sigma_a^2 (1 + eps) eta / (gap eps) = 0.246 at every unit gap.
    config = _config(8, eta=1e-4, k_steps=60_000, l_steps=20_000, renorm_every=1000, trace_every=0, seed=9)

    result = one_at_a_time(sampler, 3, config, truth)

    target = truth.dense()
    residuals = [np.linalg.norm(partial - target) for partial in result.partial_estimates()]
    assert all(component.trace.converged for component in result.results)
    assert residuals[0] > residuals[1] > residuals[2]
    assert subspace_distance(np.column_stack(result.components), truth.dominant_basis(3)) < 0.2
