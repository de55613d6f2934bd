"""Sampling distributions for stochastic matrix recovery.

Every sampler emits `SampleOp` values: an unbiased random operator written
as a short sum of scaled outer products, so that applying it to an n x p
iterate costs O(np) per term.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from alecton.linalg import (
    BasisVector,
    Direction,
    TallMatrix,
    Vector,
    add_outer,
    as_vector,
    dense,
    dot,
    right_product,
)
from alecton.models import VarianceParams
from alecton.truth import GroundTruth, ProjectionTruth, SpectralTruth, TripletTruth

LOGGER = logging.getLogger(__name__)

TRACE_VARIANCE_MIN_N = 50
DEGENERATE_NORM = 1e-12
STREAM_BATCH = 4096


class ParameterError(ValueError):
    pass


class SamplerKind(str, enum.Enum):
    EXACT = "exact"
    ENTRYWISE = "entrywise"
    RECT = "rect"
    TRACE = "trace"
    TRACE_SYMMETRIC = "trace-sym"
    SUBSPACE = "subspace"
    SUBSPACE_SPLIT = "subspace-split"


@dataclass(frozen=True)
class Term:
    scale: float
    left: Direction
    right: Direction


@dataclass(frozen=True)
class SampleOp:
    """A = sum_t scale_t * left_t right_t^T."""

    terms: tuple[Term, ...]

    @property
    def rank(self) -> int:
        return len(self.terms)

    def apply(self, y: TallMatrix, eta: float) -> TallMatrix:
        """In place: Y <- Y + eta * A Y."""
        if len(self.terms) == 1:
            term = self.terms[0]
            if term.scale != 0.0:
                add_outer(y, eta * term.scale, term.left, right_product(term.right, y))
            return y
        rows = [right_product(term.right, y) for term in self.terms]
        for term, row in zip(self.terms, rows):
            if term.scale != 0.0:
                add_outer(y, eta * term.scale, term.left, row)
        return y

    def product(self, y: TallMatrix) -> TallMatrix:
        """A Y as a new array."""
        out = np.zeros_like(y)
        for term in self.terms:
            if term.scale != 0.0:
                add_outer(out, term.scale, term.left, right_product(term.right, y))
        return out

    def sandwich(self, y_hat: TallMatrix) -> np.ndarray:
        """Y^T A Y, a p x p matrix."""
        p = y_hat.shape[1]
        out = np.zeros((p, p))
        for term in self.terms:
            if term.scale != 0.0:
                out += term.scale * np.outer(right_product(term.left, y_hat), right_product(term.right, y_hat))
        return out

    def quadratic(self, y: Vector, z: Vector) -> float:
        """y^T A z in O(n) per term."""
        return float(sum(term.scale * dot(term.left, y) * dot(term.right, z) for term in self.terms))

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros((n, n))
        for term in self.terms:
            out += term.scale * np.outer(dense(term.left), dense(term.right))
        return out


@dataclass(frozen=True)
class NoiseModel:
    additive: float = 0.0
    multiplicative: float = 0.0

    def __post_init__(self) -> None:
        if self.additive < 0 or self.multiplicative < 0:
            raise ParameterError(
                f"noise standard deviations must be >= 0, got additive={self.additive}, "
                f"multiplicative={self.multiplicative}"
            )

    @property
    def silent(self) -> bool:
        return self.additive == 0.0 and self.multiplicative == 0.0

    def perturb(self, op: SampleOp, rng: np.random.Generator) -> SampleOp:
        """One (eps_m, eps_a) pair per sample: scale <- scale * (1 + eps_m) + eps_a."""
        if self.silent:
            return op
        eps_m = rng.normal(0.0, self.multiplicative) if self.multiplicative > 0 else 0.0
        eps_a = rng.normal(0.0, self.additive) if self.additive > 0 else 0.0
        return SampleOp(
            tuple(Term(t.scale * (1.0 + eps_m) + eps_a, t.left, t.right) for t in op.terms)
        )


# Sample builders with the randomness supplied by the caller.


def entrywise_op(truth: GroundTruth, i: int, j: int) -> SampleOp:
    n = truth.dim
    return SampleOp((Term(n * n * truth.entry(i, j), BasisVector(n, i), BasisVector(n, j)),))


def rect_op(truth: TripletTruth, i: int, j: int) -> SampleOp:
    m, n = truth.rows, truth.cols
    dim = m + n
    scale = m * n * float(truth.values[i, j])
    row, col = BasisVector(dim, i), BasisVector(dim, m + j)
    return SampleOp((Term(scale, row, col), Term(scale, col, row)))


def trace_op(truth: GroundTruth, v: Vector, w: Vector) -> SampleOp:
    n = truth.dim
    measurement = float(v @ truth.matvec(w))
    return SampleOp((Term(n * n * measurement, v, w),))


def trace_symmetric_op(truth: GroundTruth, g1: Vector, g2: Vector) -> SampleOp | None:
    """Build the trace sample from two quadratic measurements; None when g1 ~ +-g2."""
    n = truth.dim
    u = g1 + g2
    v = g1 - g2
    norm_u = float(np.linalg.norm(u))
    norm_v = float(np.linalg.norm(v))
    if norm_u < DEGENERATE_NORM or norm_v < DEGENERATE_NORM:
        return None
    norm1_sq = float(g1 @ g1)
    norm2_sq = float(g2 @ g2)
    unit1 = g1 / math.sqrt(norm1_sq)
    unit2 = g2 / math.sqrt(norm2_sq)
    # Only u^T A u style measurements are consulted.
    quad1 = float(unit1 @ truth.matvec(unit1))
    quad2 = float(unit2 @ truth.matvec(unit2))
    measurement = (norm1_sq * quad1 - norm2_sq * quad2) / (norm_u * norm_v)
    return SampleOp((Term(n * n * measurement, u / norm_u, v / norm_v),))


def subspace_op(truth: ProjectionTruth, v: Vector, q_mask: np.ndarray, r_mask: np.ndarray, m_keep: int) -> SampleOp:
    n = truth.dim
    scale = truth.rank * n * n / (m_keep * m_keep)
    return SampleOp((Term(scale, np.where(q_mask, v, 0.0), np.where(r_mask, v, 0.0)),))


def exact_op(truth: GroundTruth) -> SampleOp:
    values, vectors = truth.spectrum()
    if isinstance(truth, TripletTruth):
        # The embedding also carries -sigma_k on (u_k, -v_k)/sqrt(2).
        m = truth.rows
        mirrored = vectors.copy()
        mirrored[m:] *= -1.0
        terms = [Term(float(s), vectors[:, k], vectors[:, k]) for k, s in enumerate(values)]
        terms += [Term(-float(s), mirrored[:, k], mirrored[:, k]) for k, s in enumerate(values)]
        return SampleOp(tuple(terms))
    return SampleOp(tuple(Term(float(s), vectors[:, k], vectors[:, k]) for k, s in enumerate(values)))


# Single draws.


def draw_entrywise(truth: GroundTruth, rng: np.random.Generator) -> SampleOp:
    i, j = rng.integers(truth.dim, size=2)
    return entrywise_op(truth, int(i), int(j))


def draw_rect(truth: TripletTruth, rng: np.random.Generator) -> SampleOp:
    return rect_op(truth, int(rng.integers(truth.rows)), int(rng.integers(truth.cols)))


def _unit(rng: np.random.Generator, n: int) -> Vector:
    while True:
        g = rng.standard_normal(n)
        norm = float(np.linalg.norm(g))
        if norm > DEGENERATE_NORM:
            return g / norm


def draw_trace(truth: GroundTruth, rng: np.random.Generator) -> SampleOp:
    n = truth.dim
    return trace_op(truth, _unit(rng, n), _unit(rng, n))


def draw_trace_symmetric(truth: GroundTruth, rng: np.random.Generator) -> SampleOp:
    n = truth.dim
    while True:
        op = trace_symmetric_op(truth, rng.standard_normal(n), rng.standard_normal(n))
        if op is not None:
            return op


def _check_m_keep(truth: GroundTruth, m_keep: int) -> None:
    if not isinstance(truth, ProjectionTruth):
        raise ParameterError("subspace sampling needs a projection truth")
    if not 1 <= m_keep <= truth.dim:
        raise ParameterError(f"m_keep must be in 1..{truth.dim}, got {m_keep}")


def _subspace_vector(truth: ProjectionTruth, rng: np.random.Generator) -> Vector:
    return truth.basis @ _unit(rng, truth.rank)


def draw_subspace(truth: ProjectionTruth, rng: np.random.Generator, m_keep: int) -> SampleOp:
    _check_m_keep(truth, m_keep)
    n = truth.dim
    keep = m_keep / n
    v = _subspace_vector(truth, rng)
    return subspace_op(truth, v, rng.random(n) < keep, rng.random(n) < keep, m_keep)


def split_masks(rng: np.random.Generator, n: int, keep: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Revealed mask S and independent Bernoulli(keep) masks Q, R supported inside S."""
    single = keep * (1.0 - keep)
    revealed_rate = 2.0 * single + keep * keep
    x = rng.random(n)
    q_mask = (x < single) | ((x >= 2.0 * single) & (x < revealed_rate))
    r_mask = (x >= single) & (x < revealed_rate)
    return x < revealed_rate, q_mask, r_mask


def draw_subspace_split(truth: ProjectionTruth, rng: np.random.Generator, m_keep: int) -> SampleOp:
    _check_m_keep(truth, m_keep)
    n = truth.dim
    v = _subspace_vector(truth, rng)
    revealed, q_mask, r_mask = split_masks(rng, n, m_keep / n)
    # Only S v is consulted.
    seen = np.where(revealed, v, 0.0)
    return subspace_op(truth, seen, q_mask, r_mask, m_keep)


_REQUIRED_TRUTH: dict[SamplerKind, tuple[type, ...]] = {
    SamplerKind.EXACT: (SpectralTruth, ProjectionTruth, TripletTruth),
    SamplerKind.ENTRYWISE: (SpectralTruth, ProjectionTruth),
    SamplerKind.RECT: (TripletTruth,),
    SamplerKind.TRACE: (SpectralTruth, ProjectionTruth),
    SamplerKind.TRACE_SYMMETRIC: (SpectralTruth, ProjectionTruth),
    SamplerKind.SUBSPACE: (ProjectionTruth,),
    SamplerKind.SUBSPACE_SPLIT: (ProjectionTruth,),
}


@dataclass(frozen=True, eq=False)
class Sampler:
    kind: SamplerKind
    truth: GroundTruth
    noise: NoiseModel | None = None
    deflation: tuple[Vector, ...] = field(default=())
    m_keep: int | None = None

    def __post_init__(self) -> None:
        kind = SamplerKind(self.kind)
        object.__setattr__(self, "kind", kind)
        allowed = _REQUIRED_TRUTH[kind]
        if not isinstance(self.truth, allowed):
            names = ", ".join(cls.__name__ for cls in allowed)
            raise ParameterError(f"{kind.value} sampler needs one of: {names}")
        if kind in (SamplerKind.SUBSPACE, SamplerKind.SUBSPACE_SPLIT):
            if self.m_keep is None:
                raise ParameterError(f"{kind.value} sampler needs m_keep")
            _check_m_keep(self.truth, self.m_keep)
        for idx, vec in enumerate(self.deflation):
            if vec.shape != (self.dim,):
                raise ParameterError(f"deflation vector {idx} has shape {vec.shape}, expected ({self.dim},)")

    @property
    def dim(self) -> int:
        return self.truth.dim

    @property
    def stochastic(self) -> bool:
        return self.kind is not SamplerKind.EXACT

    @property
    def base_rank(self) -> int:
        if self.kind is SamplerKind.EXACT:
            return exact_op(self.truth).rank
        if self.kind is SamplerKind.RECT:
            return 2
        return 1

    @property
    def max_rank(self) -> int:
        return self.base_rank + len(self.deflation)

    @cached_property
    def params(self) -> VarianceParams:
        return variance_params(self)

    @cached_property
    def _exact(self) -> SampleOp:
        return self._finish(exact_op(self.truth), None)

    def expectation(self) -> np.ndarray:
        """E[A~] as a dense matrix: the target minus the deflated components."""
        out = self.truth.dense()
        for vec in self.deflation:
            out = out - np.outer(vec, vec)
        return out

    def _finish(self, op: SampleOp, rng: np.random.Generator | None) -> SampleOp:
        if self.noise is not None and rng is not None:
            op = self.noise.perturb(op, rng)
        if self.deflation:
            op = SampleOp(op.terms + tuple(Term(-1.0, vec, vec) for vec in self.deflation))
        return op

    def draw(self, rng: np.random.Generator) -> SampleOp:
        kind = self.kind
        if kind is SamplerKind.EXACT:
            return self._exact
        if kind is SamplerKind.ENTRYWISE:
            op = draw_entrywise(self.truth, rng)
        elif kind is SamplerKind.RECT:
            op = draw_rect(self.truth, rng)
        elif kind is SamplerKind.TRACE:
            op = draw_trace(self.truth, rng)
        elif kind is SamplerKind.TRACE_SYMMETRIC:
            op = draw_trace_symmetric(self.truth, rng)
        elif kind is SamplerKind.SUBSPACE:
            op = draw_subspace(self.truth, rng, self.m_keep)
        else:
            op = draw_subspace_split(self.truth, rng, self.m_keep)
        return self._finish(op, rng)

    def stream(self, rng: np.random.Generator) -> Iterator[SampleOp]:
        """Endless sample stream; index draws for entrywise kinds come in batches."""
        kind = self.kind
        if kind is SamplerKind.EXACT:
            while True:
                yield self._exact
        if kind is SamplerKind.ENTRYWISE:
            n = self.dim
            while True:
                for i, j in rng.integers(n, size=(STREAM_BATCH, 2)).tolist():
                    yield self._finish(entrywise_op(self.truth, i, j), rng)
        if kind is SamplerKind.RECT:
            truth = self.truth
            while True:
                rows = rng.integers(truth.rows, size=STREAM_BATCH).tolist()
                cols = rng.integers(truth.cols, size=STREAM_BATCH).tolist()
                for i, j in zip(rows, cols):
                    yield self._finish(rect_op(truth, i, j), rng)
        while True:
            yield self.draw(rng)


def make_sampler(
    kind: SamplerKind | str,
    truth: GroundTruth,
    m_keep: int | None = None,
) -> Sampler:
    sampler = Sampler(kind=SamplerKind(kind), truth=truth, m_keep=m_keep)
    if sampler.kind in (SamplerKind.TRACE, SamplerKind.TRACE_SYMMETRIC) and truth.dim <= TRACE_VARIANCE_MIN_N:
        LOGGER.warning(
            "Trace sampler at n=%s: the variance bound assumes n > %s", truth.dim, TRACE_VARIANCE_MIN_N
        )
    return sampler


def wrap_noisy(base: Sampler, additive_sd: float, multiplicative_sd: float) -> Sampler:
    noise = NoiseModel(additive=float(additive_sd), multiplicative=float(multiplicative_sd))
    if noise.silent:
        return base
    return dataclasses.replace(base, noise=noise)


def deflate(base: Sampler, recovered: Sequence[Vector]) -> Sampler:
    if not recovered:
        return base
    vectors = tuple(as_vector(vec, base.dim) for vec in recovered)
    return dataclasses.replace(base, deflation=base.deflation + vectors)


def matrix_incoherence(truth: GroundTruth) -> float:
    values, vectors = truth.spectrum()
    active = vectors[:, values != 0]
    if active.shape[1] == 0:
        return 1.0
    n = vectors.shape[0]
    return float(math.sqrt(n) * np.abs(active).max())


def subspace_incoherence(truth: ProjectionTruth) -> float:
    n, r = truth.basis.shape
    return float(n / r * np.max(np.sum(truth.basis**2, axis=1)))


def variance_params(sampler: Sampler) -> VarianceParams:
    truth = sampler.truth
    kind = sampler.kind
    small_n = False
    if kind is SamplerKind.EXACT:
        return VarianceParams(0.0, 0.0, degenerate=True)
    if kind is SamplerKind.ENTRYWISE:
        mu4 = matrix_incoherence(truth) ** 4
        sigma_a, sigma_r = mu4 * truth.frobenius_sq, mu4 * truth.trace**2
    elif kind is SamplerKind.RECT:
        sigma_a = sigma_r = 2.0 * truth.xi * truth.data_frobenius_sq
    elif kind in (SamplerKind.TRACE, SamplerKind.TRACE_SYMMETRIC):
        sigma_a, sigma_r = 16.0 * truth.frobenius_sq, 16.0 * truth.trace**2
        small_n = truth.dim <= TRACE_VARIANCE_MIN_N
    else:
        mu = subspace_incoherence(truth)
        r = truth.rank
        sigma_a = sigma_r = r * r * (1.0 + mu * r / sampler.m_keep) ** 2
    noise = sampler.noise
    if noise is not None and not noise.silent:
        extra = sampler.dim**2 * noise.additive**2
        inflate = 1.0 + noise.multiplicative**2
        sigma_a = sigma_a * inflate + extra
        sigma_r = sigma_r * inflate + extra
    return VarianceParams(float(sigma_a), float(sigma_r), small_n=small_n)


@dataclass(frozen=True)
class AvcProbe:
    condition: str
    estimate: float
    std_err: float
    bound: float
    passed: bool


@dataclass(frozen=True)
class AvcReport:
    params: VarianceParams
    probes: tuple[AvcProbe, ...]

    @property
    def passed(self) -> bool:
        return all(probe.passed for probe in self.probes)


def _commuting_weights(target: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Random PSD matrices c0 I + c1 A + c2 A^2 (negative spectrum clipped), all commuting with A."""
    values, vectors = np.linalg.eigh(target)
    coeffs = rng.random((count, 3))
    spectra = coeffs[:, :1] + coeffs[:, 1:2] * values + coeffs[:, 2:] * values**2
    spectra = np.clip(spectra, 0.0, None)
    return np.einsum("ij,kj,lj->kil", vectors, spectra, vectors)


def empirical_avc_check(
    sampler: Sampler,
    truth: GroundTruth,
    trials: int,
    rng: np.random.Generator,
    params: VarianceParams | None = None,
    probes: int = 10,
    chunk: int = 2048,
) -> AvcReport:
    """Monte Carlo estimates of both variance-condition left-hand sides against their bounds."""
    n = sampler.dim
    if params is None:
        params = sampler.params
    if params.degenerate:
        lam_sq = truth.lambda_max**2
        params = VarianceParams(lam_sq, lam_sq, degenerate=True)
    ys = rng.standard_normal((n, probes))
    ys /= np.linalg.norm(ys, axis=0)
    weights = _commuting_weights(sampler.expectation(), probes, rng)
    traces = np.einsum("kii->k", weights)

    angular = np.zeros((trials, probes))
    radial = np.zeros((trials, probes))
    draws = sampler.stream(rng)
    for start in range(0, trials, chunk):
        stop = min(trials, start + chunk)
        products = np.stack([next(draws).product(ys) for _ in range(start, stop)])
        angular[start:stop] = np.einsum("tik,kij,tjk->tk", products, weights, products)
        radial[start:stop] = np.einsum("ik,tik->tk", ys, products) ** 2

    results: list[AvcProbe] = []
    for name, samples, bounds in (
        ("angular", angular, params.sigma_a_sq * traces),
        ("radial", radial, np.full(probes, params.sigma_r_sq)),
    ):
        means = samples.mean(axis=0)
        errs = samples.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros(probes)
        for k in range(probes):
            estimate, err, bound = float(means[k]), float(errs[k]), float(bounds[k])
            if estimate <= 0.0:
                passed = True
            else:
                passed = estimate <= bound * (1.0 + 3.0 * err / estimate)
            results.append(AvcProbe(name, estimate, err, bound, passed))
    report = AvcReport(params=params, probes=tuple(results))
    LOGGER.info(
        "AVC check for %s sampler: %s/%s probes passed",
        sampler.kind.value,
        sum(probe.passed for probe in results),
        len(results),
    )
    return report
