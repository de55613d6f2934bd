"""Target matrices: spectral, rectangular triplet and projection forms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
from scipy.linalg import hadamard

from alecton.linalg import DimensionError, TallMatrix, Vector, as_tall, as_vector, gram, random_orthonormal

ORTHONORMAL_TOL = 1e-10
MAX_TRIPLET_CELLS = 10_000_000


def _check_orthonormal(basis: TallMatrix, what: str) -> None:
    error = np.abs(gram(basis) - np.eye(basis.shape[1])).max()
    if error > ORTHONORMAL_TOL:
        raise DimensionError(f"{what} is not orthonormal (max Gram error {error:.2e})")


class GroundTruth:
    """Common access to a square symmetric target A (rectangular data via its embedding)."""

    dim: int

    def entry(self, i: int, j: int) -> float:
        raise NotImplementedError

    def matvec(self, v: Vector) -> Vector:
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        raise NotImplementedError

    def spectrum(self) -> tuple[Vector, TallMatrix]:
        """Stored eigenpairs (eigenvalues descending); remaining eigenvalues are 0."""
        raise NotImplementedError

    def eigenvalue(self, index: int) -> float:
        """lambda_index with 1-based index; unstored eigenvalues are 0."""
        values, _ = self.spectrum()
        if index < 1:
            raise ValueError("eigenvalue index is 1-based")
        if index <= values.shape[0]:
            return float(values[index - 1])
        return 0.0

    def eigengap(self, q: int) -> float:
        return self.eigenvalue(q) - self.eigenvalue(q + 1)

    def dominant_basis(self, q: int) -> TallMatrix:
        """Orthonormal basis of span(u_1..u_q), the range of the projector U."""
        values, vectors = self.spectrum()
        if q > vectors.shape[1]:
            raise DimensionError(f"only {vectors.shape[1]} eigenvectors stored, asked for {q}")
        return vectors[:, :q]

    @property
    def frobenius_sq(self) -> float:
        values, _ = self.spectrum()
        return float(np.sum(values**2))

    @property
    def trace(self) -> float:
        values, _ = self.spectrum()
        return float(np.sum(values))

    @property
    def lambda_max(self) -> float:
        values, _ = self.spectrum()
        return float(np.max(np.abs(values))) if values.size else 0.0


@dataclass(frozen=True, eq=False)
class SpectralTruth(GroundTruth):
    """A = sum_k eigenvalues[k] u_k u_k^T with orthonormal u_k stored as columns."""

    eigenvalues: Vector
    eigenvectors: TallMatrix

    def __post_init__(self) -> None:
        values = as_vector(self.eigenvalues)
        vectors = as_tall(self.eigenvectors)
        if vectors.shape[1] != values.shape[0]:
            raise DimensionError(
                f"{values.shape[0]} eigenvalues but {vectors.shape[1]} eigenvector columns"
            )
        if np.any(np.diff(values) > 0):
            raise ValueError("eigenvalues must be sorted descending")
        _check_orthonormal(vectors, "eigenvector matrix")
        object.__setattr__(self, "eigenvalues", values)
        object.__setattr__(self, "eigenvectors", vectors)

    @property
    def dim(self) -> int:
        return int(self.eigenvectors.shape[0])

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.eigenvalues))

    def entry(self, i: int, j: int) -> float:
        return float((self.eigenvectors[i] * self.eigenvalues) @ self.eigenvectors[j])

    def matvec(self, v: Vector) -> Vector:
        return self.eigenvectors @ (self.eigenvalues * (self.eigenvectors.T @ v))

    def dense(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T

    def spectrum(self) -> tuple[Vector, TallMatrix]:
        return self.eigenvalues, self.eigenvectors

    def tail(self, start: int) -> "SpectralTruth":
        """Eigenpairs from 0-based position `start` on: the target left after deflating the first ones."""
        return SpectralTruth(self.eigenvalues[start:], self.eigenvectors[:, start:])


@dataclass(frozen=True, eq=False)
class ProjectionTruth(GroundTruth):
    """Rank-r projector A = U U^T for subspace sampling."""

    basis: TallMatrix

    def __post_init__(self) -> None:
        basis = as_tall(self.basis)
        _check_orthonormal(basis, "subspace basis")
        object.__setattr__(self, "basis", basis)

    @property
    def dim(self) -> int:
        return int(self.basis.shape[0])

    @property
    def rank(self) -> int:
        return int(self.basis.shape[1])

    def entry(self, i: int, j: int) -> float:
        return float(self.basis[i] @ self.basis[j])

    def matvec(self, v: Vector) -> Vector:
        return self.basis @ (self.basis.T @ v)

    def dense(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def spectrum(self) -> tuple[Vector, TallMatrix]:
        return np.ones(self.rank), self.basis


@dataclass(frozen=True, eq=False)
class TripletTruth(GroundTruth):
    """Rectangular m x n data M, seen through its symmetric embedding [[0, M], [M^T, 0]]."""

    rows: int
    cols: int
    values: np.ndarray
    observed: tuple[tuple[int, int], ...] = field(default=())

    @classmethod
    def from_entries(cls, rows: int, cols: int, entries: Iterable[tuple[int, int, float]]) -> "TripletTruth":
        if rows < 1 or cols < 1:
            raise DimensionError(f"matrix dimensions must be positive, got {rows}x{cols}")
        if rows * cols > MAX_TRIPLET_CELLS:
            raise DimensionError(f"{rows}x{cols} exceeds the dense store limit of {MAX_TRIPLET_CELLS} cells")
        values = np.zeros((rows, cols))
        seen: dict[tuple[int, int], None] = {}
        for i, j, value in entries:
            if not (0 <= i < rows and 0 <= j < cols):
                raise DimensionError(f"entry ({i}, {j}) outside {rows}x{cols}")
            values[i, j] = value
            seen[(i, j)] = None
        return cls(rows=rows, cols=cols, values=values, observed=tuple(seen))

    @property
    def dim(self) -> int:
        return self.rows + self.cols

    @property
    def count(self) -> int:
        return len(self.observed)

    @property
    def data_frobenius_sq(self) -> float:
        return float(np.sum(self.values**2))

    @property
    def xi(self) -> float:
        """Entry bound max M_ij^2 * m n / ||M||_F^2."""
        total = self.data_frobenius_sq
        if total == 0.0:
            return 0.0
        return float(np.max(self.values**2) * self.rows * self.cols / total)

    def entry(self, i: int, j: int) -> float:
        m = self.rows
        if i < m and j >= m:
            return float(self.values[i, j - m])
        if i >= m and j < m:
            return float(self.values[j, i - m])
        return 0.0

    def matvec(self, v: Vector) -> Vector:
        m = self.rows
        return np.concatenate([self.values @ v[m:], self.values.T @ v[:m]])

    def dense(self) -> np.ndarray:
        m, n = self.rows, self.cols
        out = np.zeros((m + n, m + n))
        out[:m, m:] = self.values
        out[m:, :m] = self.values.T
        return out

    @cached_property
    def _singular(self) -> tuple[Vector, TallMatrix, TallMatrix]:
        left, sing, right_t = np.linalg.svd(self.values, full_matrices=False)
        return sing, left, right_t.T

    def spectrum(self) -> tuple[Vector, TallMatrix]:
        """Positive half of the embedding spectrum: sigma_k with (u_k, v_k)/sqrt(2)."""
        sing, left, right = self._singular
        vectors = np.vstack([left, right]) / np.sqrt(2.0)
        return sing, vectors

    @property
    def frobenius_sq(self) -> float:
        return 2.0 * self.data_frobenius_sq

    @property
    def trace(self) -> float:
        return 0.0

    def rmse(self, estimate: np.ndarray) -> float:
        """Root mean squared error of an m x n estimate over the stored entries only."""
        if not self.observed:
            return 0.0
        idx = np.array(self.observed)
        diff = estimate[idx[:, 0], idx[:, 1]] - self.values[idx[:, 0], idx[:, 1]]
        return float(np.sqrt(np.mean(diff**2)))


def estimate_rectangular(components: list[Vector], rows: int) -> np.ndarray:
    """m x n estimate 2 * Y_row Y_col^T from vectors recovered on the embedding."""
    if not components:
        raise ValueError("no components to assemble")
    stacked = np.column_stack(components)
    return 2.0 * stacked[:rows] @ stacked[rows:].T


COHERENCE_MODES = ("random", "basis", "hadamard")


def synthetic_truth(
    n: int,
    eigenvalues: Iterable[float],
    rng: np.random.Generator,
    mode: str = "random",
) -> SpectralTruth:
    """Spectral truth with the given eigenvalues and a random, axis-aligned or Hadamard basis."""
    values = np.asarray(list(eigenvalues), dtype=np.float64)
    rank = values.shape[0]
    if rank < 1 or rank > n:
        raise DimensionError(f"need 1 <= rank <= n, got rank={rank} n={n}")
    if np.any(values <= 0):
        raise ValueError("eigenvalues must be positive")
    if np.any(np.diff(values) > 0):
        raise ValueError("eigenvalues must be sorted descending")
    if mode == "random":
        vectors = random_orthonormal(n, rank, rng)
    elif mode == "basis":
        vectors = np.eye(n)[:, rng.permutation(n)[:rank]]
    elif mode == "hadamard":
        if n & (n - 1):
            raise DimensionError(f"hadamard basis needs n a power of two, got {n}")
        vectors = hadamard(n)[:, rng.permutation(n)[:rank]] / math.sqrt(n)
    else:
        raise ValueError(f"unknown coherence mode {mode!r}; use one of {', '.join(COHERENCE_MODES)}")
    return SpectralTruth(values, vectors)
