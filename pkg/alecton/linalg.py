"""Dense linear algebra for n x p iterates and small p x p symmetric matrices.

Iterates are plain float64 ndarrays. Rank-1 updates never materialise an
n x n matrix: a standard basis vector is carried as a `BasisVector` so that
entrywise samples touch a single row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import numpy.typing as npt

Vector = npt.NDArray[np.float64]
TallMatrix = npt.NDArray[np.float64]
SmallSymmetric = npt.NDArray[np.float64]

MAX_SMALL_DIM = 64
SYMMETRY_RTOL = 1e-12
SINGULAR_RTOL = 1e-12


class LinalgError(ValueError):
    pass


class DimensionError(LinalgError):
    pass


class RankDeficiencyError(LinalgError):
    def __init__(self, message: str, eigenvalue: float | None = None) -> None:
        super().__init__(message)
        self.eigenvalue = eigenvalue


class NumericError(LinalgError):
    pass


@dataclass(frozen=True)
class BasisVector:
    """Standard basis vector e_index in R^n."""

    n: int
    index: int

    def __post_init__(self) -> None:
        if not 0 <= self.index < self.n:
            raise DimensionError(f"basis index {self.index} outside 0..{self.n - 1}")

    def dense(self) -> Vector:
        out = np.zeros(self.n)
        out[self.index] = 1.0
        return out


Direction = Union[Vector, BasisVector]


def as_vector(values: npt.ArrayLike, n: int | None = None) -> Vector:
    vec = np.array(values, dtype=np.float64).reshape(-1)
    if n is not None and vec.shape[0] != n:
        raise DimensionError(f"expected length {n}, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise NumericError("vector has non-finite entries")
    return vec


def as_tall(values: npt.ArrayLike) -> TallMatrix:
    mat = np.array(values, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat.reshape(-1, 1)
    if mat.ndim != 2:
        raise DimensionError(f"expected a 2-d array, got {mat.ndim} dimensions")
    n, p = mat.shape
    if p < 1 or n < p:
        raise DimensionError(f"tall matrix needs n >= p >= 1, got {n}x{p}")
    if not np.all(np.isfinite(mat)):
        raise NumericError("matrix has non-finite entries")
    return mat


def symmetric(values: npt.ArrayLike) -> SmallSymmetric:
    """Validate a small square matrix and average it with its transpose."""
    mat = np.array(values, dtype=np.float64)
    if mat.ndim == 0:
        mat = mat.reshape(1, 1)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {mat.shape}")
    if mat.shape[0] > MAX_SMALL_DIM:
        raise DimensionError(f"small symmetric routines support p <= {MAX_SMALL_DIM}, got {mat.shape[0]}")
    if not np.all(np.isfinite(mat)):
        raise NumericError("matrix has non-finite entries")
    return 0.5 * (mat + mat.T)


def dense(direction: Direction) -> Vector:
    if isinstance(direction, BasisVector):
        return direction.dense()
    return direction


def dot(direction: Direction, y: Vector) -> float:
    if isinstance(direction, BasisVector):
        return float(y[direction.index])
    return float(direction @ y)


def random_orthonormal(n: int, p: int, rng: np.random.Generator) -> TallMatrix:
    """Haar-distributed n x p matrix with orthonormal columns."""
    if n < 1 or p < 1:
        raise DimensionError(f"dimensions must be positive, got n={n}, p={p}")
    if p > n:
        raise DimensionError(f"cannot draw {p} orthonormal columns in R^{n}")
    gaussian = rng.standard_normal((n, p))
    q, r = np.linalg.qr(gaussian)
    # Sign fix makes the factorisation unique, hence rotation invariant.
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    # Second pass cleans up the last bits of orthogonality.
    q2, r2 = np.linalg.qr(q)
    return q2 * np.sign(np.diag(r2))


def gram(y: TallMatrix) -> SmallSymmetric:
    return symmetric(y.T @ y)


def small_eigs(s: SmallSymmetric) -> Vector:
    """Eigenvalues of a small symmetric matrix, descending."""
    s = symmetric(s)
    try:
        values = np.linalg.eigvalsh(s)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"symmetric eigensolver did not converge: {exc}") from exc
    return values[::-1].copy()


def small_eigh(s: SmallSymmetric) -> tuple[Vector, TallMatrix]:
    """Eigenpairs of a small symmetric matrix, eigenvalues descending."""
    s = symmetric(s)
    try:
        values, vectors = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"symmetric eigensolver did not converge: {exc}") from exc
    return values[::-1].copy(), vectors[:, ::-1].copy()


def inv_sqrt_psd(s: SmallSymmetric) -> SmallSymmetric:
    values, vectors = small_eigh(s)
    top = float(values[0])
    smallest = float(values[-1])
    if top <= 0.0 or smallest <= SINGULAR_RTOL * top:
        raise RankDeficiencyError(
            f"matrix is rank deficient: eigenvalue {smallest:.3e} against largest {top:.3e}",
            eigenvalue=smallest,
        )
    return symmetric((vectors / np.sqrt(values)) @ vectors.T)


def sqrt_psd(s: SmallSymmetric) -> tuple[SmallSymmetric, int]:
    """PSD square root after clipping negative eigenvalues; returns the clip count."""
    values, vectors = small_eigh(s)
    clipped = int(np.count_nonzero(values < 0.0))
    values = np.clip(values, 0.0, None)
    return symmetric((vectors * np.sqrt(values)) @ vectors.T), clipped


def det_small(s: SmallSymmetric) -> float:
    s = symmetric(s)
    if s.shape[0] == 1:
        return float(s[0, 0])
    return float(np.linalg.det(s))


def orthonormalize(y: TallMatrix) -> TallMatrix:
    """Right-multiply by (Y^T Y)^(-1/2); the column space is unchanged."""
    return y @ inv_sqrt_psd(gram(y))


def right_product(v: Direction, y: TallMatrix) -> Vector:
    """Row vector v^T Y."""
    if isinstance(v, BasisVector):
        if v.n != y.shape[0]:
            raise DimensionError(f"direction length {v.n} does not match {y.shape[0]} rows")
        return y[v.index].copy()
    if v.shape[0] != y.shape[0]:
        raise DimensionError(f"direction length {v.shape[0]} does not match {y.shape[0]} rows")
    return v @ y


def add_outer(y: TallMatrix, scale: float, u: Direction, row: Vector) -> TallMatrix:
    """In place: Y <- Y + scale * u row."""
    if isinstance(u, BasisVector):
        if u.n != y.shape[0]:
            raise DimensionError(f"direction length {u.n} does not match {y.shape[0]} rows")
        y[u.index] += scale * row
        return y
    if u.shape[0] != y.shape[0]:
        raise DimensionError(f"direction length {u.shape[0]} does not match {y.shape[0]} rows")
    y += scale * np.outer(u, row)
    return y


def apply_outer(y: TallMatrix, scale: float, u: Direction, v: Direction) -> TallMatrix:
    """In place: Y <- Y + scale * u (v^T Y), O(np) and without an n x n matrix."""
    row = right_product(v, y)
    if scale == 0.0:
        return y
    return add_outer(y, scale, u, row)


def principal_cosines(a: TallMatrix, b: TallMatrix) -> Vector:
    """Cosines of the principal angles between the column spaces of a and b, descending."""
    qa = orthonormalize(a)
    qb = orthonormalize(b)
    cosines = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.clip(cosines, 0.0, 1.0)


def subspace_distance(a: TallMatrix, b: TallMatrix) -> float:
    """Sine of the largest principal angle (spectral distance of the projectors)."""
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"subspaces differ in dimension: {a.shape[1]} vs {b.shape[1]}")
    smallest = float(principal_cosines(a, b).min())
    return float(np.sqrt(max(0.0, 1.0 - smallest * smallest)))
