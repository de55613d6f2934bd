import numpy as np
import pytest

from alecton.linalg import (
    BasisVector,
    DimensionError,
    RankDeficiencyError,
    apply_outer,
    det_small,
    gram,
    inv_sqrt_psd,
    orthonormalize,
    principal_cosines,
    random_orthonormal,
    small_eigs,
    sqrt_psd,
    subspace_distance,
    symmetric,
)
from alecton.utils import make_rng


def test_random_orthonormal_has_orthonormal_columns() -> None:
    y = random_orthonormal(50, 4, make_rng(3))

    assert y.shape == (50, 4)
    np.testing.assert_allclose(gram(y), np.eye(4), atol=1e-12)


def test_random_orthonormal_rejects_wide_request() -> None:
    with pytest.raises(DimensionError):
        random_orthonormal(3, 4, make_rng(0))


def test_small_eigs_are_descending() -> None:
    values = small_eigs(np.array([[2.0, 1.0], [1.0, 2.0]]))

    np.testing.assert_allclose(values, [3.0, 1.0])


def test_symmetric_rejects_large_matrices() -> None:
    with pytest.raises(DimensionError):
        symmetric(np.eye(65))


def test_inv_sqrt_psd_of_diagonal() -> None:
    root = inv_sqrt_psd(np.diag([4.0, 9.0]))

    np.testing.assert_allclose(root, np.diag([0.5, 1.0 / 3.0]), atol=1e-14)


def test_inv_sqrt_psd_reports_rank_deficiency() -> None:
    with pytest.raises(RankDeficiencyError) as exc:
        inv_sqrt_psd(np.diag([1.0, 0.0]))

    assert exc.value.eigenvalue == pytest.approx(0.0, abs=1e-15)


def test_sqrt_psd_clips_negative_eigenvalues() -> None:
    root, clipped = sqrt_psd(np.diag([4.0, -0.01]))

    assert clipped == 1
    np.testing.assert_allclose(root, np.diag([2.0, 0.0]), atol=1e-14)


def test_det_small_handles_scalars_and_matrices() -> None:
    assert det_small(np.array([[2.5]])) == 2.5
    assert det_small(np.diag([2.0, 3.0])) == pytest.approx(6.0)


def test_apply_outer_with_basis_vectors_matches_dense_update() -> None:
    rng = make_rng(1)
    y = rng.standard_normal((6, 2))
    expected = y + 0.3 * np.outer(np.eye(6)[1], y[4])

    apply_outer(y, 0.3, BasisVector(6, 1), BasisVector(6, 4))

    np.testing.assert_allclose(y, expected, atol=1e-15)


def test_apply_outer_with_dense_vectors() -> None:
    rng = make_rng(2)
    y = rng.standard_normal((5, 3))
    u = rng.standard_normal(5)
    v = rng.standard_normal(5)
    expected = y + 1.7 * np.outer(u, v @ y)

    apply_outer(y, 1.7, u, v)

    np.testing.assert_allclose(y, expected, atol=1e-13)


def test_orthonormalize_keeps_column_space() -> None:
    rng = make_rng(4)
    y = rng.standard_normal((10, 3))

    q = orthonormalize(y)

    np.testing.assert_allclose(gram(q), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(principal_cosines(q, y), np.ones(3), atol=1e-10)


def test_subspace_distance_between_orthogonal_and_equal_spans() -> None:
    a = np.eye(4)[:, :2]
    b = np.eye(4)[:, 2:]

    assert subspace_distance(a, b) == pytest.approx(1.0)
    assert subspace_distance(a, a @ np.array([[2.0, 1.0], [0.0, 3.0]])) == pytest.approx(0.0, abs=1e-7)
