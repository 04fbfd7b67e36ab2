import numpy as np
from scipy.linalg import null_space, subspace_angles


def operator_norm(matrix: np.ndarray) -> np.ndarray:
    """
    Operator 2-norm (largest singular value).
    Works on a single matrix or on a stack of shape (..., d, d).
    """
    return np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)[..., 0]


def is_orthonormal(basis: np.ndarray, atol: float = 1e-10) -> bool:
    """Check that the columns of `basis` are orthonormal."""
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 2:
        return False
    gram = basis.T @ basis
    return bool(np.allclose(gram, np.eye(basis.shape[1]), atol=atol))


def orthonormal_complement(basis: np.ndarray, dimension: int) -> np.ndarray:
    """Orthonormal basis (as columns) of the orthogonal complement of span(basis)."""
    basis = np.asarray(basis, dtype=float).reshape(dimension, -1)
    if basis.shape[1] == 0:
        return np.eye(dimension)
    return null_space(basis.T)


def max_principal_sine(first: np.ndarray, second: np.ndarray) -> float:
    """
    Sine of the largest principal angle between two subspaces given by column bases.
    Zero when the subspaces coincide.
    """
    first = np.atleast_2d(first)
    second = np.atleast_2d(second)
    if first.shape[1] == 0 or second.shape[1] == 0:
        return 0.0
    return float(np.sin(np.max(subspace_angles(first, second))))


def min_principal_sine(first: np.ndarray, second: np.ndarray) -> float:
    """
    Sine of the smallest principal angle between two subspaces.
    For complementary subspaces this is sin of the angle between them; 1.0 means orthogonal.
    """
    first = np.atleast_2d(first)
    second = np.atleast_2d(second)
    if first.shape[1] == 0 or second.shape[1] == 0:
        return 1.0
    return float(np.sin(np.min(subspace_angles(first, second))))


def orthogonal_projection(points: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Coordinates of `points` (N x d) in the orthonormal column basis (d x p)."""
    return np.asarray(points, dtype=float) @ np.asarray(basis, dtype=float)
