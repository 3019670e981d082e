"""Dense matrix helpers with explicit validation.

Thin wrappers over numpy/LAPACK kernels that enforce the shape and
conditioning contracts the rest of the package relies on. Hot loops inside
the autodiff tape call numpy directly; these entry points are for code that
wants the checks.
"""

from __future__ import annotations

import numpy as np

from .errors import IllConditionedError, ShapeError

COND_LIMIT = 1e12


def as_matrix(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product with shape validation and a finiteness guarantee."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dims differ")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ArithmeticError("matmul produced non-finite entries")
    return out


def solve(a, b) -> np.ndarray:
    """Solve a x = b by LU with partial pivoting, refusing bad systems."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve needs a square matrix, got {a.shape}")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"solve shapes incompatible: {a.shape} vs {b.shape}")
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
        raise IllConditionedError("solve called with non-finite entries")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond >= COND_LIMIT:
        raise IllConditionedError(
            f"matrix is singular or ill-conditioned (condition estimate {cond:.3e})")
    return np.linalg.solve(a, b)


def spectral_norm(w) -> float:
    """Largest singular value, the exact Lipschitz constant of x -> Wx."""
    w = as_matrix(w)
    if w.size == 0:
        return 0.0
    return float(np.linalg.svd(w, compute_uv=False)[0])


def skew_part(raw: np.ndarray) -> np.ndarray:
    """Antisymmetric part (raw - raw^T)/2 of a square matrix."""
    raw = as_matrix(raw)
    if raw.shape[0] != raw.shape[1]:
        raise ShapeError(f"skew parametrization needs a square matrix, got {raw.shape}")
    return 0.5 * (raw - raw.T)


def cayley_orthogonal(a_skew: np.ndarray) -> np.ndarray:
    """Orthogonal matrix (I - A)(I + A)^-1 of a skew-symmetric A.

    (I - A) and (I + A)^-1 commute, so this equals (I + A)^-1 (I - A),
    which is what the single LU solve below computes. I + A is always
    invertible for real skew-symmetric A (eigenvalues 1 + it).
    """
    n = a_skew.shape[0]
    eye = np.eye(n)
    return np.linalg.solve(eye + a_skew, eye - a_skew)


def cayley_vjp(a_skew: np.ndarray, w: np.ndarray, grad_w: np.ndarray) -> np.ndarray:
    """Adjoint of cayley_orthogonal: maps dL/dW to dL/dA.

    From dW = -(I+A)^-1 dA (I+W): dL/dA = -(I+A)^-T dL/dW (I+W)^T.
    """
    n = a_skew.shape[0]
    eye = np.eye(n)
    x = np.linalg.solve((eye + a_skew).T, grad_w)
    return -x @ (eye + w).T
