"""Complex linear algebra kernel.

Vectors and matrices over C are plain complex128 ndarrays; covariances are
Hermitian positive definite. Everything here is a pure function, Cholesky
based (quadratic forms never go through explicit inverses), and double
precision throughout.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NotPositiveDefiniteError",
    "as_complex_vector",
    "as_hermitian",
    "toeplitz",
    "cholesky",
    "hermitian_solve",
    "augmented_cov",
    "logdet",
]

_HERM_RTOL = 1e-12


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix required to be PD fails its Cholesky pivots."""


def as_complex_vector(x) -> np.ndarray:
    """Validate and return a finite 1-D complex128 vector of length >= 1."""
    v = np.asarray(x, dtype=np.complex128)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite components")
    return v


def as_hermitian(a, rtol: float = _HERM_RTOL) -> np.ndarray:
    """Validate a square matrix as Hermitian (A == A^H to within ``rtol``)."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.conj().T).max() > rtol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    return m


def toeplitz(rho: float, m: int) -> np.ndarray:
    """Correlation matrix with entries rho^|i-j|, Hermitian PD for |rho| < 1."""
    if not np.isfinite(rho) or abs(rho) >= 1.0:
        raise ValueError(f"rho must satisfy |rho| < 1, got {rho}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    idx = np.arange(m)
    return (float(rho) ** np.abs(idx[:, None] - idx[None, :])).astype(np.complex128)


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^H = a.

    Fails with :class:`NotPositiveDefiniteError` when any pivot drops to or
    below 1e-13 * trace(a)/m, i.e. the matrix is not numerically PD.
    """
    a = as_hermitian(a)
    m = a.shape[0]
    floor = 1e-13 * max(np.trace(a).real, 0.0) / m
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    pivots = np.diag(low).real ** 2
    if np.any(pivots <= floor):
        raise NotPositiveDefiniteError(
            f"pivot {pivots.min():.3e} at or below floor {floor:.3e}"
        )
    return low


def hermitian_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b for Hermitian PD ``a`` via its Cholesky factor."""
    low = cholesky(a)
    return solve_with_factor(low, b)


def solve_with_factor(low: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L^H) x = b given the lower factor L."""
    b = np.asarray(b, dtype=np.complex128)
    y = np.linalg.solve(low, b)
    return np.linalg.solve(low.conj().T, y)


def augmented_cov(sigma: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Assemble the 2q x 2q augmented covariance [[S, D], [D*, S*]].

    ``sigma`` is the q x q Hermitian covariance, ``delta`` the q x q symmetric
    pseudo-covariance (D == D^T). For diagonal inputs the validity condition
    |delta_l| < sigma_ll is enforced; the full PD check is the caller's
    concern (a valid non-circular pair yields a PD result).
    """
    sigma = as_hermitian(sigma)
    delta = np.asarray(delta, dtype=np.complex128)
    q = sigma.shape[0]
    if delta.shape != (q, q):
        raise ValueError(f"delta must be {q}x{q}, got {delta.shape}")
    scale = max(np.abs(delta).max(), 1.0)
    if np.abs(delta - delta.T).max() > _HERM_RTOL * scale:
        raise ValueError("delta must be symmetric (pseudo-covariance)")
    off = delta - np.diag(np.diag(delta))
    if not np.any(off):
        dvar = np.diag(sigma).real
        dpseudo = np.abs(np.diag(delta))
        if np.any(dpseudo >= dvar):
            raise ValueError(
                "invalid complex Gaussian: |delta_l| >= sigma_ll on the diagonal"
            )
    top = np.concatenate([sigma, delta], axis=1)
    bot = np.concatenate([delta.conj(), sigma.conj()], axis=1)
    return np.concatenate([top, bot], axis=0)


def logdet(a: np.ndarray) -> float:
    """log det of a Hermitian PD matrix, via 2 sum(log diag(L))."""
    low = cholesky(a)
    return float(2.0 * np.sum(np.log(np.diag(low).real)))
