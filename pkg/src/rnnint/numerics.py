"""Small dense linear-algebra helpers shared by every other module.

Matrices are plain float64 numpy arrays (row-major). The helpers here wrap
the handful of decompositions the rest of the package relies on and enforce
the tolerances collected in :class:`NumericsConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericsError(ValueError):
    """Raised when a decomposition fails or an input violates a precondition."""


@dataclass(frozen=True)
class NumericsConfig:
    """Tolerances used by the checks in this module."""

    svd_reconstruction_tol: float = 1e-8
    orthonormality_tol: float = 1e-8
    eig_residual_tol: float = 1e-10
    basis_conditioning: float = 1e-10
    spd_min_eigenvalue: float = 1e-12


DEFAULT_CONFIG = NumericsConfig()


@dataclass
class SvdResult:
    """Thin SVD ``m = U @ diag(S) @ V.T`` with singular values sorted descending.

    ``left_vectors`` and ``right_vectors`` hold orthonormal columns.
    """

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def as_matrix(m) -> np.ndarray:
    """Validate and return a finite float64 2-d array."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise NumericsError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericsError("matrix contains non-finite entries")
    return a


def svd(m, config: NumericsConfig = DEFAULT_CONFIG) -> SvdResult:
    """Thin SVD with validated reconstruction and orthonormality.

    LAPACK occasionally fails to converge on pathological input; that is
    surfaced as a NumericsError instead of a bare LinAlgError.
    """
    a = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK dependent
        raise NumericsError(f"SVD did not converge: {exc}") from exc
    result = SvdResult(singular_values=s, left_vectors=u, right_vectors=vt.T)

    norm = np.linalg.norm(a)
    err = np.linalg.norm(result.reconstruct() - a)
    if norm > 0 and err / norm > config.svd_reconstruction_tol:
        raise NumericsError(f"SVD reconstruction error {err / norm:.3e} above tolerance")
    k = len(s)
    gram_u = u.T @ u - np.eye(k)
    gram_v = vt @ vt.T - np.eye(k)
    if max(np.abs(gram_u).max(), np.abs(gram_v).max()) > config.orthonormality_tol:
        raise NumericsError("SVD produced non-orthonormal singular vectors")
    return result


@dataclass
class Eig2Result:
    """Eigendecomposition of a real 2x2 matrix.

    ``is_complex`` tags a conjugate eigenvalue pair, ``is_defective`` a repeated
    eigenvalue without two independent eigenvectors; in both cases the modal
    matrix is not usable and callers must branch.
    """

    eigenvalues: tuple[float, float]
    modal_matrix: np.ndarray | None
    is_complex: bool = False
    is_defective: bool = False


def eig2(m, config: NumericsConfig = DEFAULT_CONFIG) -> Eig2Result:
    """Closed-form eigendecomposition of a real 2x2 matrix.

    Eigenvalues are returned in descending order; the modal matrix P satisfies
    ``m @ P == P @ diag(eigenvalues)`` within ``eig_residual_tol``.
    """
    a = as_matrix(m)
    if a.shape != (2, 2):
        raise NumericsError(f"eig2 expects a 2x2 matrix, got {a.shape}")
    scale = max(1.0, np.abs(a).max())
    tr = a[0, 0] + a[1, 1]
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    disc = tr * tr - 4.0 * det
    if disc < -config.eig_residual_tol * scale * scale:
        lam_re = tr / 2.0
        return Eig2Result((lam_re, lam_re), None, is_complex=True)
    disc = max(disc, 0.0)
    root = np.sqrt(disc)
    lam1 = (tr + root) / 2.0
    lam2 = (tr - root) / 2.0

    def eigvec(lam: float) -> np.ndarray:
        # rows of (a - lam I) are proportional; pick the better-conditioned one
        c1 = np.array([a[0, 1], lam - a[0, 0]])
        c2 = np.array([lam - a[1, 1], a[1, 0]])
        v = c1 if np.linalg.norm(c1) >= np.linalg.norm(c2) else c2
        n = np.linalg.norm(v)
        if n == 0.0:
            # a is lam * I on this row; any direction works
            return None
        return v / n

    v1 = eigvec(lam1)
    v2 = eigvec(lam2)
    if v1 is None and v2 is None:
        # scalar matrix: both eigenvectors free
        p = np.eye(2)
    elif v1 is None or v2 is None:
        known = v1 if v1 is not None else v2
        other = np.array([-known[1], known[0]])
        p = np.column_stack([known, other]) if v1 is not None else np.column_stack([other, known])
    else:
        p = np.column_stack([v1, v2])
    if abs(np.linalg.det(p)) < 1e-12:
        return Eig2Result((lam1, lam2), None, is_defective=True)
    residual = np.abs(a @ p - p @ np.diag([lam1, lam2])).max()
    if residual > config.eig_residual_tol * scale:
        raise NumericsError(f"eig2 residual {residual:.3e} above tolerance")
    return Eig2Result((lam1, lam2), p)


def mat_pow(m, q: int) -> np.ndarray:
    """q-th power of a square matrix by repeated squaring (q >= 0)."""
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise NumericsError(f"mat_pow needs a square matrix, got {a.shape}")
    if q < 0 or int(q) != q:
        raise NumericsError(f"mat_pow exponent must be a non-negative integer, got {q}")
    result = np.eye(a.shape[0])
    base = a.copy()
    q = int(q)
    while q:
        if q & 1:
            result = result @ base
        q >>= 1
        if q:
            base = base @ base
    if not np.all(np.isfinite(result)):
        raise NumericsError("mat_pow overflowed to non-finite entries")
    return result


def project_onto_span(v, basis, config: NumericsConfig = DEFAULT_CONFIG):
    """Split ``v`` into its least-squares component in span(basis) and the rest.

    ``basis`` is a sequence of vectors (or an (n, k) array of columns). Returns
    ``(parallel, orthogonal)`` with ``parallel + orthogonal == v``.
    """
    v = np.asarray(v, dtype=float)
    b = np.asarray(basis, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    elif b.shape[0] != v.shape[0]:
        # sequence of vectors was passed row-wise
        b = b.T
    sing = np.linalg.svd(b, compute_uv=False)
    if sing[0] == 0.0 or sing[-1] / sing[0] < config.basis_conditioning:
        ratio = 0.0 if sing[0] == 0.0 else sing[-1] / sing[0]
        raise NumericsError(
            f"basis is numerically dependent: conditioning {ratio:.3e} "
            f"below {config.basis_conditioning:.1e}"
        )
    coeff, *_ = np.linalg.lstsq(b, v, rcond=None)
    parallel = b @ coeff
    return parallel, v - parallel


def spd_sqrt2(sigma, config: NumericsConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Symmetric square root of a 2x2 symmetric positive-definite matrix."""
    a = as_matrix(sigma)
    if a.shape != (2, 2):
        raise NumericsError(f"spd_sqrt2 expects a 2x2 matrix, got {a.shape}")
    if abs(a[0, 1] - a[1, 0]) > 1e-12 * max(1.0, np.abs(a).max()):
        raise NumericsError("spd_sqrt2 input is not symmetric")
    half_tr = (a[0, 0] + a[1, 1]) / 2.0
    half_diff = (a[0, 0] - a[1, 1]) / 2.0
    radius = np.hypot(half_diff, a[0, 1])
    lam1, lam2 = half_tr + radius, half_tr - radius
    if lam2 <= config.spd_min_eigenvalue:
        raise NumericsError(f"matrix is not positive-definite (min eigenvalue {lam2:.3e})")
    if radius == 0.0:
        return np.sqrt(lam1) * np.eye(2)
    v1 = np.array([a[0, 1], lam1 - a[0, 0]])
    if np.linalg.norm(v1) < 1e-300:
        v1 = np.array([lam1 - a[1, 1], a[0, 1]])
    v1 /= np.linalg.norm(v1)
    v2 = np.array([-v1[1], v1[0]])
    q = np.column_stack([v1, v2])
    return q @ np.diag([np.sqrt(lam1), np.sqrt(lam2)]) @ q.T
