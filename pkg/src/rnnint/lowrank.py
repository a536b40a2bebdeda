"""Exact analytics in the 4-dimensional subspace reached from a zero weight
matrix.

With linear activation and W(0) = 0, gradient descent keeps W inside
span{d d^T, d e^T, e d^T, e e^T}. In the orthonormalized encoder/decoder
basis this subspace is coordinatized by a 2x2 matrix omega with
    W = Vbar omega Vbar^T,   Vbar = [e d] Sigma^{-1/2},
    Sigma = [[e.e, e.d], [d.e, d.d]],
and the weight moments reduce to mu_q = (sqrt(Sigma) omega^q sqrt(Sigma))_12.
This module provides that parametrization, the closed-form description of the
integrator manifolds inside it, the restricted Hessian, condition-number
scans along the iso-scale manifold, and a classifier separating exponential
from power-law convergence of a training loss series.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .losses import ChiMatrix
from .numerics import spd_sqrt2


@dataclass
class OmegaState:
    """2x2 reduced weight matrix together with its generating vectors."""

    omega: np.ndarray
    e: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.e = np.asarray(self.e, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        if self.omega.shape != (2, 2):
            raise ValueError("omega must be 2x2")

    @property
    def sigma(self) -> np.ndarray:
        ee = self.e @ self.e
        dd = self.d @ self.d
        ed = self.d @ self.e
        return np.array([[ee, ed], [ed, dd]])


def overlap_matrix(e, d) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    d = np.asarray(d, dtype=float)
    ed = d @ e
    return np.array([[e @ e, ed], [ed, d @ d]])


def _orthonormal_basis(e, d) -> np.ndarray:
    sigma = overlap_matrix(e, d)
    inv_sqrt = np.linalg.inv(spd_sqrt2(sigma))
    return np.column_stack([e, d]) @ inv_sqrt  # (n, 2), orthonormal columns


def omega_to_W(st: OmegaState) -> np.ndarray:
    """Lift omega to the full n x n matrix via the orthonormalized basis.

    The coordinate convention pairs the first omega index with the encoder
    direction and the second with the decoder, so that the moment identity
    mu_q = (sqrt(Sigma) omega^q sqrt(Sigma))_12 holds exactly; this is the
    convention in which the manifold formulas below are derived.
    """
    vbar = _orthonormal_basis(st.e, st.d)
    return vbar @ st.omega.T @ vbar.T


def project_to_omega(W, e, d) -> OmegaState:
    """Coordinates of (the in-subspace part of) W; inverse of omega_to_W."""
    vbar = _orthonormal_basis(e, d)
    return OmegaState((vbar.T @ np.asarray(W, dtype=float) @ vbar).T, e, d)


def moments_omega(st: OmegaState, qmax: int) -> np.ndarray:
    """mu_q = (sqrt(Sigma) omega^q sqrt(Sigma))_12 for q = 1..qmax."""
    if qmax < 1:
        raise ValueError("qmax must be >= 1")
    sqrt_sigma = spd_sqrt2(st.sigma)
    out = np.empty(qmax)
    power = np.eye(2)
    for q in range(qmax):
        power = power @ st.omega
        out[q] = (sqrt_sigma @ power @ sqrt_sigma)[0, 1]
    return out


# ---------------------------------------------------------------------------
# integrator manifolds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifoldConstants:
    """Closed-form constants describing the integrator manifolds for a given
    encoder/decoder pair."""

    alpha0: float
    beta0: float
    Z: float
    l_plus: float
    l_minus: float
    kappa: float
    r_plus: float
    r_minus: float
    d_dot_e: float

    @property
    def sigma(self) -> np.ndarray:
        norm_d2 = (self.l_plus + self.l_minus) / 2.0
        norm_e2 = (self.l_plus - self.l_minus) / 2.0
        return np.array([[norm_e2, self.d_dot_e], [self.d_dot_e, norm_d2]])


def manifold_constants(e, d) -> ManifoldConstants:
    """Compute the manifold constants from the encoder/decoder vectors."""
    e = np.asarray(e, dtype=float)
    d = np.asarray(d, dtype=float)
    ed = float(d @ e)
    l_minus = float(d @ d - e @ e)
    l_plus = float(d @ d + e @ e)
    kappa = float(np.hypot(l_minus, 2.0 * ed))
    if kappa < 1e-12 * l_plus:
        raise ValueError(
            "kappa vanishes (orthogonal vectors of equal norm); the manifold "
            "parametrization is singular"
        )
    r_plus = float(np.sqrt(l_plus + kappa))
    r_minus = float(np.sqrt(l_plus - kappa))
    denom = 2.0 * ed * (r_plus - r_minus)
    alpha0 = -((kappa - l_minus) * r_minus + (kappa + l_minus) * r_plus) / denom
    beta0 = ((kappa + l_minus) * r_minus + (kappa - l_minus) * r_plus) / denom
    Z = (ed * (r_plus - r_minus)) ** 2 / (2.0 * kappa**2)
    return ManifoldConstants(alpha0, beta0, Z, l_plus, l_minus, kappa, r_plus, r_minus, ed)


def g1(c: ManifoldConstants, alpha: float, beta: float) -> float:
    """Coefficient of the decay eigenvalue: the integration scale on the
    rank-1 manifold (second eigenvalue zero)."""
    return c.Z * (alpha - c.alpha0) * (beta - c.beta0) / (beta - alpha)


def g2(c: ManifoldConstants, alpha: float, beta: float) -> float:
    """Coefficient of the second eigenvalue; must vanish for that eigenvalue
    not to leak into the output."""
    return c.Z * (alpha - c.beta0) * (beta - c.alpha0) / (alpha - beta)


def beta_for_scale(c: ManifoldConstants, s: float, alpha: float) -> float:
    """Invert g1(alpha, .) = s along the rank-1 manifold."""
    denom = c.Z * (alpha - c.alpha0) - s
    if denom == 0.0:
        raise ValueError(f"alpha={alpha} sits on the singular fiber of the scale inversion")
    return (c.Z * (alpha - c.alpha0) * c.beta0 - alpha * s) / denom


def gamma_matrix(gamma: float, lam: float, alpha: float, beta: float) -> np.ndarray:
    """The 2x2 matrix with eigenvalues {gamma, lam} and eigenvectors
    (1, alpha), (1, beta)."""
    if alpha == beta:
        raise ValueError("alpha and beta must differ")
    return (
        np.array(
            [
                [alpha * lam - beta * gamma, gamma - lam],
                [alpha * beta * (lam - gamma), alpha * gamma - beta * lam],
            ]
        )
        / (alpha - beta)
    )


@dataclass(frozen=True)
class ManifoldPoint:
    alpha: float
    beta: float
    lam: float
    which: str  # "rank_one" | "m_alpha" | "m_beta"


def gi_manifold_point(c: ManifoldConstants, s: float, gamma: float, free_param: float):
    """A point of the 1-d family of rank-1 integrators at scale s.

    ``free_param`` is the alpha coordinate; beta is solved from the scale
    condition. The special scale s = d.e belongs to the rank-2 manifolds and
    is rejected here.
    """
    if s == 0.0:
        raise ValueError("scale 0 corresponds to the degenerate alpha0/beta0 fibers")
    if abs(s - c.d_dot_e) < 1e-12 * max(1.0, abs(s)):
        raise ValueError(
            "scale equals d.e: integrators at this scale live on the rank-2 "
            "manifolds Gamma(lambda, ., alpha0) / Gamma(lambda, beta0, .)"
        )
    alpha = float(free_param)
    beta = beta_for_scale(c, s, alpha)
    omega = gamma_matrix(gamma, 0.0, alpha, beta)
    return ManifoldPoint(alpha, beta, 0.0, "rank_one"), omega


# ---------------------------------------------------------------------------
# Hessian and convergence
# ---------------------------------------------------------------------------


def _omega_moment_derivatives(omega: np.ndarray, sqrt_sigma: np.ndarray, T: int) -> np.ndarray:
    """(T, 4) array of d mu_q / d omega_ij, flattened row-major over (i, j)."""
    powers = [np.eye(2)]
    for _ in range(T - 1):
        powers.append(powers[-1] @ omega)
    left = [sqrt_sigma @ p for p in powers]  # rows indexed by m: (sqrtS omega^m)
    right = [p @ sqrt_sigma for p in powers]
    deriv = np.zeros((T, 2, 2))
    for q in range(1, T + 1):
        acc = np.zeros((2, 2))
        for m in range(q):
            acc += np.outer(left[m][0, :], right[q - 1 - m][:, 1])
        deriv[q - 1] = acc
    return deriv.reshape(T, 4)


def _hessian_from_sigma(omega, sigma, s: float, gamma: float, chi: ChiMatrix,
                        warn_threshold: float = 1e-10) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    sqrt_sigma = spd_sqrt2(sigma)
    T = chi.T
    mus = np.empty(T)
    power = np.eye(2)
    for q in range(T):
        power = power @ omega
        mus[q] = (sqrt_sigma @ power @ sqrt_sigma)[0, 1]
    res = mus - s * gamma ** np.arange(1, T + 1)
    loss = float(res @ chi.entries @ res)
    if loss > warn_threshold:
        warnings.warn(
            f"restricted Hessian evaluated away from a minimum (loss {loss:.3e}); "
            "the dropped residual term is not negligible",
            RuntimeWarning,
            stacklevel=3,
        )
    deriv = _omega_moment_derivatives(omega, sqrt_sigma, T)
    return 2.0 * deriv.T @ chi.entries @ deriv


def hessian_omega(st: OmegaState, s: float, gamma: float, chi: ChiMatrix) -> np.ndarray:
    """4x4 Hessian of the averaged linear loss restricted to the omega
    subspace, evaluated at (or near) a minimum where the residual term of the
    exact Hessian vanishes. Row-major flattening of omega indices."""
    return _hessian_from_sigma(st.omega, st.sigma, s, gamma, chi)


@dataclass
class ScanPoint:
    alpha: float
    beta: float
    lambda_min: float
    lambda_max: float
    condition_number: float


@dataclass
class ConvergenceScan:
    points: list
    best: ScanPoint


def default_alpha_grid(points_per_side: int = 100, limit: float = 1e3,
                       inner: float = 1e-3) -> np.ndarray:
    """Log-spaced alpha values over [-limit, limit], both signs."""
    pos = np.logspace(np.log10(inner), np.log10(limit), points_per_side)
    return np.concatenate([-pos[::-1], pos])


def convergence_bound(
    c: ManifoldConstants,
    s: float,
    gamma: float,
    chi: ChiMatrix,
    grid,
    zero_threshold: float = 1e-8,
    exclusion_band: float = 1e-6,
) -> ConvergenceScan:
    """Scan the iso-scale manifold and return the minimum condition number
    lambda_max / lambda_min (smallest eigenvalue above the zero threshold).

    The minimum over the manifold lower-bounds the gradient-descent
    convergence time to any integrator at that scale.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty scan grid")
    sigma = c.sigma
    points: list[ScanPoint] = []
    best: ScanPoint | None = None
    for alpha in grid:
        try:
            beta = beta_for_scale(c, s, alpha)
        except ValueError:
            continue
        if abs(alpha - beta) < exclusion_band:
            continue  # parametrization singularity
        omega = gamma_matrix(gamma, 0.0, alpha, beta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            hess = _hessian_from_sigma(omega, sigma, s, gamma, chi)
        eigs = np.linalg.eigvalsh(hess)
        lam_max = float(eigs[-1])
        nonzero = eigs[eigs > zero_threshold * max(lam_max, 1e-300)]
        if len(nonzero) == 0:
            continue
        point = ScanPoint(
            alpha=float(alpha),
            beta=float(beta),
            lambda_min=float(nonzero[0]),
            lambda_max=lam_max,
            condition_number=lam_max / float(nonzero[0]),
        )
        points.append(point)
        if best is None or point.condition_number < best.condition_number:
            best = point
    if best is None:
        raise ValueError("no valid scan point on the grid")
    return ConvergenceScan(points=points, best=best)


# ---------------------------------------------------------------------------
# convergence-shape classification
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceFit:
    kind: str  # "exponential" | "algebraic" | "undetermined"
    rate: float | None = None  # per-step decay rate of log-loss
    exponent: float | None = None  # power-law exponent of loss vs step
    r2_exponential: float = np.nan
    r2_algebraic: float = np.nan


def _linear_fit_r2(x: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return slope, r2


def detect_algebraic_convergence(loss_series, r2_margin: float = 0.05) -> ConvergenceFit:
    """Classify the tail of a positive loss series as exponential or
    power-law decay.

    Fits log-loss against step (exponential) and against log-step (power
    law) over the final two decades of steps and keeps the clearly better
    fit; a non-monotone tail comes back undetermined.
    """
    loss = np.asarray(loss_series, dtype=float)
    if loss.ndim != 1 or len(loss) < 100:
        raise ValueError("need a 1-d loss series of at least 100 points")
    if np.any(loss <= 0):
        raise ValueError("loss series must be positive")
    steps = np.arange(1, len(loss) + 1, dtype=float)
    tail = steps >= steps[-1] / 100.0
    lt, ll = steps[tail], np.log(loss[tail])
    if np.any(np.diff(loss[tail]) > 1e-9 * loss[tail][:-1] + 1e-300):
        return ConvergenceFit(kind="undetermined")
    slope_exp, r2_exp = _linear_fit_r2(lt, ll)
    slope_alg, r2_alg = _linear_fit_r2(np.log(lt), ll)
    fit = ConvergenceFit(kind="undetermined", r2_exponential=r2_exp, r2_algebraic=r2_alg)
    if r2_exp - r2_alg > r2_margin:
        fit.kind = "exponential"
        fit.rate = -slope_exp
    elif r2_alg - r2_exp > r2_margin:
        fit.kind = "algebraic"
        fit.exponent = slope_alg
    return fit
