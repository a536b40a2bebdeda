"""Loss functionals: batch mean-square error, the input-averaged quadratic
loss over weight moments, and the data-free proxy losses.

For linear activation the batch loss averaged over white-noise inputs is an
exact quadratic form
    L(W) = sum_{q,p} chi_{qp} (mu_q - s gamma^q)(mu_p - s gamma^p),
with mu_q = d . W^q e and chi the time-integrated input correlation matrix.
The proxy losses instead penalize the residuals of the self-consistency
conditions that make a nonlinear network integrate exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    Activation,
    NetworkParams,
    RELU,
    TaskSpec,
    apply_activation,
    run_batch,
)


# ---------------------------------------------------------------------------
# chi matrices
# ---------------------------------------------------------------------------


@dataclass
class ChiMatrix:
    """Symmetric (T, T) correlation matrix; entry [q-1, p-1] corresponds to the
    lag pair (q, p) with q, p in 1..T."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValueError(f"chi must be square, got shape {self.entries.shape}")
        if np.abs(self.entries - self.entries.T).max() > 1e-12 * max(1.0, np.abs(self.entries).max()):
            raise ValueError("chi must be symmetric")

    @property
    def T(self) -> int:
        return self.entries.shape[0]

    def min_singular_value(self) -> float:
        return float(np.linalg.svd(self.entries, compute_uv=False)[-1])

    def is_positive_definite(self, tol: float = 0.0) -> bool:
        eigs = np.linalg.eigvalsh(self.entries)
        return bool(eigs[0] > tol)


def chi_white_noise(T: int, variance: float = 1.0) -> ChiMatrix:
    """chi for i.i.d. inputs of the given variance: diag(variance * (T - q + 1))."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return ChiMatrix(np.diag(variance * np.arange(T, 0, -1, dtype=float)))


def chi_empirical(inputs) -> ChiMatrix:
    """Sample estimate of chi from a (B, T) batch of scalar input sequences.

    Averages sum_t x_{t-q} x_{t-p} over the batch, restricted to lags that fit
    inside the epoch.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    B, T = x.shape
    chi = np.zeros((T, T))
    # lag-q slice x_{t-q} for t = q..T-1 is x[:, :T-q]
    for q in range(T):
        for p in range(q, T):
            lo = p  # both indicators satisfied from t = max(q, p)
            vals = x[:, lo - q : T - q] * x[:, lo - p : T - p]
            chi[q, p] = chi[p, q] = vals.sum(axis=1).mean()
    return ChiMatrix(chi)


# ---------------------------------------------------------------------------
# batch and averaged linear losses
# ---------------------------------------------------------------------------


def batch_loss(p: NetworkParams, spec: TaskSpec, inputs) -> float:
    """Mean over the batch of the squared output error summed over channels
    and time."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 3 or inputs.shape[0] == 0:
        raise ValueError("batch_loss expects a nonempty (B, D, T) batch")
    sim = run_batch(p, spec, inputs)
    err = sim["outputs"] - sim["targets"]
    return float(np.mean(np.sum(err**2, axis=(1, 2))))


def moments(W, e, d, qmax: int) -> np.ndarray:
    """mu_q = d . W^q e for q = 1..qmax, via iterated matrix-vector products."""
    W = np.asarray(W, dtype=float)
    e = np.asarray(e, dtype=float)
    d = np.asarray(d, dtype=float)
    out = np.empty(qmax)
    v = e
    for q in range(qmax):
        v = W @ v
        out[q] = d @ v
    return out


def moment_residuals(W, e, d, s: float, gamma: float, T: int) -> np.ndarray:
    qs = np.arange(1, T + 1)
    return moments(W, e, d, T) - s * gamma**qs


def averaged_linear_loss(W, e, d, s: float, gamma: float, chi: ChiMatrix) -> float:
    """Exact input-averaged loss for linear activation: the chi quadratic form
    over moment residuals."""
    r = moment_residuals(W, e, d, s, gamma, chi.T)
    return float(r @ chi.entries @ r)


# ---------------------------------------------------------------------------
# proxy losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProxyDomain:
    """Sampling domain for the proxy losses.

    ``z_max`` holds one half-width per channel. Grid sampling lays
    ``samples_per_channel`` evenly spaced points (endpoints included; 0 is on
    the grid for odd counts) per channel and takes the full tensor product for
    D <= 3; beyond that the tensor grid explodes and uniform Monte-Carlo with
    ``mc_samples`` total draws is used instead.
    """

    z_max: tuple
    samples_per_channel: int = 101
    sampling: str = "grid"
    mc_samples: int = 4096
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "z_max", tuple(float(z) for z in np.atleast_1d(self.z_max)))
        if not all(z > 0 for z in self.z_max):
            raise ValueError("z_max entries must be positive")
        if self.sampling not in ("grid", "montecarlo"):
            raise ValueError(f"unknown sampling {self.sampling!r}")

    @property
    def D(self) -> int:
        return len(self.z_max)

    def draw(self) -> np.ndarray:
        """(S, D) array of z samples."""
        if self.sampling == "grid" and self.D <= 3:
            axes = [np.linspace(-z, z, self.samples_per_channel) for z in self.z_max]
            mesh = np.meshgrid(*axes, indexing="ij")
            return np.stack([m.ravel() for m in mesh], axis=1)
        gen = np.random.Generator(np.random.Philox(key=np.uint64(self.seed % (1 << 64))))
        u = gen.uniform(-1.0, 1.0, size=(self.mc_samples, self.D))
        return u * np.asarray(self.z_max)


def proxy_relu_loss(W, e, d, s: float, gamma: float) -> float:
    """Data-free loss for a single-channel ReLU integrator.

    Zero exactly when  d . relu(+-We) = +-s*gamma  and
    W relu(+-We) = +-gamma W e  all hold.
    """
    W = np.asarray(W, dtype=float)
    e = np.asarray(e, dtype=float)
    d = np.asarray(d, dtype=float)
    u = W @ e
    total = 0.0
    for z in (1.0, -1.0):
        r = np.maximum(z * u, 0.0)
        total += (d @ r - z * s * gamma) ** 2
        total += float(np.sum((W @ r - z * gamma * u) ** 2))
    return float(total)


def _proxy_terms(W, encoders, decoders, scales, gammas, activation: Activation, Z):
    """Per-sample decoder residuals (S, D) and state residuals (n, S) for the
    generic proxy loss; shared by the loss and its gradient."""
    W = np.asarray(W, dtype=float)
    E = np.atleast_2d(np.asarray(encoders, dtype=float))  # (D, n)
    Dm = np.atleast_2d(np.asarray(decoders, dtype=float))
    gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
    scales = np.atleast_1d(np.asarray(scales, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))  # (S, D)
    U = E @ W.T  # rows: (W e_c)
    nu = Z @ U  # (S, n)
    h = apply_activation(activation, nu)
    a = h @ Dm.T - Z * (scales * gammas)  # (S, D) decoder residuals
    b = h @ W.T - (Z * gammas) @ U  # (S, n) state residuals
    return U, nu, h, a, b


def proxy_multi_loss(p: NetworkParams, spec: TaskSpec, dom: ProxyDomain) -> float:
    """Average over the domain of the decoder and state residuals of the
    multi-channel proxy conditions."""
    if dom.D != p.D:
        raise ValueError(f"domain has {dom.D} ranges but network has {p.D} channels")
    Z = dom.draw()
    _, _, _, a, b = _proxy_terms(
        p.W, p.encoders, p.decoders, spec.scales, spec.gammas, p.activation, Z
    )
    return float(np.mean(np.sum(a**2, axis=1) + np.sum(b**2, axis=1)))


def proxy_generic_loss(W, e, d, s: float, gamma: float, activation: Activation,
                       dom: ProxyDomain) -> float:
    """Single-channel form of the generic proxy loss."""
    if dom.D != 1:
        raise ValueError("proxy_generic_loss needs a single-channel domain")
    Z = dom.draw()
    _, _, _, a, b = _proxy_terms(W, e, d, [s], [gamma], activation, Z)
    return float(np.mean(np.sum(a**2, axis=1) + np.sum(b**2, axis=1)))
