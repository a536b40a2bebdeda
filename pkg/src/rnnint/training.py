"""Gradients and optimizers for the weight matrix.

Three gradient routes are provided: the closed-form gradient of the averaged
linear loss, reverse-mode differentiation of the batch loss through the
unrolled dynamics, and the gradients of the proxy losses. Optimizers are
plain gradient descent and Adam, optionally combined with a sign constraint
on the columns of W (Dale projection).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import losses as losses_mod
from .losses import ChiMatrix, ProxyDomain, _proxy_terms
from .model import (
    NetworkParams,
    SimulationDivergence,
    TaskSpec,
    activation_derivative,
    apply_activation,
    draw_batch,
    _rng,
)


class TrainingDivergence(RuntimeError):
    """Optimizer produced a non-finite update."""


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def grad_linear_analytic(W, e, d, s: float, gamma: float, chi: ChiMatrix) -> np.ndarray:
    """Gradient of the averaged linear loss with respect to W.

    dL/dW_ij = 2 sum_{q,p} chi_qp (mu_q - s gamma^q)
                 sum_{m=0}^{p-1} (d.W^m)_i (W^{p-1-m} e)_j
    evaluated with O(T) matrix-vector products.
    """
    W = np.asarray(W, dtype=float)
    e = np.asarray(e, dtype=float)
    d = np.asarray(d, dtype=float)
    T = chi.T
    res = losses_mod.moment_residuals(W, e, d, s, gamma, T)
    rho = chi.entries @ res  # rho[p-1] = sum_q chi_qp res_q

    A = np.empty((T, W.shape[0]))  # rows d.W^m
    B = np.empty((T, W.shape[0]))  # rows W^k e
    av, bv = d, e
    for m in range(T):
        A[m] = av
        B[m] = bv
        if m + 1 < T:
            av = W.T @ av
            bv = W @ bv
    C = np.zeros_like(B)
    for m in range(T):
        # c_m = sum_{k=0}^{T-1-m} rho[m+k] * B[k]
        C[m] = rho[m:] @ B[: T - m]
    return 2.0 * A.T @ C


def _bptt_loss_and_grad(p: NetworkParams, spec: TaskSpec, inputs):
    """Batch loss and its gradient w.r.t. W in one forward/backward sweep."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 3 or x.shape[1] != p.D:
        raise ValueError(f"expected batch shaped (B, {p.D}, T), got {x.shape}")
    B, D, T = x.shape
    n = p.n

    from .model import target_of_batch, DIVERGENCE_NORM

    targets = target_of_batch(spec, x)
    drives = np.empty((B, T, n))  # h_{t-1} + sum_c x_{c,t} e_c
    currents = np.empty((B, T, n))
    states = np.empty((B, T, n))
    h = np.zeros((B, n))
    for t in range(T):
        drive = h + x[:, :, t] @ p.encoders
        nu = drive @ p.W.T
        h = apply_activation(p.activation, nu)
        worst = np.linalg.norm(h, axis=1).max()
        if not np.isfinite(worst) or worst > DIVERGENCE_NORM:
            raise SimulationDivergence(step=t, norm=float(worst))
        drives[:, t] = drive
        currents[:, t] = nu
        states[:, t] = h

    outputs = np.einsum("btn,cn->bct", states, p.decoders)
    err = outputs - targets
    loss = float(np.mean(np.sum(err**2, axis=(1, 2))))

    grad = np.zeros_like(p.W)
    dnu_next = np.zeros((B, n))
    for t in range(T - 1, -1, -1):
        dh = (2.0 / B) * np.einsum("bc,cn->bn", err[:, :, t], p.decoders)
        dh += dnu_next @ p.W
        dnu = dh * activation_derivative(p.activation, currents[:, t])
        grad += dnu.T @ drives[:, t]
        dnu_next = dnu
    return loss, grad


def grad_bptt(p: NetworkParams, spec: TaskSpec, inputs) -> np.ndarray:
    """Gradient of the batch loss via reverse-mode through the unrolled
    dynamics (ReLU subgradient at 0 taken as 0)."""
    return _bptt_loss_and_grad(p, spec, inputs)[1]


def _heaviside(v: np.ndarray) -> np.ndarray:
    """Componentwise step with value 0.5 exactly at 0."""
    return np.where(v > 0, 1.0, np.where(v < 0, 0.0, 0.5))


def grad_proxy_relu(W, e, d, s: float, gamma: float) -> np.ndarray:
    """Gradient of the single-channel ReLU proxy loss (four residual terms)."""
    W = np.asarray(W, dtype=float)
    e = np.asarray(e, dtype=float)
    d = np.asarray(d, dtype=float)
    u = W @ e
    grad = np.zeros_like(W)
    for z in (1.0, -1.0):
        hz = _heaviside(z * u)
        r = np.maximum(z * u, 0.0)
        a = d @ r - z * s * gamma
        grad += 2.0 * a * z * np.outer(d * hz, e)
        b = W @ r - z * gamma * u
        grad += 2.0 * np.outer(b, r - z * gamma * e)
        grad += 2.0 * z * np.outer((W.T @ b) * hz, e)
    return grad


def grad_proxy_generic(p: NetworkParams, spec: TaskSpec, dom: ProxyDomain) -> np.ndarray:
    """Gradient of the (multi-channel) generic proxy loss, averaged over the
    sampling domain. The ReLU kink derivative uses the 0.5 convention shared
    by the proxy family."""
    if dom.D != p.D:
        raise ValueError(f"domain has {dom.D} ranges but network has {p.D} channels")
    Z = dom.draw()
    E, Dm = p.encoders, p.decoders
    gammas = np.asarray(spec.gammas)
    U, nu, h, a, b = _proxy_terms(p.W, E, Dm, spec.scales, spec.gammas, p.activation, Z)
    if p.activation.kind == "relu":
        fp = _heaviside(nu)
    else:
        fp = activation_derivative(p.activation, nu)
    S = Z.shape[0]
    X = Z @ E  # effective input vectors, (S, n)
    M = (2.0 * a) @ Dm * fp  # decoder path
    M += 2.0 * (b @ p.W) * fp  # state path through the activation
    grad = M.T @ X
    grad += 2.0 * b.T @ (h - (Z * gammas) @ E)  # direct state path
    return grad / S


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Plain GD or Adam with bias-corrected moments sized like W."""

    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")


def gd(lr: float) -> OptimizerState:
    return OptimizerState("gd", lr)


def adam(lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
         eps: float = 1e-8) -> OptimizerState:
    return OptimizerState("adam", lr, beta1, beta2, eps)


def optimizer_step(state: OptimizerState, W: np.ndarray, grad: np.ndarray):
    """Apply one update; returns (new W, advanced state)."""
    if W.shape != grad.shape:
        raise ValueError("gradient shape does not match W")
    state.step_count += 1
    if state.kind == "gd":
        W_new = W - state.lr * grad
    else:
        if state.m is None:
            state.m = np.zeros_like(W)
            state.v = np.zeros_like(W)
        state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
        state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
        m_hat = state.m / (1.0 - state.beta1**state.step_count)
        v_hat = state.v / (1.0 - state.beta2**state.step_count)
        W_new = W - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(W_new)):
        raise TrainingDivergence(f"non-finite weights at optimizer step {state.step_count}")
    return W_new, state


# ---------------------------------------------------------------------------
# Dale constraint
# ---------------------------------------------------------------------------


@dataclass
class DaleMask:
    """Sign of the outgoing weights of each neuron: +1 excitatory columns,
    -1 inhibitory ones."""

    column_signs: np.ndarray

    def __post_init__(self):
        self.column_signs = np.asarray(self.column_signs, dtype=float)
        if not np.all(np.isin(self.column_signs, (-1.0, 1.0))):
            raise ValueError("column signs must be +-1")

    @property
    def fraction_inhibitory(self) -> float:
        return float(np.mean(self.column_signs < 0))


def make_dale_mask(n: int, fraction_inhibitory: float, seed: int) -> DaleMask:
    """Randomly assign a fraction of the columns to the inhibitory sign."""
    k = int(round(fraction_inhibitory * n))
    signs = np.ones(n)
    idx = _rng(seed).permutation(n)[:k]
    signs[idx] = -1.0
    return DaleMask(signs)


def dale_project(W_before, W_after, mask: DaleMask) -> np.ndarray:
    """Zero the entries of W_after whose sign contradicts the column mask."""
    W_before = np.asarray(W_before, dtype=float)
    W_after = np.asarray(W_after, dtype=float)
    if np.any(W_before * mask.column_signs < 0):
        raise ValueError("W_before violates the Dale mask")
    violating = W_after * mask.column_signs < 0
    out = W_after.copy()
    out[violating] = 0.0
    return out


def dale_init(W, mask: DaleMask) -> np.ndarray:
    """Make an arbitrary W mask-compliant by forcing |entries| * column sign."""
    return np.abs(np.asarray(W, dtype=float)) * mask.column_signs


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainRecord:
    """Per-step loss/gradient trace plus run metadata."""

    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    seed: int = 0
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    diverged: bool = False
    stop_reason: str = "max_steps"

    @property
    def steps_run(self) -> int:
        return len(self.losses)


LOSS_KINDS = ("batch", "linear_exact", "proxy_relu", "proxy")


def train(
    p: NetworkParams,
    spec: TaskSpec,
    loss_kind: str,
    optimizer: OptimizerState,
    steps: int,
    seed: int,
    chi: ChiMatrix | None = None,
    dom: ProxyDomain | None = None,
    batch_size: int = 64,
    dale: DaleMask | None = None,
    early_stop_loss: float = 1e-12,
    early_stop_grad: float = 1e-10,
    divergence_factor: float = 1e3,
):
    """Iterate gradient + optimizer step (+ Dale projection) on a copy of p.

    Deterministic given the seed; the loss series is recorded every step.
    A run is flagged diverged when the loss exceeds ``divergence_factor``
    times the best loss seen so far, or any update goes non-finite.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
    if loss_kind == "linear_exact":
        if chi is None:
            raise ValueError("linear_exact training needs a chi matrix")
        if p.D != 1 or p.activation.kind != "linear":
            raise ValueError("linear_exact training applies to single-channel linear networks")
    if loss_kind == "proxy" and dom is None:
        raise ValueError("proxy training needs a ProxyDomain")
    if loss_kind == "proxy_relu" and (p.D != 1 or p.activation.kind != "relu"):
        raise ValueError("proxy_relu training applies to single-channel ReLU networks")

    gen = _rng(seed)
    W = p.W.copy()
    if dale is not None:
        if np.any(W * dale.column_signs < 0):
            raise ValueError("initial W violates the Dale mask; use dale_init first")
    record = TrainRecord(
        seed=seed,
        config={
            "loss_kind": loss_kind,
            "optimizer": optimizer.kind,
            "lr": optimizer.lr,
            "steps": steps,
            "batch_size": batch_size if loss_kind == "batch" else None,
            "dale_fraction": dale.fraction_inhibitory if dale is not None else None,
        },
    )
    start = time.perf_counter()
    best = np.inf
    initial = None

    def loss_and_grad(W_now: np.ndarray):
        net = p.with_weights(W_now)
        if loss_kind == "batch":
            x = draw_batch(spec, gen, batch_size)
            return _bptt_loss_and_grad(net, spec, x)
        if loss_kind == "linear_exact":
            e, d = p.encoders[0], p.decoders[0]
            s, gamma = spec.scales[0], spec.gammas[0]
            loss = losses_mod.averaged_linear_loss(W_now, e, d, s, gamma, chi)
            return loss, grad_linear_analytic(W_now, e, d, s, gamma, chi)
        if loss_kind == "proxy_relu":
            e, d = p.encoders[0], p.decoders[0]
            s, gamma = spec.scales[0], spec.gammas[0]
            loss = losses_mod.proxy_relu_loss(W_now, e, d, s, gamma)
            return loss, grad_proxy_relu(W_now, e, d, s, gamma)
        loss = losses_mod.proxy_multi_loss(net, spec, dom)
        return loss, grad_proxy_generic(net, spec, dom)

    for _ in range(steps):
        try:
            loss, grad = loss_and_grad(W)
        except (SimulationDivergence, TrainingDivergence) as exc:
            record.diverged = True
            record.stop_reason = f"divergence: {exc}"
            break
        gnorm = float(np.linalg.norm(grad))
        record.losses.append(loss)
        record.grad_norms.append(gnorm)
        if initial is None:
            initial = max(loss, 1e-300)
        # genuine instability grows without bound; transient optimizer spikes
        # above the running best are tolerated up to the same factor over the
        # initial loss
        if not np.isfinite(loss) or loss > divergence_factor * max(initial, best):
            record.diverged = True
            record.stop_reason = "divergence: loss blew up"
            break
        best = min(best, loss)
        if loss < early_stop_loss:
            record.stop_reason = "loss below early-stop threshold"
            break
        if gnorm < early_stop_grad:
            record.stop_reason = "gradient norm below early-stop threshold"
            break
        try:
            W, optimizer = optimizer_step(optimizer, W, grad)
        except TrainingDivergence as exc:
            record.diverged = True
            record.stop_reason = f"divergence: {exc}"
            break
        if dale is not None:
            W = np.where(W * dale.column_signs < 0, 0.0, W)
    record.wall_time = time.perf_counter() - start
    return p.with_weights(W), record
