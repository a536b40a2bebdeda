"""Recurrent-network dynamics, leaky-integral targets and input sampling.

The network state update is
    nu_t = W @ (h_{t-1} + sum_c x_{c,t} e_c),   h_t = f(nu_t),   y_{c,t} = d_c . h_t
with h_{-1} = 0. Targets are the per-channel discounted sums
    ybar_{c,t} = s_c * sum_{k=0..t} gamma_c^{k+1} x_{c,t-k}.

Inputs and outputs are arranged channel-major: one sequence is a (D, T)
array, a batch is (B, D, T). States and currents are time-major (T, n).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DIVERGENCE_NORM = 1e12


class SimulationDivergence(RuntimeError):
    """Network state exceeded the divergence threshold during simulation."""

    def __init__(self, step: int, norm: float):
        super().__init__(f"state norm {norm:.3e} exceeded {DIVERGENCE_NORM:.0e} at step {step}")
        self.step = step
        self.norm = norm


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Activation:
    """Componentwise activation: 'linear', 'relu' or 'sigmoid'.

    For 'sigmoid' the map is 1 / (1 + exp(-slope * (x - bias))).
    """

    kind: str
    slope: float = 50.0
    bias: float = 0.1

    def __post_init__(self):
        if self.kind not in ("linear", "relu", "sigmoid"):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "sigmoid" and self.slope <= 0:
            raise ValueError("sigmoid slope must be positive")


LINEAR = Activation("linear")
RELU = Activation("relu")


def sigmoid_activation(slope: float = 50.0, bias: float = 0.1) -> Activation:
    return Activation("sigmoid", slope=slope, bias=bias)


def apply_activation(a: Activation, v):
    v = np.asarray(v, dtype=float)
    if a.kind == "linear":
        return v
    if a.kind == "relu":
        return np.maximum(v, 0.0)
    # sigmoid; clip the exponent to avoid overflow warnings far in saturation
    z = np.clip(-a.slope * (v - a.bias), -700.0, 700.0)
    return 1.0 / (1.0 + np.exp(z))


def activation_derivative(a: Activation, v, relu_at_zero: float = 0.0):
    """Componentwise f'(v); the subgradient used at the ReLU kink is a parameter."""
    v = np.asarray(v, dtype=float)
    if a.kind == "linear":
        return np.ones_like(v)
    if a.kind == "relu":
        d = (v > 0).astype(float)
        if relu_at_zero != 0.0:
            d[v == 0.0] = relu_at_zero
        return d
    f = apply_activation(a, v)
    return a.slope * f * (1.0 - f)


# ---------------------------------------------------------------------------
# parameters and task
# ---------------------------------------------------------------------------


@dataclass
class NetworkParams:
    """Trainable network: weight matrix plus fixed unit-norm encoders/decoders.

    ``encoders`` and ``decoders`` are (D, n) with unit-norm rows.
    """

    W: np.ndarray
    encoders: np.ndarray
    decoders: np.ndarray
    activation: Activation = LINEAR

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.encoders = np.atleast_2d(np.asarray(self.encoders, dtype=float))
        self.decoders = np.atleast_2d(np.asarray(self.decoders, dtype=float))
        n = self.W.shape[0]
        if self.W.shape != (n, n):
            raise ValueError(f"W must be square, got {self.W.shape}")
        if self.encoders.shape != self.decoders.shape or self.encoders.shape[1] != n:
            raise ValueError("encoders/decoders must both be (D, n)")
        if self.D > n:
            raise ValueError(f"channel count {self.D} exceeds network size {n}")
        for name, vectors in (("encoder", self.encoders), ("decoder", self.decoders)):
            norms = np.linalg.norm(vectors, axis=1)
            if np.abs(norms - 1.0).max() > 1e-10:
                raise ValueError(f"{name} rows must be unit norm (got norms {norms})")

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def D(self) -> int:
        return self.encoders.shape[0]

    def with_weights(self, W: np.ndarray) -> "NetworkParams":
        return replace(self, W=W)


@dataclass(frozen=True)
class InputKind:
    """Input distribution: i.i.d. Gaussian white noise or a deterministic
    burst schedule (single +/-magnitude steps separated by `period` zeros)."""

    kind: str = "gaussian"
    std: float = 1.0
    period: int = 20
    magnitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "burst"):
            raise ValueError(f"unknown input kind {self.kind!r}")


@dataclass(frozen=True)
class TaskSpec:
    """Per-channel decays/scales, epoch length and input distribution."""

    gammas: tuple
    scales: tuple
    T: int
    inputs: InputKind = field(default_factory=InputKind)

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in np.atleast_1d(self.gammas)))
        object.__setattr__(self, "scales", tuple(float(s) for s in np.atleast_1d(self.scales)))
        if len(self.gammas) != len(self.scales):
            raise ValueError("gammas and scales must have the same length")
        if not all(0.0 < g < 1.0 for g in self.gammas):
            raise ValueError(f"decays must lie in (0, 1), got {self.gammas}")
        if not all(s > 0.0 for s in self.scales):
            raise ValueError(f"scales must be positive, got {self.scales}")
        if self.T < 1:
            raise ValueError("epoch length T must be >= 1")

    @property
    def D(self) -> int:
        return len(self.gammas)


@dataclass
class Trajectory:
    """One simulated sequence: inputs/outputs/targets are (D, T), currents and
    states are (T, n)."""

    inputs: np.ndarray
    currents: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    targets: np.ndarray


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


def step(p: NetworkParams, h_prev, x):
    """One update: returns (current nu, state h, outputs y) for input vector x."""
    h_prev = np.asarray(h_prev, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (p.D,):
        raise ValueError(f"expected {p.D} input channels, got shape {x.shape}")
    nu = p.W @ (h_prev + x @ p.encoders)
    h = apply_activation(p.activation, nu)
    if not np.all(np.isfinite(h)):
        raise SimulationDivergence(step=-1, norm=float("inf"))
    y = p.decoders @ h
    return nu, h, y


def target_of(spec: TaskSpec, inputs) -> np.ndarray:
    """Targets ybar for a (D, T) input array via the recursion
    ybar_t = gamma * (ybar_{t-1} + s * x_t)."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    return target_of_batch(spec, x[None])[0]

def target_of_batch(spec: TaskSpec, inputs) -> np.ndarray:
    """Vectorized targets for a (B, D, T) batch."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 3 or x.shape[1] != spec.D:
        raise ValueError(f"expected batch shaped (B, {spec.D}, T), got {x.shape}")
    gam = np.asarray(spec.gammas)[None, :, None]
    sca = np.asarray(spec.scales)[None, :, None]
    targets = np.empty_like(x)
    prev = np.zeros(x.shape[:2])
    for t in range(x.shape[2]):
        prev = gam[..., 0] * (prev + sca[..., 0] * x[:, :, t])
        targets[:, :, t] = prev
    return targets


def run(p: NetworkParams, spec: TaskSpec, inputs) -> Trajectory:
    """Simulate one (D, T) input sequence from the zero initial state."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    if x.shape[0] != spec.D or x.shape[0] != p.D:
        raise ValueError(f"inputs shaped {x.shape} do not match D={spec.D}")
    batch = run_batch(p, spec, x[None])
    return Trajectory(
        inputs=x,
        currents=batch["currents"][0],
        states=batch["states"][0],
        outputs=batch["outputs"][0],
        targets=batch["targets"][0],
    )


def run_batch(p: NetworkParams, spec: TaskSpec, inputs) -> dict:
    """Simulate a (B, D, T) batch; returns arrays keyed
    currents/states (B, T, n), outputs/targets (B, D, T)."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 3 or x.shape[1] != p.D:
        raise ValueError(f"expected batch shaped (B, {p.D}, T), got {x.shape}")
    B, D, T = x.shape
    n = p.n
    currents = np.empty((B, T, n))
    states = np.empty((B, T, n))
    h = np.zeros((B, n))
    for t in range(T):
        drive = h + x[:, :, t] @ p.encoders
        nu = drive @ p.W.T
        h = apply_activation(p.activation, nu)
        norms = np.linalg.norm(h, axis=1)
        worst = norms.max() if B else 0.0
        if not np.isfinite(worst) or worst > DIVERGENCE_NORM:
            raise SimulationDivergence(step=t, norm=float(worst))
        currents[:, t] = nu
        states[:, t] = h
    outputs = np.einsum("btn,cn->bct", states, p.decoders)
    return {
        "currents": currents,
        "states": states,
        "outputs": outputs,
        "targets": target_of_batch(spec, x),
    }


# ---------------------------------------------------------------------------
# input sampling
# ---------------------------------------------------------------------------


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based, so streams are reproducible across platforms.
    return np.random.Generator(np.random.Philox(key=np.uint64(seed % (1 << 64))))


def burst_sequence(T: int, period: int, magnitude: float) -> np.ndarray:
    """Single-step bursts of alternating sign separated by `period` zeros."""
    x = np.zeros(T)
    sign = 1.0
    for t in range(period, T, period + 1):
        x[t] = sign * magnitude
        sign = -sign
    return x


def draw_batch(spec: TaskSpec, gen: np.random.Generator, batch: int) -> np.ndarray:
    """Draw a (batch, D, T) input array from an existing generator stream."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    kind = spec.inputs
    if kind.kind == "gaussian":
        return kind.std * gen.standard_normal((batch, spec.D, spec.T))
    seq = burst_sequence(spec.T, kind.period, kind.magnitude)
    return np.broadcast_to(seq, (batch, spec.D, spec.T)).copy()


def sample_inputs(spec: TaskSpec, seed: int, batch: int) -> np.ndarray:
    """Draw a (batch, D, T) input array; deterministic given the seed."""
    return draw_batch(spec, _rng(seed), batch)


# ---------------------------------------------------------------------------
# reference constructions
# ---------------------------------------------------------------------------


def random_unit_vectors(n: int, count: int, seed: int) -> np.ndarray:
    """(count, n) i.i.d. Gaussian rows normalized to unit length."""
    gen = _rng(seed)
    v = gen.standard_normal((count, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_encoders_decoders(n: int, D: int, seed: int, overlap: float | None = None):
    """Random unit encoders/decoders; for D=1 an optional controlled overlap
    mixes the decoder as d <- o*e + (1-o)*d before renormalizing."""
    vs = random_unit_vectors(n, 2 * D, seed)
    encoders, decoders = vs[:D], vs[D:].copy()
    if overlap is not None:
        if D != 1:
            raise ValueError("controlled overlap is defined for a single channel")
        mixed = overlap * encoders[0] + (1.0 - overlap) * decoders[0]
        decoders = (mixed / np.linalg.norm(mixed))[None, :]
    return encoders, decoders


def multichannel_gi(encoders, decoders, gammas, scales) -> np.ndarray:
    """Exact linear rank-D integrator for the given channels.

    Builds W = sum_c gamma_c * l_c r_c^T with l_c the pseudo-inverse rows of the
    decoders (d_c . l_c' = delta) and r_c solving the cross-channel
    orthogonality constraints with r_c . e_c = s_c and r_c . l_c = 1.
    """
    E = np.atleast_2d(np.asarray(encoders, dtype=float))
    Dm = np.atleast_2d(np.asarray(decoders, dtype=float))
    gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
    scales = np.atleast_1d(np.asarray(scales, dtype=float))
    D, n = E.shape
    if 2 * D > n:
        raise ValueError("need n >= 2D to satisfy the cross-channel constraints")
    L = np.linalg.pinv(Dm)  # (n, D); Dm @ L = I
    W = np.zeros((n, n))
    for c in range(D):
        rows = []
        rhs_e = []  # constraints for the two basis solutions
        for cp in range(D):
            if cp == c:
                continue
            rows.append(E[cp])
            rows.append(L[:, cp])
            rhs_e.extend([0.0, 0.0])
        rows.append(E[c])
        rows.append(L[:, c])
        A = np.array(rows)
        p_sol, *_ = np.linalg.lstsq(A, np.array(rhs_e + [1.0, 0.0]), rcond=None)
        q_sol, *_ = np.linalg.lstsq(A, np.array(rhs_e + [0.0, 1.0]), rcond=None)
        r = scales[c] * p_sol + q_sol
        W += gammas[c] * np.outer(L[:, c], r)
    return W


def rank1_gi(e, d, s: float, gamma: float) -> np.ndarray:
    """Exact single-channel rank-1 integrator (moments s * gamma^q)."""
    return multichannel_gi(e, d, [gamma], [s])
