"""Context-dependent classification on top of a frozen 3-channel integrator.

A pretrained integrator maps three input streams to internal states; a single
trained readout vector u produces out_t = sigmoid(50 (u . h_t - 0.1)). The
label depends on the context channel y_2: while it is negative the sign of
y_0 must be reported, otherwise the sign of y_1. Only u is trained; the
integrator weights stay frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Activation, NetworkParams, TaskSpec, run_batch, sample_inputs, sigmoid_activation


@dataclass
class ContextTask:
    """Frozen D=3 integrator plus the trainable readout vector."""

    integrator: NetworkParams
    readout: np.ndarray | None = None
    link: Activation = field(default_factory=sigmoid_activation)

    def __post_init__(self):
        if self.integrator.D != 3:
            raise ValueError("the context task needs a 3-channel integrator")
        if self.readout is None:
            self.readout = np.zeros(self.integrator.n)

    def output(self, states) -> np.ndarray:
        """Readout output for (M, n) states."""
        z = np.clip(-self.link.slope * (states @ self.readout - self.link.bias), -700, 700)
        return 1.0 / (1.0 + np.exp(z))


def context_label(y) -> np.ndarray:
    """Label for integral vectors y (3,) or (M, 3): report 1[y0 > 0] while the
    context integral y2 is negative, otherwise 1[y1 > 0]."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    selected = np.where(y[:, 2] < 0, y[:, 0], y[:, 1])
    labels = (selected > 0).astype(int)
    return labels[0] if single else labels


def selected_integral(y) -> np.ndarray:
    """The integral the label depends on: y0 while y2 < 0, else y1."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return np.where(y[:, 2] < 0, y[:, 0], y[:, 1])


@dataclass
class ReadoutRecord:
    losses: list = field(default_factory=list)
    heldout_accuracy: float = np.nan
    heldout_accuracy_dead_zone: float = np.nan
    dead_zone: float = 0.1
    n_heldout: int = 0
    seed: int = 0


def _collect_states(task: ContextTask, spec: TaskSpec, seed: int, batch: int):
    inputs = sample_inputs(spec, seed, batch)
    sim = run_batch(task.integrator, spec, inputs)
    n = task.integrator.n
    states = sim["states"].reshape(-1, n)
    targets = sim["targets"].transpose(0, 2, 1).reshape(-1, 3)
    return states, targets


def train_readout(
    task: ContextTask,
    spec: TaskSpec,
    steps: int,
    seed: int,
    batch: int = 64,
    lr: float = 0.05,
    objective: str = "squared",
    dead_zone: float = 0.1,
    heldout_batch: int = 64,
    shuffle_labels: bool = False,
):
    """Gradient descent on the readout vector with Adam-style moments.

    The integrator is never modified. Accuracy is reported on held-out
    sequences, excluding time steps where the selected integral lies inside
    the dead zone (labels there hinge on sign noise). ``shuffle_labels``
    trains against permuted labels as a chance-level control.
    """
    if objective not in ("squared", "cross_entropy"):
        raise ValueError(f"unknown objective {objective!r}")
    states, targets = _collect_states(task, spec, seed, batch)
    labels = context_label(targets).astype(float)
    if shuffle_labels:
        perm = np.random.Generator(np.random.Philox(key=np.uint64(seed))).permutation(len(labels))
        labels = labels[perm]
    frozen = task.integrator.W.copy()

    u = np.zeros(task.integrator.n)
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    record = ReadoutRecord(dead_zone=dead_zone, seed=seed)
    slope = task.link.slope
    M = len(labels)
    for t in range(1, steps + 1):
        z = states @ u - task.link.bias
        out = 1.0 / (1.0 + np.exp(np.clip(-slope * z, -700, 700)))
        if objective == "squared":
            loss = float(np.mean((out - labels) ** 2))
            dout = 2.0 * (out - labels) / M
            dz = dout * slope * out * (1.0 - out)
        else:
            eps = 1e-12
            loss = float(-np.mean(labels * np.log(out + eps) + (1 - labels) * np.log(1 - out + eps)))
            dz = slope * (out - labels) / M
        grad = states.T @ dz
        record.losses.append(loss)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad**2
        m_hat = m / (1.0 - 0.9**t)
        v_hat = v / (1.0 - 0.999**t)
        u = u - lr * m_hat / (np.sqrt(v_hat) + 1e-8)
        if not np.all(np.isfinite(u)):
            raise RuntimeError(f"readout training diverged at step {t}")

    assert np.array_equal(frozen, task.integrator.W), "integrator weights changed"
    task.readout = u

    ho_states, ho_targets = _collect_states(task, spec, seed + 1, heldout_batch)
    ho_labels = context_label(ho_targets)
    ho_sel = selected_integral(ho_targets)
    ho_out = task.output(ho_states)
    pred = (ho_out > 0.5).astype(int)
    outside = np.abs(ho_sel) >= dead_zone
    record.n_heldout = int(outside.sum())
    record.heldout_accuracy = float(np.mean(pred[outside] == ho_labels[outside]))
    inside = ~outside
    record.heldout_accuracy_dead_zone = (
        float(np.mean(pred[inside] == ho_labels[inside])) if inside.any() else np.nan
    )
    return u, record
