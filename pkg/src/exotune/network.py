"""Small dense networks with explicit tape backprop, Adam, and soft target blending.

Everything is float64 numpy. `forward` records the inputs and
pre-activations of every layer; `backward` replays that tape to produce
exact parameter gradients, which unit tests pin against central finite
differences. forward/backward are pure; `adam_step` and `soft_update`
mutate their owner's parameters in place and must be serialized by the
caller (one writer, any number of readers in between).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")


def _check_finite(arrays, what: str) -> None:
    for i, a in enumerate(arrays):
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite values in {what} (layer {i})")


@dataclass
class NetworkParams:
    """Weights/biases of a dense net. Layer i maps fan_in -> fan_out as x @ W.T + b."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    role: str = "prediction"

    def __post_init__(self) -> None:
        if not (len(self.weights) == len(self.biases) == len(self.activations) >= 1):
            raise ValueError("need the same number of weights, biases and activations")
        if self.role not in ("prediction", "target"):
            raise ValueError(f"unknown role: {self.role!r}")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation: {act!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not agree")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i}: fan-in {w.shape[1]} != previous fan-out "
                    f"{self.weights[i - 1].shape[0]}"
                )
        _check_finite(self.weights, "weights")
        _check_finite(self.biases, "biases")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self, role: str | None = None) -> "NetworkParams":
        return NetworkParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activations=list(self.activations),
            role=self.role if role is None else role,
        )


@dataclass
class Gradients:
    """Parameter gradients, shape-congruent with the owning NetworkParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class Tape:
    """Per-layer inputs and pre-activations recorded by forward."""

    inputs: list[np.ndarray]
    preactivations: list[np.ndarray]
    single: bool


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; step counter t starts at 0."""

    m_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_weights: list[np.ndarray]
    v_biases: list[np.ndarray]
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_network(
    layer_sizes,
    activations,
    rng: np.random.Generator,
    role: str = "prediction",
) -> NetworkParams:
    """Glorot-uniform weights, zero biases; deterministic given the RNG state."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least one layer (two sizes)")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    acts = list(activations)
    if len(acts) != len(sizes) - 1:
        raise ValueError(f"expected {len(sizes) - 1} activations, got {len(acts)}")
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights=weights, biases=biases, activations=acts, role=role)


def init_adam(params: NetworkParams, learning_rate: float = 1e-3, **hyper) -> AdamState:
    return AdamState(
        m_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_weights=[np.zeros_like(w) for w in params.weights],
        v_biases=[np.zeros_like(b) for b in params.biases],
        learning_rate=learning_rate,
        **hyper,
    )


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def forward(params: NetworkParams, x) -> tuple[np.ndarray, Tape]:
    """Run the net on one input vector or a (B, fan_in) batch.

    Returns the output plus a tape sufficient for `backward`.
    """
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    fan_in = params.weights[0].shape[1]
    if a.ndim != 2 or a.shape[1] != fan_in:
        raise ValueError(f"expected input with {fan_in} features, got shape {np.shape(x)}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite network input")
    inputs = []
    preacts = []
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(a)
        z = a @ w.T + b
        preacts.append(z)
        a = _activate(z, act)
    out = a[0] if single else a
    return out, Tape(inputs=inputs, preactivations=preacts, single=single)


def backward(params: NetworkParams, tape: Tape, output_gradient) -> Gradients:
    """Gradients of a scalar loss w.r.t. every parameter, given dLoss/dOutput.

    With a batched tape, `output_gradient` has one row per batch element
    and parameter gradients are summed over the batch.
    """
    g = np.asarray(output_gradient, dtype=np.float64)
    if tape.single:
        if g.shape != (params.weights[-1].shape[0],):
            raise ValueError(f"output gradient shape {g.shape} does not match net output")
        g = g[None, :]
    elif g.shape != tape.preactivations[-1].shape:
        raise ValueError(f"output gradient shape {g.shape} does not match net output")
    grad_w: list[np.ndarray] = [np.empty(0)] * len(params.weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(params.biases)
    for i in reversed(range(len(params.weights))):
        gz = g * _activation_grad(tape.preactivations[i], params.activations[i])
        grad_w[i] = gz.T @ tape.inputs[i]
        grad_b[i] = gz.sum(axis=0)
        g = gz @ params.weights[i]
    return Gradients(weights=grad_w, biases=grad_b)


def _check_congruent(params: NetworkParams, other_w, other_b, what: str) -> None:
    if len(other_w) != len(params.weights) or len(other_b) != len(params.biases):
        raise ValueError(f"{what}: layer count mismatch")
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if other_w[i].shape != w.shape or other_b[i].shape != b.shape:
            raise ValueError(f"{what}: shape mismatch at layer {i}")


def adam_step(params: NetworkParams, grads: Gradients, state: AdamState) -> None:
    """One Adam update with bias correction, in place. Rejects non-finite gradients."""
    _check_congruent(params, grads.weights, grads.biases, "gradients")
    _check_congruent(params, state.m_weights, state.m_biases, "adam state")
    for i, g in enumerate(grads.weights):
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(grads.biases[i])):
            raise ValueError(f"non-finite gradient at layer {i}; refusing to update")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for i in range(len(params.weights)):
        for p, g, m, v in (
            (params.weights[i], grads.weights[i], state.m_weights[i], state.v_weights[i]),
            (params.biases[i], grads.biases[i], state.m_biases[i], state.v_biases[i]),
        ):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


def soft_update(prediction: NetworkParams, target: NetworkParams, tau: float) -> None:
    """Blend target parameters toward prediction: t <- tau*p + (1-tau)*t, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    _check_congruent(prediction, target.weights, target.biases, "target")
    for i in range(len(prediction.weights)):
        target.weights[i] *= 1.0 - tau
        target.weights[i] += tau * prediction.weights[i]
        target.biases[i] *= 1.0 - tau
        target.biases[i] += tau * prediction.biases[i]
