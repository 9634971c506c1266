"""Dense layers with hand-written backward passes, plus Adam and parameter EMA.

Everything works on batches: inputs are ``(B, in)`` (a single ``(in,)`` vector
is accepted too) and weight gradients are summed over the batch. Optimizer and
EMA updates return new state objects instead of mutating.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .statevector import ContractViolation

ACTIVATIONS = ("identity", "tanh")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ContractViolation(
                f"inconsistent layer shapes {self.weights.shape} / {self.bias.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"activation must be one of {ACTIVATIONS}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    @classmethod
    def zeros(cls, n_in: int, n_out: int, activation: str = "identity") -> "DenseLayer":
        return cls(np.zeros((n_out, n_in)), np.zeros(n_out), activation)

    @classmethod
    def uniform_init(cls, n_in: int, n_out: int, rng: np.random.Generator, activation: str = "identity") -> "DenseLayer":
        # U(-1/sqrt(in), 1/sqrt(in)) for both weights and bias
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, (n_out, n_in))
        b = rng.uniform(-bound, bound, n_out)
        return cls(w, b, activation)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def with_flat(self, flat: np.ndarray) -> "DenseLayer":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ContractViolation(f"expected {self.n_params} values, got {flat.shape}")
        k = self.weights.size
        return DenseLayer(flat[:k].reshape(self.weights.shape).copy(), flat[k:].copy(), self.activation)


def _check_input(layer: DenseLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (layer.n_in,):
        raise ContractViolation(f"layer expects input width {layer.n_in}, got shape {x.shape}")
    return x


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    x = _check_input(layer, x)
    z = x @ layer.weights.T + layer.bias
    return np.tanh(z) if layer.activation == "tanh" else z


def dense_backward(layer: DenseLayer, x, upstream, output=None):
    """Return ``(grad_weights, grad_bias, grad_input)`` for ``sum(upstream * forward(x))``.

    ``output`` may pass the cached forward result to skip recomputing tanh.
    """
    x = _check_input(layer, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape[:-1] + (layer.n_out,):
        raise ContractViolation(f"upstream shape {upstream.shape} does not match layer output")
    if layer.activation == "tanh":
        y = dense_forward(layer, x) if output is None else output
        upstream = upstream * (1.0 - y * y)
    x2 = x.reshape(-1, layer.n_in)
    g2 = upstream.reshape(-1, layer.n_out)
    grad_w = g2.T @ x2
    grad_b = g2.sum(axis=0)
    grad_in = upstream @ layer.weights
    return grad_w, grad_b, grad_in


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps_hat: float = 1e-8

    @classmethod
    def for_params(cls, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.99, eps_hat: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps_hat)


def adam_update(state: AdamState, params, grads) -> tuple[AdamState, np.ndarray]:
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ContractViolation(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)
    return replace(state, m=m, v=v, step=step), new_params


EMA_MAX_DECAY = 0.999


@dataclass
class EmaState:
    shadow: np.ndarray
    step: int = 0

    @classmethod
    def start(cls, params) -> "EmaState":
        return cls(np.array(params, dtype=np.float64), 0)


def ema_decay(step: int) -> float:
    return min(EMA_MAX_DECAY, (1.0 + step) / (10.0 + step))


def ema_update(state: EmaState, params) -> EmaState:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != state.shadow.shape:
        raise ContractViolation(f"shape mismatch {params.shape} vs {state.shadow.shape}")
    d = ema_decay(state.step)
    return EmaState(d * state.shadow + (1.0 - d) * params, state.step + 1)


@dataclass
class Sequential:
    """A stack of dense layers with a flat parameter view."""

    layers: list[DenseLayer] = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def flat(self) -> np.ndarray:
        return np.concatenate([layer.flat() for layer in self.layers])

    def with_flat(self, flat) -> "Sequential":
        out, pos = [], 0
        for layer in self.layers:
            out.append(layer.with_flat(flat[pos:pos + layer.n_params]))
            pos += layer.n_params
        return Sequential(out)

    def forward(self, x, keep: bool = False):
        acts = [np.asarray(x, dtype=np.float64)]
        for layer in self.layers:
            acts.append(dense_forward(layer, acts[-1]))
        return acts if keep else acts[-1]

    def backward(self, acts, upstream) -> np.ndarray:
        """Flat gradient of ``sum(upstream * output)`` given cached activations."""
        grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            gw, gb, upstream = dense_backward(self.layers[i], acts[i], upstream, output=acts[i + 1])
            grads.append(np.concatenate([gw.ravel(), gb]))
        return np.concatenate(grads[::-1])
