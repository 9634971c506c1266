"""Noise predictor ε_θ(x_t, t) = x_t + B3(B1(x_t) + B2(emb(t))).

Quantum variants use a variational circuit for each block; the classical
baseline uses a 10 -> 10 affine layer per block so that the parameter budget
lines up with the quantum models. Parameters of the three blocks are kept as
one flat vector (block 1, then 2, then 3) so Adam/EMA treat them jointly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import circuits
from .circuits import CircuitSpec
from .nn import DenseLayer, dense_backward, dense_forward
from .statevector import ContractViolation

VARIANTS = ("Classical", "BasicQ", "Expr3Z", "Expr3X", "Expr4Z", "Expr4X")
ALIASES = {
    "classical": "Classical",
    "basicq": "BasicQ",
    "3zq": "Expr3Z",
    "3xq": "Expr3X",
    "4zq": "Expr4Z",
    "4xq": "Expr4X",
}
SHORT_NAMES = {"Classical": "Classical", "BasicQ": "BasicQ", "Expr3Z": "3zQ",
               "Expr3X": "3xQ", "Expr4Z": "4zQ", "Expr4X": "4xQ"}
BASIC_DEPTH = 4


def canonical_variant(name: str) -> str:
    if name in VARIANTS:
        return name
    key = name.lower()
    for v in VARIANTS:
        if v.lower() == key:
            return v
    if key in ALIASES:
        return ALIASES[key]
    valid = ", ".join(sorted(set(VARIANTS) | set(SHORT_NAMES.values())))
    raise ContractViolation(f"unknown variant {name!r}; valid names: {valid}")


@dataclass(frozen=True)
class DenoiserConfig:
    variant: str = "Expr4Z"
    dim: int = 10
    entanglement: str = "circular"
    # only used by quantum variants to override the preset depth (toy configs in tests)
    depth: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        if self.dim < 1:
            raise ContractViolation("dim must be >= 1")

    @property
    def quantum(self) -> bool:
        return self.variant != "Classical"

    def circuit(self) -> CircuitSpec:
        if not self.quantum:
            raise ContractViolation("classical variant has no circuit")
        if self.variant == "BasicQ":
            ansatz, depth, basis = "basic", BASIC_DEPTH, "Z"
        else:
            ansatz, depth, basis = "expressive", int(self.variant[4]), self.variant[5]
        if self.depth is not None:
            depth = self.depth
        return CircuitSpec(self.dim, ansatz, depth, basis, self.entanglement)

    @property
    def block_sizes(self) -> tuple[int, int, int]:
        if self.quantum:
            n = self.circuit().n_params
        else:
            n = self.dim * self.dim + self.dim
        return (n, n, n)


def count_params(config: DenoiserConfig) -> int:
    return sum(config.block_sizes)


def split_params(config: DenoiserConfig, flat) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (count_params(config),):
        raise ContractViolation(f"expected {count_params(config)} parameters, got {flat.shape}")
    a, b, _ = config.block_sizes
    return flat[:a], flat[a:a + b], flat[a + b:]


def init_params(config: DenoiserConfig, rng: np.random.Generator) -> np.ndarray:
    """Random starting parameters.

    Circuits draw every angle from U(-π, π); dense blocks use
    U(-1/√d, 1/√d) for weights and biases.
    """
    if config.quantum:
        return rng.uniform(-np.pi, np.pi, count_params(config))
    blocks = [DenseLayer.uniform_init(config.dim, config.dim, rng).flat() for _ in range(3)]
    return np.concatenate(blocks)


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of the raw step index; ``(dim,)`` or ``(B, dim)``."""
    if dim % 2:
        raise ContractViolation(f"embedding dimension must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    arg = t[..., None] * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def _dense(config: DenoiserConfig, flat: np.ndarray) -> DenseLayer:
    return DenseLayer.zeros(config.dim, config.dim).with_flat(flat)


def _prepare(config: DenoiserConfig, x_t, t):
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1:] != (config.dim,):
        raise ContractViolation(f"latent width {x_t.shape[-1:]} does not match dim {config.dim}")
    single = x_t.ndim == 1
    x = np.atleast_2d(x_t)
    steps = np.broadcast_to(np.asarray(t), (x.shape[0],))
    return x, steps, single


def forward_with_vjp(config: DenoiserConfig, params, x_t, t):
    """Return ``(eps_pred, vjp)`` where ``vjp(upstream)`` is the flat parameter gradient
    of ``sum(upstream * eps_pred)``.
    """
    x, steps, single = _prepare(config, x_t, t)
    p1, p2, p3 = split_params(config, params)
    uniq, inverse = np.unique(steps, return_inverse=True)
    emb = time_embedding(uniq, config.dim)

    if config.quantum:
        spec = config.circuit()
        h1, j1, _ = circuits.jacobians(spec, p1, x)
        h2u, j2u, _ = circuits.jacobians(spec, p2, emb)
        h = h1 + h2u[inverse]
        h3, j3p, j3x = circuits.jacobians(spec, p3, h, wrt_inputs=True)
        out = x + h3

        def vjp(upstream):
            u = np.atleast_2d(np.asarray(upstream, dtype=np.float64)).reshape(out.shape)
            g3 = np.einsum("bi,bip->p", u, j3p)
            w = np.einsum("bi,bik->bk", u, j3x)
            g1 = np.einsum("bk,bkp->p", w, j1)
            w2 = np.zeros((len(uniq), config.dim))
            np.add.at(w2, inverse, w)
            g2 = np.einsum("bk,bkp->p", w2, j2u)
            return np.concatenate([g1, g2, g3])
    else:
        l1, l2, l3 = (_dense(config, p) for p in (p1, p2, p3))
        emb_b = emb[inverse]
        h = dense_forward(l1, x) + dense_forward(l2, emb_b)
        out = x + dense_forward(l3, h)

        def vjp(upstream):
            u = np.atleast_2d(np.asarray(upstream, dtype=np.float64)).reshape(out.shape)
            gw3, gb3, w = dense_backward(l3, h, u)
            gw1, gb1, _ = dense_backward(l1, x, w)
            gw2, gb2, _ = dense_backward(l2, emb_b, w)
            return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2, gw3.ravel(), gb3])

    return (out[0] if single else out), vjp


def predict_noise(config: DenoiserConfig, params, x_t, t) -> np.ndarray:
    x, steps, single = _prepare(config, x_t, t)
    p1, p2, p3 = split_params(config, params)
    uniq, inverse = np.unique(steps, return_inverse=True)
    emb = time_embedding(uniq, config.dim)
    if config.quantum:
        spec = config.circuit()
        h = circuits.evaluate_batch(spec, p1, x) + circuits.evaluate_batch(spec, p2, emb)[inverse]
        out = x + circuits.evaluate_batch(spec, p3, h)
    else:
        l1, l2, l3 = (_dense(config, p) for p in (p1, p2, p3))
        h = dense_forward(l1, x) + dense_forward(l2, emb)[inverse]
        out = x + dense_forward(l3, h)
    return out[0] if single else out


def grad_params(config: DenoiserConfig, params, x_t, t, upstream) -> np.ndarray:
    _, vjp = forward_with_vjp(config, params, x_t, t)
    return vjp(upstream)
