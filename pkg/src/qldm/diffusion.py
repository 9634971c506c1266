"""DDPM forward process, ε-prediction posterior mean, P2-weighted loss and ancestral sampling.

Time steps are 1-based (t = 1..T); schedule arrays are 0-based, so step ``t``
reads index ``t - 1``. Functions accept a single latent ``(d,)`` or a batch
``(B, d)``; ``t`` may be a scalar or a ``(B,)`` integer array.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .statevector import ContractViolation

P2_K = 1.0
P2_GAMMA = 1.0


@dataclass(frozen=True)
class DiffusionSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    @classmethod
    def from_betas(cls, beta) -> "DiffusionSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or len(beta) == 0:
            raise ContractViolation("beta must be a non-empty 1-D array")
        if np.any(beta < 0) or np.any(beta >= 1):
            raise ContractViolation("every beta must lie in [0, 1)")
        alpha = 1.0 - beta
        return cls(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))

    def snr(self, t) -> np.ndarray:
        ab = self.alpha_bar[_index(self, t)]
        return ab / (1.0 - ab)

    def p2_weight(self, t, k: float = P2_K, gamma: float = P2_GAMMA) -> np.ndarray:
        return 1.0 / (k + self.snr(t)) ** gamma


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if T < 1:
        raise ContractViolation(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ContractViolation(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    return DiffusionSchedule.from_betas(np.linspace(beta_start, beta_end, T))


def _index(schedule: DiffusionSchedule, t) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        if np.any(t != np.round(t)):
            raise ContractViolation("time steps must be integers")
        t = t.astype(np.int64)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ContractViolation(f"time step out of range 1..{schedule.T}: {t}")
    return t - 1


def _col(values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Broadcast per-element coefficients against ``(B, d)`` data."""
    return values[..., None] if np.ndim(values) and x.ndim > 1 else values


def forward_step(schedule: DiffusionSchedule, x_prev, t, eps) -> np.ndarray:
    """One Markov-kernel step x_{t-1} -> x_t with the supplied noise."""
    x_prev, eps = np.asarray(x_prev, float), np.asarray(eps, float)
    b = schedule.beta[_index(schedule, t)]
    return _col(np.sqrt(1.0 - b), x_prev) * x_prev + _col(np.sqrt(b), eps) * eps


def diffuse_to(schedule: DiffusionSchedule, x0, t, eps) -> np.ndarray:
    """Closed-form jump x_0 -> x_t."""
    x0, eps = np.asarray(x0, float), np.asarray(eps, float)
    ab = schedule.alpha_bar[_index(schedule, t)]
    return _col(np.sqrt(ab), x0) * x0 + _col(np.sqrt(1.0 - ab), eps) * eps


def posterior_mean(schedule: DiffusionSchedule, x_t, t, eps_pred) -> np.ndarray:
    x_t, eps_pred = np.asarray(x_t, float), np.asarray(eps_pred, float)
    i = _index(schedule, t)
    a, ab = schedule.alpha[i], schedule.alpha_bar[i]
    # β_t = 0 gives 0/0 when ᾱ_t = 1; the noise term vanishes there
    one_minus_a = 1.0 - a
    coef = np.divide(one_minus_a, np.sqrt(1.0 - ab), out=np.zeros_like(one_minus_a), where=one_minus_a != 0)
    return (x_t - _col(coef, eps_pred) * eps_pred) / _col(np.sqrt(a), x_t)


def p2_loss(schedule: DiffusionSchedule, eps_pred, eps_true, t) -> float:
    """P2-weighted mean squared error, averaged over coordinates and batch."""
    eps_pred, eps_true = np.asarray(eps_pred, float), np.asarray(eps_true, float)
    if eps_pred.shape != eps_true.shape:
        raise ContractViolation(f"shape mismatch {eps_pred.shape} vs {eps_true.shape}")
    w = schedule.p2_weight(t)
    per_elem = np.mean((eps_pred - eps_true) ** 2, axis=-1)
    return float(np.mean(w * per_elem))


def p2_loss_grad(schedule: DiffusionSchedule, eps_pred, eps_true, t) -> np.ndarray:
    """d p2_loss / d eps_pred, same shape as ``eps_pred``."""
    eps_pred, eps_true = np.asarray(eps_pred, float), np.asarray(eps_true, float)
    w = schedule.p2_weight(t)
    d = eps_pred.shape[-1]
    n = eps_pred.size // d
    return _col(w, eps_pred) * 2.0 * (eps_pred - eps_true) / (n * d)


Denoiser = Callable[[np.ndarray, np.ndarray], np.ndarray]


def sample(schedule: DiffusionSchedule, denoiser: Denoiser, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Ancestral sampling of ``n`` latents.

    ``denoiser(x_t, t)`` gets a ``(n, dim)`` batch and a ``(n,)`` step array and
    returns predicted noise. No noise is added on the final step.
    """
    x = rng.standard_normal((n, dim))
    for t in range(schedule.T, 0, -1):
        steps = np.full(n, t, dtype=np.int64)
        x = posterior_mean(schedule, x, steps, denoiser(x, steps))
        if t > 1:
            x = x + np.sqrt(schedule.beta[t - 1]) * rng.standard_normal((n, dim))
    return x
