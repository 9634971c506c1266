"""Latent-space distribution metrics: Fréchet distance of Gaussian fits and polynomial-kernel MMD (KID)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .statevector import ContractViolation

EIG_TOL = 1e-10


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def from_samples(cls, x) -> "GaussianFit":
        x = _as_matrix(x)
        n, d = x.shape
        if n < d + 1:
            raise MetricError(f"need at least {d + 1} samples for a full-rank fit in {d} dims, got {n}")
        cov = np.cov(x, rowvar=False, ddof=1).reshape(d, d)
        return cls(x.mean(axis=0), 0.5 * (cov + cov.T))


def _as_matrix(x) -> np.ndarray:
    x = getattr(x, "latents", x)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise MetricError(f"expected a non-empty (N, d) array, got shape {x.shape}")
    return x


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    if vals.min() < -EIG_TOL:
        raise MetricError(f"matrix is not positive semi-definite (eigenvalue {vals.min():.3e})")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_from_fits(a: GaussianFit, b: GaussianFit) -> float:
    """‖μa − μb‖² + Tr(Σa + Σb − 2(Σa Σb)^½), via the symmetric form Σa^½ Σb Σa^½."""
    if a.mean.shape != b.mean.shape:
        raise MetricError(f"dimension mismatch {a.mean.shape} vs {b.mean.shape}")
    root_a = _psd_sqrt(a.covariance)
    inner = root_a @ b.covariance @ root_a
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    if vals.min() < -EIG_TOL:
        raise MetricError(f"square root did not converge: eigenvalue {vals.min():.3e}")
    tr_cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = a.mean - b.mean
    return float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * tr_cross)


def frechet_distance(a, b) -> float:
    a, b = _as_matrix(a), _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    return frechet_from_fits(GaussianFit.from_samples(a), GaussianFit.from_samples(b))


def poly_kernel(x, y) -> np.ndarray:
    """(x·y/d + 1)^3 for all row pairs."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x, y) -> float:
    x, y = _as_matrix(x), _as_matrix(y)
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise MetricError("unbiased MMD needs at least two samples per set")
    kxx, kyy, kxy = poly_kernel(x, x), poly_kernel(y, y), poly_kernel(x, y)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


@dataclass(frozen=True)
class KidReport:
    mean: float
    std: float
    subset_size: int
    n_subsets: int


def kid(a, b, subset_size: int = 100, n_subsets: int = 100, seed: int = 0) -> KidReport:
    """Mean and (population) std of unbiased MMD² over random subset pairs."""
    a, b = _as_matrix(a), _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    if n_subsets < 1:
        raise ContractViolation("n_subsets must be >= 1")
    if subset_size > min(len(a), len(b)):
        raise MetricError(f"subset size {subset_size} exceeds sample counts {len(a)}, {len(b)}")
    rng = np.random.default_rng(seed)
    scores = np.array([
        mmd2_unbiased(a[rng.choice(len(a), subset_size, replace=False)],
                      b[rng.choice(len(b), subset_size, replace=False)])
        for _ in range(n_subsets)
    ])
    return KidReport(float(scores.mean()), float(scores.std()) if n_subsets > 1 else 0.0, subset_size, n_subsets)
