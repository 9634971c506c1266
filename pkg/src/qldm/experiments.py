"""Desk-scale end-to-end experiment: autoencoder, latent diffusion, Fréchet before/after training."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autoencoder import AutoencoderModel, encode, reconstruction_mse, train_autoencoder
from .data import LatentDataset
from .metrics import frechet_distance
from .training import TrainConfig, Trainer


@dataclass(frozen=True)
class ScaledExperiment:
    variants: tuple[str, ...] = ("Classical", "Expr3Z")
    dim: int = 8
    T: int = 50
    epochs: int = 5
    batch_size: int = 16
    lr: float = 5e-3
    n_train: int = 600
    n_heldout: int = 500
    n_autoencoder: int = 4500
    ae_epochs: int = 10
    ae_batch_size: int = 64
    n_samples: int = 500
    seed: int = 0

    def train_config(self, variant: str) -> TrainConfig:
        return TrainConfig(variant=variant, dim=self.dim, epochs=self.epochs, batch_size=self.batch_size,
                           lr=self.lr, T=self.T, seed=self.seed)


@dataclass(frozen=True)
class VariantResult:
    variant: str
    first_loss: float
    final_smoothed_loss: float
    frechet_untrained: float
    frechet_trained: float
    loss_csv: str
    final_params: np.ndarray
    seconds: float

    @property
    def loss_decreased(self) -> bool:
        return self.final_smoothed_loss < self.first_loss

    @property
    def frechet_ratio(self) -> float:
        return self.frechet_untrained / self.frechet_trained


@dataclass(frozen=True)
class ExperimentResult:
    autoencoder_mse: float
    variants: dict[str, VariantResult]


def prepare_latents(exp: ScaledExperiment, images: np.ndarray) -> tuple[LatentDataset, np.ndarray, float]:
    """Train the autoencoder on a shuffled split; return (training latents, held-out latents, held-out MSE).

    The first ``n_autoencoder`` shuffled images fit the autoencoder, the diffusion
    training set is the first ``n_train`` of those, and the held-out reference is
    the last ``n_heldout`` images, which the autoencoder never saw.
    """
    need = exp.n_autoencoder + exp.n_heldout
    if len(images) < need:
        raise ValueError(f"need at least {need} images, got {len(images)}")
    perm = np.random.default_rng(exp.seed).permutation(len(images))
    fit = images[perm[:exp.n_autoencoder]]
    held = images[perm[-exp.n_heldout:]]
    ae = AutoencoderModel.build(exp.dim, np.random.default_rng(exp.seed))
    ae, _ = train_autoencoder(ae, fit, exp.ae_epochs, exp.ae_batch_size, 1e-3, seed=exp.seed)
    train_lat = LatentDataset(encode(ae, fit[:exp.n_train]))
    return train_lat, encode(ae, held), reconstruction_mse(ae, held)


def run_variant(exp: ScaledExperiment, variant: str, latents: LatentDataset, heldout: np.ndarray) -> VariantResult:
    start = time.perf_counter()
    tr = Trainer(exp.train_config(variant), latents)

    def sample_rng():
        # same reverse-process noise for the untrained and trained model
        return np.random.default_rng(np.random.SeedSequence(exp.seed, spawn_key=(30,)))

    f0 = frechet_distance(tr.sample(exp.n_samples, sample_rng(), params=tr.initial_params), heldout)
    while not tr.done:
        tr.run_epoch()
    f1 = frechet_distance(tr.sample(exp.n_samples, sample_rng()), heldout)
    return VariantResult(
        variant=tr.config.variant,
        first_loss=tr.log.losses[0],
        final_smoothed_loss=float(tr.log.smoothed()[-1]),
        frechet_untrained=f0,
        frechet_trained=f1,
        loss_csv=tr.log.loss_csv(),
        final_params=tr.params.copy(),
        seconds=time.perf_counter() - start,
    )


def run_scaled_experiment(exp: ScaledExperiment, images: np.ndarray, progress=None) -> ExperimentResult:
    """``images`` are scaled to [-1, 1], shape (N, 784)."""
    latents, heldout, mse = prepare_latents(exp, images)
    results = {}
    for v in exp.variants:
        r = run_variant(exp, v, latents, heldout)
        results[r.variant] = r
        if progress is not None:
            progress(r)
    return ExperimentResult(mse, results)
