"""Dense tanh autoencoder mapping 28x28 images to bounded latents, and its QAE1 checkpoint."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import FormatError
from .nn import AdamState, DenseLayer, Sequential, adam_update
from .statevector import ContractViolation

IMAGE_SIZE = 784
HIDDEN = 128
QAE_MAGIC = b"QAE1"
_ACT_TAGS = {"identity": 0, "tanh": 1}
_TAG_ACTS = {v: k for k, v in _ACT_TAGS.items()}


@dataclass
class AutoencoderModel:
    encoder: Sequential
    decoder: Sequential

    @property
    def latent_dim(self) -> int:
        return self.encoder.layers[-1].n_out

    @classmethod
    def build(cls, latent_dim: int, rng: np.random.Generator, hidden: int = HIDDEN) -> "AutoencoderModel":
        enc = Sequential([
            DenseLayer.uniform_init(IMAGE_SIZE, hidden, rng, "tanh"),
            DenseLayer.uniform_init(hidden, latent_dim, rng, "tanh"),
        ])
        dec = Sequential([
            DenseLayer.uniform_init(latent_dim, hidden, rng, "tanh"),
            DenseLayer.uniform_init(hidden, IMAGE_SIZE, rng, "tanh"),
        ])
        return cls(enc, dec)

    @classmethod
    def zeros(cls, latent_dim: int, hidden: int = HIDDEN) -> "AutoencoderModel":
        enc = Sequential([DenseLayer.zeros(IMAGE_SIZE, hidden, "tanh"), DenseLayer.zeros(hidden, latent_dim, "tanh")])
        dec = Sequential([DenseLayer.zeros(latent_dim, hidden, "tanh"), DenseLayer.zeros(hidden, IMAGE_SIZE, "tanh")])
        return cls(enc, dec)

    @property
    def layers(self) -> list[DenseLayer]:
        return self.encoder.layers + self.decoder.layers

    def flat(self) -> np.ndarray:
        return np.concatenate([self.encoder.flat(), self.decoder.flat()])

    def with_flat(self, flat) -> "AutoencoderModel":
        k = self.encoder.n_params
        return AutoencoderModel(self.encoder.with_flat(flat[:k]), self.decoder.with_flat(flat[k:]))


def encode(model: AutoencoderModel, images) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.shape[-1:] != (IMAGE_SIZE,):
        raise ContractViolation(f"images must have {IMAGE_SIZE} pixels, got shape {images.shape}")
    if np.any(np.abs(images) > 1.0):
        raise ContractViolation("pixel values must lie in [-1, 1]")
    return model.encoder.forward(images)


def decode(model: AutoencoderModel, latents) -> np.ndarray:
    latents = np.asarray(latents, dtype=np.float64)
    if latents.shape[-1:] != (model.latent_dim,):
        raise ContractViolation(f"latents must have width {model.latent_dim}, got shape {latents.shape}")
    return model.decoder.forward(latents)


def reconstruction_mse(model: AutoencoderModel, images, batch: int = 1000) -> float:
    images = np.asarray(images, dtype=np.float64)
    total = 0.0
    for s in range(0, len(images), batch):
        x = images[s:s + batch]
        total += float(np.sum((decode(model, encode(model, x)) - x) ** 2))
    return total / images.size


def _loss_and_grad(model: AutoencoderModel, x: np.ndarray) -> tuple[float, np.ndarray]:
    net = Sequential(model.layers)
    acts = net.forward(x, keep=True)
    diff = acts[-1] - x
    loss = float(np.mean(diff ** 2))
    return loss, net.backward(acts, 2.0 * diff / diff.size)


def train_autoencoder(model: AutoencoderModel, images, epochs: int, batch: int = 16, lr: float = 1e-3, seed: int = 0):
    """Adam on mean squared reconstruction error.

    Returns ``(model, log)`` where ``log[0]`` is the dataset MSE before training
    and ``log[e]`` the MSE after epoch ``e``.
    """
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ContractViolation("cannot train on an empty dataset")
    rng = np.random.default_rng(seed)
    flat = model.flat()
    adam = AdamState.for_params(len(flat), lr=lr)
    log = [reconstruction_mse(model, images)]
    for _ in range(epochs):
        order = rng.permutation(len(images))
        for s in range(0, len(images), batch):
            _, g = _loss_and_grad(model, images[order[s:s + batch]])
            adam, flat = adam_update(adam, flat, g)
            model = model.with_flat(flat)
        log.append(reconstruction_mse(model, images))
    return model, log


def save_autoencoder(path, model: AutoencoderModel) -> None:
    parts = [QAE_MAGIC, struct.pack("<I", len(model.layers))]
    for layer in model.layers:
        rows, cols = layer.weights.shape
        parts.append(struct.pack("<II", rows, cols))
        parts.append(layer.weights.astype("<f8").tobytes())
        parts.append(layer.bias.astype("<f8").tobytes())
        parts.append(struct.pack("<B", _ACT_TAGS[layer.activation]))
    Path(path).write_bytes(b"".join(parts))


def load_autoencoder(path) -> AutoencoderModel:
    raw = Path(path).read_bytes()
    if raw[:4] != QAE_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at offset 0, expected {QAE_MAGIC!r}")
    try:
        (count,) = struct.unpack_from("<I", raw, 4)
        pos = 8
        layers = []
        for _ in range(count):
            rows, cols = struct.unpack_from("<II", raw, pos)
            pos += 8
            w = np.frombuffer(raw, "<f8", rows * cols, pos).reshape(rows, cols)
            pos += 8 * rows * cols
            b = np.frombuffer(raw, "<f8", rows, pos)
            pos += 8 * rows
            (tag,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            if tag not in _TAG_ACTS:
                raise FormatError(f"{path}: unknown activation tag {tag} at offset {pos - 1}")
            layers.append(DenseLayer(w.astype(np.float64), b.astype(np.float64), _TAG_ACTS[tag]))
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: truncated QAE1 file") from exc
    if count % 2:
        raise FormatError(f"{path}: expected an even number of layers, got {count}")
    half = count // 2
    return AutoencoderModel(Sequential(layers[:half]), Sequential(layers[half:]))
