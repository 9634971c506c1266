"""IDX image/label ingestion, pixel scaling, dataset subsetting and the QLAT latent file."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .statevector import ContractViolation

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
QLAT_MAGIC = b"QLAT"
QLAT_VERSION = 1


class FormatError(ValueError):
    """A file does not parse as the expected binary format."""


def _read_bytes(path) -> bytes:
    path = Path(path)
    if str(path) in ("", "."):
        raise FileNotFoundError("empty path")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx_images(path, expect_shape: Optional[tuple[int, int]] = (28, 28)) -> np.ndarray:
    """Read an IDX3 image file (optionally gzipped) into a ``(count, rows*cols)`` uint8 array.

    Pass ``expect_shape=None`` to accept any image size.
    """
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes, need 16)")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}")
    if expect_shape is not None and (rows, cols) != tuple(expect_shape):
        raise FormatError(f"{path}: image size {rows}x{cols}, expected {expect_shape[0]}x{expect_shape[1]}")
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise FormatError(f"{path}: truncated payload, header declares {count} images ({need} bytes) but file has {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows * cols).copy()


def load_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes, need 8)")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw) < 8 + count:
        raise FormatError(f"{path}: truncated payload, header declares {count} labels but file has {len(raw) - 8}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).copy()


def write_idx_images(path, images: np.ndarray, rows: int = 28, cols: int = 28) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(-1, rows * cols)
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(images), rows, cols) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def scale_pixels(raw) -> np.ndarray:
    """Map 0..255 to [-1, 1]."""
    return np.asarray(raw, dtype=np.float64) / 127.5 - 1.0


def unscale_pixels(x) -> np.ndarray:
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, 784) in [-1, 1]
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ContractViolation("labels length must match image count")

    def __len__(self) -> int:
        return len(self.images)

    def take(self, idx) -> "ImageDataset":
        return ImageDataset(self.images[idx], None if self.labels is None else self.labels[idx])


@dataclass
class LatentDataset:
    latents: np.ndarray  # (N, d)
    labels: Optional[np.ndarray] = None
    source_tag: str = ""

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        if self.latents.ndim != 2:
            raise ContractViolation(f"latents must be 2-D, got shape {self.latents.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8)
            if len(self.labels) != len(self.latents):
                raise ContractViolation("labels length must match latent count")

    def __len__(self) -> int:
        return len(self.latents)

    @property
    def dim(self) -> int:
        return self.latents.shape[1]

    def take(self, idx) -> "LatentDataset":
        return LatentDataset(self.latents[idx], None if self.labels is None else self.labels[idx], self.source_tag)


def load_image_dataset(images_path, labels_path=None) -> ImageDataset:
    raw = load_idx_images(images_path)
    labels = load_idx_labels(labels_path) if labels_path else None
    if labels is not None and len(labels) != len(raw):
        raise FormatError(f"{labels_path}: {len(labels)} labels for {len(raw)} images")
    return ImageDataset(scale_pixels(raw), labels)


def subset_indices(n: int, fraction: float, seed: int) -> np.ndarray:
    if not 0 < fraction <= 1:
        raise ContractViolation(f"fraction must lie in (0, 1], got {fraction}")
    k = math.ceil(fraction * n - 1e-9)
    return np.random.default_rng(seed).permutation(n)[:k]


def subset_fraction(dataset, fraction: float, seed: int):
    """Uniform sample without replacement of ceil(fraction * N) rows."""
    return dataset.take(subset_indices(len(dataset), fraction, seed))


def save_latents(path, dataset: LatentDataset) -> None:
    if str(path) in ("", "."):
        raise FileNotFoundError("empty path")
    n, d = dataset.latents.shape
    has_labels = dataset.labels is not None
    parts = [
        QLAT_MAGIC,
        struct.pack("<IIIB", QLAT_VERSION, n, d, int(has_labels)),
        dataset.latents.astype("<f4").tobytes(),
    ]
    if has_labels:
        parts.append(dataset.labels.astype(np.uint8).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_latents(path) -> LatentDataset:
    if str(path) in ("", "."):
        raise FileNotFoundError("empty path")
    raw = Path(path).read_bytes()
    if raw[:4] != QLAT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at offset 0, expected {QLAT_MAGIC!r}")
    if len(raw) < 17:
        raise FormatError(f"{path}: truncated header")
    version, n, d, has_labels = struct.unpack("<IIIB", raw[4:17])
    if version != QLAT_VERSION:
        raise FormatError(f"{path}: unsupported QLAT version {version}")
    need = 17 + 4 * n * d + (n if has_labels else 0)
    if len(raw) < need:
        raise FormatError(f"{path}: truncated payload, need {need} bytes, have {len(raw)}")
    lat = np.frombuffer(raw, dtype="<f4", count=n * d, offset=17).reshape(n, d)
    labels = None
    if has_labels:
        labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=17 + 4 * n * d).copy()
    return LatentDataset(lat.astype(np.float64), labels, source_tag=str(path))
