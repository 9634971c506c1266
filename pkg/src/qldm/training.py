"""Diffusion training loop: minibatches, per-element time/noise draws, P2 loss,
shift-rule gradients, Adam, EMA, QDM1 checkpoints and CSV loss logs.

Randomness comes from one ``SeedSequence`` split into named PCG64 streams so
that e.g. adding a sampling call never perturbs the training noise.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import denoiser as dn
from .data import FormatError, LatentDataset, subset_indices
from .diffusion import DiffusionSchedule, diffuse_to, linear_schedule, p2_loss, p2_loss_grad, sample
from .nn import AdamState, EmaState, adam_update, ema_update
from .statevector import ContractViolation

RNG_ALGORITHM = "PCG64"
STREAMS = ("init", "shuffle", "time", "noise", "sample")
QDM_MAGIC = b"QDM1"
QDM_VERSION = 1
SMOOTH_WINDOW = 20
EVAL_BATCH = 256


class TrainingError(RuntimeError):
    pass


class IncompatibleCheckpoint(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "Expr4Z"
    dim: int = 10
    epochs: int = 40
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    dataset_fraction: float = 1.0
    seed: int = 0
    checkpoint_every: int = 10
    entanglement: str = "circular"
    depth: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", dn.canonical_variant(self.variant))
        for name in ("dim", "epochs", "batch_size", "T", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be positive")
        if not self.lr > 0:
            raise ContractViolation("lr must be positive")
        if not 0 < self.dataset_fraction <= 1:
            raise ContractViolation("dataset_fraction must lie in (0, 1]")

    @property
    def denoiser(self) -> dn.DenoiserConfig:
        return dn.DenoiserConfig(self.variant, self.dim, self.entanglement, self.depth)

    def schedule(self) -> DiffusionSchedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    epochs: list[int] = field(default_factory=list)
    ema_losses: list[float] = field(default_factory=list)
    wall_seconds: list[float] = field(default_factory=list)

    def smoothed(self, window: int = SMOOTH_WINDOW) -> np.ndarray:
        x = np.asarray(self.losses)
        c = np.concatenate([[0.0], np.cumsum(x)])
        idx = np.arange(1, len(x) + 1)
        lo = np.maximum(0, idx - window)
        return (c[idx] - c[lo]) / (idx - lo)

    def loss_csv(self) -> str:
        out = io.StringIO()
        out.write("iteration,epoch,loss,loss_smoothed,loss_db\n")
        for i, (loss, ep, sm) in enumerate(zip(self.losses, self.epochs, self.smoothed()), start=1):
            db = 10.0 * math.log10(loss) if loss > 0 else float("-inf")
            out.write(f"{i},{ep},{float(loss)!r},{float(sm)!r},{db!r}\n")
        return out.getvalue()

    def epoch_csv(self) -> str:
        out = io.StringIO()
        out.write("epoch,ema_loss,wall_seconds\n")
        for e, (loss, wall) in enumerate(zip(self.ema_losses, self.wall_seconds), start=1):
            out.write(f"{e},{float(loss)!r},{wall:.3f}\n")
        return out.getvalue()


def _streams(seed: int) -> dict[str, np.random.Generator]:
    seqs = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(STREAMS, seqs)}


def data_fingerprint(latents: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(latents, dtype=np.float64).tobytes()).hexdigest()[:16]


def loss_and_grad(cfg: dn.DenoiserConfig, schedule: DiffusionSchedule, params, x0, t, eps):
    x_t = diffuse_to(schedule, x0, t, eps)
    pred, vjp = dn.forward_with_vjp(cfg, params, x_t, t)
    loss = p2_loss(schedule, pred, eps, t)
    return loss, vjp(p2_loss_grad(schedule, pred, eps, t))


class Trainer:
    """Owns all mutable training state; one :meth:`step` is one Adam iteration."""

    def __init__(self, config: TrainConfig, latents: LatentDataset, params: Optional[np.ndarray] = None):
        if len(latents) == 0:
            raise ContractViolation("latent dataset is empty")
        if latents.dim != config.dim:
            raise ContractViolation(f"latent dim {latents.dim} does not match config dim {config.dim}")
        self.config = config
        self.schedule = config.schedule()
        self.model = config.denoiser
        self.rngs = _streams(config.seed)
        idx = np.sort(subset_indices(len(latents), config.dataset_fraction, config.seed))
        self.data = latents.latents[idx]
        self.fingerprint = data_fingerprint(self.data)
        if params is None:
            params = dn.init_params(self.model, self.rngs["init"])
        self.params = np.array(params, dtype=np.float64)
        self.initial_params = self.params.copy()
        self.adam = AdamState.for_params(len(self.params), config.lr, config.beta1, config.beta2)
        self.ema = EmaState.start(self.params)
        self.log = TrainLog()
        self.epoch = 0  # completed epochs
        self.order = np.empty(0, dtype=np.int64)
        self.cursor = 0
        self._epoch_start = None

    @property
    def iterations(self) -> int:
        return len(self.log.losses)

    @property
    def done(self) -> bool:
        return self.epoch >= self.config.epochs

    def _batches_per_epoch(self) -> int:
        return math.ceil(len(self.data) / self.config.batch_size)

    def step(self) -> float:
        if self.done:
            raise TrainingError("training already finished")
        if self.cursor >= len(self.order):
            self.order = self.rngs["shuffle"].permutation(len(self.data))
            self.cursor = 0
            self._epoch_start = time.perf_counter()
        idx = self.order[self.cursor:self.cursor + self.config.batch_size]
        self.cursor += len(idx)
        x0 = self.data[idx]
        t = self.rngs["time"].integers(1, self.schedule.T + 1, size=len(idx))
        eps = self.rngs["noise"].standard_normal(x0.shape)
        loss, grad = loss_and_grad(self.model, self.schedule, self.params, x0, t, eps)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingError(
                f"non-finite loss {loss} at iteration {self.iterations + 1} "
                f"(epoch {self.epoch + 1}, t range {t.min()}..{t.max()})"
            )
        self.adam, self.params = adam_update(self.adam, self.params, grad)
        self.ema = ema_update(self.ema, self.params)
        self.log.losses.append(loss)
        self.log.epochs.append(self.epoch + 1)
        if self.cursor >= len(self.order):
            self._finish_epoch()
        return loss

    def _finish_epoch(self) -> None:
        self.epoch += 1
        self.log.ema_losses.append(self.evaluate_ema_loss())
        start = self._epoch_start if self._epoch_start is not None else time.perf_counter()
        self.log.wall_seconds.append(time.perf_counter() - start)

    def evaluate_ema_loss(self) -> float:
        """P2 loss of the EMA parameters on a fixed, seed-determined evaluation batch."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.config.seed, spawn_key=(1000,))))
        n = min(EVAL_BATCH, len(self.data))
        x0 = self.data[rng.permutation(len(self.data))[:n]]
        t = rng.integers(1, self.schedule.T + 1, size=n)
        eps = rng.standard_normal(x0.shape)
        x_t = diffuse_to(self.schedule, x0, t, eps)
        return p2_loss(self.schedule, dn.predict_noise(self.model, self.ema.shadow, x_t, t), eps, t)

    def run_epoch(self) -> None:
        target = self.epoch + 1
        while self.epoch < target:
            self.step()

    def sample(self, n: int, rng: Optional[np.random.Generator] = None, params: Optional[np.ndarray] = None) -> np.ndarray:
        """Ancestral samples from the EMA parameters (or explicit ``params``)."""
        rng = self.rngs["sample"] if rng is None else rng
        theta = self.ema.shadow if params is None else params
        return sample_latents(self.model, self.schedule, theta, n, rng)

    # checkpointing -------------------------------------------------------

    def _header(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "rng": {"algorithm": RNG_ALGORITHM, "states": {k: g.bit_generator.state for k, g in self.rngs.items()}},
            "epoch": self.epoch,
            "cursor": self.cursor,
            "adam_step": self.adam.step,
            "ema_step": self.ema.step,
            "data_fingerprint": self.fingerprint,
            "n_params": len(self.params),
            "log_epochs": self.log.epochs,
            "wall_seconds": self.log.wall_seconds,
        }

    def _arrays(self) -> dict[str, np.ndarray]:
        return {
            "params": self.params,
            "initial_params": self.initial_params,
            "ema_shadow": self.ema.shadow,
            "adam_m": self.adam.m,
            "adam_v": self.adam.v,
            "order": self.order.astype(np.float64),
            "losses": np.asarray(self.log.losses, dtype=np.float64),
            "ema_losses": np.asarray(self.log.ema_losses, dtype=np.float64),
        }

    def save(self, path) -> None:
        save_checkpoint(path, self._header(), self._arrays())

    @classmethod
    def load(cls, path, latents: LatentDataset, config: Optional[TrainConfig] = None) -> "Trainer":
        header, arrays = load_checkpoint(path)
        saved = TrainConfig.from_dict(header["config"])
        if config is not None and config != saved:
            diff = {k: (v, getattr(saved, k)) for k, v in config.to_dict().items() if getattr(saved, k) != v}
            raise IncompatibleCheckpoint(f"{path}: checkpoint config differs from requested config: {diff}")
        if header["rng"]["algorithm"] != RNG_ALGORITHM:
            raise IncompatibleCheckpoint(f"{path}: RNG algorithm {header['rng']['algorithm']} unsupported")
        tr = cls(saved, latents, params=arrays["params"])
        if tr.fingerprint != header["data_fingerprint"]:
            raise IncompatibleCheckpoint(f"{path}: latent dataset differs from the one used for training")
        for name, g in tr.rngs.items():
            g.bit_generator.state = header["rng"]["states"][name]
        tr.initial_params = arrays["initial_params"]
        tr.adam = AdamState(arrays["adam_m"], arrays["adam_v"], header["adam_step"], saved.lr, saved.beta1, saved.beta2)
        tr.ema = EmaState(arrays["ema_shadow"], header["ema_step"])
        tr.order = arrays["order"].astype(np.int64)
        tr.cursor = header["cursor"]
        tr.epoch = header["epoch"]
        tr.log = TrainLog(
            arrays["losses"].tolist(), list(header["log_epochs"]), arrays["ema_losses"].tolist(), list(header["wall_seconds"])
        )
        return tr


def sample_latents(model: dn.DenoiserConfig, schedule: DiffusionSchedule, params, n: int, rng: np.random.Generator) -> np.ndarray:
    return sample(schedule, lambda x, t: dn.predict_noise(model, params, x, t), rng, n, model.dim)


def save_checkpoint(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    # the JSON header is key-sorted, so the payload must follow the same order
    arrays = dict(sorted(arrays.items()))
    header = dict(header, arrays={k: int(np.asarray(v).size) for k, v in arrays.items()})
    meta = json.dumps(header, sort_keys=True).encode()
    parts = [QDM_MAGIC, struct.pack("<II", QDM_VERSION, len(meta)), meta]
    parts.extend(np.asarray(v, dtype="<f8").ravel().tobytes() for v in arrays.values())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != QDM_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at offset 0, expected {QDM_MAGIC!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    version, meta_len = struct.unpack_from("<II", raw, 4)
    if version != QDM_VERSION:
        raise IncompatibleCheckpoint(f"{path}: unsupported QDM1 version {version}")
    try:
        header = json.loads(raw[12:12 + meta_len])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    pos = 12 + meta_len
    arrays = {}
    for name, count in header["arrays"].items():
        if pos + 8 * count > len(raw):
            raise FormatError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(raw, "<f8", count, pos).astype(np.float64)
        pos += 8 * count
    return header, arrays


def train(config: TrainConfig, latents: LatentDataset, out_dir=None, progress=None):
    """Run the full protocol. Returns ``(params, ema, log)``.

    With ``out_dir`` set, writes ``checkpoint_epoch{N}.qdm`` every
    ``checkpoint_every`` epochs plus ``final.qdm``, ``loss.csv`` and ``epochs.csv``.
    """
    tr = Trainer(config, latents)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    while not tr.done:
        tr.run_epoch()
        if progress is not None:
            progress(tr)
        if out is not None and tr.epoch % config.checkpoint_every == 0:
            tr.save(out / f"checkpoint_epoch{tr.epoch}.qdm")
    if out is not None:
        tr.save(out / "final.qdm")
        (out / "loss.csv").write_text(tr.log.loss_csv())
        (out / "epochs.csv").write_text(tr.log.epoch_csv())
    return tr.params, tr.ema, tr.log
