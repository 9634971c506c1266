"""Command-line pipeline: autoencoder -> latents -> diffusion training -> sampling -> metrics -> plots.

Every command reads one JSON :class:`ExperimentConfig` (``--config``) with
per-field flag overrides, and every output file gets a ``<file>.meta.json``
sidecar carrying the config hash.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .autoencoder import (
    AutoencoderModel,
    decode,
    encode,
    load_autoencoder,
    reconstruction_mse,
    save_autoencoder,
    train_autoencoder,
)
from .data import FormatError, LatentDataset, load_image_dataset, load_latents, save_latents, subset_fraction, unscale_pixels
from .denoiser import canonical_variant
from .metrics import MetricError, frechet_distance, kid
from .statevector import ContractViolation
from .training import IncompatibleCheckpoint, TrainConfig, Trainer, TrainingError, train

SCHEMA_VERSION = 1
METRICS_HEADER = ["epoch", "variant", "frechet", "kid_mean", "kid_std"]
PGM_HEADER = b"P5\n28 28\n255\n"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    # data
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    output_dir: str = "runs"
    autoencoder_path: Optional[str] = None
    latents_path: Optional[str] = None
    # autoencoder
    ae_epochs: int = 10
    ae_batch_size: int = 16
    ae_lr: float = 1e-3
    # diffusion training
    variants: tuple[str, ...] = ("Classical",)
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
    # evaluation
    kid_subset_size: int = 100
    kid_subsets: int = 100

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}, expected {SCHEMA_VERSION}")
        variants = (self.variants,) if isinstance(self.variants, str) else tuple(self.variants)
        if not variants:
            raise ConfigError("variants must name at least one model")
        object.__setattr__(self, "variants", tuple(canonical_variant(v) for v in variants))
        for name in ("ae_epochs", "ae_batch_size", "kid_subset_size", "kid_subsets"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        self.train_config(self.variants[0])  # validates the shared training fields

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def ae_file(self) -> Path:
        return Path(self.autoencoder_path) if self.autoencoder_path else self.out / "autoencoder.qae"

    @property
    def latent_file(self) -> Path:
        return Path(self.latents_path) if self.latents_path else self.out / "latents.qlat"

    def train_config(self, variant: str) -> TrainConfig:
        keys = {f.name for f in fields(TrainConfig)} - {"variant"}
        return TrainConfig(variant=variant, **{k: getattr(self, k) for k in keys})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variants"] = list(self.variants)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config document must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "schema_version" not in d:
            raise ConfigError("config is missing schema_version")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        return cls.from_dict(doc)


# flag name -> config key; flags mirror config keys apart from these aliases
OVERRIDES = {
    "variant": "variants",
    "epochs": "epochs",
    "fraction": "dataset_fraction",
    "seed": "seed",
    "qubits": "dim",
    "lr": "lr",
    "T": "T",
    "output_dir": "output_dir",
}


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    for flag, key in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = tuple(value.split(",")) if key == "variants" else value
    return replace(cfg, **changes) if changes else cfg


def write_sidecar(path: Path, cfg: ExperimentConfig, command: str, **extra) -> None:
    meta = {"config_hash": cfg.config_hash(), "command": command, "version": __version__, "config": cfg.to_dict()}
    meta.update(extra)
    Path(f"{path}.meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _need(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} is not set (pass it in the config or on the command line)")
    return Path(path)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# commands -------------------------------------------------------------


def cmd_train_autoencoder(cfg: ExperimentConfig, args) -> None:
    images = load_image_dataset(_need(args.images or cfg.train_images, "train_images"))
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(10,)))
    model = AutoencoderModel.build(cfg.dim, rng)
    model, log = train_autoencoder(model, images.images, cfg.ae_epochs, cfg.ae_batch_size, cfg.ae_lr, cfg.seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_autoencoder(cfg.ae_file, model)
    write_sidecar(cfg.ae_file, cfg, "train-autoencoder")
    log_path = cfg.out / "autoencoder_log.csv"
    _write_csv(log_path, ["epoch", "mse"], [(e, repr(float(m))) for e, m in enumerate(log)])
    write_sidecar(log_path, cfg, "train-autoencoder")
    print(f"autoencoder: mse {log[0]:.4f} -> {log[-1]:.4f}, saved {cfg.ae_file}")


def cmd_encode(cfg: ExperimentConfig, args) -> None:
    if not cfg.ae_file.exists():
        raise FileNotFoundError(f"autoencoder checkpoint {cfg.ae_file} not found")
    model = load_autoencoder(cfg.ae_file)
    images = load_image_dataset(_need(args.images or cfg.train_images, "train_images"),
                                args.labels or cfg.train_labels)
    if args.subset:
        images = subset_fraction(images, cfg.dataset_fraction, cfg.seed)
    latents = LatentDataset(encode(model, images.images), images.labels, source_tag="encoded")
    out = Path(args.out) if args.out else cfg.latent_file
    out.parent.mkdir(parents=True, exist_ok=True)
    save_latents(out, latents)
    write_sidecar(out, cfg, "encode", n=len(latents), reconstruction_mse=reconstruction_mse(model, images.images))
    print(f"encoded {len(latents)} images to {out}")


def cmd_train(cfg: ExperimentConfig, args) -> None:
    latents = load_latents(cfg.latent_file)
    for variant in cfg.variants:
        tcfg = cfg.train_config(variant)
        out = cfg.out / variant

        def progress(tr, variant=variant):
            print(f"{variant} epoch {tr.epoch}/{tr.config.epochs} ema_loss {tr.log.ema_losses[-1]:.5f}", flush=True)

        train(tcfg, latents, out_dir=out, progress=progress)
        for p in sorted(out.iterdir()):
            if p.suffix in (".qdm", ".csv"):
                write_sidecar(p, cfg, "train", variant=variant)


def write_pgm(path: Path, pixels: np.ndarray) -> None:
    path.write_bytes(PGM_HEADER + np.asarray(pixels, dtype=np.uint8).reshape(28, 28).tobytes())


def cmd_sample(cfg: ExperimentConfig, args) -> None:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(20,)))
    # the latent file is only needed for the fingerprint check
    tr = Trainer.load(ckpt, load_latents(cfg.latent_file))
    z = tr.sample(args.n, rng)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_latents(out, LatentDataset(z, source_tag="sampled"))
    write_sidecar(out, cfg, "sample", checkpoint=str(ckpt), n=args.n)
    if args.decode_dir:
        if not cfg.ae_file.exists():
            raise FileNotFoundError(f"autoencoder checkpoint {cfg.ae_file} not found")
        images = unscale_pixels(decode(load_autoencoder(cfg.ae_file), np.clip(z, -1, 1)))
        dest = Path(args.decode_dir)
        dest.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(images):
            write_pgm(dest / f"sample_{i:04d}.pgm", img)
        write_sidecar(dest / "samples", cfg, "sample", checkpoint=str(ckpt), n=args.n)
    print(f"wrote {args.n} latents to {out}")


def cmd_evaluate(cfg: ExperimentConfig, args) -> None:
    gen, ref = load_latents(args.generated), load_latents(args.reference)
    if gen.dim != ref.dim:
        raise MetricError(f"latent dimension mismatch: {gen.dim} vs {ref.dim}")
    fd = frechet_distance(gen, ref)
    rep = kid(gen.latents, ref.latents, cfg.kid_subset_size, cfg.kid_subsets, cfg.seed)
    out = Path(args.out)
    new = not out.exists() or out.stat().st_size == 0
    with open(out, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(METRICS_HEADER)
        w.writerow([args.epoch, args.label or cfg.variants[0], repr(fd), repr(rep.mean), repr(rep.std)])
    write_sidecar(out, cfg, "evaluate")
    print(f"frechet {fd:.5f} kid {rep.mean:.5f} +- {rep.std:.5f}")


# plotting -------------------------------------------------------------


def to_db(values) -> np.ndarray:
    return 10.0 * np.log10(np.asarray(values, dtype=np.float64))


def read_series(path: Path, column: str) -> dict[str, tuple[list[float], list[float]]]:
    """Group one CSV into ``{name: (x, y)}``: by its ``variant`` column if present, else one series."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FormatError(f"{path}: CSV has no data rows")
    if column not in rows[0]:
        raise FormatError(f"{path}: column {column!r} not found (have {sorted(rows[0])})")
    xkey = next(iter(rows[0]))
    series: dict[str, tuple[list[float], list[float]]] = {}
    for r in rows:
        name = r.get("variant") or path.parent.name or path.stem
        xs, ys = series.setdefault(name, ([], []))
        xs.append(float(r[xkey]))
        ys.append(float(r[column]))
    return series


PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def render_svg(series: dict[str, tuple[Sequence[float], Sequence[float]]], ylabel: str,
               width: int = 640, height: int = 400) -> str:
    if not series:
        raise FormatError("nothing to plot")
    pad_l, pad_r, pad_t, pad_b = 60, 140, 20, 40
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    finite = np.isfinite(ys)
    if not finite.any():
        raise FormatError("no finite values to plot")
    x0, x1 = xs.min(), xs.max()
    y0, y1 = ys[finite].min(), ys[finite].max()
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad_l}" y1="{pad_t + ph}" x2="{pad_l + pw}" y2="{pad_t + ph}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + ph}" stroke="black"/>',
        f'<text x="{pad_l + pw / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{x0:g} .. {x1:g}</text>',
        f'<text x="14" y="{pad_t + ph / 2}" font-size="12" transform="rotate(-90 14 {pad_t + ph / 2})" '
        f'text-anchor="middle">{ylabel} [{y0:.4g}, {y1:.4g}]</text>',
    ]
    for i, (name, (x, y)) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y) if math.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = pad_t + 16 * (i + 1)
        out.append(f'<text x="{pad_l + pw + 10}" y="{ly}" font-size="12" fill="{colour}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(cfg: ExperimentConfig, args) -> None:
    series: dict[str, tuple[list[float], list[float]]] = {}
    for p in args.csv:
        for name, (x, y) in read_series(Path(p), args.column).items():
            key = name if name not in series else f"{name} ({p})"
            series[key] = (x, list(to_db(y)) if args.db else y)
    label = f"{args.column} (dB)" if args.db else args.column
    out = Path(args.out)
    out.write_text(render_svg(series, label).replace(">", f"><!-- config {cfg.config_hash()} -->", 1))
    write_sidecar(out, cfg, "plot", inputs=list(args.csv))
    print(f"wrote {out} with {len(series)} series")


# entry point ------------------------------------------------------------

COMMANDS = {
    "train-autoencoder": cmd_train_autoencoder,
    "encode": cmd_encode,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--variant", help="variant name or comma-separated list (e.g. Classical,4zQ)")
    common.add_argument("--epochs", type=int)
    common.add_argument("--fraction", type=float, help="dataset fraction in (0, 1]")
    common.add_argument("--seed", type=int)
    common.add_argument("--qubits", type=int, help="latent dimension = qubits per circuit")
    common.add_argument("--lr", type=float)
    common.add_argument("--T", type=int, help="number of diffusion steps")
    common.add_argument("--output-dir", dest="output_dir")

    parser = argparse.ArgumentParser(prog="qldm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qldm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-autoencoder", parents=[common], help="fit the image autoencoder")
    p.add_argument("--images", help="IDX image file (overrides train_images)")

    p = sub.add_parser("encode", parents=[common], help="encode images into a QLAT latent file")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--out", help="QLAT output path (default <output_dir>/latents.qlat)")
    p.add_argument("--subset", action="store_true", help="keep only dataset_fraction of the images")

    sub.add_parser("train", parents=[common], help="train diffusion denoiser(s) on latents")

    p = sub.add_parser("sample", parents=[common], help="draw latents from a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--out", required=True)
    p.add_argument("--decode-dir", help="also decode samples to 28x28 PGM images here")

    p = sub.add_parser("evaluate", parents=[common], help="append Fréchet/KID metrics to a CSV")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--label", help="series name in the variant column")

    p = sub.add_parser("plot", parents=[common], help="render CSV columns as an SVG line chart")
    p.add_argument("csv", nargs="+")
    p.add_argument("--column", default="loss")
    p.add_argument("--db", action="store_true", help="plot 10*log10 of the values")
    p.add_argument("--out", required=True)
    return parser


ERROR_CATEGORIES = [
    (ConfigError, "config", 2),
    (ContractViolation, "invalid-argument", 2),
    (IncompatibleCheckpoint, "checkpoint", 3),
    (FormatError, "format", 4),
    (FileNotFoundError, "missing-file", 5),
    (OSError, "io", 5),
    (MetricError, "metric", 6),
    (TrainingError, "training", 7),
]


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except tuple(cls for cls, _, _ in ERROR_CATEGORIES) as exc:
        for cls, category, code in ERROR_CATEGORIES:
            if isinstance(exc, cls):
                msg = " ".join(str(exc).split())
                print(f"error: {category}: {msg}", file=sys.stderr)
                return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
