import json

import numpy as np
import pytest

from qldm.cli import ExperimentConfig, ConfigError, main, render_svg, to_db
from qldm.data import LatentDataset, load_latents, save_latents, write_idx_images, write_idx_labels


@pytest.fixture
def workspace(tmp_path):
    rng = np.random.default_rng(0)
    write_idx_images(tmp_path / "img.idx", rng.integers(0, 256, (100, 784)).astype(np.uint8))
    write_idx_labels(tmp_path / "lab.idx", rng.integers(0, 10, 100).astype(np.uint8))
    cfg = {
        "schema_version": 1,
        "train_images": str(tmp_path / "img.idx"),
        "train_labels": str(tmp_path / "lab.idx"),
        "output_dir": str(tmp_path / "run"),
        "ae_epochs": 1,
        "variants": ["Classical"],
        "dim": 4,
        "epochs": 1,
        "batch_size": 32,
        "T": 10,
        "kid_subset_size": 10,
        "kid_subsets": 5,
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    return tmp_path


def run(ws, *argv):
    return main([argv[0], "--config", str(ws / "cfg.json"), *argv[1:]])


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return err[0]


def test_full_pipeline(workspace, capsys):
    ws = workspace
    run_dir = ws / "run"
    assert run(ws, "train-autoencoder") == 0
    assert (run_dir / "autoencoder.qae").exists()
    assert (run_dir / "autoencoder_log.csv").read_text().startswith("epoch,mse\n")

    assert run(ws, "encode") == 0
    lat = load_latents(run_dir / "latents.qlat")
    assert lat.latents.shape == (100, 4)

    assert run(ws, "train") == 0
    assert (run_dir / "Classical" / "final.qdm").exists()
    meta = json.loads((run_dir / "Classical" / "loss.csv.meta.json").read_text())
    cfg = ExperimentConfig.load(ws / "cfg.json")
    assert meta["config_hash"] == cfg.config_hash()

    ckpt = str(run_dir / "Classical" / "final.qdm")
    assert run(ws, "sample", "--checkpoint", ckpt, "--n", "16", "--out", str(ws / "s.qlat"),
               "--decode-dir", str(ws / "pgm")) == 0
    assert len(load_latents(ws / "s.qlat")) == 16
    pgm = (ws / "pgm" / "sample_0000.pgm").read_bytes()
    assert pgm.split(b"\n", 3)[:3] == [b"P5", b"28 28", b"255"]
    assert len(pgm) == len(b"P5\n28 28\n255\n") + 784
    assert len(list((ws / "pgm").glob("*.pgm"))) == 16

    assert run(ws, "sample", "--checkpoint", ckpt, "--n", "16", "--out", str(ws / "s2.qlat")) == 0
    np.testing.assert_array_equal(load_latents(ws / "s2.qlat").latents, load_latents(ws / "s.qlat").latents)

    out = ws / "metrics.csv"
    assert run(ws, "evaluate", "--generated", str(run_dir / "latents.qlat"),
               "--reference", str(run_dir / "latents.qlat"), "--out", str(out), "--epoch", "1") == 0
    assert run(ws, "evaluate", "--generated", str(ws / "s.qlat"),
               "--reference", str(run_dir / "latents.qlat"), "--out", str(out), "--epoch", "2") == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "epoch,variant,frechet,kid_mean,kid_std"
    assert len(lines) == 3
    assert abs(float(lines[1].split(",")[2])) < 1e-8

    svg = ws / "loss.svg"
    assert run(ws, "plot", str(run_dir / "Classical" / "loss.csv"), "--db", "--out", str(svg)) == 0
    assert svg.read_text().count("<polyline") == 1


def test_train_autoencoder_is_deterministic(workspace):
    ws = workspace
    assert run(ws, "train-autoencoder", "--output-dir", str(ws / "a")) == 0
    assert run(ws, "train-autoencoder", "--output-dir", str(ws / "b")) == 0
    assert (ws / "a" / "autoencoder.qae").read_bytes() == (ws / "b" / "autoencoder.qae").read_bytes()


def test_encode_subset_honours_fraction(workspace):
    ws = workspace
    assert run(ws, "train-autoencoder") == 0
    assert run(ws, "encode", "--subset", "--fraction", "0.2", "--out", str(ws / "sub.qlat")) == 0
    assert len(load_latents(ws / "sub.qlat")) == 20


def test_flag_overrides(workspace):
    from qldm.cli import build_parser, resolve_config

    args = build_parser().parse_args(
        ["train", "--config", str(workspace / "cfg.json"), "--variant", "4zQ,Classical",
         "--epochs", "3", "--qubits", "8", "--fraction", "0.5", "--seed", "7", "--lr", "0.005", "--T", "50"])
    cfg = resolve_config(args)
    assert cfg.variants == ("Expr4Z", "Classical")
    assert (cfg.epochs, cfg.dim, cfg.dataset_fraction, cfg.seed, cfg.lr, cfg.T) == (3, 8, 0.5, 7, 0.005, 50)
    tc = cfg.train_config("Expr4Z")
    assert tc.denoiser.circuit().depth == 4


def test_default_config():
    cfg = ExperimentConfig()
    assert cfg.epochs == 40
    assert cfg.kid_subset_size == 100
    assert cfg.config_hash() == ExperimentConfig().config_hash()
    assert cfg.config_hash() != ExperimentConfig(seed=1).config_hash()


def test_config_rejections(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict({"schema_version": 1, "epoch": 3})
    with pytest.raises(ConfigError, match="schema_version"):
        ExperimentConfig.from_dict({"epochs": 3})
    with pytest.raises(ConfigError, match="schema_version"):
        ExperimentConfig.from_dict({"schema_version": 2})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        ExperimentConfig.load(tmp_path / "bad.json")


@pytest.mark.parametrize(
    "argv, category",
    [
        (["train-autoencoder", "--images", "/nonexistent/img.idx"], "missing-file"),
        (["train", "--variant", "5zQ"], "invalid-argument"),
        (["encode"], "missing-file"),
        (["train", "--fraction", "1.5"], "invalid-argument"),
    ],
)
def test_errors_are_single_line(workspace, capsys, argv, category):
    code = run(workspace, *argv)
    assert code != 0
    line = last_error(capsys)
    assert line.startswith(f"error: {category}: ")


def test_unknown_variant_lists_valid_names(workspace, capsys):
    assert run(workspace, "train", "--variant", "5zQ") != 0
    assert "Expr4Z" in last_error(capsys)


def test_bad_config_file(workspace, capsys):
    (workspace / "cfg.json").write_text(json.dumps({"schema_version": 1, "learning_rate": 1}))
    assert run(workspace, "train") == 2
    assert last_error(capsys).startswith("error: config: unknown config keys")


def test_evaluate_dimension_mismatch(tmp_path, capsys):
    save_latents(tmp_path / "a.qlat", LatentDataset(np.zeros((20, 3))))
    save_latents(tmp_path / "b.qlat", LatentDataset(np.zeros((20, 4))))
    code = main(["evaluate", "--generated", str(tmp_path / "a.qlat"), "--reference", str(tmp_path / "b.qlat"),
                 "--out", str(tmp_path / "m.csv")])
    assert code != 0
    assert last_error(capsys).startswith("error: metric: ")


def test_corrupt_checkpoint(workspace, capsys):
    (workspace / "x.qdm").write_bytes(b"NOPE" + bytes(20))
    save_latents(workspace / "l.qlat", LatentDataset(np.zeros((4, 4))))
    code = main(["sample", "--checkpoint", str(workspace / "x.qdm"), "--out", str(workspace / "o.qlat")])
    assert code != 0
    assert last_error(capsys).startswith("error: ")


def test_plot_empty_csv(tmp_path, capsys):
    (tmp_path / "e.csv").write_text("iteration,epoch,loss\n")
    assert main(["plot", str(tmp_path / "e.csv"), "--out", str(tmp_path / "p.svg")]) != 0
    assert last_error(capsys).startswith("error: format: ")


def test_plot_two_series(tmp_path):
    (tmp_path / "m.csv").write_text(
        "epoch,variant,frechet,kid_mean,kid_std\n1,Classical,2.0,0.1,0.01\n2,Classical,1.0,0.05,0.01\n"
        "1,Expr4Z,3.0,0.2,0.02\n2,Expr4Z,1.5,0.1,0.02\n")
    assert main(["plot", str(tmp_path / "m.csv"), "--column", "frechet", "--out", str(tmp_path / "p.svg")]) == 0
    svg = (tmp_path / "p.svg").read_text()
    assert svg.count("<polyline") == 2
    assert "Classical" in svg and "Expr4Z" in svg
    assert (tmp_path / "p.svg.meta.json").exists()


def test_db_transform():
    assert to_db([0.01])[0] == pytest.approx(-20.0)
    assert to_db([1.0])[0] == 0.0


def test_render_svg_is_self_contained():
    svg = render_svg({"a": ([0, 1, 2], [1.0, 0.5, 0.25])}, "loss")
    assert svg.startswith("<svg xmlns=")
    assert "href" not in svg
