"""Write the 5000-image MNIST subset bundled with mlxtend as shuffled IDX train/test files.

The CLI reads local IDX files only; this produces them without a network download.
Usage: python3 scripts/export_mnist_subset.py OUT_DIR [--test 500] [--seed 0]
"""
import argparse
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from qldm.data import write_idx_images, write_idx_labels


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=500, help="images held out into the test split")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = mnist_data()  # sorted by label, so shuffle before splitting
    perm = np.random.default_rng(args.seed).permutation(len(images))
    images = images[perm].astype(np.uint8)
    labels = labels[perm].astype(np.uint8)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cut = len(images) - args.test
    for split, sl in (("train", slice(0, cut)), ("test", slice(cut, None))):
        write_idx_images(out / f"{split}-images-idx3-ubyte", images[sl])
        write_idx_labels(out / f"{split}-labels-idx1-ubyte", labels[sl])
        print(f"{split}: {len(images[sl])} images -> {out}")


if __name__ == "__main__":
    main()
