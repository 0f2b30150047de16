"""Convert the 10k-sample MNIST digit dump shipped in the npm `mnist` package
into classic idx files under data/mnist/.

The npm package stores per-digit JSON arrays of flattened 28x28 images in
[0, 1] (pixel/255). We re-quantize to uint8, make a deterministic stratified
80/20 train/test split, and write gzipped idx3/idx1 files with stable bytes.

Usage: python tools/make_mnist_subset.py <path-to-extracted-package>/src/digits data/mnist
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from aenib.datasets import write_idx  # noqa: E402

SEED = 20240501


def main(digits_dir: str, out_dir: str):
    digits_dir, out_dir = Path(digits_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    train_x, train_y, test_x, test_y = [], [], [], []
    for digit in range(10):
        flat = np.asarray(json.loads((digits_dir / f"{digit}.json").read_text())["data"])
        imgs = flat.reshape(-1, 28, 28)
        imgs = np.round(imgs * 255).astype(np.uint8)
        order = rng.permutation(imgs.shape[0])
        imgs = imgs[order]
        n_test = int(round(imgs.shape[0] * 0.2))
        test_x.append(imgs[:n_test])
        test_y.append(np.full(n_test, digit, dtype=np.uint8))
        train_x.append(imgs[n_test:])
        train_y.append(np.full(imgs.shape[0] - n_test, digit, dtype=np.uint8))

    def shuffle_concat(xs, ys):
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        order = rng.permutation(x.shape[0])
        return x[order], y[order]

    tr_x, tr_y = shuffle_concat(train_x, train_y)
    te_x, te_y = shuffle_concat(test_x, test_y)
    write_idx(out_dir / "train-images-idx3-ubyte.gz", tr_x)
    write_idx(out_dir / "train-labels-idx1-ubyte.gz", tr_y)
    write_idx(out_dir / "t10k-images-idx3-ubyte.gz", te_x)
    write_idx(out_dir / "t10k-labels-idx1-ubyte.gz", te_y)
    print(f"wrote {tr_x.shape[0]} train / {te_x.shape[0]} test samples to {out_dir}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
