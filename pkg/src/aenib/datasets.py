"""Dataset ingestion and batching.

Two on-disk layouts are accepted:
  * the classic digit-dataset binary format (idx3/idx1 files, optionally
    gzipped, named train-images-idx3-ubyte / train-labels-idx1-ubyte /
    t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte), and
  * per-split directories of PNGs with one subdirectory per class
    (root/train/<label>/*.png, root/test/<label>/*.png).

Images are returned NHWC in [0, 1] float32. The data root defaults to the
AENIB_DATA_ROOT environment variable.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["Dataset", "load_digit_dataset", "read_idx", "write_idx",
           "random_translate", "gaussian_noise_images", "data_root",
           "batch_indices"]

DATA_ROOT_ENV = "AENIB_DATA_ROOT"


@dataclass
class Dataset:
    images: np.ndarray   # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray   # (N,) int64
    name: str = ""

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree on sample count")

    def __len__(self):
        return self.images.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def channel_stats(self) -> tuple[tuple, tuple]:
        mean = self.images.mean(axis=(0, 1, 2))
        std = self.images.std(axis=(0, 1, 2))
        return tuple(float(v) for v in mean), tuple(float(max(v, 1e-6)) for v in std)


def data_root(override: str | None = None) -> Path:
    root = override or os.environ.get(DATA_ROOT_ENV, "data")
    return Path(root)


def _open_maybe_gz(path: Path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read one idx1/idx3 file (raw or gzipped) into an ndarray."""
    with _open_maybe_gz(Path(path)) as fh:
        zero, dtype_code, ndim = struct.unpack(">HBB", fh.read(4))
        if zero != 0 or dtype_code != 0x08:
            raise ValueError(f"{path}: not an unsigned-byte idx file")
        shape = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    return data.reshape(shape)


def write_idx(path, array: np.ndarray, compress: bool = True):
    """Write a uint8 array as an idx file (gzipped when `compress`)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, 0x08, array.ndim)
    header += struct.pack(">" + "I" * array.ndim, *array.shape)
    raw = header + array.tobytes()
    path = Path(path)
    if compress:
        # fileobj form keeps the member name out of the gzip header and
        # mtime=0 zeroes the timestamp, so identical arrays give identical bytes
        with open(path, "wb") as base:
            with gzip.GzipFile(filename="", fileobj=base, mode="wb", mtime=0) as fh:
                fh.write(raw)
    else:
        path.write_bytes(raw)


def _find_idx(root: Path, stem: str) -> Path | None:
    for suffix in ("", ".gz"):
        p = root / (stem + suffix)
        if p.exists():
            return p
    return None


def _load_png_tree(split_dir: Path) -> tuple[np.ndarray, np.ndarray]:
    from PIL import Image
    images, labels = [], []
    for class_dir in sorted(split_dir.iterdir()):
        if not class_dir.is_dir():
            continue
        label = int(class_dir.name)
        for png in sorted(class_dir.glob("*.png")):
            arr = np.asarray(Image.open(png))
            if arr.ndim == 2:
                arr = arr[:, :, None]
            images.append(arr)
            labels.append(label)
    if not images:
        raise FileNotFoundError(f"no class-directory PNGs under {split_dir}")
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def load_digit_dataset(root, split: str = "train") -> Dataset:
    """Load one split from either accepted layout under `root`."""
    root = Path(root)
    stem = "train" if split == "train" else "t10k"
    img_path = _find_idx(root, f"{stem}-images-idx3-ubyte")
    lab_path = _find_idx(root, f"{stem}-labels-idx1-ubyte")
    if img_path and lab_path:
        images = read_idx(img_path).astype(np.float32) / 255.0
        labels = read_idx(lab_path).astype(np.int64)
        if images.ndim == 3:
            images = images[:, :, :, None]
        return Dataset(images, labels, name=f"{root.name}/{split}")
    split_dir = root / ("train" if split == "train" else "test")
    if split_dir.is_dir():
        images, labels = _load_png_tree(split_dir)
        return Dataset(images.astype(np.float32) / 255.0, labels,
                       name=f"{root.name}/{split}")
    raise FileNotFoundError(
        f"no digit dataset at {root}: expected idx files ({stem}-images-idx3-ubyte[.gz]) "
        f"or a {split_dir.name}/<class>/*.png tree")


def random_translate(images: np.ndarray, max_shift: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Per-sample integer translation up to +-max_shift pixels, zero-padded."""
    if max_shift <= 0:
        return images
    n, h, w, c = images.shape
    out = np.zeros_like(images)
    shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
    for i in range(n):
        dy, dx = int(shifts[i, 0]), int(shifts[i, 1])
        ys = slice(max(dy, 0), h + min(dy, 0))
        xs = slice(max(dx, 0), w + min(dx, 0))
        ys_src = slice(max(-dy, 0), h + min(-dy, 0))
        xs_src = slice(max(-dx, 0), w + min(-dx, 0))
        out[i, ys, xs] = images[i, ys_src, xs_src]
    return out


def gaussian_noise_images(count: int, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Pure standard-Gaussian-noise images clipped to [0, 1] (OOD probes)."""
    return np.clip(rng.standard_normal((count, *shape)), 0.0, 1.0).astype(np.float32)


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Training-batch indices for a global step.

    Epochs hold floor(n / batch) full batches; each epoch's shuffle is reseeded
    from the master seed, so the batch is a pure function of (seed, step) and
    training resumes exactly from any step.
    """
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds dataset size {n}")
    per_epoch = n // batch_size
    epoch, b = divmod(step, per_epoch)
    order = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((seed, epoch)))).permutation(n)
    return order[b * batch_size:(b + 1) * batch_size]
