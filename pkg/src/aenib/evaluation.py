"""Synthetic corruption suite, corruption-error tables, mCE, and the
qualitative nuisance diagnostics (swap / resample mosaics).

The severity parameter tables below are this artifact's documented contract:
fixed constants spanning mild to severe degradation at 5 levels. Every
corruption is deterministic under a fixed (kind, severity, seed, image) and
leaves pixels in [0, 1]. Prebuilt corruption archives (per-corruption .npy
pairs) can be ingested as well, so external benchmark data plugs into the
same error-table machinery.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, UnsupportedConfigurationError
from .latent import LatentPair

__all__ = ["CorruptionKind", "CorruptionSpec", "SEVERITY_TABLES", "corrupt",
           "ErrorTable", "evaluate_corruptions", "mce", "swap_nuisance",
           "resample_nuisance", "save_mosaic", "load_corruption_archive",
           "NOISE_KINDS"]


class CorruptionKind(str, Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    SHOT_NOISE = "shot_noise"
    IMPULSE_NOISE = "impulse_noise"
    BOX_BLUR = "box_blur"
    BRIGHTNESS = "brightness"
    CONTRAST = "contrast"
    TRANSLATE = "translate"


NOISE_KINDS = (CorruptionKind.GAUSSIAN_NOISE, CorruptionKind.SHOT_NOISE,
               CorruptionKind.IMPULSE_NOISE)

SEVERITY_TABLES: dict[CorruptionKind, tuple] = {
    CorruptionKind.GAUSSIAN_NOISE: (0.04, 0.08, 0.12, 0.18, 0.26),   # noise std
    CorruptionKind.SHOT_NOISE: (500.0, 250.0, 100.0, 60.0, 30.0),    # photon scale
    CorruptionKind.IMPULSE_NOISE: (0.01, 0.03, 0.06, 0.10, 0.17),    # pixel fraction
    CorruptionKind.BOX_BLUR: (2, 3, 4, 5, 6),                        # kernel size
    CorruptionKind.BRIGHTNESS: (0.05, 0.1125, 0.175, 0.2375, 0.30),  # additive shift
    CorruptionKind.CONTRAST: (0.75, 0.65, 0.55, 0.45, 0.35),         # scale factor
    CorruptionKind.TRANSLATE: (1, 2, 3, 4, 5),                       # offset px
}

_KIND_ID = {k: i for i, k in enumerate(CorruptionKind)}


@dataclass
class CorruptionSpec:
    kind: CorruptionKind
    severity: int
    seed: int = 0

    def __post_init__(self):
        self.kind = CorruptionKind(self.kind)
        if not 1 <= self.severity <= 5:
            raise ValueError("severity must lie in 1..5")

    @property
    def param(self):
        return SEVERITY_TABLES[self.kind][self.severity - 1]

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence((self.seed, _KIND_ID[self.kind], self.severity))
        return np.random.Generator(np.random.PCG64(ss))


def corrupt(image: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Apply one corruption to an (H, W, C) image in [0, 1]; output clipped."""
    x = np.asarray(image, dtype=np.float64)
    if x.min() < 0 or x.max() > 1:
        raise ValueError("corruption input must lie in [0, 1]")
    p = spec.param
    rng = spec.rng()
    kind = spec.kind
    if kind is CorruptionKind.GAUSSIAN_NOISE:
        out = x + rng.standard_normal(x.shape) * p
    elif kind is CorruptionKind.SHOT_NOISE:
        out = rng.poisson(x * p) / p
    elif kind is CorruptionKind.IMPULSE_NOISE:
        out = x.copy()
        hit = rng.random(x.shape) < p
        out[hit] = (rng.random(x.shape)[hit] < 0.5).astype(np.float64)
    elif kind is CorruptionKind.BOX_BLUR:
        out = np.stack([ndimage.uniform_filter(x[:, :, c], size=int(p), mode="constant")
                        for c in range(x.shape[2])], axis=2)
    elif kind is CorruptionKind.BRIGHTNESS:
        out = x + p
    elif kind is CorruptionKind.CONTRAST:
        m = x.mean()
        out = (x - m) * p + m
    elif kind is CorruptionKind.TRANSLATE:
        off = int(p)
        dy = off * (1 if rng.random() < 0.5 else -1)
        dx = off * (1 if rng.random() < 0.5 else -1)
        out = np.zeros_like(x)
        h, w = x.shape[:2]
        ys = slice(max(dy, 0), h + min(dy, 0))
        xs = slice(max(dx, 0), w + min(dx, 0))
        ys_src = slice(max(-dy, 0), h + min(-dy, 0))
        xs_src = slice(max(-dx, 0), w + min(-dx, 0))
        out[ys, xs] = x[ys_src, xs_src]
    else:  # pragma: no cover - enum is exhaustive
        raise ConfigurationError(f"unknown corruption kind {kind!r}")
    return np.clip(out, 0.0, 1.0)


def per_sample_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((master_seed, index)).generate_state(1)[0])


@dataclass
class ErrorTable:
    """Error rate per (corruption kind, severity), plus the clean error."""

    cells: dict = field(default_factory=dict)   # (kind_value, severity) -> rate
    clean_error: float = 0.0

    def __post_init__(self):
        for v in list(self.cells.values()) + [self.clean_error]:
            if not 0.0 <= v <= 1.0:
                raise ValueError("error rates must lie in [0, 1]")

    @property
    def kinds(self) -> list[str]:
        return sorted({k for k, _ in self.cells})

    @property
    def severities(self) -> list[int]:
        return sorted({s for _, s in self.cells})

    def per_severity_average(self) -> dict[int, float]:
        out = {}
        for s in self.severities:
            vals = [self.cells[(k, s)] for k in self.kinds if (k, s) in self.cells]
            out[s] = float(np.mean(vals))
        return out

    def overall_average(self) -> float:
        return float(np.mean(list(self.cells.values())))

    def to_rows(self) -> list[tuple]:
        rows = [(k, s, self.cells[(k, s)]) for k in self.kinds for s in self.severities
                if (k, s) in self.cells]
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["kind", "severity", "error"])
        writer.writerow(["clean", 0, repr(self.clean_error)])
        for kind, sev, err in self.to_rows():
            writer.writerow([kind, sev, repr(err)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "clean_error": self.clean_error,
            "cells": [{"kind": k, "severity": s, "error": e} for k, s, e in self.to_rows()],
            "per_severity_average": {str(s): v for s, v in self.per_severity_average().items()},
        }, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ErrorTable":
        obj = json.loads(text)
        cells = {(c["kind"], int(c["severity"])): float(c["error"]) for c in obj["cells"]}
        return ErrorTable(cells=cells, clean_error=float(obj["clean_error"]))


def _predict_labels(model, images: np.ndarray, batch: int = 256) -> np.ndarray:
    preds = []
    for i in range(0, images.shape[0], batch):
        probs = model.predict_probs(images[i:i + batch])
        preds.append(np.argmax(probs, axis=-1))
    return np.concatenate(preds)


def evaluate_corruptions(model, dataset, kinds=None, severities=(1, 2, 3, 4, 5),
                         seed: int = 0, batch: int = 256) -> ErrorTable:
    """Error rates of `model` on `dataset` under every (kind, severity) cell
    of the synthetic suite, plus the clean error. Per-sample corruption seeds
    derive from (seed, sample index), so results are order-independent."""
    kinds = [CorruptionKind(k) for k in (kinds or list(CorruptionKind))]
    images, labels = dataset.images, dataset.labels
    clean_pred = _predict_labels(model, images, batch)
    cells = {}
    for kind in kinds:
        for sev in severities:
            corrupted = np.empty_like(images, dtype=np.float32)
            for i in range(images.shape[0]):
                spec = CorruptionSpec(kind, sev, seed=per_sample_seed(seed, i))
                corrupted[i] = corrupt(images[i].astype(np.float64), spec)
            pred = _predict_labels(model, corrupted, batch)
            cells[(kind.value, sev)] = float(np.mean(pred != labels))
    return ErrorTable(cells=cells, clean_error=float(np.mean(clean_pred != labels)))


def mce(error_table: ErrorTable, reference_table: ErrorTable) -> float:
    """Mean corruption error: the severity-summed error ratio against a
    reference model, averaged over corruption kinds."""
    kinds = error_table.kinds
    if kinds != reference_table.kinds or error_table.severities != reference_table.severities:
        raise ValueError("error tables must share the same (kind, severity) grid")
    ratios = []
    for k in kinds:
        num = sum(error_table.cells[(k, s)] for s in error_table.severities)
        den = sum(reference_table.cells[(k, s)] for s in reference_table.severities)
        if den == 0:
            raise ValueError(f"reference errors for kind {k!r} sum to zero")
        ratios.append(num / den)
    return float(np.mean(ratios))


# ---------------------------------------------------------------------------
# qualitative diagnostics

def swap_nuisance(model, x_a, x_b) -> np.ndarray:
    """Decode the semantic latent of x_a with the nuisance of x_b
    (deterministic-mode encoding)."""
    res_a = model.encode(np.asarray(x_a))
    res_b = model.encode(np.asarray(x_b))
    if res_a.pair.is_vq:
        pair = LatentPair(z=res_a.pair.z, codes=res_b.pair.codes,
                          quantized=res_b.pair.quantized)
    else:
        pair = LatentPair(z=res_a.pair.z, z_n=res_b.pair.z_n)
    return model.decode(pair).data


def resample_nuisance(model, x, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Decode x's semantic latent under `count` standard-normal nuisance draws.

    Only the dense-nuisance (conv) path supports this; the VQ path has no
    tractable code sampler here.
    """
    res = model.encode(np.asarray(x))
    if res.pair.is_vq:
        raise UnsupportedConfigurationError(
            "nuisance resampling needs a dense z_n; the VQ path has no code sampler")
    kn = res.pair.z_n.shape[-1]
    b = res.pair.z.shape[0]
    out = []
    for _ in range(count):
        zn = rng.standard_normal((b, kn)).astype(res.pair.z_n.dtype)
        from .autodiff import Tensor
        pair = LatentPair(z=res.pair.z, z_n=Tensor(zn))
        out.append(model.decode(pair).data)
    return out


def save_mosaic(images, path, grid: tuple[int, int] | None = None):
    """Write a lossless PNG mosaic of [0,1] images (N, H, W, C)."""
    from PIL import Image
    arr = np.asarray(images)
    n, h, w, c = arr.shape
    if grid is None:
        cols = int(np.ceil(np.sqrt(n)))
        rows = int(np.ceil(n / cols))
    else:
        rows, cols = grid
    canvas = np.zeros((rows * h, cols * w, c), dtype=np.float64)
    for i in range(min(n, rows * cols)):
        r, col = divmod(i, cols)
        canvas[r * h:(r + 1) * h, col * w:(col + 1) * w] = arr[i]
    canvas8 = (np.clip(canvas, 0, 1) * 255).round().astype(np.uint8)
    if c == 1:
        canvas8 = canvas8[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas8).save(path, format="PNG")


def load_corruption_archive(root) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Ingest a prebuilt corruption archive: one directory per corruption kind
    holding images.npy (N, H, W[, C]) uint8/float and labels.npy."""
    root = Path(root)
    out = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        img_p, lab_p = sub / "images.npy", sub / "labels.npy"
        if not (img_p.exists() and lab_p.exists()):
            continue
        images = np.load(img_p)
        if images.dtype == np.uint8:
            images = images.astype(np.float32) / 255.0
        if images.ndim == 3:
            images = images[:, :, :, None]
        out[sub.name] = (images.astype(np.float32), np.load(lab_p).astype(np.int64))
    if not out:
        raise FileNotFoundError(f"no corruption archive under {root}")
    return out
