"""Datasets, augmentation, and the metrics log.

Two data sources: the CIFAR-10 binary-batch format, and a deterministic
synthetic shape dataset with tight ground-truth boxes so localization can
be scored without manual annotation. Synthetic images put one bright shape
(square, disk, triangle, cross, or ring, in that class order) on a dim
textured noise background; shape pixels stay above 0.6 and background
below 0.5 on every channel, which keeps the labels recoverable by simple
template matching and the task learnable at desk scale.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

SHAPE_NAMES = ("square", "disk", "triangle", "cross", "ring")

METRICS_HEADER = "epoch,step,loss_sl,loss_ss1,loss_ss2,loss_sd,acc_saol,acc_gapfc"


class DataError(Exception):
    """Missing or malformed dataset input."""


# ===== Synthetic shapes =====


@dataclass
class ShapeSet:
    """images [N,3,S,S] in [0,1]; labels [N]; boxes [N,4] as half-open

    (row0, col0, row1, col1) in image coordinates."""

    images: np.ndarray
    labels: np.ndarray
    boxes: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def _shape_mask(kind: int, s: int) -> np.ndarray:
    # sampled at pixel centers with the ideal shape spanning the full s x s
    # cell, so the tight crop of the raster matches the shape's outline
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    c = (s - 1) / 2.0
    r = s / 2.0
    if kind == 0:  # square
        return np.ones((s, s), dtype=bool)
    if kind == 1:  # disk
        return (yy - c) ** 2 + (xx - c) ** 2 <= r * r
    if kind == 2:  # triangle, apex up
        return np.abs(xx - c) <= (yy + 0.5) / 2.0
    if kind == 3:  # cross
        arm = max(0.8, s / 6.0)
        return (np.abs(yy - c) <= arm) | (np.abs(xx - c) <= arm)
    if kind == 4:  # ring
        d2 = (yy - c) ** 2 + (xx - c) ** 2
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    raise ValueError(f"unknown shape kind {kind}")


def make_shapes(
    n: int,
    *,
    num_classes: int = 3,
    image_size: int = 32,
    seed: int = 0,
    size_range: tuple[int, int] | None = None,
) -> ShapeSet:
    """Deterministic dataset of ``n`` single-shape images.

    Classes are balanced exactly (counts differ by at most one) and the
    whole set is a pure function of the arguments.
    """
    if image_size < 16:
        raise ValueError("image_size must be at least 16")
    if not 2 <= num_classes <= len(SHAPE_NAMES):
        raise ValueError(f"num_classes must be in [2, {len(SHAPE_NAMES)}]")
    if n < 1:
        raise ValueError("need at least one sample")
    smin, smax = size_range or (max(8, int(0.4 * image_size)), int(0.75 * image_size))
    if not 8 <= smin <= smax <= image_size - 2:
        raise ValueError(f"bad size range {(smin, smax)} for image size {image_size}")

    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(num_classes), n // num_classes + 1)[:n]
    labels = labels[rng.permutation(n)].astype(np.int64)

    images = np.empty((n, 3, image_size, image_size), dtype=np.float64)
    boxes = np.empty((n, 4), dtype=np.int64)
    for i in range(n):
        # per-image background statistics (per-channel base level and noise
        # amplitude) vary widely so any two images differ visibly in texture
        level = rng.uniform(0.05, 0.38, 3)
        amp = rng.uniform(0.02, 0.10)
        img = np.clip(
            level[:, None, None]
            + rng.uniform(-amp, amp, (3, image_size, image_size)),
            0.0,
            0.5,
        )
        s = int(rng.integers(smin, smax + 1))
        mask = _shape_mask(int(labels[i]), s)
        top = int(rng.integers(1, image_size - s))
        left = int(rng.integers(1, image_size - s))
        color = rng.uniform(0.65, 1.0, 3)
        noise = rng.uniform(-0.03, 0.03, (3, s, s))
        patch = img[:, top : top + s, left : left + s]
        values = np.clip(color[:, None, None] + noise, 0.6, 1.0)
        patch[:, mask] = values[:, mask]
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        boxes[i] = (top + rows[0], left + cols[0], top + rows[-1] + 1, left + cols[-1] + 1)
        images[i] = img
    return ShapeSet(images=images, labels=labels, boxes=boxes)


# ===== CIFAR-10 binary batches =====

_CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes
_CIFAR_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
_CIFAR_TEST = ["test_batch.bin"]


def load_cifar10_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    """One binary batch -> (images [N,3,32,32] in [0,1], labels [N]).

    Records are 3073 bytes: a label byte below 10, then the red, green and
    blue 32x32 planes row-major.
    """
    if not os.path.exists(path):
        raise DataError(f"no such data file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % _CIFAR_RECORD != 0:
        raise DataError(
            f"{path}: size {raw.size} is not a positive multiple of {_CIFAR_RECORD}"
        )
    records = raw.reshape(-1, _CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= 10:
        raise DataError(f"{path}: label byte {labels.max()} out of range")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels


def load_cifar10(root: str, *, train: bool) -> tuple[np.ndarray, np.ndarray]:
    names = _CIFAR_TRAIN if train else _CIFAR_TEST
    parts = [load_cifar10_file(os.path.join(root, name)) for name in names]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


# ===== Shared helpers =====


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels outside [0, {num_classes})")
    out = np.zeros((len(labels), num_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def augment_batch(
    x: np.ndarray, rng: np.random.Generator, *, pad: int = 4, flip: bool = True
) -> np.ndarray:
    """Zero-pad, random crop back to size, and randomly mirror each sample."""
    n, _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(x)
    tops = rng.integers(0, 2 * pad + 1, n)
    lefts = rng.integers(0, 2 * pad + 1, n)
    flips = rng.random(n) < 0.5 if flip else np.zeros(n, dtype=bool)
    for i in range(n):
        crop = padded[i, :, tops[i] : tops[i] + h, lefts[i] : lefts[i] + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


class MetricsLog:
    """Append-only CSV of per-epoch training metrics."""

    def __init__(self, path: str):
        self.path = path
        if not os.path.exists(path) or os.path.getsize(path) == 0:
            with open(path, "w") as f:
                f.write(METRICS_HEADER + "\n")

    def append(
        self,
        epoch: int,
        step: int,
        losses: dict[str, float],
        acc_saol: float,
        acc_gapfc: float,
    ) -> None:
        row = [
            str(epoch),
            str(step),
            repr(float(losses.get("sl", 0.0))),
            repr(float(losses.get("ss1", 0.0))),
            repr(float(losses.get("ss2", 0.0))),
            repr(float(losses.get("sd", 0.0))),
            repr(float(acc_saol)),
            repr(float(acc_gapfc)),
        ]
        with open(self.path, "a") as f:
            f.write(",".join(row) + "\n")
