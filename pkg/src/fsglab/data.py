"""Datasets: seeded synthetic generators and the big-endian IDX format.

Synthetic kinds:
* blobs   - Gaussian clusters at fixed centers evenly spaced on a circle of
            radius 2; noise is the per-coordinate standard deviation.
* spirals - two interleaved arms, radius growing along 1.5 turns, with
            Gaussian coordinate noise.

IDX files are parsed per the classic layout: 32-bit big-endian magic
(0x00000803 for images, 0x00000801 for labels), big-endian dimension sizes,
then raw unsigned bytes.  Pixels are scaled by 1/255 into [0, 1] and images
come back as (B, 1, H, W) float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError
from .rng import Rng
from .tensor import DTYPE

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    x: np.ndarray  # (B, ...) float64 features
    y: np.ndarray  # (B,) int labels
    n_classes: int


def gen_synthetic(kind: str, n_per_class: int, noise: float, rng: Rng,
                  classes: int = 2) -> Dataset:
    if n_per_class < 1:
        raise ContractError(f"n_per_class must be >= 1, got {n_per_class}")
    if kind == "blobs":
        return _gen_blobs(n_per_class, noise, rng, classes)
    if kind == "spirals":
        return _gen_spirals(n_per_class, noise, rng)
    raise ContractError(f"unknown synthetic kind {kind!r}")


def _gen_blobs(n_per_class: int, noise: float, rng: Rng, classes: int) -> Dataset:
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    xs = np.empty((classes * n_per_class, 2), dtype=DTYPE)
    ys = np.empty(classes * n_per_class, dtype=np.int64)
    row = 0
    for c in range(classes):
        for _ in range(n_per_class):
            xs[row] = centers[c] + noise * rng.normals(2)
            ys[row] = c
            row += 1
    return Dataset(xs, ys, classes)


def _gen_spirals(n_per_class: int, noise: float, rng: Rng) -> Dataset:
    """Two interleaved arms (1.5 turns), the second rotated by pi.

    Radius runs 0.3 -> 3.0, which keeps the radial gap between arms around
    0.9: classes stay separable under the usual noise levels (~0.15).
    """
    xs = np.empty((2 * n_per_class, 2), dtype=DTYPE)
    ys = np.empty(2 * n_per_class, dtype=np.int64)
    row = 0
    for c in range(2):
        for i in range(n_per_class):
            t = (i + 0.5) / n_per_class
            r = 0.3 + 2.7 * t
            angle = 3.0 * np.pi * t + np.pi * c
            xs[row, 0] = r * np.cos(angle) + noise * rng.normal()
            xs[row, 1] = r * np.sin(angle) + noise * rng.normal()
            ys[row] = c
            row += 1
    return Dataset(xs, ys, 2)


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


def _read_be32(buf: bytes, offset: int, path) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path) -> Dataset:
    with open(images_path, "rb") as fh:
        img_buf = fh.read()
    with open(labels_path, "rb") as fh:
        lab_buf = fh.read()

    magic = _read_be32(img_buf, 0, images_path)
    if magic != IMAGE_MAGIC:
        raise FormatError(
            f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"
        )
    count = _read_be32(img_buf, 4, images_path)
    rows = _read_be32(img_buf, 8, images_path)
    cols = _read_be32(img_buf, 12, images_path)
    payload = img_buf[16:]
    if len(payload) != count * rows * cols:
        raise FormatError(
            f"{images_path}: payload holds {len(payload)} bytes, header promises "
            f"{count * rows * cols}"
        )

    lab_magic = _read_be32(lab_buf, 0, labels_path)
    if lab_magic != LABEL_MAGIC:
        raise FormatError(
            f"{labels_path}: bad label magic 0x{lab_magic:08x}, expected 0x{LABEL_MAGIC:08x}"
        )
    lab_count = _read_be32(lab_buf, 4, labels_path)
    lab_payload = lab_buf[8:]
    if len(lab_payload) != lab_count:
        raise FormatError(
            f"{labels_path}: payload holds {len(lab_payload)} labels, header promises "
            f"{lab_count}"
        )
    if lab_count != count:
        raise FormatError(
            f"image/label count mismatch: {count} images vs {lab_count} labels"
        )

    images = np.frombuffer(payload, dtype=np.uint8).astype(DTYPE) / 255.0
    labels = np.frombuffer(lab_payload, dtype=np.uint8).astype(np.int64)
    x = images.reshape(count, 1, rows, cols)
    return Dataset(x, labels, int(labels.max()) + 1 if count else 0)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Inverse of load_idx for fixtures; expects uint8 images (B, H, W)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    b, h, w = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, b, h, w))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())
