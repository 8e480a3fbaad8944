"""Synthetic stand-in digit data and IDX serialization helpers.

Real handwritten-digit archives are large and not always on hand, so demo
scripts and tests can fall back to a generated ten-class problem: each
class gets a fixed random 7x7 prototype, lifted to 28x28 by block
replication, with per-pixel noise on top.  Samples therefore cluster
tightly around their class prototype after 4x4 mean-pooling, giving a
compact, learnable classification task with the exact geometry of the real
data (28x28 uint8 images, labels 0-9).

``write_idx_images`` / ``write_idx_labels`` emit the standard big-endian
IDX layout, so the generated data flows through the same file-format code
paths as the real thing.
"""

from __future__ import annotations

import gzip
import os
import struct

import numpy as np

from .dataset import NUM_CLASSES, SPLIT_FILES

__all__ = [
    "class_prototypes",
    "synthetic_digits",
    "write_idx_images",
    "write_idx_labels",
    "write_synthetic_dataset",
]

_PROTOTYPE_SEED = 170_339
_IMAGE_SIDE = 28
_COARSE_SIDE = 7


def class_prototypes() -> np.ndarray:
    """(10, 7, 7) fixed per-class intensity patterns in [0.05, 0.95]."""
    rng = np.random.default_rng(_PROTOTYPE_SEED)
    protos = rng.uniform(0.05, 0.95, size=(NUM_CLASSES, _COARSE_SIDE, _COARSE_SIDE))
    return protos


def synthetic_digits(
    count: int, seed: int = 0, noise: float = 12.0
) -> tuple[np.ndarray, np.ndarray]:
    """Generate ``count`` labelled images: (pixels uint8 (count, 28, 28),
    labels int64 (count,)).  Classes appear in balanced rotation, shuffled
    deterministically by ``seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % NUM_CLASSES).astype(np.int64)
    protos = class_prototypes()
    block = _IMAGE_SIDE // _COARSE_SIDE
    pixels = np.empty((count, _IMAGE_SIDE, _IMAGE_SIDE), dtype=np.uint8)
    for k in range(count):
        base = np.kron(protos[labels[k]], np.ones((block, block))) * 255.0
        noisy = base + rng.normal(0.0, noise, size=base.shape)
        pixels[k] = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    return pixels, labels


def write_idx_images(destination, pixels: np.ndarray) -> None:
    """Write a (count, rows, cols) uint8 stack in IDX image layout; a path
    ending in .gz is gzip-compressed."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3:
        raise ValueError("image stack must be (count, rows, cols)")
    count, rows, cols = pixels.shape
    payload = struct.pack(">IIII", 0x00000803, count, rows, cols) + pixels.tobytes()
    _write_bytes(destination, payload)


def write_idx_labels(destination, labels: np.ndarray) -> None:
    """Write a label vector in IDX label layout; .gz paths are compressed."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be a vector")
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValueError("labels must fit in one byte")
    payload = struct.pack(">II", 0x00000801, labels.size) + bytes(
        int(v) for v in labels
    )
    _write_bytes(destination, payload)


def _write_bytes(destination, payload: bytes) -> None:
    if hasattr(destination, "write"):
        destination.write(payload)
        return
    path = os.fspath(destination)
    if path.endswith(".gz"):
        with gzip.open(path, "wb") as handle:
            handle.write(payload)
    else:
        with open(path, "wb") as handle:
            handle.write(payload)


def write_synthetic_dataset(
    data_dir, train_count: int = 200, test_count: int = 50, seed: int = 0
) -> None:
    """Populate ``data_dir`` with a conventional train/test IDX file pair of
    synthetic digits (train from ``seed``, test from ``seed + 1``)."""
    os.makedirs(data_dir, exist_ok=True)
    for split, count, split_seed in (
        ("train", train_count, seed),
        ("test", test_count, seed + 1),
    ):
        pixels, labels = synthetic_digits(count, seed=split_seed)
        image_name, label_name = SPLIT_FILES[split]
        write_idx_images(os.path.join(data_dir, image_name), pixels)
        write_idx_labels(os.path.join(data_dir, label_name), labels)
