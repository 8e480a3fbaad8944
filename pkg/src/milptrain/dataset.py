"""Image dataset ingestion: IDX files, mean-pool downsampling, batching.

The IDX reader understands the standard big-endian layout (magic 0x00000803
for image stacks, 0x00000801 for label vectors) with optional gzip
compression, and scales pixels to [0, 1] by dividing by 255.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ImageSet",
    "Batch",
    "IdxError",
    "IdxMagicError",
    "IdxTruncatedError",
    "IdxCountMismatchError",
    "load_idx",
    "load_split",
    "resolve_split",
    "downsample_mean",
    "downsample_set",
    "one_hot",
    "make_batches",
]

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801

NUM_CLASSES = 10

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def resolve_split(data_dir, split: str) -> tuple[str, str]:
    """Locate the image/label IDX pair for a split under ``data_dir``,
    accepting either plain or ``.gz`` files with the conventional names."""
    try:
        names = SPLIT_FILES[split]
    except KeyError:
        raise ValueError(f"unknown split {split!r}; expected 'train' or 'test'")
    found = []
    for name in names:
        for candidate in (name, name + ".gz"):
            path = os.path.join(data_dir, candidate)
            if os.path.exists(path):
                found.append(path)
                break
        else:
            raise IdxError(f"missing {name}[.gz] under {data_dir}")
    return found[0], found[1]


def load_split(data_dir, split: str) -> "ImageSet":
    """Load one split ('train' or 'test') from a directory of IDX files."""
    images_path, labels_path = resolve_split(data_dir, split)
    return load_idx(images_path, labels_path)


class IdxError(Exception):
    """Base class for IDX ingestion failures."""


class IdxMagicError(IdxError):
    """File does not start with the expected magic number."""


class IdxTruncatedError(IdxError):
    """File holds fewer bytes than its header promises."""


class IdxCountMismatchError(IdxError):
    """Image and label files disagree on the number of items."""


@dataclass
class ImageSet:
    """Images scaled to [0, 1] with integer class labels."""

    images: np.ndarray  # (count, height, width) float64
    labels: np.ndarray  # (count,) int64

    @property
    def count(self) -> int:
        return self.images.shape[0]


@dataclass
class Batch:
    """A contiguous slice of a dataset prepared for training."""

    inputs: np.ndarray   # (m, d) when flattened, else (m, h, w)
    targets: np.ndarray  # (m, NUM_CLASSES) one-hot rows
    labels: np.ndarray   # (m,)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def _read_all(source) -> bytes:
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_images(data: bytes, origin: str) -> np.ndarray:
    if len(data) < 16:
        raise IdxTruncatedError(f"{origin}: header needs 16 bytes, file has {len(data)}")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != _IMAGE_MAGIC:
        raise IdxMagicError(
            f"{origin}: magic 0x{magic:08x}, expected 0x{_IMAGE_MAGIC:08x} for images"
        )
    need = 16 + count * rows * cols
    if len(data) < need:
        raise IdxTruncatedError(f"{origin}: expected {need} bytes, file has {len(data)}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows, cols).astype(np.float64) / 255.0


def _parse_labels(data: bytes, origin: str) -> np.ndarray:
    if len(data) < 8:
        raise IdxTruncatedError(f"{origin}: header needs 8 bytes, file has {len(data)}")
    magic, count = struct.unpack(">II", data[:8])
    if magic != _LABEL_MAGIC:
        raise IdxMagicError(
            f"{origin}: magic 0x{magic:08x}, expected 0x{_LABEL_MAGIC:08x} for labels"
        )
    if len(data) < 8 + count:
        raise IdxTruncatedError(f"{origin}: expected {8 + count} bytes, file has {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(images_source, labels_source) -> ImageSet:
    """Read paired IDX image/label files (paths or binary file objects);
    transparently decompresses gzip payloads."""
    img_name = getattr(images_source, "name", None) or str(images_source)
    lbl_name = getattr(labels_source, "name", None) or str(labels_source)
    images = _parse_images(_read_all(images_source), img_name)
    labels = _parse_labels(_read_all(labels_source), lbl_name)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    return ImageSet(images, labels)


def downsample_mean(image: np.ndarray) -> np.ndarray:
    """Reduce a 28x28 image to 7x7; output pixel (r, s) is the mean of the
    4x4 block starting at (4r, 4s)."""
    image = np.asarray(image, dtype=float)
    if image.shape != (28, 28):
        raise ValueError(f"expected a 28x28 image, got {image.shape}")
    out = np.empty((7, 7))
    for r in range(7):
        for s in range(7):
            out[r, s] = np.mean(image[4 * r : 4 * r + 4, 4 * s : 4 * s + 4])
    return out


def downsample_set(data: ImageSet) -> ImageSet:
    out = np.stack([downsample_mean(img) for img in data.images]) if data.count else (
        np.empty((0, 7, 7))
    )
    return ImageSet(out, data.labels.copy())


def one_hot(label: int, width: int = NUM_CLASSES) -> np.ndarray:
    if not 0 <= label < width:
        raise ValueError(f"label {label} outside 0..{width - 1}")
    v = np.zeros(width)
    v[label] = 1.0
    return v


def make_batches(data: ImageSet, batch_size: int, flatten: bool = True) -> list[Batch]:
    """Cut the set into consecutive batches in storage order; the final batch
    may be short.  ``flatten`` reshapes images to row-major vectors."""
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    if data.count == 0:
        raise ValueError("cannot batch an empty image set")
    if np.any(data.labels < 0) or np.any(data.labels >= NUM_CLASSES):
        raise ValueError("labels must lie in 0..9")
    batches = []
    for start in range(0, data.count, batch_size):
        imgs = data.images[start : start + batch_size]
        labels = data.labels[start : start + batch_size]
        if flatten:
            inputs = imgs.reshape(imgs.shape[0], -1).copy()
        else:
            inputs = imgs.copy()
        targets = np.zeros((imgs.shape[0], NUM_CLASSES))
        targets[np.arange(imgs.shape[0]), labels] = 1.0
        batches.append(Batch(inputs, targets, labels.copy()))
    return batches
