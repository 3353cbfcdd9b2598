"""Dataset sources: IDX files (MNIST / Fashion-MNIST) and Gaussian blobs."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .trainer import Dataset

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def parse_idx(raw: bytes, expected_magic: int, name: str = "<bytes>") -> np.ndarray:
    """Decode one IDX payload of unsigned bytes into an array of its shape."""
    if len(raw) < 4:
        raise IDXFormatError(f"{name}: truncated header at byte offset {len(raw)} (need 4 magic bytes)")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise IDXFormatError(f"{name}: bad magic 0x{magic:08x} at byte offset 0, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{name}: truncated dimension table at byte offset {len(raw)} (need {header} bytes)")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + size:
        raise IDXFormatError(
            f"{name}: truncated data at byte offset {len(raw)}, expected {header + size} bytes for shape {dims}"
        )
    if len(raw) > header + size:
        raise IDXFormatError(f"{name}: {len(raw) - header - size} trailing bytes after offset {header + size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def write_idx(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_idx(array))


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Load an image/label IDX pair; pixels are scaled to [0, 1]."""
    images = parse_idx(_read_bytes(images_path), IMAGE_MAGIC, str(images_path))
    labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC, str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels "
            f"(label data ends at byte offset {8 + labels.shape[0]})"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    classes = num_classes if num_classes is not None else max(10, int(y.max()) + 1)
    return Dataset(x, y, classes)


def synth_dataset(classes: int, dim: int, per_class: int, separation: float, seed: int) -> Dataset:
    """Gaussian blobs: one unit-variance cluster per class.

    Class centres are random directions scaled to norm ``separation``.
    Samples are returned shuffled.
    """
    if classes < 2 or dim < 1 or per_class < 1 or separation < 0:
        raise ValueError("need classes >= 2, dim >= 1, per_class >= 1, separation >= 0")
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((classes, dim))
    centres *= separation / np.linalg.norm(centres, axis=1, keepdims=True)
    y = np.repeat(np.arange(classes), per_class)
    x = centres[y] + rng.standard_normal((y.shape[0], dim))
    order = rng.permutation(y.shape[0])
    return Dataset(x[order], y[order], classes)


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(data))
    cut = int(round(len(data) * (1 - test_fraction)))
    return data.subset(order[:cut]), data.subset(order[cut:])
