"""Dataset ingestion, normalization, batching and class statistics.

Two on-disk formats are supported:

* the public FER-2013 CSV layout, ``emotion,pixels`` with 4096
  space-separated byte values per row, and
* the CGDS binary archive: magic ``CGDS``, version u16, dtype code u8
  (0 = uint8, 1 = float32, 2 = float64), label count u32, shape rank u8
  followed by one u32 extent each, then the raw label bytes (one uint8
  per sample) and the raw little-endian image buffer. uint8 archives are
  raw byte images; float archives are normalized.

Batch shuffling uses numpy's PCG64 generator seeded from the run config,
so batch order is reproducible given the recorded seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ContractError, DataError
from .models import EMOTION_NAMES, NUM_CLASSES
from .tensor import default_dtype

IMAGE_EXTENT = 64
PIXELS_PER_ROW = IMAGE_EXTENT * IMAGE_EXTENT
CSV_HEADER = "emotion,pixels"

ARCHIVE_MAGIC = b"CGDS"
ARCHIVE_VERSION = 1
_DTYPE_CODES = {0: np.dtype(np.uint8), 1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.uint8): 0, np.dtype(np.float32): 1, np.dtype(np.float64): 2}


@dataclass
class LabeledDataset:
    """Images of shape (N, H, W, 1) with integer labels in 0..6.

    ``normalized`` distinguishes raw byte images (uint8, 0..255) from
    float images mapped into [-1, 1].
    """

    images: np.ndarray
    labels: np.ndarray
    normalized: bool

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[3] != 1:
            raise ContractError(f"images must be (N, H, W, 1), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ContractError(
                f"{self.labels.shape[0]} labels for {self.images.shape[0]} images"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise ContractError(f"labels must lie in 0..{NUM_CLASSES - 1}")

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class ClassStats:
    counts: tuple[int, ...]
    total: int
    imbalance_ratio: float
    has_empty_classes: bool

    def rows(self) -> list[tuple[int, str, int]]:
        return [(i, EMOTION_NAMES[i], c) for i, c in enumerate(self.counts)]


def class_distribution(ds: LabeledDataset) -> ClassStats:
    """Per-class counts and the max/min imbalance ratio (over non-empty classes)."""
    counts = np.bincount(ds.labels, minlength=NUM_CLASSES).astype(int)
    nonzero = counts[counts > 0]
    ratio = float(nonzero.max() / nonzero.min()) if nonzero.size else 0.0
    return ClassStats(
        counts=tuple(int(c) for c in counts),
        total=int(counts.sum()),
        imbalance_ratio=ratio,
        has_empty_classes=bool((counts == 0).any()),
    )


def load_csv(path) -> LabeledDataset:
    """Parse an ``emotion,pixels`` CSV into a raw byte dataset, preserving row order."""
    images: list[np.ndarray] = []
    labels: list[int] = []
    with open(path, "r", encoding="ascii") as f:
        header = f.readline()
        if header.strip() != CSV_HEADER:
            raise DataError(f"{path}: expected header {CSV_HEADER!r}, got {header.strip()!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            label_str, sep, pixels_str = line.partition(",")
            if not sep:
                raise DataError(f"{path}:{lineno}: missing ',' between label and pixels")
            try:
                label = int(label_str)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer label {label_str!r}") from None
            if not 0 <= label < NUM_CLASSES:
                raise DataError(f"{path}:{lineno}: label {label} outside 0..{NUM_CLASSES - 1}")
            try:
                pixels = np.array(pixels_str.split(), dtype=np.int64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer pixel token") from None
            if pixels.size != PIXELS_PER_ROW:
                raise DataError(
                    f"{path}:{lineno}: expected {PIXELS_PER_ROW} pixels, got {pixels.size}"
                )
            if pixels.min() < 0 or pixels.max() > 255:
                raise DataError(f"{path}:{lineno}: pixel value outside 0..255")
            labels.append(label)
            images.append(pixels.astype(np.uint8))
    if not images:
        raise DataError(f"{path}: no data rows")
    stacked = np.stack(images).reshape(-1, IMAGE_EXTENT, IMAGE_EXTENT, 1)
    return LabeledDataset(stacked, np.array(labels, dtype=np.int64), normalized=False)


def save_archive(ds: LabeledDataset, path) -> None:
    """Write the CGDS binary archive (bit-exact round trip with load_archive)."""
    code = _CODES_BY_KIND.get(ds.images.dtype)
    if code is None:
        raise ContractError(f"cannot archive images of dtype {ds.images.dtype}")
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<HBI B", ARCHIVE_VERSION, code, len(ds), ds.images.ndim))
        f.write(struct.pack(f"<{ds.images.ndim}I", *ds.images.shape))
        f.write(ds.labels.astype(np.uint8).tobytes())
        f.write(np.ascontiguousarray(ds.images, dtype=ds.images.dtype.newbyteorder("<")).tobytes())


def load_archive(path) -> LabeledDataset:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != ARCHIVE_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, code, n_labels, rank = struct.unpack_from("<HBI B", blob, 4)
        offset = 4 + struct.calcsize("<HBI B")
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
    except struct.error:
        raise DataError(f"{path}: truncated header") from None
    if version != ARCHIVE_VERSION:
        raise DataError(f"{path}: unknown archive version {version}")
    dtype = _DTYPE_CODES.get(code)
    if dtype is None:
        raise DataError(f"{path}: unknown dtype code {code}")
    n_image_bytes = int(np.prod(shape)) * dtype.itemsize
    if len(blob) != offset + n_labels + n_image_bytes:
        raise DataError(
            f"{path}: payload is {len(blob) - offset} bytes, "
            f"expected {n_labels + n_image_bytes}"
        )
    labels = np.frombuffer(blob, dtype=np.uint8, count=n_labels, offset=offset).astype(np.int64)
    images = np.frombuffer(blob, dtype=dtype, count=int(np.prod(shape)), offset=offset + n_labels)
    images = images.reshape(shape).copy()
    return LabeledDataset(images, labels, normalized=dtype != np.dtype(np.uint8))


def normalize(ds: LabeledDataset) -> LabeledDataset:
    """Map raw bytes to floats in [-1, 1] via x / 127.5 - 1."""
    if ds.normalized:
        raise ContractError("dataset is already normalized")
    return LabeledDataset(normalize_images(ds.images), ds.labels, normalized=True)


def normalize_images(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(default_dtype()) / 127.5) - 1.0


def denormalize_images(images: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats back to bytes: round((x + 1) * 127.5), clamped to 0..255."""
    scaled = np.rint((images.astype(np.float64) + 1.0) * 127.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def batches(
    ds: LabeledDataset, batch_size: int, seed
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch of (images, labels) chunks over a seeded PCG64 permutation.

    Every index appears exactly once; the final short chunk is included.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    if len(ds) == 0:
        raise ContractError("cannot batch an empty dataset")
    order = np.random.default_rng(seed).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        yield ds.images[idx], ds.labels[idx]
