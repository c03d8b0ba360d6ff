"""Dataset ingestion: IDX files, a seeded synthetic digit generator.

The IDX reader/writer follows the classic big-endian layout: magic
0x00000803 for image files (count, rows, cols, then raw bytes) and
0x00000801 for label files.  Pixels map to [0, 1] by dividing by 255.

The synthetic generator renders seven-segment style digits with random
shift, intensity, and additive noise.  It exists so training, transfer
evaluation, and the test fixtures never need a network download.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(Exception):
    """Base class for IDX parsing failures."""


class IdxMagicError(IdxError):
    """File does not start with the expected magic number."""


class IdxTruncatedError(IdxError):
    """File ends before the declared payload is complete."""


class IdxCountMismatchError(IdxError):
    """Image file and label file disagree on the item count."""


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float64 in [0, 1]
    labels: np.ndarray  # (N,) int
    split: str = "train"

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, n: int, offset: int = 0) -> "Dataset":
        return Dataset(
            self.images[offset : offset + n], self.labels[offset : offset + n], self.split
        )


def _read_be32(raw: bytes, off: int, path) -> int:
    if len(raw) < off + 4:
        raise IdxTruncatedError(f"{path}: header cut short at byte {off}")
    return struct.unpack_from(">i", raw, off)[0]


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Parse an IDX image/label file pair into a dataset."""
    with open(images_path, "rb") as f:
        raw = f.read()
    magic = _read_be32(raw, 0, images_path)
    if magic != IMAGES_MAGIC:
        raise IdxMagicError(
            f"{images_path}: magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"
        )
    count = _read_be32(raw, 4, images_path)
    rows = _read_be32(raw, 8, images_path)
    cols = _read_be32(raw, 12, images_path)
    if len(raw) < 16 + count * rows * cols:
        raise IdxTruncatedError(
            f"{images_path}: expected {count * rows * cols} pixel bytes, "
            f"got {len(raw) - 16}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    images = pixels.reshape(count, rows, cols, 1).astype(np.float64) / 255.0

    with open(labels_path, "rb") as f:
        raw = f.read()
    magic = _read_be32(raw, 0, labels_path)
    if magic != LABELS_MAGIC:
        raise IdxMagicError(
            f"{labels_path}: magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"
        )
    n_labels = _read_be32(raw, 4, labels_path)
    if len(raw) < 8 + n_labels:
        raise IdxTruncatedError(
            f"{labels_path}: expected {n_labels} label bytes, got {len(raw) - 8}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    if n_labels != count:
        raise IdxCountMismatchError(
            f"{images_path} holds {count} images but {labels_path} holds {n_labels} labels"
        )
    return Dataset(images=images, labels=labels, split=split)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a dataset as an IDX image/label file pair (uint8 pixels)."""
    n, h, w, c = dataset.images.shape
    if c != 1:
        raise ValueError("IDX image files hold a single channel")
    pixels = np.rint(np.clip(dataset.images, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGES_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">ii", LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


# ---- synthetic digits -------------------------------------------------------

# Seven-segment layout on a 28x28 canvas: (row0, row1, col0, col1) slices.
_SEGMENTS = {
    "A": (4, 7, 9, 19),  # top bar
    "G": (12, 15, 9, 19),  # middle bar
    "D": (21, 24, 9, 19),  # bottom bar
    "F": (4, 15, 9, 12),  # upper left
    "B": (4, 15, 16, 19),  # upper right
    "E": (12, 24, 9, 12),  # lower left
    "C": (12, 24, 16, 19),  # lower right
}

_DIGIT_SEGMENTS = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABGCD",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGEDC",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}


def _digit_template(digit: int) -> np.ndarray:
    canvas = np.zeros((28, 28))
    for seg in _DIGIT_SEGMENTS[digit]:
        r0, r1, c0, c1 = _SEGMENTS[seg]
        canvas[r0:r1, c0:c1] = 1.0
    return canvas


def synthetic_dataset(
    n: int,
    seed: int,
    split: str = "train",
    noise: float = 0.18,
    max_shift: int = 3,
) -> Dataset:
    """Render n seven-segment digit images with seeded augmentation.

    Classes are balanced (label i of sample i is i mod 10 before the
    shuffle).  Each sample gets an integer shift, a random intensity, and
    additive Gaussian noise, then is clipped to [0, 1].
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got {n}")
    rng = np.random.default_rng(seed)
    templates = np.stack([_digit_template(d) for d in range(10)])
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    images = np.zeros((n, 28, 28, 1))
    for i in range(n):
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
        intensity = rng.uniform(0.55, 1.0)
        glyph = np.roll(templates[labels[i]], (dy, dx), axis=(0, 1))
        img = intensity * glyph + rng.normal(0.0, noise, size=(28, 28))
        images[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(images=images, labels=labels.astype(np.int64), split=split)
