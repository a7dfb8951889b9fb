"""CIFAR-10 binary ingestion plus a synthetic stand-in generator.

The binary format is the standard one: each record is 3073 bytes, a label
byte followed by 3072 pixel bytes in R, G, B plane order; 32x32 planes,
row-major. Loading scales pixels to [0, 1] and subtracts the per-channel
mean computed on the training split only.

The synthetic generator writes the same file layout so every consumer
(loader, CLI, tests) exercises the real ingestion path on machines where
the actual dataset is not available.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)
NUM_CLASSES = 10
TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILE = "test_batch.bin"


@dataclass
class DatasetSplit:
    images: np.ndarray  # (N, 3, 32, 32) float32, mean-subtracted
    labels: np.ndarray  # (N,) int64 in [0, 10)
    channel_mean: np.ndarray  # (3,) float32, mean used for normalization

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int) -> "DatasetSplit":
        return DatasetSplit(self.images[:n], self.labels[:n], self.channel_mean)


def _read_records(path: str):
    if not os.path.isfile(path):
        raise DataFormatError(f"missing dataset file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path}: size {raw.size} bytes is not a positive multiple of {RECORD_BYTES}"
        )
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0]
    if labels.max(initial=0) >= NUM_CLASSES:
        raise DataFormatError(f"{path}: label byte {int(labels.max())} out of range [0, {NUM_CLASSES})")
    images = records[:, 1:].reshape(-1, *IMAGE_SHAPE)
    return images, labels.astype(np.int64)


def load_cifar10(directory: str):
    """Load (train, test) splits from the six binary batch files."""
    train_parts = [_read_records(os.path.join(directory, f)) for f in TRAIN_FILES]
    test_images_u8, test_labels = _read_records(os.path.join(directory, TEST_FILE))
    train_images_u8 = np.concatenate([p[0] for p in train_parts], axis=0)
    train_labels = np.concatenate([p[1] for p in train_parts], axis=0)

    train_images = train_images_u8.astype(np.float32) / 255.0
    test_images = test_images_u8.astype(np.float32) / 255.0
    mean = train_images.mean(axis=(0, 2, 3)).astype(np.float32)
    train_images -= mean[None, :, None, None]
    test_images -= mean[None, :, None, None]
    return (
        DatasetSplit(train_images, train_labels, mean),
        DatasetSplit(test_images, test_labels, mean),
    )


def _class_templates(rng: np.random.Generator, classes: int) -> np.ndarray:
    """Smooth per-class patterns: a few random low-frequency waves per channel."""
    h, w = IMAGE_SHAPE[1], IMAGE_SHAPE[2]
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    t = np.zeros((classes, 3, h, w))
    for c in range(classes):
        for ch in range(3):
            for _ in range(3):
                fy, fx = rng.integers(1, 4, size=2)
                sy, sx = rng.choice([-1, 1], size=2)
                phase = rng.uniform(0, 2 * np.pi)
                t[c, ch] += rng.uniform(0.4, 1.0) * np.sin(
                    2 * np.pi * (sy * fy * yy + sx * fx * xx) / h + phase
                )
        t[c] /= np.abs(t[c]).max()
    return t


def synthesize_images(n: int, seed: int, classes: int = NUM_CLASSES, contrast: float = 0.22,
                      noise: float = 0.40, max_shift: int = 4, template_seed: int = 7):
    """Labeled uint8 images: jittered, shifted class templates plus noise.

    The class templates depend only on template_seed, so different sample
    seeds (train/test splits) share one labeling rule.
    """
    rng = np.random.default_rng(seed)
    templates = _class_templates(np.random.default_rng(template_seed), classes)
    labels = rng.integers(0, classes, size=n)
    images = np.empty((n, *IMAGE_SHAPE), dtype=np.uint8)
    for i in range(n):
        t = templates[labels[i]]
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
        t = np.roll(np.roll(t, int(dy), axis=1), int(dx), axis=2)
        amp = rng.uniform(0.75, 1.25)
        img = 0.5 + contrast * amp * t + noise * rng.standard_normal(IMAGE_SHAPE)
        images[i] = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return images, labels.astype(np.int64)


def write_batch_file(path: str, images: np.ndarray, labels: np.ndarray) -> None:
    """Write records in the CIFAR-10 binary layout."""
    n = len(labels)
    records = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images.reshape(n, -1)
    records.tofile(path)


def write_synthetic_cifar(directory: str, n_train: int, n_test: int, seed: int = 0) -> None:
    """Generate a full synthetic dataset directory in the CIFAR-10 layout.

    Training records are spread over the five train files.
    """
    if n_train < len(TRAIN_FILES):
        raise ValueError(f"need at least {len(TRAIN_FILES)} training images (one per batch file)")
    os.makedirs(directory, exist_ok=True)
    train_images, train_labels = synthesize_images(n_train, seed)
    test_images, test_labels = synthesize_images(n_test, seed + 1)
    per_file = (n_train + len(TRAIN_FILES) - 1) // len(TRAIN_FILES)
    for i, fname in enumerate(TRAIN_FILES):
        lo, hi = i * per_file, min((i + 1) * per_file, n_train)
        write_batch_file(os.path.join(directory, fname), train_images[lo:hi], train_labels[lo:hi])
    write_batch_file(os.path.join(directory, TEST_FILE), test_images, test_labels)
