"""
Datasets

Readers for the canonical MNIST IDX files and CIFAR-10 binary batches,
per-channel standardization, a synthetic generator for smoke runs, and the
seeded batch iterator the training loop consumes.

Expected files (each may also be present with a .gz suffix for MNIST):
    mnist:   train-images-idx3-ubyte, train-labels-idx1-ubyte,
             t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte
    cifar10: data_batch_1.bin ... data_batch_5.bin, test_batch.bin
             (directly in the directory or in cifar-10-batches-bin/)
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np

from tfdmnet.errors import ConfigError, DataFormatError

__all__ = [
    "Dataset",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
    "CIFAR_RECORD_BYTES",
    "CIFAR_RECORDS_PER_FILE",
    "parse_idx",
    "load_mnist",
    "load_cifar10",
    "parse_cifar_batch",
    "standardize",
    "synthetic_dataset",
    "load_dataset",
    "batches",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 1 + 32 * 32 * 3
CIFAR_RECORDS_PER_FILE = 10000

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float32
    labels: np.ndarray  # (N,) int64
    split: str
    classes: int = 10

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataFormatError(
                f"{self.split}: {len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and int(self.labels.max()) >= self.classes:
            raise DataFormatError(
                f"{self.split}: label {int(self.labels.max())} outside {self.classes} classes"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, count: int) -> "Dataset":
        """The first count samples."""
        return Dataset(self.images[:count], self.labels[:count], self.split, self.classes)


# =============================================================================
# MNIST (IDX)
# =============================================================================


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _find(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"{name}[.gz] not found in {directory}")


def parse_idx(raw: bytes, expected_magic: int, source: str = "idx") -> np.ndarray:
    """
    Decode an unsigned-byte IDX file.

    Header: big-endian magic (0x0000 0x08 ndim) followed by one 32-bit size per
    dimension; payload is the product of the sizes in bytes.
    """
    if len(raw) < 4:
        raise DataFormatError(f"{source}: truncated header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(
            f"{source}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{source}: truncated header ({len(raw)} bytes)")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    payload = len(raw) - header
    if payload < expected:
        raise DataFormatError(
            f"{source}: truncated payload, {payload} of {expected} bytes present"
        )
    if payload > expected:
        raise DataFormatError(f"{source}: {payload - expected} trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def _read_mnist_split(directory: Path, split: str) -> Tuple[np.ndarray, np.ndarray]:
    image_name, label_name = MNIST_FILES[split]
    image_path = _find(directory, image_name)
    label_path = _find(directory, label_name)
    images = parse_idx(_read_bytes(image_path), IDX_IMAGES_MAGIC, image_path.name)
    labels = parse_idx(_read_bytes(label_path), IDX_LABELS_MAGIC, label_path.name)
    if len(images) != len(labels):
        raise DataFormatError(
            f"{split}: {image_path.name} holds {len(images)} images but "
            f"{label_path.name} holds {len(labels)} labels"
        )
    return images[..., None], labels.astype(np.int64)


def load_mnist(directory) -> Tuple[Dataset, Dataset]:
    directory = Path(directory)
    train_raw, train_labels = _read_mnist_split(directory, "train")
    test_raw, test_labels = _read_mnist_split(directory, "test")
    train_images, test_images = standardize(train_raw, test_raw)
    return (
        Dataset(train_images, train_labels, "train", 10),
        Dataset(test_images, test_labels, "test", 10),
    )


# =============================================================================
# CIFAR-10 (binary batches)
# =============================================================================


def parse_cifar_batch(raw: bytes, source: str = "batch") -> Tuple[np.ndarray, np.ndarray]:
    """
    Split a CIFAR-10 binary batch into (N, 32, 32, 3) uint8 images and labels.

    Each record is 1 label byte followed by 1024 R, 1024 G and 1024 B bytes.
    """
    expected = CIFAR_RECORDS_PER_FILE * CIFAR_RECORD_BYTES
    if len(raw) != expected:
        raise DataFormatError(f"{source}: expected {expected} bytes, found {len(raw)}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images, labels


def _cifar_dir(directory: Path) -> Path:
    nested = directory / "cifar-10-batches-bin"
    return nested if nested.is_dir() else directory


def _read_cifar_files(directory: Path, names) -> Tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    for name in names:
        path = directory / name
        if not path.is_file():
            raise FileNotFoundError(f"{name} not found in {directory}")
        batch_images, batch_labels = parse_cifar_batch(path.read_bytes(), name)
        images.append(batch_images)
        labels.append(batch_labels)
    return np.concatenate(images), np.concatenate(labels)


def load_cifar10(directory) -> Tuple[Dataset, Dataset]:
    directory = _cifar_dir(Path(directory))
    train_raw, train_labels = _read_cifar_files(directory, CIFAR_TRAIN_FILES)
    test_raw, test_labels = _read_cifar_files(directory, CIFAR_TEST_FILES)
    train_images, test_images = standardize(train_raw, test_raw)
    return (
        Dataset(train_images, train_labels, "train", 10),
        Dataset(test_images, test_labels, "test", 10),
    )


# =============================================================================
# Normalization, synthetic data, batching
# =============================================================================


def standardize(train: np.ndarray, test: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Scale uint8 pixels to [0, 1], then standardize per channel with the
    training split's mean and std.

    The statistics come from exact integer sums over the raw pixels, so a
    constant channel has a variance of exactly 0 and maps to 0.
    """
    pixels = train.astype(np.int64)
    count = pixels.shape[0] * pixels.shape[1] * pixels.shape[2]
    mean_raw = pixels.sum(axis=(0, 1, 2)) / count
    var_raw = np.maximum((pixels * pixels).sum(axis=(0, 1, 2)) / count - mean_raw * mean_raw, 0.0)
    mean = mean_raw / 255.0
    std = np.sqrt(var_raw) / 255.0
    std = np.where(std > 1e-12, std, 1.0)
    train64 = train.astype(np.float64) / 255.0
    test64 = test.astype(np.float64) / 255.0
    return (
        ((train64 - mean) / std).astype(np.float32),
        ((test64 - mean) / std).astype(np.float32),
    )


def synthetic_dataset(count: int, shape: Tuple[int, int, int], classes: int = 10,
                      seed: int = 0, split: str = "train", noise: float = 0.5) -> Dataset:
    """
    Learnable stand-in data: each class is a fixed random template plus noise.

    Templates depend only on (shape, classes, seed), so train and test splits
    drawn with the same seed share them.
    """
    template_rng = np.random.default_rng([seed, classes, *shape])
    templates = template_rng.standard_normal((classes,) + tuple(shape))
    sample_rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = sample_rng.integers(0, classes, size=count).astype(np.int64)
    images = templates[labels] + noise * sample_rng.standard_normal((count,) + tuple(shape))
    return Dataset(images.astype(np.float32), labels, split, classes)


def load_dataset(name: str, directory: Optional[Path] = None,
                 input_shape: Tuple[int, int, int] = (28, 28, 1), classes: int = 10,
                 seed: int = 0, synthetic_size: Tuple[int, int] = (512, 256)) -> Tuple[Dataset, Dataset]:
    """Dispatch on dataset name: mnist, cifar10, or synthetic (also used for imagenet)."""
    if name in ("mnist", "cifar10") and directory is None:
        raise ConfigError(f"dataset '{name}' needs a data directory (--data-dir or TFDM_DATA_DIR)")
    if name == "mnist":
        return load_mnist(directory)
    if name == "cifar10":
        return load_cifar10(directory)
    if name in ("synthetic", "imagenet"):
        train_count, test_count = synthetic_size
        return (
            synthetic_dataset(train_count, input_shape, classes, seed, "train"),
            synthetic_dataset(test_count, input_shape, classes, seed, "test"),
        )
    raise ConfigError(f"unknown dataset '{name}'. Expected one of: mnist, cifar10, synthetic")


def batches(ds: Dataset, batch_size: int, seed: int = 0, epoch: int = 0,
            training: bool = True) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """
    Yield (images, labels) batches.

    Training order is a permutation keyed by (seed, epoch) and the final
    partial batch is dropped; evaluation is sequential and keeps it.
    """
    count = len(ds)
    if batch_size < 1:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    if training:
        if batch_size > count:
            raise ConfigError(f"batch size {batch_size} exceeds the {count} training samples")
        order = np.random.default_rng([seed, epoch]).permutation(count)
        for start in range(0, count - batch_size + 1, batch_size):
            index = order[start:start + batch_size]
            yield ds.images[index], ds.labels[index]
    else:
        for start in range(0, count, batch_size):
            yield ds.images[start:start + batch_size], ds.labels[start:start + batch_size]
