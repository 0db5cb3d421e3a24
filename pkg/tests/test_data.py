import gzip
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure project root is on path so we can import tfdmnet
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from tfdmnet.data import (  # noqa: E402
    CIFAR_RECORD_BYTES,
    CIFAR_RECORDS_PER_FILE,
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    Dataset,
    batches,
    load_cifar10,
    load_dataset,
    load_mnist,
    parse_cifar_batch,
    parse_idx,
    standardize,
    synthetic_dataset,
)
from tfdmnet.errors import ConfigError, DataFormatError  # noqa: E402


def _idx(magic: int, array: np.ndarray) -> bytes:
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.astype(np.uint8).tobytes()


def _write_mnist(directory: Path, train: int = 6, test: int = 4, compress: bool = False):
    rng = np.random.default_rng(0)
    files = {
        "train-images-idx3-ubyte": _idx(IDX_IMAGES_MAGIC, rng.integers(0, 256, (train, 28, 28))),
        "train-labels-idx1-ubyte": _idx(IDX_LABELS_MAGIC, np.arange(train) % 10),
        "t10k-images-idx3-ubyte": _idx(IDX_IMAGES_MAGIC, rng.integers(0, 256, (test, 28, 28))),
        "t10k-labels-idx1-ubyte": _idx(IDX_LABELS_MAGIC, np.arange(test) % 10),
    }
    for name, raw in files.items():
        if compress:
            with gzip.open(directory / f"{name}.gz", "wb") as f:
                f.write(raw)
        else:
            (directory / name).write_bytes(raw)


# =============================================================================
# IDX
# =============================================================================


def test_parse_idx_images():
    images = np.arange(2 * 3 * 4).reshape(2, 3, 4)
    decoded = parse_idx(_idx(IDX_IMAGES_MAGIC, images), IDX_IMAGES_MAGIC)
    np.testing.assert_array_equal(decoded, images)


def test_parse_idx_bad_magic():
    raw = _idx(IDX_LABELS_MAGIC, np.zeros(3))
    with pytest.raises(DataFormatError, match="bad magic"):
        parse_idx(raw, IDX_IMAGES_MAGIC)


def test_parse_idx_truncated_payload_and_header():
    raw = _idx(IDX_IMAGES_MAGIC, np.zeros((2, 3, 4)))
    with pytest.raises(DataFormatError, match="truncated payload"):
        parse_idx(raw[:-1], IDX_IMAGES_MAGIC)
    with pytest.raises(DataFormatError, match="truncated header"):
        parse_idx(raw[:8], IDX_IMAGES_MAGIC)
    with pytest.raises(DataFormatError, match="truncated header"):
        parse_idx(b"\x00\x00", IDX_IMAGES_MAGIC)


def test_parse_idx_trailing_bytes():
    raw = _idx(IDX_LABELS_MAGIC, np.zeros(3)) + b"\x00"
    with pytest.raises(DataFormatError, match="trailing"):
        parse_idx(raw, IDX_LABELS_MAGIC)


@pytest.mark.parametrize("compress", [False, True])
def test_load_mnist(tmp_path, compress):
    _write_mnist(tmp_path, compress=compress)
    train, test = load_mnist(tmp_path)
    assert train.images.shape == (6, 28, 28, 1) and test.images.shape == (4, 28, 28, 1)
    assert train.images.dtype == np.float32
    assert train.labels.tolist() == [0, 1, 2, 3, 4, 5]
    assert abs(float(train.images.mean())) < 1e-5


def test_load_mnist_count_mismatch(tmp_path):
    _write_mnist(tmp_path)
    (tmp_path / "t10k-labels-idx1-ubyte").write_bytes(_idx(IDX_LABELS_MAGIC, np.zeros(3)))
    with pytest.raises(DataFormatError, match="labels"):
        load_mnist(tmp_path)


def test_load_mnist_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError, match="train-images-idx3-ubyte"):
        load_mnist(tmp_path)


# =============================================================================
# CIFAR-10
# =============================================================================


def test_parse_cifar_batch_layout():
    records = np.zeros((CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = np.arange(CIFAR_RECORDS_PER_FILE) % 10
    records[1, 1:1025] = 200  # red plane of the second image
    records[1, 2049:] = 50  # blue plane
    images, labels = parse_cifar_batch(records.tobytes())
    assert images.shape == (CIFAR_RECORDS_PER_FILE, 32, 32, 3)
    assert labels[:3].tolist() == [0, 1, 2]
    assert images[1, 5, 7].tolist() == [200, 0, 50]


def test_parse_cifar_batch_wrong_size():
    with pytest.raises(DataFormatError, match="expected"):
        parse_cifar_batch(b"\x00" * CIFAR_RECORD_BYTES)


def test_load_cifar_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError, match="data_batch_1.bin"):
        load_cifar10(tmp_path)


def test_load_dataset_dispatch(tmp_path):
    with pytest.raises(ConfigError, match="data directory"):
        load_dataset("mnist", None)
    with pytest.raises(ConfigError, match="unknown dataset"):
        load_dataset("svhn", tmp_path)
    train, test = load_dataset("synthetic", input_shape=(8, 8, 3), classes=4, synthetic_size=(10, 5))
    assert train.images.shape == (10, 8, 8, 3) and len(test) == 5 and train.classes == 4


# =============================================================================
# Normalization, synthetic data, batching
# =============================================================================


def test_standardize_uses_training_statistics():
    train = np.stack([np.full((2, 2, 2), 0), np.full((2, 2, 2), 255)]).astype(np.uint8)
    train[..., 1] = 7
    test = np.full((1, 2, 2, 2), 255, dtype=np.uint8)
    train_out, test_out = standardize(train, test)
    np.testing.assert_allclose(train_out[..., 0].mean(), 0.0, atol=1e-6)
    np.testing.assert_allclose(train_out[..., 0].std(), 1.0, atol=1e-6)
    np.testing.assert_allclose(test_out[..., 0], 1.0, atol=1e-6)
    assert np.all(train_out[..., 1] == 0.0)


@pytest.mark.parametrize("value", [0, 7, 128, 255])
def test_standardize_maps_constant_images_to_zero(value):
    images = np.full((5, 2, 2, 1), value, dtype=np.uint8)
    train_out, test_out = standardize(images, images)
    assert np.all(train_out == 0.0) and np.all(test_out == 0.0)


def test_synthetic_splits_share_templates():
    train = synthetic_dataset(400, (4, 4, 1), classes=2, seed=3, split="train")
    test = synthetic_dataset(400, (4, 4, 1), classes=2, seed=3, split="test")
    assert not np.array_equal(train.images, test.images)
    for label in (0, 1):
        gap = train.images[train.labels == label].mean(0) - test.images[test.labels == label].mean(0)
        assert np.abs(gap).max() < 0.5


def test_dataset_rejects_inconsistent_arrays():
    with pytest.raises(DataFormatError):
        Dataset(np.zeros((3, 2, 2, 1)), np.zeros(2, dtype=np.int64), "train")
    with pytest.raises(DataFormatError, match="outside"):
        Dataset(np.zeros((1, 2, 2, 1)), np.array([10]), "train", 10)


def test_training_batches_are_seeded_permutations_and_drop_last():
    ds = Dataset(np.arange(10, dtype=np.float32).reshape(10, 1, 1, 1), np.zeros(10, dtype=np.int64), "train")
    first = [images.ravel().tolist() for images, _ in batches(ds, 3, seed=1, epoch=0)]
    again = [images.ravel().tolist() for images, _ in batches(ds, 3, seed=1, epoch=0)]
    other = [images.ravel().tolist() for images, _ in batches(ds, 3, seed=1, epoch=1)]
    assert first == again and first != other
    assert len(first) == 3
    seen = sum(first, [])
    assert len(set(seen)) == 9


def test_evaluation_batches_keep_the_tail():
    ds = Dataset(np.zeros((10, 1, 1, 1), dtype=np.float32), np.arange(10) % 10, "test")
    sizes = [len(labels) for _, labels in batches(ds, 4, training=False)]
    assert sizes == [4, 4, 2]


def test_batch_size_errors():
    ds = Dataset(np.zeros((4, 1, 1, 1), dtype=np.float32), np.zeros(4, dtype=np.int64), "train")
    with pytest.raises(ConfigError, match="exceeds"):
        list(batches(ds, 5))
    with pytest.raises(ConfigError, match="positive"):
        list(batches(ds, 0))
