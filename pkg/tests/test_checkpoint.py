import struct
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

# Ensure project root is on path so we can import tfdmnet
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from tfdmnet.checkpoint import MAGIC, load_checkpoint, save_checkpoint  # noqa: E402
from tfdmnet.errors import (  # noqa: E402
    CheckpointChecksumError,
    CheckpointConfigMismatch,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from tfdmnet.models import build_network  # noqa: E402
from tfdmnet.training import OptimizerState, TrainRunConfig, train  # noqa: E402


@pytest.fixture
def trained(mini_cfg, synthetic_pair):
    network = build_network(mini_cfg, seed=7)
    optimizer = OptimizerState(kind="rmsprop", learning_rate=1e-3)
    train(network, synthetic_pair[0], None, TrainRunConfig(epochs=1, batch_size=16), optimizer=optimizer)
    return network, optimizer


def test_round_trip_restores_everything(tmp_path, trained):
    network, optimizer = trained
    path = save_checkpoint(network, tmp_path / "run" / "last.ckpt", optimizer, meta={"epoch": 1})
    assert path.read_bytes()[:4] == MAGIC

    loaded = load_checkpoint(path, expected_config=network.cfg)
    assert loaded.config == network.cfg
    assert loaded.meta["epoch"] == 1 and loaded.meta["seed"] == 7
    assert loaded.meta["precision"] == "float32"
    for name, value in network.parameters().items():
        np.testing.assert_array_equal(loaded.network.parameters()[name], value)
    for name, value in network.buffers().items():
        np.testing.assert_array_equal(loaded.network.buffers()[name], value)
    assert set(loaded.optimizer.slots) == set(optimizer.slots)
    assert loaded.optimizer.learning_rate == optimizer.learning_rate

    x = np.random.default_rng(0).standard_normal((3, 8, 8, 1))
    np.testing.assert_array_equal(loaded.network.predict(x), network.predict(x))


def test_checkpoint_without_optimizer(tmp_path, linear_cfg):
    network = build_network(linear_cfg, precision="float64")
    loaded = load_checkpoint(save_checkpoint(network, tmp_path / "a.ckpt"))
    assert loaded.optimizer is None
    assert loaded.network.dtype == np.float64


def test_bad_magic(tmp_path, linear_cfg):
    path = save_checkpoint(build_network(linear_cfg), tmp_path / "a.ckpt")
    path.write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(path)


def test_unknown_version(tmp_path, linear_cfg):
    path = save_checkpoint(build_network(linear_cfg), tmp_path / "a.ckpt")
    data = path.read_bytes()
    path.write_bytes(data[:4] + struct.pack("<H", 99) + data[6:])
    with pytest.raises(CheckpointVersionError, match="version 99"):
        load_checkpoint(path)


def test_truncated_file_fails_checksum(tmp_path, linear_cfg):
    path = save_checkpoint(build_network(linear_cfg), tmp_path / "a.ckpt")
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(CheckpointChecksumError):
        load_checkpoint(path)


def test_flipped_byte_fails_checksum(tmp_path, linear_cfg):
    path = save_checkpoint(build_network(linear_cfg), tmp_path / "a.ckpt")
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointChecksumError):
        load_checkpoint(path)


def test_tiny_file_is_truncated(tmp_path):
    path = tmp_path / "a.ckpt"
    path.write_bytes(MAGIC)
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(path)


def test_config_mismatch(tmp_path, linear_cfg):
    path = save_checkpoint(build_network(linear_cfg), tmp_path / "a.ckpt")
    other = replace(linear_cfg, name="other")
    with pytest.raises(CheckpointConfigMismatch, match="expected 'other'"):
        load_checkpoint(path, expected_config=other)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.ckpt")
