import sys
from pathlib import Path

import pytest

# Ensure project root is on path so we can import tfdmnet
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from tfdmnet.config import LayerSpec, NetworkConfig, TrainRecipe  # noqa: E402
from tfdmnet.data import synthetic_dataset  # noqa: E402
from tfdmnet.verify import mini_tfdm_config  # noqa: E402


@pytest.fixture
def mini_cfg() -> NetworkConfig:
    """Mixed network with every layer kind, on 8x8x1 inputs and 3 classes."""
    return mini_tfdm_config()


@pytest.fixture
def linear_cfg() -> NetworkConfig:
    layers = (LayerSpec("flatten_head"), LayerSpec("dense", units=3))
    return NetworkConfig("linear", (8, 8, 1), 3, layers, "synthetic", (), TrainRecipe(batch_size=20))


@pytest.fixture
def small_cnn_cfg() -> NetworkConfig:
    layers = (
        LayerSpec("conv", k=3, channels=4),
        LayerSpec("bn"),
        LayerSpec("relu"),
        LayerSpec("maxpool", window=2),
        LayerSpec("flatten_head"),
        LayerSpec("dropout", p=0.5),
        LayerSpec("dense", units=8),
        LayerSpec("relu"),
        LayerSpec("dense", units=3),
    )
    return NetworkConfig("small-cnn", (8, 8, 1), 3, layers, "synthetic", (), TrainRecipe(batch_size=8))


@pytest.fixture
def synthetic_pair():
    train = synthetic_dataset(64, (8, 8, 1), classes=3, seed=0, split="train")
    test = synthetic_dataset(30, (8, 8, 1), classes=3, seed=0, split="test")
    return train, test
