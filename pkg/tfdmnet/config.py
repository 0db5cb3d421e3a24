"""
Network configuration

Declarative network descriptions: an ordered list of LayerSpec entries plus
input dims, class count and the training recipe the network ships with.
Configs round-trip through YAML documents.

Usage:
    from tfdmnet.config import load_config, dump_config

    cfg = load_config(Path("my-net.yaml"))
    text = dump_config(cfg)
"""

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from tfdmnet.errors import ConfigError

__all__ = [
    "LAYER_KINDS",
    "KIND_DOMAINS",
    "LayerSpec",
    "TrainRecipe",
    "NetworkConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "config_digest",
]

# kind -> domain of the tensor the layer consumes; None means "inherits"
KIND_DOMAINS: Dict[str, Optional[str]] = {
    "conv": "time",
    "bn": "time",
    "relu": "time",
    "maxpool": "time",
    "dropout": "time",
    "bridge_to_freq": "time",
    "eml": "freq",
    "freq_bn": "freq",
    "split_relu": "freq",
    "freq_maxpool": "freq",
    "freq_dropout": "freq",
    "bridge_to_time": "freq",
    "flatten_head": None,
    "dense": None,
}

LAYER_KINDS = tuple(KIND_DOMAINS)

_LAYER_KEYS = ("kind", "domain", "k", "channels", "stride", "window", "units", "p", "fixation", "assumed")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    domain: Optional[str] = None
    k: Optional[int] = None
    channels: Optional[int] = None
    stride: Optional[int] = None
    window: Optional[int] = None
    units: Optional[int] = None
    p: Optional[float] = None
    fixation: bool = True
    assumed: bool = False

    @property
    def resolved_domain(self) -> Optional[str]:
        return self.domain or KIND_DOMAINS.get(self.kind)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind}
        for key in _LAYER_KEYS[1:]:
            value = getattr(self, key)
            if key == "fixation":
                if self.kind == "eml" and not value:
                    data[key] = False
            elif key == "assumed":
                if value:
                    data[key] = True
            elif value is not None:
                data[key] = value
        return data

    @staticmethod
    def from_dict(data: Dict[str, Any], index: int = 0) -> "LayerSpec":
        if not isinstance(data, dict):
            raise ConfigError(f"layer {index}: expected a mapping, got {type(data).__name__}")
        unknown = sorted(set(data) - set(_LAYER_KEYS))
        if unknown:
            raise ConfigError(f"layer {index}: unknown keys {', '.join(unknown)}")
        if "kind" not in data:
            raise ConfigError(f"layer {index}: missing 'kind'")
        return LayerSpec(**data)


@dataclass(frozen=True)
class TrainRecipe:
    """Training defaults a config ships with; CLI flags override them."""
    optimizer: str = "rmsprop"
    learning_rate: float = 1e-4
    batch_size: int = 100
    epochs: int = 20
    lr_decay_epochs: Tuple[int, ...] = ()
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0

    def lr_schedule(self, base_lr: Optional[float] = None) -> List[Tuple[int, float]]:
        """Piecewise-constant (start_epoch, lr) list."""
        lr = self.learning_rate if base_lr is None else base_lr
        schedule = [(0, lr)]
        for epoch in sorted(self.lr_decay_epochs):
            lr = lr * self.lr_decay
            schedule.append((epoch, lr))
        return schedule

    def to_dict(self) -> Dict[str, Any]:
        return {
            "optimizer": self.optimizer,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "lr_decay_epochs": list(self.lr_decay_epochs),
            "lr_decay": self.lr_decay,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
        }

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "TrainRecipe":
        data = dict(data or {})
        if "lr_decay_epochs" in data:
            data["lr_decay_epochs"] = tuple(int(e) for e in data["lr_decay_epochs"])
        try:
            return TrainRecipe(**data)
        except TypeError as e:
            raise ConfigError(f"recipe: {e}") from None


@dataclass(frozen=True)
class NetworkConfig:
    name: str
    input_shape: Tuple[int, int, int]
    classes: int
    layers: Tuple[LayerSpec, ...]
    dataset: str = "mnist"
    assumed: Tuple[str, ...] = ()
    recipe: TrainRecipe = field(default_factory=TrainRecipe)

    def with_layers(self, layers, name: Optional[str] = None) -> "NetworkConfig":
        return replace(self, layers=tuple(layers), name=name or self.name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "input": list(self.input_shape),
            "classes": self.classes,
            "dataset": self.dataset,
            "assumed": list(self.assumed),
            "recipe": self.recipe.to_dict(),
            "layers": [spec.to_dict() for spec in self.layers],
        }

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "NetworkConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping at the top level")
        for key in ("name", "input", "classes", "layers"):
            if key not in data:
                raise ConfigError(f"config is missing required key '{key}'")
        dims = data["input"]
        if not isinstance(dims, (list, tuple)) or len(dims) != 3:
            raise ConfigError(f"'input' must be [height, width, channels], got {dims!r}")
        layers = data["layers"] or []
        if not isinstance(layers, list):
            raise ConfigError("'layers' must be a list")
        return NetworkConfig(
            name=str(data["name"]),
            input_shape=tuple(int(d) for d in dims),
            classes=int(data["classes"]),
            layers=tuple(LayerSpec.from_dict(item, i) for i, item in enumerate(layers)),
            dataset=str(data.get("dataset", "mnist")),
            assumed=tuple(str(note) for note in data.get("assumed") or ()),
            recipe=TrainRecipe.from_dict(data.get("recipe")),
        )


def parse_config(text: str) -> NetworkConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from None
    return NetworkConfig.from_dict(data)


def load_config(path: Path) -> NetworkConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def dump_config(cfg: NetworkConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def config_digest(cfg: NetworkConfig) -> bytes:
    """sha256 of the canonical YAML text; 32 bytes."""
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).digest()
