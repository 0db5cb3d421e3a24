"""
Network assembly

build_network turns a validated NetworkConfig into a Network of layers;
presets() lists the reference architectures (LeNet-style for MNIST, small and
large VGG for CIFAR-10, AlexNet for ImageNet-sized inputs), each in a CNN and
a TFDMNet flavour.

Usage:
    from tfdmnet.models import build_network, get_preset

    net = build_network(get_preset("tfdm-lenet"), seed=1)
    logits = net.forward(images)
"""

from contextlib import contextmanager
from dataclasses import replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from tfdmnet.config import LayerSpec, NetworkConfig, TrainRecipe
from tfdmnet.errors import ConfigError, ShapeError
from tfdmnet.layers import (
    ApproxDropout,
    BridgeToFreq,
    BridgeToTime,
    Conv2D,
    Dense,
    Dropout,
    EmlLayer,
    Flatten,
    FreqBatchNorm,
    FreqMaxPool,
    Layer,
    MaxPool,
    ReLU,
    SplitReLU,
    TimeBatchNorm,
    TwoBranchHead,
    weight_fixation,
)
from tfdmnet.spectral import as_real_tensor4, resolve_dtype
from tfdmnet.validate import LayerGeometry, check_config

__all__ = [
    "Network",
    "build_network",
    "presets",
    "get_preset",
    "preset_names",
    "ablate",
    "PRESET_ALIASES",
]


class Network:
    """
    An ordered stack of layers built from a config.

    Parameter names are "<layer index>.<kind>.<param>", with the layer index
    taken from the config so names stay stable across rebuilds.
    """

    def __init__(self, cfg: NetworkConfig, layers: List[Tuple[int, Layer]], seed: int, dtype):
        self.cfg = cfg
        self.layers = layers
        self.seed = seed
        self.dtype = np.dtype(dtype)

    def __repr__(self) -> str:
        return f"Network(name={self.cfg.name!r}, layers={len(self.layers)}, params={self.parameter_count()})"

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = as_real_tensor4(x).astype(self.dtype, copy=False)
        expected = tuple(self.cfg.input_shape)
        if x.shape[1:] != expected:
            raise ShapeError(f"{self.cfg.name}: expected input (B, {expected}), got {x.shape}")
        for _, layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, grad_logits: np.ndarray) -> None:
        grad = grad_logits.astype(self.dtype, copy=False)
        for _, layer in reversed(self.layers):
            grad = layer.backward(grad)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, training=False)

    def _named(self, getter) -> Dict[str, np.ndarray]:
        named = {}
        for index, layer in self.layers:
            for key, value in getter(layer).items():
                named[f"{index:02d}.{layer.kind}.{key}"] = value
        return named

    def parameters(self) -> Dict[str, np.ndarray]:
        return self._named(lambda layer: layer.parameters())

    def gradients(self) -> Dict[str, np.ndarray]:
        return self._named(lambda layer: layer.gradients())

    def buffers(self) -> Dict[str, np.ndarray]:
        return self._named(lambda layer: layer.buffers())

    def load_state(self, params: Dict[str, np.ndarray], buffers: Dict[str, np.ndarray]) -> None:
        """Copy tensors into the live arrays; names and shapes must match exactly."""
        current = self.parameters()
        missing = sorted(set(current) - set(params))
        if missing:
            raise ShapeError(f"missing parameters: {', '.join(missing[:5])}")
        for name, target in current.items():
            value = params[name]
            if value.shape != target.shape:
                raise ShapeError(f"{name}: stored shape {value.shape}, network expects {target.shape}")
            target[...] = value
        for index, layer in self.layers:
            prefix = f"{index:02d}.{layer.kind}."
            own = {key[len(prefix):]: value for key, value in buffers.items() if key.startswith(prefix)}
            if isinstance(layer, TwoBranchHead):
                for sub_prefix, sub in layer.sublayers():
                    sub_own = {
                        key[len(sub_prefix) + 1:]: value
                        for key, value in own.items() if key.startswith(sub_prefix + ".")
                    }
                    if sub_own:
                        sub.load_buffers(sub_own)
            elif own:
                layer.load_buffers(own)

    def all_layers(self) -> Iterator[Layer]:
        for _, layer in self.layers:
            if isinstance(layer, TwoBranchHead):
                for _, sub in layer.sublayers():
                    yield sub
            else:
                yield layer

    def eml_layers(self) -> List[EmlLayer]:
        return [layer for layer in self.all_layers() if isinstance(layer, EmlLayer)]

    def apply_fixation(self) -> None:
        for layer in self.eml_layers():
            if layer.fixation:
                weight_fixation(layer)

    def max_imag_residual(self) -> float:
        """Largest imaginary residual discarded by a freq_maxpool or bridge_to_time on the latest forward."""
        residuals = [
            layer.last_residual for layer in self.all_layers()
            if isinstance(layer, (FreqMaxPool, BridgeToTime))
        ]
        return max(residuals, default=0.0)

    @contextmanager
    def deterministic(self):
        """Disable every dropout layer inside the block."""
        dropouts = [layer for layer in self.all_layers() if isinstance(layer, ApproxDropout)]
        previous = [layer.active for layer in dropouts]
        for layer in dropouts:
            layer.active = False
        try:
            yield self
        finally:
            for layer, active in zip(dropouts, previous):
                layer.active = active

    def parameter_count(self) -> int:
        """Stored real parameters (EML weights count both planes)."""
        return int(sum(value.size for value in self.parameters().values()))

    def free_parameter_count(self) -> int:
        """Real degrees of freedom left once Weight Fixation constrains the EMLs."""
        total = self.parameter_count()
        for layer in self.eml_layers():
            total -= layer.weights.real.size + layer.weights.imag.size
            total += layer.free_parameters()
        return total


# =============================================================================
# Building
# =============================================================================


def _layer_rng(seed: int, index: int, branch: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, index, branch])


def _spatial_layer(geom: LayerGeometry, seed: int, dtype) -> Layer:
    spec = geom.spec
    index = geom.index
    name = f"{index:02d}.{spec.kind}"
    height, width, c_in = geom.in_shape
    kind = spec.kind
    if kind == "conv":
        return Conv2D(c_in, spec.channels, spec.k, stride=spec.stride or 1,
                      rng=_layer_rng(seed, index), dtype=dtype, name=name)
    if kind == "eml":
        return EmlLayer(height, width, c_in, spec.channels, spec.k, rng=_layer_rng(seed, index),
                        dtype=dtype, fixation=spec.fixation, name=name)
    if kind == "bn":
        return TimeBatchNorm(c_in, dtype=dtype, name=name)
    if kind == "freq_bn":
        return FreqBatchNorm(c_in, dtype=dtype, name=name)
    if kind == "relu":
        return ReLU(name=name)
    if kind == "split_relu":
        return SplitReLU(name=name)
    if kind == "maxpool":
        return MaxPool(spec.window, spec.stride, name=name)
    if kind == "freq_maxpool":
        return FreqMaxPool(spec.window, spec.stride, name=name)
    if kind == "dropout":
        return Dropout(_rate(spec), seed=seed, layer_id=2 * index, name=name)
    if kind == "freq_dropout":
        return ApproxDropout(_rate(spec), seed=seed, layer_id=2 * index, name=name)
    if kind == "bridge_to_freq":
        return BridgeToFreq(name=name)
    if kind == "bridge_to_time":
        return BridgeToTime(name=name)
    raise ConfigError(f"layer {index}: cannot build kind '{kind}' here")


def _rate(spec: LayerSpec) -> float:
    return spec.p if spec.p is not None else 0.5


def _head_layer(geom: LayerGeometry, seed: int, dtype, branch: int) -> Layer:
    spec = geom.spec
    suffix = (".real", ".imag")[branch] if geom.branch else ""
    name = f"{geom.index:02d}.{spec.kind}{suffix}"
    if spec.kind == "dense":
        return Dense(geom.in_shape[0], spec.units, rng=_layer_rng(seed, geom.index, branch),
                     dtype=dtype, name=name)
    if spec.kind in ("relu", "split_relu"):
        return SplitReLU(name=name) if geom.branch else ReLU(name=name)
    if spec.kind == "freq_dropout":
        return ApproxDropout(_rate(spec), seed=seed, layer_id=2 * geom.index + branch, name=name)
    if spec.kind == "dropout":
        return Dropout(_rate(spec), seed=seed, layer_id=2 * geom.index, name=name)
    raise ConfigError(f"layer {geom.index}: kind '{spec.kind}' is not a head layer")


def build_network(cfg: NetworkConfig, seed: int = 0, precision="float32") -> Network:
    """
    Validate cfg and instantiate its layers.

    Each layer draws its initial weights from its own generator keyed by
    (seed, layer index), so inserting a layer never reshuffles the others.
    """
    geometry = check_config(cfg)
    dtype = resolve_dtype(precision)
    layers: List[Tuple[int, Layer]] = []
    flatten_at = next(i for i, geom in enumerate(geometry) if geom.kind == "flatten_head")

    for geom in geometry[:flatten_at]:
        layers.append((geom.index, _spatial_layer(geom, seed, dtype)))

    flatten = geometry[flatten_at]
    head_geometry = geometry[flatten_at + 1:]
    if flatten.domain == "freq":
        hidden, final = head_geometry[:-1], head_geometry[-1]
        real_layers = [_head_layer(geom, seed, dtype, 0) for geom in hidden]
        imag_layers = [_head_layer(geom, seed, dtype, 1) for geom in hidden]
        head = TwoBranchHead(real_layers, imag_layers, _head_layer(final, seed, dtype, 0),
                             name=f"{flatten.index:02d}.head")
        layers.append((flatten.index, head))
    else:
        layers.append((flatten.index, Flatten(name=f"{flatten.index:02d}.flatten_head")))
        for geom in head_geometry:
            layers.append((geom.index, _head_layer(geom, seed, dtype, 0)))

    return Network(cfg, layers, seed=seed, dtype=dtype)


# =============================================================================
# Presets
# =============================================================================


def _spec(kind: str, **params) -> LayerSpec:
    return LayerSpec(kind=kind, **params)


def _cnn_block(convs: Sequence[Tuple[int, int]], bn: bool = True, pool=(2, 2), assumed=False) -> List[LayerSpec]:
    """convs: (k, channels) per conv layer; pool: (window, stride) or None."""
    layers = []
    for k, channels in convs:
        layers.append(_spec("conv", k=k, channels=channels, assumed=assumed))
        if bn:
            layers.append(_spec("bn"))
        layers.append(_spec("relu"))
    if pool:
        layers.append(_spec("maxpool", window=pool[0], stride=pool[1]))
    return layers


def _eml_block(convs: Sequence[Tuple[int, int]], size: int, bn: bool = True, pool=(2, 2),
               assumed=False) -> List[LayerSpec]:
    """EML twin of _cnn_block; the support shrinks to the map size on tiny maps."""
    layers = []
    for k, channels in convs:
        support = min(k, size)
        layers.append(_spec("eml", k=support, channels=channels, assumed=assumed or support != k))
        if bn:
            layers.append(_spec("freq_bn"))
        layers.append(_spec("split_relu"))
    if pool:
        layers.append(_spec("freq_maxpool", window=pool[0], stride=pool[1]))
    return layers


def _mlp_head(hidden: Sequence[int], classes: int, dropout: Sequence[bool]) -> List[LayerSpec]:
    layers = [_spec("flatten_head")]
    for units, drop in zip(hidden, dropout):
        if drop:
            layers.append(_spec("dropout", p=0.5))
        layers += [_spec("dense", units=units), _spec("relu")]
    layers.append(_spec("dense", units=classes))
    return layers


def _two_branch_head(hidden: Sequence[int], classes: int, dropout: Sequence[bool]) -> List[LayerSpec]:
    layers = [_spec("flatten_head")]
    for units, drop in zip(hidden, dropout):
        if drop:
            layers.append(_spec("freq_dropout", p=0.5))
        layers += [_spec("dense", units=units), _spec("split_relu")]
    layers.append(_spec("dense", units=classes))
    return layers


LENET_NOTES = (
    "LeNet channel counts 6/16, 5x5 filters, 2x2 pooling and dense widths 120/84",
    "BatchNorm after each conv/EML and dropout p=0.5 before each hidden dense layer",
)
VGG_NOTES = (
    "3x3 filters with channel ladder 64/128/256/512/512",
    "2x2 max pooling after every block; dropout before the 512-unit dense layer",
)
VGG_TFDM_NOTES = VGG_NOTES + ("EML support clipped to 2x2 where the feature map is 2x2",)
ALEXNET_NOTES = (
    "canonical single-tower AlexNet shape: 11x11/4, 5x5, 3x3 x3, pools 3x3/2",
    "no BatchNorm; dropout p=0.5 before both 4096-unit dense layers",
)

MNIST_RECIPE = TrainRecipe(optimizer="rmsprop", learning_rate=1e-4, batch_size=100, epochs=20)
CIFAR_RECIPE = TrainRecipe(optimizer="rmsprop", learning_rate=1e-4, batch_size=100, epochs=100)
IMAGENET_RECIPE = TrainRecipe(
    optimizer="sgd", learning_rate=0.01, batch_size=256, epochs=120,
    lr_decay_epochs=(60, 90), lr_decay=0.1, momentum=0.9,
)


def _lenet_cnn() -> NetworkConfig:
    layers = (
        _cnn_block([(5, 6)], assumed=True)
        + _cnn_block([(5, 16)], assumed=True)
        + _mlp_head([120, 84], 10, [True, True])
    )
    return NetworkConfig("lenet-cnn", (28, 28, 1), 10, tuple(layers), "mnist", LENET_NOTES, MNIST_RECIPE)


def _tfdm_lenet() -> NetworkConfig:
    layers = (
        [_spec("bridge_to_freq")]
        + _eml_block([(5, 6)], 28, assumed=True)
        + _eml_block([(5, 16)], 14, assumed=True)
        + _two_branch_head([120, 84], 10, [True, True])
    )
    return NetworkConfig("tfdm-lenet", (28, 28, 1), 10, tuple(layers), "mnist", LENET_NOTES, MNIST_RECIPE)


VGG_CHANNELS = (64, 128, 256, 512, 512)
VGG_LARGE_DEPTHS = (2, 2, 2, 3, 3)


def _vgg(name: str, depths: Sequence[int], freq_from: Optional[int]) -> NetworkConfig:
    """freq_from: index of the first frequency-domain block, None for a CNN."""
    layers: List[LayerSpec] = []
    size = 32
    for block, (depth, channels) in enumerate(zip(depths, VGG_CHANNELS)):
        convs = [(3, channels)] * depth
        if freq_from is not None and block == freq_from:
            layers.append(_spec("bridge_to_freq"))
        if freq_from is not None and block >= freq_from:
            layers += _eml_block(convs, size, assumed=True)
        else:
            layers += _cnn_block(convs, assumed=True)
        size //= 2
    if freq_from is None:
        layers += _mlp_head([512], 10, [True])
    else:
        layers += _two_branch_head([512], 10, [True])
    notes = VGG_NOTES if freq_from is None else VGG_TFDM_NOTES
    return NetworkConfig(name, (32, 32, 3), 10, tuple(layers), "cifar10", notes, CIFAR_RECIPE)


def _alexnet(name: str, tfdm: bool) -> NetworkConfig:
    layers = [
        _spec("conv", k=11, channels=96, stride=4, assumed=True),
        _spec("relu"),
        _spec("maxpool", window=3, stride=2),
    ]
    rest = [((5, 256),), ((3, 384), (3, 384), (3, 256))]
    sizes = [27, 13]
    if tfdm:
        layers.append(_spec("bridge_to_freq"))
        for convs, size in zip(rest, sizes):
            layers += _eml_block(convs, size, bn=False, pool=(3, 2), assumed=True)
        layers += _two_branch_head([4096, 4096], 1000, [True, True])
    else:
        for convs in rest:
            layers += _cnn_block(convs, bn=False, pool=(3, 2), assumed=True)
        layers += _mlp_head([4096, 4096], 1000, [True, True])
    return NetworkConfig(name, (224, 224, 3), 1000, tuple(layers), "imagenet", ALEXNET_NOTES, IMAGENET_RECIPE)


def ablate(cfg: NetworkConfig, fixation: bool = True, batchnorm: bool = True,
           dropout: bool = True, name: Optional[str] = None) -> NetworkConfig:
    """Copy of cfg with Weight Fixation, BatchNorm and/or dropout switched off."""
    layers = []
    for spec in cfg.layers:
        if not batchnorm and spec.kind in ("bn", "freq_bn"):
            continue
        if not dropout and spec.kind in ("dropout", "freq_dropout"):
            continue
        if spec.kind == "eml" and not fixation:
            spec = replace(spec, fixation=False)
        layers.append(spec)
    return cfg.with_layers(layers, name=name)


def presets() -> Dict[str, NetworkConfig]:
    lenet = _tfdm_lenet()
    return {
        "lenet-cnn": _lenet_cnn(),
        "tfdm-lenet": lenet,
        "tfdm-lenet-no-do": ablate(lenet, dropout=False, name="tfdm-lenet-no-do"),
        "tfdm-lenet-no-bn-do": ablate(lenet, batchnorm=False, dropout=False, name="tfdm-lenet-no-bn-do"),
        "tfdm-lenet-no-wf-bn-do": ablate(
            lenet, fixation=False, batchnorm=False, dropout=False, name="tfdm-lenet-no-wf-bn-do"
        ),
        "vgg-small-cnn": _vgg("vgg-small-cnn", (1,) * 5, None),
        "vgg-small-tfdm": _vgg("vgg-small-tfdm", (1,) * 5, 0),
        "vgg-large-cnn": _vgg("vgg-large-cnn", VGG_LARGE_DEPTHS, None),
        "vgg-large-tfdm": _vgg("vgg-large-tfdm", VGG_LARGE_DEPTHS, 0),
        "vgg-large-tfdm-mixture": _vgg("vgg-large-tfdm-mixture", VGG_LARGE_DEPTHS, 3),
        "alexnet-cnn": _alexnet("alexnet-cnn", tfdm=False),
        "alexnet-tfdm": _alexnet("alexnet-tfdm", tfdm=True),
    }


PRESET_ALIASES = {"vgg-large-mixture": "vgg-large-tfdm-mixture"}


def preset_names() -> List[str]:
    return sorted(list(presets()) + list(PRESET_ALIASES))


def get_preset(name: str) -> NetworkConfig:
    table = presets()
    key = PRESET_ALIASES.get(name, name)
    if key not in table:
        raise ConfigError(f"unknown preset '{name}'. Available presets: {', '.join(preset_names())}")
    return table[key]
