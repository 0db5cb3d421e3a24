"""
Config Validation Module

Checks a NetworkConfig before anything is allocated:
- known layer kinds and their required parameters
- domain consistency (time vs frequency) and bridge placement
- spatial / channel dimension chaining through every layer
- head layout (flatten_head, dense widths, class count)

Structural problems are errors naming the first offending layer index.
Assumed details are surfaced as info entries.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

from tfdmnet.config import KIND_DOMAINS, LayerSpec, NetworkConfig
from tfdmnet.errors import ConfigError

__all__ = [
    "ValidationResult",
    "LayerGeometry",
    "infer_geometry",
    "validate_config",
    "check_config",
    "format_validation_result",
]

HEAD_KINDS = {"dense", "relu", "split_relu", "dropout", "freq_dropout"}
SHAPE_PRESERVING = {"bn", "freq_bn", "relu", "split_relu", "dropout", "freq_dropout"}


class ValidationResult:
    """Result of a validation check."""
    def __init__(self):
        self.errors: List[str] = []
        self.warnings: List[str] = []
        self.info: List[str] = []

    @property
    def is_valid(self) -> bool:
        return len(self.errors) == 0

    def add_error(self, msg: str):
        self.errors.append(msg)

    def add_warning(self, msg: str):
        self.warnings.append(msg)

    def add_info(self, msg: str):
        self.info.append(msg)


@dataclass(frozen=True)
class LayerGeometry:
    """
    Shapes seen by one layer.

    Spatial layers carry (H, W, C) shapes; head layers carry (features,).
    branch is True for head layers that run once per plane (real and imag).
    """
    index: int
    kind: str
    domain: str
    in_shape: Tuple[int, ...]
    out_shape: Tuple[int, ...]
    spec: LayerSpec
    branch: bool = False


def _positive(value: Optional[int]) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 1


def _layer_label(index: int, spec: LayerSpec) -> str:
    return f"layer {index} ({spec.kind})"


def infer_geometry(cfg: NetworkConfig) -> Tuple[List[LayerGeometry], ValidationResult]:
    """
    Walk the layer list, chaining dims. Stops at the first structural error,
    so the geometry list covers only the layers before it.
    """
    result = ValidationResult()
    geometry: List[LayerGeometry] = []

    height, width, channels = cfg.input_shape
    if not all(_positive(d) for d in cfg.input_shape):
        result.add_error(f"input dims must be positive integers, got {list(cfg.input_shape)}")
        return geometry, result
    if not _positive(cfg.classes) or cfg.classes < 2:
        result.add_error(f"classes must be >= 2, got {cfg.classes}")
        return geometry, result

    for note in cfg.assumed:
        result.add_info(f"assumed: {note}")

    dense_indices = [i for i, spec in enumerate(cfg.layers) if spec.kind == "dense"]
    final_dense = dense_indices[-1] if dense_indices else None

    domain = "time"
    bridged = False
    head: Optional[str] = None
    features = 0

    for i, spec in enumerate(cfg.layers):
        label = _layer_label(i, spec)
        if spec.kind not in KIND_DOMAINS:
            result.add_error(f"layer {i}: unknown kind '{spec.kind}'")
            return geometry, result
        native = KIND_DOMAINS[spec.kind]
        if spec.domain is not None and spec.domain not in ("time", "freq"):
            result.add_error(f"{label}: domain must be 'time' or 'freq', got '{spec.domain}'")
            return geometry, result
        if spec.domain is not None and native is not None and spec.domain != native:
            result.add_error(f"{label}: a {spec.kind} layer is always {native}-domain")
            return geometry, result
        expected = spec.domain or native or domain
        if expected != domain:
            result.add_error(
                f"{label}: expects {expected}-domain input but receives {domain}-domain data"
            )
            return geometry, result
        if head is not None and spec.kind not in HEAD_KINDS:
            result.add_error(f"{label}: not allowed after flatten_head")
            return geometry, result
        if head is None and spec.kind == "dense":
            result.add_error(f"{label}: dense layers must follow a flatten_head")
            return geometry, result
        if spec.assumed:
            result.add_info(f"{label}: dimensions assumed")

        in_shape = (height, width, channels) if head is None else (features,)
        branch = False
        kind = spec.kind

        if kind in ("conv", "eml"):
            if not _positive(spec.k) or not _positive(spec.channels):
                result.add_error(f"{label}: needs positive 'k' and 'channels'")
                return geometry, result
            stride = spec.stride if spec.stride is not None else 1
            if not _positive(stride):
                result.add_error(f"{label}: stride must be a positive integer")
                return geometry, result
            if kind == "eml":
                if stride != 1:
                    result.add_error(f"{label}: strided EMLs are not supported")
                    return geometry, result
                if spec.k > min(height, width):
                    result.add_error(
                        f"{label}: filter {spec.k}x{spec.k} does not fit a {height}x{width} map"
                    )
                    return geometry, result
                if spec.k == 1:
                    result.add_warning(f"{label}: a 1x1 EML costs 4x the multiplies of a 1x1 conv")
                if not spec.fixation:
                    result.add_info(f"{label}: Weight Fixation disabled")
            else:
                height, width = -(-height // stride), -(-width // stride)
            channels = spec.channels

        elif kind in SHAPE_PRESERVING:
            if kind in ("dropout", "freq_dropout"):
                p = spec.p if spec.p is not None else 0.5
                if not 0.0 <= p < 1.0:
                    result.add_error(f"{label}: dropout rate p={p} must lie in [0, 1)")
                    return geometry, result
            branch = head == "freq"

        elif kind in ("maxpool", "freq_maxpool"):
            if not _positive(spec.window):
                result.add_error(f"{label}: needs a positive 'window'")
                return geometry, result
            stride = spec.stride if spec.stride is not None else spec.window
            if not _positive(stride):
                result.add_error(f"{label}: stride must be a positive integer")
                return geometry, result
            if spec.window > height or spec.window > width:
                result.add_error(
                    f"{label}: window {spec.window} exceeds the {height}x{width} feature map"
                )
                return geometry, result
            height = (height - spec.window) // stride + 1
            width = (width - spec.window) // stride + 1

        elif kind == "bridge_to_freq":
            if bridged:
                result.add_error(f"{label}: a network may contain at most one bridge_to_freq")
                return geometry, result
            bridged = True
            domain = "freq"

        elif kind == "bridge_to_time":
            domain = "time"

        elif kind == "flatten_head":
            if head is not None:
                result.add_error(f"{label}: a network has a single flatten_head")
                return geometry, result
            head = domain
            features = height * width * channels

        elif kind == "dense":
            if not _positive(spec.units):
                result.add_error(f"{label}: needs positive 'units'")
                return geometry, result
            if head == "freq" and i == final_dense:
                in_shape = (2 * features,)
            elif head == "freq":
                branch = True
            features = spec.units

        out_shape = (height, width, channels) if head is None else (features,)
        if kind == "dense" and head == "freq" and i == final_dense:
            out_shape = (spec.units,)
        geometry.append(LayerGeometry(
            index=i, kind=kind, domain=expected, in_shape=in_shape,
            out_shape=out_shape, spec=spec, branch=branch,
        ))

    if head is None:
        result.add_error("network has no flatten_head")
    elif final_dense is None or final_dense != len(cfg.layers) - 1:
        result.add_error("the last layer must be a dense layer producing the class logits")
    elif cfg.layers[final_dense].units != cfg.classes:
        result.add_error(
            f"layer {final_dense} (dense): produces {cfg.layers[final_dense].units} logits "
            f"for {cfg.classes} classes"
        )
    return geometry, result


def validate_config(cfg: NetworkConfig) -> ValidationResult:
    _, result = infer_geometry(cfg)
    return result


def check_config(cfg: NetworkConfig) -> List[LayerGeometry]:
    """Geometry of a valid config; ConfigError carrying the first error otherwise."""
    geometry, result = infer_geometry(cfg)
    if not result.is_valid:
        raise ConfigError(f"{cfg.name}: {result.errors[0]}")
    return geometry


def format_validation_result(result: ValidationResult, verbose: bool = True) -> str:
    """Format validation result for display."""
    lines = []

    if result.errors:
        lines.append("\nErrors (must fix):")
        for err in result.errors:
            lines.append(f"   • {err}")

    if result.warnings:
        lines.append("\nWarnings:")
        for warn in result.warnings:
            lines.append(f"   • {warn}")

    if verbose and result.info:
        lines.append("\nNotes:")
        for info in result.info:
            lines.append(f"   • {info}")

    if result.is_valid:
        lines.append("\nConfig is valid" + (" (with warnings)" if result.warnings else ""))
    else:
        lines.append(f"\nConfig is invalid ({len(result.errors)} error(s))")

    return "\n".join(lines)
