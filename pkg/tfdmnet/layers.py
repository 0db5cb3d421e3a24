"""
Network layers

Time-domain layers work on real (B, H, W, C) arrays; frequency-domain layers
work on ComplexTensor4 feature maps whose real and imaginary planes travel as
two branches. Bridges move between the two.

Each operation exists as a module-level function (the math) and, where it has
state, as a Layer subclass that caches what its backward pass needs.

Gradients of complex values use the split-complex convention: the real and
imaginary planes are independent real variables of a real-valued loss, so a
complex gradient G stands for dL/d(re) + i * dL/d(im).
"""

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tfdmnet.errors import ConfigError, ShapeError
from tfdmnet.spectral import (
    ComplexTensor4,
    FixationMask,
    SpectralWeights,
    dft2,
    idft2,
    project_to_support,
    resolve_dtype,
)

__all__ = [
    "Layer",
    "BNState",
    "DropoutSpec",
    "EmlLayer",
    "FreqBatchNorm",
    "TimeBatchNorm",
    "ApproxDropout",
    "Dropout",
    "FreqMaxPool",
    "MaxPool",
    "Conv2D",
    "ReLU",
    "SplitReLU",
    "BridgeToFreq",
    "BridgeToTime",
    "Flatten",
    "Dense",
    "TwoBranchHead",
    "eml_forward",
    "eml_backward",
    "weight_fixation",
    "freq_batchnorm",
    "approx_dropout",
    "dropout_multipliers",
    "freq_maxpool",
    "maxpool2d",
    "conv2d_forward",
    "conv2d_backward",
    "relu",
    "split_relu",
    "two_branch_head",
    "bridge_to_freq",
    "bridge_to_time",
    "glorot_uniform",
    "same_padding",
]


def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """
    Base class: forward / backward plus named parameters and gradients.

    parameters() returns the live arrays; optimizers update them in place.
    """
    kind = "layer"
    domain = "time"

    def __init__(self, name: Optional[str] = None):
        self.name = name or self.kind
        self.grads: Dict[str, np.ndarray] = {}

    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def parameters(self) -> Dict[str, np.ndarray]:
        return {}

    def gradients(self) -> Dict[str, np.ndarray]:
        return self.grads

    def buffers(self) -> Dict[str, np.ndarray]:
        """Non-trainable state that still belongs in a checkpoint."""
        return {}

    def load_buffers(self, values: Dict[str, np.ndarray]) -> None:
        current = self.buffers()
        for key, value in values.items():
            current[key][...] = value

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r})"


# =============================================================================
# Element-wise Multiplication Layer
# =============================================================================


class EmlLayer(Layer):
    """
    Frequency-domain stand-in for a K x K convolution at fixed H x W.

    Weights are the DFT of a zero-padded K x K filter; Weight Fixation keeps
    them there after every optimizer step.
    """
    kind = "eml"
    domain = "freq"

    def __init__(
        self,
        height: int,
        width: int,
        c_in: int,
        c_out: int,
        k: int,
        rng: Optional[np.random.Generator] = None,
        dtype="float32",
        fixation: bool = True,
        name: Optional[str] = None,
    ):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        kernel = glorot_uniform(rng, (k, k, c_in, c_out), k * k * c_in, k * k * c_out)
        self.weights = SpectralWeights.from_filter(kernel, height, width, dtype=dtype)
        self.mask = FixationMask.build(height, width, k)
        self.fixation = fixation
        self.cached_input: Optional[ComplexTensor4] = None
        # digest of the planes as last left by a projection; from_filter output is on support
        self.projected: Optional[bytes] = _planes_digest(self.weights)

    @property
    def k(self) -> int:
        return self.weights.support_k

    def forward(self, x: ComplexTensor4, training: bool = False) -> ComplexTensor4:
        return eml_forward(x, self, training=training)

    def backward(self, grad: ComplexTensor4) -> ComplexTensor4:
        grad_weights, grad_input = eml_backward(grad, self)
        self.grads = {"weights.real": grad_weights.real, "weights.imag": grad_weights.imag}
        return grad_input

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weights.real": self.weights.real, "weights.imag": self.weights.imag}

    def free_parameters(self) -> int:
        """K^2 * C_in * C_out with Weight Fixation; both full planes without it."""
        height, width, c_in, c_out = self.weights.shape
        return (self.k * self.k if self.fixation else 2 * height * width) * c_in * c_out


def _to_hw_batches(values: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (H*W, B, C) for per-frequency batched matmul."""
    batch, height, width, channels = values.shape
    return values.transpose(1, 2, 0, 3).reshape(height * width, batch, channels)


def _from_hw_batches(values: np.ndarray, height: int, width: int) -> np.ndarray:
    hw, batch, channels = values.shape
    return values.reshape(height, width, batch, channels).transpose(2, 0, 1, 3)


def eml_forward(x: ComplexTensor4, layer: EmlLayer, training: bool = False) -> ComplexTensor4:
    """
    out[b, :, :, o] = sum_i x[b, :, :, i] * conj(weights[:, :, i, o])

    With weights = dft2 of a filter anchored at (0, 0), idft2(out) is the
    circular cross-correlation sum_t w[t] * x[t + tau]: a CNN layer's output
    on every position whose window does not wrap around.
    """
    batch, height, width, c_in = x.shape
    w_height, w_width, w_in, w_out = layer.weights.shape
    for axis, got, expected in (("height", height, w_height), ("width", width, w_width),
                                ("channels", c_in, w_in)):
        if got != expected:
            raise ShapeError(f"{layer.name}: input {axis} is {got}, weights expect {expected}")
    if training:
        layer.cached_input = x
    inputs = _to_hw_batches(x.to_complex())
    weights = np.conj(layer.weights.values.to_complex()).reshape(height * width, c_in, w_out)
    out = _from_hw_batches(inputs @ weights, height, width)
    return ComplexTensor4.from_complex(out, dtype=x.dtype)


def eml_backward(grad_out: ComplexTensor4, layer: EmlLayer) -> Tuple[ComplexTensor4, ComplexTensor4]:
    """
    Split-complex gradients of the EML product.

    grad_weights[:, :, i, o] = sum_b x[b, :, :, i] * conj(G[b, :, :, o])
    grad_input[b, :, :, i]   = sum_o G[b, :, :, o] * weights[:, :, i, o]
    """
    if layer.cached_input is None:
        raise RuntimeError(f"{layer.name}: backward called without a training-mode forward")
    x = layer.cached_input
    batch, height, width, c_in = x.shape
    c_out = layer.weights.shape[3]
    if grad_out.shape != (batch, height, width, c_out):
        raise ShapeError(f"{layer.name}: gradient shape {grad_out.shape} does not match output")
    inputs = _to_hw_batches(x.to_complex())
    grads = _to_hw_batches(grad_out.to_complex())
    weights = layer.weights.values.to_complex().reshape(height * width, c_in, c_out)

    grad_weights = (inputs.transpose(0, 2, 1) @ np.conj(grads)).reshape(height, width, c_in, c_out)
    grad_input = _from_hw_batches(grads @ weights.transpose(0, 2, 1), height, width)
    return (
        ComplexTensor4.from_complex(grad_weights, dtype=layer.weights.real.dtype),
        ComplexTensor4.from_complex(grad_input, dtype=x.dtype),
    )


def _planes_digest(weights: SpectralWeights) -> bytes:
    digest = hashlib.blake2b(digest_size=16)
    digest.update(np.ascontiguousarray(weights.real))
    digest.update(np.ascontiguousarray(weights.imag))
    return digest.digest()


def weight_fixation(layer: EmlLayer) -> EmlLayer:
    """
    Project the weights back onto K x K time-domain support, in place.

    Weights untouched since the previous projection are left alone: the
    round trip is not bit-exact in float32, and a zero update must not move
    them.
    """
    if layer.projected is not None and layer.projected == _planes_digest(layer.weights):
        return layer
    projected = project_to_support(layer.weights, layer.mask)
    layer.weights.real[...] = projected.real
    layer.weights.imag[...] = projected.imag
    layer.projected = _planes_digest(layer.weights)
    return layer


# =============================================================================
# Batch Normalization (time and frequency)
# =============================================================================


@dataclass
class BNState:
    """
    Per-branch, per-channel BatchNorm state; arrays are (branches, channels).

    Frequency-domain BN has two branches (real, imag); time-domain BN has one.
    """
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9

    @classmethod
    def create(cls, channels: int, branches: int = 2, dtype="float32",
               epsilon: float = 1e-5, momentum: float = 0.9) -> "BNState":
        real_dtype = resolve_dtype(dtype)
        shape = (branches, channels)
        return cls(
            gamma=np.ones(shape, dtype=real_dtype),
            beta=np.zeros(shape, dtype=real_dtype),
            running_mean=np.zeros(shape, dtype=real_dtype),
            running_var=np.ones(shape, dtype=real_dtype),
            epsilon=epsilon,
            momentum=momentum,
        )


def _bn_plane(plane: np.ndarray, state: BNState, branch: int, training: bool):
    """Normalize one real plane per channel over (batch, height, width)."""
    gamma = state.gamma[branch]
    beta = state.beta[branch]
    if training:
        if plane.shape[0] < 2:
            raise ShapeError("BatchNorm in training mode needs a batch of at least 2")
        mean = plane.mean(axis=(0, 1, 2))
        var = plane.var(axis=(0, 1, 2))
        m = state.momentum
        state.running_mean[branch] = m * state.running_mean[branch] + (1.0 - m) * mean
        state.running_var[branch] = m * state.running_var[branch] + (1.0 - m) * var
    else:
        mean = state.running_mean[branch]
        var = state.running_var[branch]
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    normalized = (plane - mean) * inv_std
    out = (gamma * normalized + beta).astype(plane.dtype, copy=False)
    return out, (normalized, inv_std)


def _bn_plane_backward(grad: np.ndarray, cache, gamma: np.ndarray):
    normalized, inv_std = cache
    count = grad.shape[0] * grad.shape[1] * grad.shape[2]
    grad_beta = grad.sum(axis=(0, 1, 2))
    grad_gamma = (grad * normalized).sum(axis=(0, 1, 2))
    grad_input = (gamma * inv_std / count) * (
        count * grad - grad_beta - normalized * grad_gamma
    )
    return grad_input.astype(grad.dtype, copy=False), grad_gamma, grad_beta


def freq_batchnorm(x: ComplexTensor4, state: BNState, training: bool) -> ComplexTensor4:
    """BatchNorm applied independently to the real plane and the imaginary plane."""
    real, _ = _bn_plane(x.real, state, 0, training)
    imag, _ = _bn_plane(x.imag, state, 1, training)
    return ComplexTensor4(real=real, imag=imag)


class FreqBatchNorm(Layer):
    kind = "freq_bn"
    domain = "freq"

    def __init__(self, channels: int, dtype="float32", epsilon: float = 1e-5,
                 momentum: float = 0.9, name: Optional[str] = None):
        super().__init__(name)
        self.state = BNState.create(channels, branches=2, dtype=dtype,
                                    epsilon=epsilon, momentum=momentum)
        self._caches = None

    def forward(self, x: ComplexTensor4, training: bool = False) -> ComplexTensor4:
        real, real_cache = _bn_plane(x.real, self.state, 0, training)
        imag, imag_cache = _bn_plane(x.imag, self.state, 1, training)
        if training:
            self._caches = (real_cache, imag_cache)
        return ComplexTensor4(real=real, imag=imag)

    def backward(self, grad: ComplexTensor4) -> ComplexTensor4:
        g_real, gg_real, gb_real = _bn_plane_backward(grad.real, self._caches[0], self.state.gamma[0])
        g_imag, gg_imag, gb_imag = _bn_plane_backward(grad.imag, self._caches[1], self.state.gamma[1])
        self.grads = {
            "gamma": np.stack([gg_real, gg_imag]).astype(self.state.gamma.dtype),
            "beta": np.stack([gb_real, gb_imag]).astype(self.state.beta.dtype),
        }
        return ComplexTensor4(real=g_real, imag=g_imag)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"gamma": self.state.gamma, "beta": self.state.beta}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {"running_mean": self.state.running_mean, "running_var": self.state.running_var}


class TimeBatchNorm(FreqBatchNorm):
    """Ordinary BatchNorm on a real (B, H, W, C) feature map: a single branch."""
    kind = "bn"
    domain = "time"

    def __init__(self, channels: int, dtype="float32", epsilon: float = 1e-5,
                 momentum: float = 0.9, name: Optional[str] = None):
        Layer.__init__(self, name)
        self.state = BNState.create(channels, branches=1, dtype=dtype,
                                    epsilon=epsilon, momentum=momentum)
        self._caches = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out, cache = _bn_plane(x, self.state, 0, training)
        if training:
            self._caches = cache
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad_input, grad_gamma, grad_beta = _bn_plane_backward(grad, self._caches, self.state.gamma[0])
        self.grads = {
            "gamma": grad_gamma[None].astype(self.state.gamma.dtype),
            "beta": grad_beta[None].astype(self.state.beta.dtype),
        }
        return grad_input


# =============================================================================
# Dropout
# =============================================================================


@dataclass
class DropoutSpec:
    """Rate p and noise seed; calls counts the draws approx_dropout took from rng_seed."""
    p: float = 0.5
    rng_seed: int = 0
    calls: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ConfigError(f"dropout rate p={self.p} must lie in [0, 1)")


def dropout_multipliers(shape: Tuple[int, ...], p: float, rng: np.random.Generator) -> np.ndarray:
    """Draws r ~ Normal(mean 1, std p/2); p = 0 gives exactly 1."""
    if p == 0.0:
        return np.ones(shape)
    return rng.normal(loc=1.0, scale=p / 2.0, size=shape)


def _noise_rng(seed: int, layer_id: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, layer_id, step])


def approx_dropout(x: ComplexTensor4, spec: DropoutSpec, training: bool,
                   rng: Optional[np.random.Generator] = None) -> ComplexTensor4:
    """
    Frequency-domain dropout: each plane scaled by its own fresh Normal(1, p/2)
    noise in training, identity at inference.

    Without an explicit rng, call n draws from (rng_seed, n), so successive
    calls get fresh noise and a fresh spec replays the same sequence.
    """
    if not training:
        return x
    if rng is None:
        rng = _noise_rng(spec.rng_seed, 0, spec.calls)
        spec.calls += 1
    r_real = dropout_multipliers(x.shape, spec.p, rng).astype(x.dtype)
    r_imag = dropout_multipliers(x.shape, spec.p, rng).astype(x.dtype)
    return ComplexTensor4(real=x.real * r_real, imag=x.imag * r_imag)


class ApproxDropout(Layer):
    """
    Approximated dropout for frequency-domain data.

    Works on a ComplexTensor4 (independent noise per plane) or on one real
    branch vector inside the two-branch head. Noise for call n comes from
    (seed, layer_id, n), so a run replays exactly.
    """
    kind = "freq_dropout"
    domain = "freq"

    def __init__(self, p: float = 0.5, seed: int = 0, layer_id: int = 0, name: Optional[str] = None):
        super().__init__(name)
        self.spec = DropoutSpec(p=p, rng_seed=seed)
        self.layer_id = layer_id
        self.step = 0
        self.active = True
        self._multipliers = None

    def forward(self, x, training: bool = False):
        if not (training and self.active):
            self._multipliers = None
            return x
        rng = _noise_rng(self.spec.rng_seed, self.layer_id, self.step)
        self.step += 1
        if isinstance(x, ComplexTensor4):
            r_real = dropout_multipliers(x.shape, self.spec.p, rng).astype(x.dtype)
            r_imag = dropout_multipliers(x.shape, self.spec.p, rng).astype(x.dtype)
            self._multipliers = (r_real, r_imag)
            return ComplexTensor4(real=x.real * r_real, imag=x.imag * r_imag)
        r = dropout_multipliers(x.shape, self.spec.p, rng).astype(x.dtype)
        self._multipliers = r
        return x * r

    def backward(self, grad):
        if self._multipliers is None:
            return grad
        if isinstance(grad, ComplexTensor4):
            r_real, r_imag = self._multipliers
            return ComplexTensor4(real=grad.real * r_real, imag=grad.imag * r_imag)
        return grad * self._multipliers

    def buffers(self) -> Dict[str, np.ndarray]:
        return {"step": np.array([self.step], dtype=np.int64)}

    def load_buffers(self, values: Dict[str, np.ndarray]) -> None:
        if "step" in values:
            self.step = int(np.asarray(values["step"]).reshape(-1)[0])


class Dropout(ApproxDropout):
    """Inverted Bernoulli dropout for time-domain features."""
    kind = "dropout"
    domain = "time"

    def forward(self, x, training: bool = False):
        if not (training and self.active) or self.spec.p == 0.0:
            self._multipliers = None
            return x
        rng = _noise_rng(self.spec.rng_seed, self.layer_id, self.step)
        self.step += 1
        keep = rng.random(x.shape) >= self.spec.p
        self._multipliers = (keep / (1.0 - self.spec.p)).astype(x.dtype)
        return x * self._multipliers


# =============================================================================
# Pooling
# =============================================================================


def _pool_windows(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    if window > x.shape[1] or window > x.shape[2]:
        raise ShapeError(
            f"pooling window {window} exceeds feature map {x.shape[1]}x{x.shape[2]}"
        )
    windows = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    return windows.reshape(windows.shape[:4] + (window * window,))


def maxpool2d(x: np.ndarray, window: int, stride: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Max pooling over (B, H, W, C); output is floor((H - window)/stride) + 1 per side.

    Ties go to the first element in row-major scan order of the window.
    Returns (pooled, flat argmax index inside each window).
    """
    windows = _pool_windows(x, window, stride)
    argmax = windows.argmax(axis=-1)
    pooled = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return pooled, argmax


def _maxpool_backward(grad: np.ndarray, argmax: np.ndarray, input_shape, window: int, stride: int) -> np.ndarray:
    batch, out_h, out_w, channels = grad.shape
    b, i, j, c = np.meshgrid(
        np.arange(batch), np.arange(out_h), np.arange(out_w), np.arange(channels), indexing="ij"
    )
    rows = i * stride + argmax // window
    cols = j * stride + argmax % window
    grad_input = np.zeros(input_shape, dtype=grad.dtype)
    np.add.at(grad_input, (b, rows, cols, c), grad)
    return grad_input


class MaxPool(Layer):
    kind = "maxpool"
    domain = "time"

    def __init__(self, window: int = 2, stride: Optional[int] = None, name: Optional[str] = None):
        super().__init__(name)
        self.window = window
        self.stride = stride or window
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        pooled, argmax = maxpool2d(x, self.window, self.stride)
        if training:
            self._cache = (argmax, x.shape)
        return pooled

    def backward(self, grad: np.ndarray) -> np.ndarray:
        argmax, shape = self._cache
        return _maxpool_backward(grad, argmax, shape, self.window, self.stride)


def freq_maxpool(x: ComplexTensor4, window: int, stride: int) -> ComplexTensor4:
    """dft2(maxpool(Re(idft2(x)))): pooling happens in the time domain."""
    pooled, _ = maxpool2d(idft2(x).real, window, stride)
    return dft2(pooled)


class FreqMaxPool(Layer):
    """
    Max pooling bridged through the time domain.

    last_residual holds the relative imaginary residual of the iDFT that was
    discarded on the latest call.
    """
    kind = "freq_maxpool"
    domain = "freq"

    def __init__(self, window: int = 2, stride: Optional[int] = None, name: Optional[str] = None):
        super().__init__(name)
        self.window = window
        self.stride = stride or window
        self.last_residual = 0.0
        self._cache = None

    def forward(self, x: ComplexTensor4, training: bool = False) -> ComplexTensor4:
        spatial = idft2(x)
        scale = float(np.abs(spatial.real).max())
        residual = float(np.abs(spatial.imag).max())
        self.last_residual = residual / scale if scale > 0 else residual
        pooled, argmax = maxpool2d(spatial.real, self.window, self.stride)
        if training:
            self._cache = (argmax, spatial.real.shape)
        return dft2(pooled)

    def backward(self, grad: ComplexTensor4) -> ComplexTensor4:
        argmax, shape = self._cache
        grad_pooled = _dft2_adjoint_real(grad)
        grad_spatial = _maxpool_backward(grad_pooled, argmax, shape, self.window, self.stride)
        return _idft2_adjoint(grad_spatial)


# =============================================================================
# Domain bridges
# =============================================================================


def _dft2_adjoint_real(grad: ComplexTensor4) -> np.ndarray:
    """Gradient w.r.t. a real input x of y = dft2(x): Re(M*N * ifft2(G))."""
    height, width = grad.shape[1], grad.shape[2]
    return (np.fft.ifft2(grad.to_complex(), axes=(1, 2)).real * (height * width)).astype(grad.dtype)


def _idft2_adjoint(grad_real: np.ndarray) -> ComplexTensor4:
    """Gradient w.r.t. complex x of y = Re(idft2(x)): fft2(G) / (M*N)."""
    height, width = grad_real.shape[1], grad_real.shape[2]
    spectrum = np.fft.fft2(grad_real, axes=(1, 2)) / (height * width)
    return ComplexTensor4.from_complex(spectrum, dtype=grad_real.dtype)


def bridge_to_freq(x: np.ndarray) -> ComplexTensor4:
    return dft2(x)


def bridge_to_time(x: ComplexTensor4) -> Tuple[np.ndarray, float]:
    """Real part of idft2(x) plus the largest absolute imaginary residual."""
    spatial = idft2(x)
    return spatial.real, float(np.abs(spatial.imag).max())


class BridgeToFreq(Layer):
    kind = "bridge_to_freq"
    domain = "time"

    def forward(self, x: np.ndarray, training: bool = False) -> ComplexTensor4:
        return bridge_to_freq(x)

    def backward(self, grad: ComplexTensor4) -> np.ndarray:
        return _dft2_adjoint_real(grad)


class BridgeToTime(Layer):
    kind = "bridge_to_time"
    domain = "freq"

    def __init__(self, name: Optional[str] = None):
        super().__init__(name)
        self.last_residual = 0.0

    def forward(self, x: ComplexTensor4, training: bool = False) -> np.ndarray:
        real, self.last_residual = bridge_to_time(x)
        return real

    def backward(self, grad: np.ndarray) -> ComplexTensor4:
        return _idft2_adjoint(grad)


# =============================================================================
# Convolution
# =============================================================================


class Conv2D(Layer):
    """Time-domain K x K convolution (CNN cross-correlation), "same" padding, with bias."""
    kind = "conv"
    domain = "time"

    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1,
                 rng: Optional[np.random.Generator] = None, dtype="float32",
                 name: Optional[str] = None):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        real_dtype = resolve_dtype(dtype)
        self.kernel = glorot_uniform(rng, (k, k, c_in, c_out), k * k * c_in, k * k * c_out).astype(real_dtype)
        self.bias = np.zeros(c_out, dtype=real_dtype)
        self.stride = stride
        self._cache = None

    @property
    def k(self) -> int:
        return self.kernel.shape[0]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        return conv2d_forward(x, self, training=training)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad_kernel, grad_bias, grad_input = conv2d_backward(grad, self)
        self.grads = {"kernel": grad_kernel, "bias": grad_bias}
        return grad_input

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"kernel": self.kernel, "bias": self.bias}


def same_padding(size: int, k: int, stride: int):
    """TF-style "same" padding: (pad_before, pad_after, out_size)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2, out


def _conv_windows(padded: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))
    return windows[:, ::stride, ::stride][:, :out_h, :out_w]


def conv2d_forward(x: np.ndarray, layer: Conv2D, training: bool = False) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"{layer.name}: expected (B, H, W, C), got {x.shape}")
    k, _, c_in, _ = layer.kernel.shape
    if x.shape[3] != c_in:
        raise ShapeError(f"{layer.name}: input channels are {x.shape[3]}, kernel expects {c_in}")
    top, bottom, out_h = same_padding(x.shape[1], k, layer.stride)
    left, right, out_w = same_padding(x.shape[2], k, layer.stride)
    padded = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    windows = _conv_windows(padded, k, layer.stride, out_h, out_w)
    out = np.tensordot(windows, layer.kernel, axes=([3, 4, 5], [2, 0, 1])) + layer.bias
    if training:
        layer._cache = (padded, (top, left), x.shape, out_h, out_w)
    return out.astype(x.dtype, copy=False)


def conv2d_backward(grad: np.ndarray, layer: Conv2D):
    """Returns (grad_kernel, grad_bias, grad_input)."""
    padded, (top, left), input_shape, out_h, out_w = layer._cache
    k = layer.k
    stride = layer.stride
    windows = _conv_windows(padded, k, stride, out_h, out_w)
    grad_kernel = np.tensordot(windows, grad, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
    grad_bias = grad.sum(axis=(0, 1, 2))
    grad_padded = np.zeros_like(padded)
    row_end = stride * (out_h - 1) + 1
    col_end = stride * (out_w - 1) + 1
    for ki in range(k):
        for kj in range(k):
            grad_padded[:, ki:ki + row_end:stride, kj:kj + col_end:stride, :] += grad @ layer.kernel[ki, kj].T
    grad_input = grad_padded[:, top:top + input_shape[1], left:left + input_shape[2], :]
    return grad_kernel.astype(layer.kernel.dtype), grad_bias.astype(layer.bias.dtype), grad_input


# =============================================================================
# Activations
# =============================================================================


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def split_relu(x: ComplexTensor4) -> ComplexTensor4:
    return ComplexTensor4(real=relu(x.real), imag=relu(x.imag))


class ReLU(Layer):
    kind = "relu"
    domain = "time"

    def __init__(self, name: Optional[str] = None):
        super().__init__(name)
        self._mask = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if training:
            self._mask = x > 0
        return relu(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self._mask


class SplitReLU(Layer):
    kind = "split_relu"
    domain = "freq"

    def __init__(self, name: Optional[str] = None):
        super().__init__(name)
        self._masks = None

    def forward(self, x, training: bool = False):
        if not isinstance(x, ComplexTensor4):
            if training:
                self._masks = x > 0
            return relu(x)
        if training:
            self._masks = (x.real > 0, x.imag > 0)
        return split_relu(x)

    def backward(self, grad):
        if not isinstance(grad, ComplexTensor4):
            return grad * self._masks
        return ComplexTensor4(real=grad.real * self._masks[0], imag=grad.imag * self._masks[1])


# =============================================================================
# Dense layers and heads
# =============================================================================


class Flatten(Layer):
    """Row-major flatten (H, then W, then C) of a time-domain map."""
    kind = "flatten_head"
    domain = "time"

    def __init__(self, name: Optional[str] = None):
        super().__init__(name)
        self._shape = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, units: int, rng: Optional[np.random.Generator] = None,
                 dtype="float32", name: Optional[str] = None):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        real_dtype = resolve_dtype(dtype)
        self.weight = glorot_uniform(rng, (in_features, units), in_features, units).astype(real_dtype)
        self.bias = np.zeros(units, dtype=real_dtype)
        self._input = None

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def units(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"{self.name}: expected (batch, {self.in_features}) input, got {x.shape}"
            )
        if training:
            self._input = x
        return x @ self.weight + self.bias

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.grads = {"weight": self._input.T @ grad, "bias": grad.sum(axis=0)}
        return grad @ self.weight.T

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


def _run(layers: Sequence[Layer], x, training: bool):
    for layer in layers:
        x = layer.forward(x, training=training)
    return x


def _run_backward(layers: Sequence[Layer], grad):
    for layer in reversed(layers):
        grad = layer.backward(grad)
    return grad


def two_branch_head(x: ComplexTensor4, dense_real, dense_imag, dense_final: Dense,
                    training: bool = False) -> np.ndarray:
    """
    logits = dense_final(concat(dense_real(flatten(Re x)), dense_imag(flatten(Im x))))

    dense_real / dense_imag are a Layer or a list of layers run in order.
    Flatten order is row-major (H, then W, then C); real features come first.
    """
    real_layers = dense_real if isinstance(dense_real, (list, tuple)) else [dense_real]
    imag_layers = dense_imag if isinstance(dense_imag, (list, tuple)) else [dense_imag]
    batch = x.shape[0]
    real = _run(real_layers, x.real.reshape(batch, -1), training)
    imag = _run(imag_layers, x.imag.reshape(batch, -1), training)
    features = np.concatenate([real, imag], axis=1)
    if features.shape[1] != dense_final.in_features:
        raise ShapeError(
            f"{dense_final.name}: concatenated features have {features.shape[1]} columns, "
            f"layer expects {dense_final.in_features}"
        )
    return dense_final.forward(features, training=training)


class TwoBranchHead(Layer):
    """
    Classification head for frequency-domain features.

    Each plane is flattened and run through its own stack of layers; the two
    results are concatenated and a final dense layer produces the logits.
    """
    kind = "flatten_head"
    domain = "freq"

    def __init__(self, real_layers: List[Layer], imag_layers: List[Layer], final: Dense,
                 name: Optional[str] = None):
        super().__init__(name or "head")
        self.real_layers = list(real_layers)
        self.imag_layers = list(imag_layers)
        self.final = final
        self._shape = None
        self._real_width = None

    def forward(self, x: ComplexTensor4, training: bool = False) -> np.ndarray:
        batch = x.shape[0]
        self._shape = x.shape
        real = _run(self.real_layers, x.real.reshape(batch, -1), training)
        imag = _run(self.imag_layers, x.imag.reshape(batch, -1), training)
        self._real_width = real.shape[1]
        features = np.concatenate([real, imag], axis=1)
        if features.shape[1] != self.final.in_features:
            raise ShapeError(
                f"{self.final.name}: concatenated features have {features.shape[1]} columns, "
                f"layer expects {self.final.in_features}"
            )
        return self.final.forward(features, training=training)

    def backward(self, grad: np.ndarray) -> ComplexTensor4:
        grad_features = self.final.backward(grad)
        split = self._real_width
        grad_real = _run_backward(self.real_layers, grad_features[:, :split])
        grad_imag = _run_backward(self.imag_layers, grad_features[:, split:])
        dtype = self.final.weight.dtype
        return ComplexTensor4(
            real=grad_real.reshape(self._shape).astype(dtype, copy=False),
            imag=grad_imag.reshape(self._shape).astype(dtype, copy=False),
        )

    def sublayers(self) -> List[Tuple[str, Layer]]:
        named = [(f"real.{i}", layer) for i, layer in enumerate(self.real_layers)]
        named += [(f"imag.{i}", layer) for i, layer in enumerate(self.imag_layers)]
        named.append(("final", self.final))
        return named

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            f"{prefix}.{key}": value
            for prefix, layer in self.sublayers()
            for key, value in layer.parameters().items()
        }

    def gradients(self) -> Dict[str, np.ndarray]:
        return {
            f"{prefix}.{key}": value
            for prefix, layer in self.sublayers()
            for key, value in layer.grads.items()
        }

    def buffers(self) -> Dict[str, np.ndarray]:
        return {
            f"{prefix}.{key}": value
            for prefix, layer in self.sublayers()
            for key, value in layer.buffers().items()
        }
