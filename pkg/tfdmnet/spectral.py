"""
Spectral core

Complex feature maps stored as separate real / imaginary planes, the 2D
DFT / iDFT pair every frequency-domain layer is built on, and the small
helpers (filter padding, conjugate products, channel reduction, Weight
Fixation masks) that the layers compose.

Conventions:
    - tensors are laid out (batch, height, width, channels)
    - forward DFT is the plain double sum, no 1/(MN) factor
    - inverse DFT carries the 1/(MN) factor
    - spectral weights are laid out (height, width, c_in, c_out)

Usage:
    from tfdmnet.spectral import dft2, idft2

    spectrum = dft2(images)            # ComplexTensor4
    restored = idft2(spectrum).real    # images again, up to rounding
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from tfdmnet.errors import NonFiniteError, ShapeError

__all__ = [
    "ComplexTensor4",
    "SpectralWeights",
    "FixationMask",
    "resolve_dtype",
    "as_real_tensor4",
    "dft2",
    "idft2",
    "zero_pad_filter",
    "complex_conj_mul",
    "reduce_sum_cin",
    "parseval_gap",
    "project_to_support",
]

TENSOR_AXES = (1, 2)
WEIGHT_AXES = (0, 1)

PRECISIONS = {
    "float32": np.float32,
    "float64": np.float64,
}

_COMPLEX_OF = {
    np.dtype(np.float32): np.complex64,
    np.dtype(np.float64): np.complex128,
}


def resolve_dtype(precision: Union[str, type, np.dtype]) -> np.dtype:
    """Map "float32" / "float64" (or a numpy dtype) to a real numpy dtype."""
    if isinstance(precision, str):
        if precision not in PRECISIONS:
            raise ValueError(
                f"Unknown precision '{precision}'. Expected one of: {', '.join(PRECISIONS)}"
            )
        return np.dtype(PRECISIONS[precision])
    dtype = np.dtype(precision)
    if dtype not in _COMPLEX_OF:
        raise ValueError(f"Unsupported precision {dtype}; use float32 or float64")
    return dtype


def _real_dtype_of(array: np.ndarray) -> np.dtype:
    if np.iscomplexobj(array):
        return np.dtype(np.float32) if array.dtype == np.complex64 else np.dtype(np.float64)
    if array.dtype == np.float32:
        return np.dtype(np.float32)
    return np.dtype(np.float64)


def _check_finite(array: np.ndarray, what: str) -> None:
    finite = np.isfinite(array)
    if not finite.all():
        index = tuple(int(i) for i in np.argwhere(~finite)[0])
        raise NonFiniteError(f"{what}: non-finite value {array[index]!r} at index {index}")


# =============================================================================
# Tensor types
# =============================================================================


@dataclass
class ComplexTensor4:
    """
    Complex grid kept as two real planes of identical shape.

    Used for feature maps (B, H, W, C) and for spectral weights
    (H, W, C_in, C_out); both are 4-axis grids.
    """
    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ShapeError(
                f"real plane {self.real.shape} and imag plane {self.imag.shape} differ"
            )
        if self.real.ndim != 4:
            raise ShapeError(f"expected a 4-axis grid, got shape {self.real.shape}")

    @classmethod
    def from_complex(cls, values: np.ndarray, dtype=None) -> "ComplexTensor4":
        values = np.asarray(values)
        real_dtype = resolve_dtype(dtype) if dtype is not None else _real_dtype_of(values)
        return cls(
            real=np.ascontiguousarray(values.real, dtype=real_dtype),
            imag=np.ascontiguousarray(values.imag, dtype=real_dtype),
        )

    @classmethod
    def zeros(cls, shape: Tuple[int, ...], dtype="float32") -> "ComplexTensor4":
        real_dtype = resolve_dtype(dtype)
        return cls(real=np.zeros(shape, dtype=real_dtype), imag=np.zeros(shape, dtype=real_dtype))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.real.shape

    @property
    def dtype(self) -> np.dtype:
        return self.real.dtype

    def to_complex(self) -> np.ndarray:
        out = np.empty(self.shape, dtype=_COMPLEX_OF[np.dtype(self.dtype)])
        out.real = self.real
        out.imag = self.imag
        return out

    def conj(self) -> "ComplexTensor4":
        return ComplexTensor4(real=self.real.copy(), imag=-self.imag)

    def copy(self) -> "ComplexTensor4":
        return ComplexTensor4(real=self.real.copy(), imag=self.imag.copy())


def as_real_tensor4(x, dtype=None) -> np.ndarray:
    """Validate (B, H, W, C) layout with every dimension >= 1."""
    x = np.asarray(x, dtype=dtype if dtype is not None else None)
    if x.ndim != 4:
        raise ShapeError(f"expected (batch, height, width, channels), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"every dimension must be >= 1, got shape {x.shape}")
    if np.iscomplexobj(x):
        raise ShapeError("real tensor expected, got complex values")
    return x


@dataclass
class FixationMask:
    """0-1 grid keeping only the upper-left k x k corner."""
    mask: np.ndarray
    k: int

    @classmethod
    def build(cls, height: int, width: int, k: int) -> "FixationMask":
        if not 1 <= k <= min(height, width):
            raise ShapeError(f"support k={k} must lie in [1, {min(height, width)}]")
        mask = np.zeros((height, width), dtype=np.float64)
        mask[:k, :k] = 1.0
        return cls(mask=mask, k=k)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.mask.shape


@dataclass
class SpectralWeights:
    """
    Spectral weights F(W_p) of an EML, (H, W, C_in, C_out), stored as planes.

    support_k is the spatial support of the time-domain filter the weights
    stand for; Weight Fixation keeps the iDFT inside that upper-left corner.
    """
    real: np.ndarray
    imag: np.ndarray
    support_k: int

    def __post_init__(self):
        if self.real.shape != self.imag.shape or self.real.ndim != 4:
            raise ShapeError(
                f"spectral weights need two matching 4-axis planes, got "
                f"{self.real.shape} / {self.imag.shape}"
            )
        height, width = self.real.shape[:2]
        if not 1 <= self.support_k <= min(height, width):
            raise ShapeError(
                f"support_k={self.support_k} must lie in [1, {min(height, width)}]"
            )

    @classmethod
    def from_filter(cls, kernel: np.ndarray, height: int, width: int, dtype=None) -> "SpectralWeights":
        """Zero-pad a (K, K, C_in, C_out) time-domain filter and transform it."""
        kernel = np.asarray(kernel)
        padded = zero_pad_filter(kernel, height, width)
        spectrum = dft2(padded, axes=WEIGHT_AXES)
        real_dtype = resolve_dtype(dtype) if dtype is not None else spectrum.dtype
        return cls(
            real=spectrum.real.astype(real_dtype),
            imag=spectrum.imag.astype(real_dtype),
            support_k=kernel.shape[0],
        )

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.real.shape

    @property
    def values(self) -> ComplexTensor4:
        return ComplexTensor4(real=self.real, imag=self.imag)

    def time_filter(self) -> np.ndarray:
        """Real part of the iDFT: the padded time-domain filter."""
        return idft2(self.values, axes=WEIGHT_AXES).real

    def support_leakage(self) -> float:
        """
        Largest ratio, over (c_in, c_out) slices, of time-domain magnitude
        outside the k x k corner to the slice's peak magnitude.
        """
        spatial = np.abs(idft2(self.values, axes=WEIGHT_AXES).to_complex())
        k = self.support_k
        peak = spatial.max(axis=(0, 1))
        outside = spatial.copy()
        outside[:k, :k] = 0.0
        outside_peak = outside.max(axis=(0, 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(peak > 0, outside_peak / np.where(peak > 0, peak, 1.0), 0.0)
        return float(ratio.max()) if ratio.size else 0.0

    def outside_energy_fraction(self) -> float:
        """Share of the time-domain filter energy lying outside the k x k corner."""
        spatial = idft2(self.values, axes=WEIGHT_AXES).to_complex()
        energy = np.abs(spatial.astype(np.complex128)) ** 2
        total = float(energy.sum())
        if total == 0.0:
            return 0.0
        k = self.support_k
        return (total - float(energy[:k, :k].sum())) / total


# =============================================================================
# Transforms
# =============================================================================


def _as_complex_array(x) -> Tuple[np.ndarray, np.dtype]:
    if isinstance(x, ComplexTensor4):
        return x.to_complex(), np.dtype(x.dtype)
    array = np.asarray(x)
    if array.ndim != 4:
        raise ShapeError(f"expected a 4-axis grid, got shape {array.shape}")
    if min(array.shape) < 1:
        raise ShapeError(f"every dimension must be >= 1, got shape {array.shape}")
    return array, _real_dtype_of(array)


def dft2(x, axes: Tuple[int, int] = TENSOR_AXES) -> ComplexTensor4:
    """
    Unnormalized forward 2D DFT over the spatial axes of every slice.

    X[u, v] = sum_x sum_y x[x, y] * exp(-2*pi*i*(u*x/M + v*y/N))

    Accepts a real ndarray or a ComplexTensor4; output precision follows the
    input (float32 in, complex64-equivalent planes out).
    """
    values, real_dtype = _as_complex_array(x)
    _check_finite(values, "dft2 input")
    spectrum = np.fft.fft2(values, axes=axes)
    return ComplexTensor4.from_complex(spectrum, dtype=real_dtype)


def idft2(x, axes: Tuple[int, int] = TENSOR_AXES) -> ComplexTensor4:
    """Inverse 2D DFT with the 1/(M*N) factor; idft2(dft2(x)) == x."""
    values, real_dtype = _as_complex_array(x)
    _check_finite(values, "idft2 input")
    return ComplexTensor4.from_complex(np.fft.ifft2(values, axes=axes), dtype=real_dtype)


def zero_pad_filter(kernel: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Anchor a (K, K, C_in, C_out) filter at index (0, 0) of a target_h x target_w grid."""
    kernel = np.asarray(kernel)
    if kernel.ndim != 4:
        raise ShapeError(f"filter must be (K, K, C_in, C_out), got shape {kernel.shape}")
    kh, kw = kernel.shape[:2]
    if kh > target_h or kw > target_w:
        raise ShapeError(
            f"filter {kh}x{kw} does not fit into a {target_h}x{target_w} grid"
        )
    padded = np.zeros((target_h, target_w) + kernel.shape[2:], dtype=kernel.dtype)
    padded[:kh, :kw] = kernel
    return padded


def complex_conj_mul(a, b):
    """
    Elementwise conj(a) * b with numpy broadcasting.

    Written out plane by plane, one complex product is four real multiplies:
        re = a.re*b.re + a.im*b.im
        im = a.re*b.im - a.im*b.re
    Returns a ComplexTensor4 when both operands are ComplexTensor4, otherwise
    a complex ndarray.
    """
    both_tensors = isinstance(a, ComplexTensor4) and isinstance(b, ComplexTensor4)
    a_re, a_im = _planes(a)
    b_re, b_im = _planes(b)
    try:
        np.broadcast_shapes(a_re.shape, b_re.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a_re.shape} against {b_re.shape}") from None
    real = a_re * b_re + a_im * b_im
    imag = a_re * b_im - a_im * b_re
    if both_tensors and real.ndim == 4:
        return ComplexTensor4(real=real, imag=imag)
    return real + 1j * imag


def _planes(x) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(x, ComplexTensor4):
        return x.real, x.imag
    array = np.asarray(x)
    if np.iscomplexobj(array):
        return array.real, array.imag
    return array, np.zeros_like(array)


def reduce_sum_cin(x) -> np.ndarray:
    """Sum an (H, W, C_in, C_out) complex grid over C_in -> (H, W, C_out)."""
    values = x.to_complex() if isinstance(x, ComplexTensor4) else np.asarray(x)
    if values.ndim != 4:
        raise ShapeError(f"expected (H, W, C_in, C_out), got shape {values.shape}")
    return values.sum(axis=2)


def parseval_gap(x: np.ndarray) -> float:
    """Relative gap between time-domain energy and (1/MN)-scaled spectral energy."""
    x = as_real_tensor4(x).astype(np.float64)
    energy = float(np.sum(x * x))
    if energy == 0.0:
        return 0.0
    spectrum = dft2(x)
    height, width = x.shape[1], x.shape[2]
    spectral = float(np.sum(spectrum.real ** 2 + spectrum.imag ** 2)) / (height * width)
    return abs(energy - spectral) / energy


def project_to_support(weights: SpectralWeights, mask: FixationMask) -> SpectralWeights:
    """dft2(Re(idft2(weights)) * mask); the imaginary residual is dropped."""
    if weights.shape[:2] != mask.shape:
        raise ShapeError(f"mask {mask.shape} does not match weights {weights.shape[:2]}")
    spatial = weights.time_filter() * mask.mask[:, :, None, None]
    spectrum = dft2(spatial.astype(np.float64), axes=WEIGHT_AXES)
    dtype = weights.real.dtype
    return SpectralWeights(
        real=spectrum.real.astype(dtype),
        imag=spectrum.imag.astype(dtype),
        support_k=mask.k,
    )
