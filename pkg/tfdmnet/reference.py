"""
Naive reference implementations.

Slow, loop-based versions of the transforms and layer products. They are the
oracles for the fast numpy paths and, in counting mode, the ground truth for
the analytic op-count model.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from tfdmnet.errors import ShapeError
from tfdmnet.layers import same_padding

__all__ = [
    "MultiplyCounter",
    "naive_dft2",
    "naive_idft2",
    "naive_circular_xcorr",
    "naive_anchored_xcorr",
    "naive_conv2d",
    "naive_eml",
    "naive_dense",
]


@dataclass
class MultiplyCounter:
    """Tally of real multiplies and real adds done by a counting-mode run."""
    mults: int = 0
    adds: int = 0


def _dft_kernel(m: int, n: int, sign: float) -> np.ndarray:
    u = np.arange(m).reshape(m, 1, 1, 1)
    v = np.arange(n).reshape(1, n, 1, 1)
    x = np.arange(m).reshape(1, 1, m, 1)
    y = np.arange(n).reshape(1, 1, 1, n)
    return np.exp(sign * 2j * np.pi * (u * x / m + v * y / n))


def naive_dft2(x: np.ndarray) -> np.ndarray:
    """Double-sum DFT of every (batch, channel) slice of a (B, H, W, C) grid, in complex128."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 4:
        raise ShapeError(f"expected (B, H, W, C), got {x.shape}")
    kernel = _dft_kernel(x.shape[1], x.shape[2], -1.0)
    return np.einsum("uvxy,bxyc->buvc", kernel, x)


def naive_idft2(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 4:
        raise ShapeError(f"expected (B, H, W, C), got {x.shape}")
    m, n = x.shape[1], x.shape[2]
    kernel = _dft_kernel(m, n, 1.0)
    return np.einsum("uvxy,bxyc->buvc", kernel, x) / (m * n)


def naive_circular_xcorr(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """R[tau] = sum_t u[t] * v[(t + tau) mod size] for two equal-size 2D planes."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 2:
        raise ShapeError(f"need two equal 2D planes, got {u.shape} and {v.shape}")
    m, n = u.shape
    out = np.zeros((m, n))
    for t1 in range(m):
        for t2 in range(n):
            out[t1, t2] = np.sum(u * np.roll(v, shift=(-t1, -t2), axis=(0, 1)))
    return out


def naive_anchored_xcorr(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """
    Sliding-window cross-correlation anchored at the window's upper-left tap,
    zero beyond the bottom / right edges.

    x: (B, H, W, C_in), kernel: (K, K, C_in, C_out) -> (B, H, W, C_out).
    Rows and columns [0, H - K] never read the zero border.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    batch, height, width, _ = x.shape
    k = kernel.shape[0]
    padded = np.zeros((batch, height + k - 1, width + k - 1, x.shape[3]))
    padded[:, :height, :width] = x
    out = np.zeros((batch, height, width, kernel.shape[3]))
    for i in range(height):
        for j in range(width):
            window = padded[:, i:i + k, j:j + k, :]
            out[:, i, j, :] = np.einsum("bxyc,xyco->bo", window, kernel)
    return out


def naive_conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: int = 1,
    counter: Optional[MultiplyCounter] = None,
) -> np.ndarray:
    """
    Quadruple-loop "same" cross-correlation (CNN convention).

    Every tap of every window is multiplied, zero padding included, so the
    counter reports K^2 * H_out * W_out * C_in * C_out multiplies per sample.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    batch, height, width, c_in = x.shape
    k, _, k_in, c_out = kernel.shape
    if k_in != c_in:
        raise ShapeError(f"kernel expects {k_in} input channels, got {c_in}")
    top, bottom, out_h = same_padding(height, k, stride)
    left, right, out_w = same_padding(width, k, stride)
    padded = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    out = np.zeros((batch, out_h, out_w, c_out))
    for b in range(batch):
        for i in range(out_h):
            for j in range(out_w):
                for ki in range(k):
                    for kj in range(k):
                        pixel = padded[b, i * stride + ki, j * stride + kj, :]
                        out[b, i, j, :] += pixel @ kernel[ki, kj]
                        if counter is not None:
                            counter.mults += c_in * c_out
                            counter.adds += c_in * c_out
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return out


def naive_eml(
    x: np.ndarray,
    weights: np.ndarray,
    counter: Optional[MultiplyCounter] = None,
) -> np.ndarray:
    """
    Loop version of the EML product: out[b, h, w, o] = sum_i x[b, h, w, i] * conj(W[h, w, i, o]).

    x: complex (B, H, W, C_in); weights: complex (H, W, C_in, C_out).
    Counting mode tallies 4 real multiplies per complex product and 2 real
    adds per complex accumulation beyond the first term.
    """
    x = np.asarray(x, dtype=np.complex128)
    weights = np.asarray(weights, dtype=np.complex128)
    batch, height, width, c_in = x.shape
    if weights.shape[:3] != (height, width, c_in):
        raise ShapeError(f"weights {weights.shape} do not match input {x.shape}")
    c_out = weights.shape[3]
    out = np.zeros((batch, height, width, c_out), dtype=np.complex128)
    for b in range(batch):
        for h in range(height):
            for w in range(width):
                for o in range(c_out):
                    acc = 0j
                    for i in range(c_in):
                        a = x[b, h, w, i]
                        c = weights[h, w, i, o]
                        product = complex(
                            a.real * c.real + a.imag * c.imag,
                            a.imag * c.real - a.real * c.imag,
                        )
                        acc = product if i == 0 else acc + product
                        if counter is not None:
                            counter.mults += 4
                            counter.adds += 2 if i > 0 else 0
                    out[b, h, w, o] = acc
    return out


def naive_dense(
    x: np.ndarray,
    weight: np.ndarray,
    bias: Optional[np.ndarray] = None,
    counter: Optional[MultiplyCounter] = None,
) -> np.ndarray:
    """
    Loop version of x @ weight + bias for (B, in) inputs and (in, out) weights.

    Counting mode tallies in * out multiplies and in * out adds per sample
    (the bias add included).
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    batch, n_in = x.shape
    if weight.shape[0] != n_in:
        raise ShapeError(f"weight expects {weight.shape[0]} inputs, got {n_in}")
    n_out = weight.shape[1]
    bias = np.zeros(n_out) if bias is None else np.asarray(bias, dtype=np.float64)
    out = np.zeros((batch, n_out))
    for b in range(batch):
        for o in range(n_out):
            acc = bias[o]
            for i in range(n_in):
                acc += x[b, i] * weight[i, o]
                if counter is not None:
                    counter.mults += 1
                    counter.adds += 1
            out[b, o] = acc
    return out
