"""
Verification suite

Self-contained numerical checks run by `tfdm verify`. Each check builds its
own random inputs from the seed, compares a fast path with an oracle and
reports the measured error next to its tolerance.

Levels:
    fast  small instances and sampled gradient entries
    full  larger instances, every gradient entry, a short training run
"""

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from tfdmnet.config import LayerSpec, NetworkConfig, TrainRecipe
from tfdmnet.data import synthetic_dataset
from tfdmnet.layers import (
    BNState,
    Conv2D,
    EmlLayer,
    _bn_plane,
    conv2d_forward,
    dropout_multipliers,
    eml_forward,
    weight_fixation,
)
from tfdmnet.models import build_network
from tfdmnet.reference import (
    naive_anchored_xcorr,
    naive_circular_xcorr,
    naive_conv2d,
    naive_dft2,
)
from tfdmnet.spectral import SpectralWeights, complex_conj_mul, dft2, idft2, parseval_gap
from tfdmnet.training import TrainRunConfig, gradcheck, train

__all__ = ["CheckResult", "LEVELS", "run_suite", "mini_tfdm_config"] + [
    "check_cross_correlation",
    "check_eml_interior",
    "check_conv_oracle",
    "check_gradients",
    "check_fixation",
    "check_dropout_statistics",
    "check_parseval",
    "check_bn_correspondence",
    "check_dft_oracle",
    "check_round_trip",
]

LEVELS = ("fast", "full")


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.measured)) and self.measured <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name} measured={self.measured:.3e} tolerance={self.tolerance:.0e}"
        return f"{text} {self.detail}" if self.detail else text


def _relative(actual: np.ndarray, expected: np.ndarray) -> float:
    scale = max(float(np.abs(expected).max()), 1e-12)
    return float(np.abs(actual - expected).max()) / scale


def _plane(array: np.ndarray) -> np.ndarray:
    return array[None, :, :, None]


def check_cross_correlation(rng: np.random.Generator, pairs: int = 100, max_size: int = 16,
                            product: Callable = complex_conj_mul) -> CheckResult:
    """idft2(conj(dft2 u) * dft2 v) against the looped circular cross-correlation."""
    worst = 0.0
    for _ in range(pairs):
        m, n = rng.integers(2, max_size + 1, size=2)
        u = rng.standard_normal((m, n))
        v = rng.standard_normal((m, n))
        spectrum = product(dft2(_plane(u)), dft2(_plane(v)))
        values = spectrum.to_complex() if hasattr(spectrum, "to_complex") else np.asarray(spectrum)
        fast = np.fft.ifft2(values, axes=(1, 2)).real[0, :, :, 0]
        worst = max(worst, _relative(fast, naive_circular_xcorr(u, v)))
    return CheckResult("cross_correlation", worst, 1e-4, f"pairs={pairs}")


def check_eml_interior(rng: np.random.Generator, size: int = 8, k: int = 3,
                       c_in: int = 2, c_out: int = 3) -> CheckResult:
    """EML output equals padded convolution on every window that does not wrap."""
    x = rng.standard_normal((2, size, size, c_in))
    kernel = rng.standard_normal((k, k, c_in, c_out))
    layer = EmlLayer(size, size, c_in, c_out, k, dtype="float64")
    layer.weights = SpectralWeights.from_filter(kernel, size, size, dtype="float64")
    spatial = idft2(eml_forward(dft2(x), layer)).real
    interior = size - k + 1
    anchored = naive_anchored_xcorr(x, kernel)
    err = _relative(spatial[:, :interior, :interior], anchored[:, :interior, :interior])
    top = (k - 1) // 2
    same = naive_conv2d(x, kernel)
    err = max(err, _relative(spatial[:, :interior, :interior],
                             same[:, top:top + interior, top:top + interior]))
    return CheckResult("eml_interior", err, 1e-4, f"{size}x{size}, k={k}")


def check_conv_oracle(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for stride in (1, 2):
        x = rng.standard_normal((2, 7, 6, 2))
        layer = Conv2D(2, 3, 3, stride=stride, rng=rng, dtype="float64")
        layer.bias[...] = rng.standard_normal(3)
        fast = conv2d_forward(x, layer)
        worst = max(worst, _relative(fast, naive_conv2d(x, layer.kernel, layer.bias, stride)))
    return CheckResult("conv_oracle", worst, 1e-5)


def mini_tfdm_config() -> NetworkConfig:
    """Small mixed network holding one of every layer kind the gradient check covers."""
    layers = (
        LayerSpec("conv", k=3, channels=2),
        LayerSpec("bn"),
        LayerSpec("relu"),
        LayerSpec("bridge_to_freq"),
        LayerSpec("eml", k=3, channels=3),
        LayerSpec("freq_bn"),
        LayerSpec("split_relu"),
        LayerSpec("freq_maxpool", window=2),
        LayerSpec("flatten_head"),
        LayerSpec("freq_dropout", p=0.5),
        LayerSpec("dense", units=4),
        LayerSpec("split_relu"),
        LayerSpec("dense", units=3),
    )
    return NetworkConfig("mini-tfdm", (8, 8, 1), 3, layers, "synthetic", (), TrainRecipe(batch_size=8))


def check_gradients(rng: np.random.Generator, seed: int, full: bool) -> CheckResult:
    network = build_network(mini_tfdm_config(), seed=seed, precision="float64")
    x = rng.standard_normal((4, 8, 8, 1))
    labels = rng.integers(0, 3, size=4)
    report = gradcheck(network, x, labels, tolerance=1e-4,
                       max_entries=None if full else 12, seed=seed)
    detail = f"entries={report.checked}"
    if report.failing:
        detail += f" failing={','.join(report.failing)}"
    return CheckResult("gradcheck", report.max_error, 1e-4, detail)


def check_fixation(rng: np.random.Generator, seed: int, full: bool) -> CheckResult:
    """Projection idempotence, free-parameter count, and leakage after real training steps."""
    layer = EmlLayer(8, 8, 2, 3, 3, rng=rng, dtype="float64")
    layer.weights.real[...] += rng.standard_normal(layer.weights.shape)
    layer.weights.imag[...] += rng.standard_normal(layer.weights.shape)
    once = weight_fixation(layer).weights.values.copy()
    twice = weight_fixation(layer).weights.values
    err = _relative(twice.to_complex(), once.to_complex())
    if layer.free_parameters() != 3 * 3 * 2 * 3:
        return CheckResult("weight_fixation", np.inf, 1e-5, "free-parameter count off")

    cfg = mini_tfdm_config()
    network = build_network(cfg, seed=seed)
    steps = 100 if full else 10
    train_ds = synthetic_dataset(8 * steps, (8, 8, 1), classes=3, seed=seed)
    train(network, train_ds, None, TrainRunConfig(epochs=1, batch_size=8, seed=seed,
                                                  lr_schedule=[(0, 1e-3)]))
    leakage = max(eml.weights.outside_energy_fraction() for eml in network.eml_layers())
    return CheckResult("weight_fixation", max(err, leakage), 1e-5, f"steps={steps}")


def check_dropout_statistics(rng: np.random.Generator, draws: int = 1_000_000) -> List[CheckResult]:
    r = dropout_multipliers((draws,), 0.5, rng)
    inside = float(np.mean((r >= 0.5) & (r <= 1.5)))
    return [
        CheckResult("dropout_mean", abs(float(r.mean()) - 1.0), 0.01),
        CheckResult("dropout_std", abs(float(r.std()) - 0.25), 0.01),
        CheckResult("dropout_mass_0.5_1.5", abs(inside - 0.954), 0.005, f"fraction={inside:.4f}"),
    ]


def check_parseval(rng: np.random.Generator) -> CheckResult:
    worst = max(parseval_gap(rng.standard_normal((2, m, m + 1, 3))) for m in (1, 4, 7, 16))
    return CheckResult("parseval", worst, 1e-10)


def check_bn_correspondence(rng: np.random.Generator) -> CheckResult:
    """
    Normalizing the real spectrum with gamma' = gamma / sqrt(C_real) matches the
    real spectrum of time-domain BN on every non-DC bin, where
    C_real = (var_time + eps) / (var_real + eps). The time mean and shift only
    reach the DC bin; the frequency-side mean is cancelled through beta'.
    """
    batch, size, channels = 8, 6, 3
    u = rng.standard_normal((batch, size, size, channels)) * 2.0 + 0.5
    gamma = rng.uniform(0.5, 1.5, size=channels)
    beta = rng.standard_normal(channels)

    time_state = BNState.create(channels, branches=1, dtype="float64")
    time_state.gamma[0], time_state.beta[0] = gamma, beta
    time_out, _ = _bn_plane(u, time_state, 0, training=True)
    expected = dft2(time_out).real

    real_plane = dft2(u).real
    eps = time_state.epsilon
    var_time = u.var(axis=(0, 1, 2))
    var_real = real_plane.var(axis=(0, 1, 2))
    mean_real = real_plane.mean(axis=(0, 1, 2))
    c_real = (var_time + eps) / (var_real + eps)
    gamma_f = gamma / np.sqrt(c_real)
    freq_state = BNState.create(channels, branches=1, dtype="float64")
    freq_state.gamma[0] = gamma_f
    freq_state.beta[0] = gamma_f * mean_real / np.sqrt(var_real + eps)
    actual, _ = _bn_plane(real_plane, freq_state, 0, training=True)

    non_dc = np.ones((size, size), dtype=bool)
    non_dc[0, 0] = False
    err = _relative(actual[:, non_dc], expected[:, non_dc])
    return CheckResult("bn_correspondence", err, 1e-4, "non-DC bins")


def check_dft_oracle(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for m, n in ((1, 1), (3, 5), (8, 8), (7, 12)):
        x = rng.standard_normal((2, m, n, 2))
        worst = max(worst, _relative(dft2(x).to_complex(), naive_dft2(x)))
    return CheckResult("dft_vs_naive", worst, 1e-10)


def check_round_trip(rng: np.random.Generator) -> CheckResult:
    x = rng.standard_normal((3, 9, 10, 2)).astype(np.float32)
    back = idft2(dft2(x)).real
    return CheckResult("dft_round_trip", _relative(back, x), 1e-5, "float32")


def run_suite(level: str = "fast", seed: int = 0,
              progress: Optional[Callable[[CheckResult], None]] = None) -> List[CheckResult]:
    if level not in LEVELS:
        raise ValueError(f"unknown level '{level}'. Expected one of: {', '.join(LEVELS)}")
    full = level == "full"
    rng = np.random.default_rng(seed)
    steps = [
        lambda: [check_cross_correlation(rng, pairs=100, max_size=16)],
        lambda: [check_eml_interior(rng)],
        lambda: [check_conv_oracle(rng)],
        lambda: [check_gradients(rng, seed, full)],
        lambda: [check_fixation(rng, seed, full)],
        lambda: check_dropout_statistics(rng),
        lambda: [check_parseval(rng)],
        lambda: [check_bn_correspondence(rng)],
        lambda: [check_dft_oracle(rng)],
        lambda: [check_round_trip(rng)],
    ]
    results: List[CheckResult] = []
    for step in steps:
        for result in step():
            results.append(result)
            if progress is not None:
                progress(result)
    return results
