"""
Training

Loss, the RMSProp / SGD optimizers, finite-difference gradient checking, and
the train / evaluate loops.

After every optimizer step each EML with Weight Fixation enabled is projected
back onto its K x K time-domain support.
"""

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from tfdmnet.data import Dataset, batches
from tfdmnet.errors import ConfigError, DivergenceError, NonFiniteError, ShapeError

__all__ = [
    "OptimizerState",
    "TrainRunConfig",
    "EpochRecord",
    "Snapshot",
    "GradcheckReport",
    "MetricsLog",
    "softmax_cross_entropy",
    "error_rate",
    "optimizer_step",
    "lr_at",
    "analytic_gradients",
    "gradcheck",
    "train",
    "evaluate",
    "METRICS_COLUMNS",
]

METRICS_COLUMNS = ("epoch", "step", "split", "loss", "error", "lr", "seconds")
OPTIMIZERS = ("rmsprop", "sgd")


# =============================================================================
# Loss
# =============================================================================


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient (softmax - onehot) / B."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"logits must be (batch, classes >= 2), got {logits.shape}")
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise ShapeError(f"labels must be ({batch},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"label out of range [0, {classes}): {labels.min()}..{labels.max()}")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(batch)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, (grad / batch).astype(logits.dtype, copy=False)


def error_rate(logits: np.ndarray, labels: np.ndarray) -> float:
    """Top-1 error; argmax ties go to the lowest class index."""
    return float(np.mean(np.argmax(logits, axis=1) != labels))


# =============================================================================
# Optimizers
# =============================================================================


@dataclass
class OptimizerState:
    """
    rmsprop: acc <- decay*acc + (1-decay)*g^2;  p <- p - lr*g/sqrt(acc + eps)
    sgd:     v <- momentum*v - lr*g;            p <- p + v
    """
    kind: str = "rmsprop"
    learning_rate: float = 1e-4
    momentum: float = 0.9
    decay: float = 0.9
    epsilon: float = 1e-7
    weight_decay: float = 0.0
    slots: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer '{self.kind}'. Expected one of: {', '.join(OPTIMIZERS)}")


def optimizer_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
                   state: OptimizerState) -> None:
    """
    Update params in place. Every gradient is checked before any parameter
    moves, so a rejected step leaves the network untouched. An all-zero step
    (lr = 0) is not applied, which keeps signed zeros bit-identical.
    """
    for name, grad in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter '{name}'")
        if grad.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient {grad.shape} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient in {name}")

    lr = state.learning_rate
    for name, grad in grads.items():
        param = params[name]
        if state.weight_decay:
            grad = grad + state.weight_decay * param
        slot = state.slots.get(name)
        if slot is None:
            slot = state.slots[name] = np.zeros_like(param)
        if state.kind == "rmsprop":
            slot *= state.decay
            slot += (1.0 - state.decay) * grad * grad
            delta = (lr * grad / np.sqrt(slot + state.epsilon)).astype(param.dtype, copy=False)
            if delta.any():
                param -= delta
        else:
            slot *= state.momentum
            slot -= lr * grad
            if slot.any():
                param += slot


def lr_at(schedule: Sequence[Tuple[int, float]], epoch: int) -> float:
    """Piecewise-constant schedule: the lr of the last entry starting at or before epoch."""
    lr = schedule[0][1]
    for start, value in schedule:
        if epoch >= start:
            lr = value
    return lr


# =============================================================================
# Gradient checking
# =============================================================================


@dataclass
class GradcheckReport:
    tolerance: float
    per_layer: Dict[str, float] = field(default_factory=dict)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.per_layer.values())

    @property
    def failing(self) -> List[str]:
        return [name for name, err in self.per_layer.items() if err >= self.tolerance]

    @property
    def max_error(self) -> float:
        return max(self.per_layer.values(), default=0.0)


def _loss(network, x: np.ndarray, labels: np.ndarray) -> float:
    return softmax_cross_entropy(network.forward(x, training=True), labels)[0]


def analytic_gradients(network, x: np.ndarray, labels: np.ndarray) -> Dict[str, np.ndarray]:
    _, grad = softmax_cross_entropy(network.forward(x, training=True), labels)
    network.backward(grad)
    return {name: value.copy() for name, value in network.gradients().items()}


def _layer_of(param_name: str) -> str:
    return param_name.rsplit(".", 1)[0]


def gradcheck(network, x: np.ndarray, labels: np.ndarray, tolerance: float = 1e-4,
              step: float = 1e-3, max_entries: Optional[int] = None, seed: int = 0,
              analytic: Optional[Dict[str, np.ndarray]] = None,
              atol: float = 1e-8) -> GradcheckReport:
    """
    Compare analytic gradients with central differences (loss(p+h) - loss(p-h)) / 2h.

    Runs with dropout disabled and BatchNorm on batch statistics. An entry that
    misses the tolerance is retried with h/10 and h/100 before it counts, which
    rules out truncation error and most ReLU / max-pool kinks. Relative error is
    |a - n| / max(|a|, |n|, 1e-3 * largest |a| in the tensor, 1e-10), and 0
    when |a - n| < atol: a bias feeding BatchNorm has a true gradient of zero
    that finite differences only resolve down to round-off.
    max_entries samples that many entries per tensor (all when None).
    """
    report = GradcheckReport(tolerance=tolerance)
    rng = np.random.default_rng(seed)
    with network.deterministic():
        if analytic is None:
            analytic = analytic_gradients(network, x, labels)
        params = network.parameters()
        for name, param in params.items():
            grad = analytic[name]
            scale = float(np.abs(grad).max()) if grad.size else 0.0
            floor = max(1e-3 * scale, 1e-10)
            flat = param.reshape(-1)
            entries = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            worst = 0.0
            for entry in entries:
                a = float(grad.reshape(-1)[entry])
                best = np.inf
                for h in (step, step / 10, step / 100):
                    original = flat[entry]
                    flat[entry] = original + h
                    plus = _loss(network, x, labels)
                    flat[entry] = original - h
                    minus = _loss(network, x, labels)
                    flat[entry] = original
                    n = (plus - minus) / (2 * h)
                    diff = abs(a - n)
                    rel = 0.0 if diff < atol else diff / max(abs(a), abs(n), floor)
                    best = min(best, rel)
                    if best < tolerance:
                        break
                worst = max(worst, best)
                report.checked += 1
            layer = _layer_of(name)
            report.per_layer[layer] = max(report.per_layer.get(layer, 0.0), worst)
    return report


# =============================================================================
# Train / evaluate
# =============================================================================


@dataclass
class TrainRunConfig:
    epochs: int = 20
    batch_size: int = 100
    seed: int = 0
    lr_schedule: List[Tuple[int, float]] = field(default_factory=lambda: [(0, 1e-4)])
    optimizer: str = "rmsprop"
    momentum: float = 0.9
    weight_decay: float = 0.0
    eval_every: int = 1
    eval_batch_size: int = 500
    threads: int = 1
    deterministic: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch size must be >= 2 for BatchNorm, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr_schedule:
            raise ConfigError("learning-rate schedule is empty")


@dataclass
class EpochRecord:
    epoch: int
    step: int
    train_loss: float
    train_error: float
    test_error: Optional[float]
    test_loss: Optional[float]
    lr: float
    seconds: float
    fixation_leakage: float
    imag_residual: float = 0.0


@dataclass
class Snapshot:
    """Copies of parameters, buffers and optimizer slots at a known-good point."""
    epoch: int
    step: int
    params: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]
    optimizer: OptimizerState

    @classmethod
    def take(cls, network, optimizer: OptimizerState, epoch: int, step: int) -> "Snapshot":
        slots = {name: value.copy() for name, value in optimizer.slots.items()}
        return cls(
            epoch=epoch,
            step=step,
            params={name: value.copy() for name, value in network.parameters().items()},
            buffers={name: value.copy() for name, value in network.buffers().items()},
            optimizer=OptimizerState(
                kind=optimizer.kind, learning_rate=optimizer.learning_rate,
                momentum=optimizer.momentum, decay=optimizer.decay, epsilon=optimizer.epsilon,
                weight_decay=optimizer.weight_decay, slots=slots,
            ),
        )

    def restore(self, network, optimizer: OptimizerState) -> None:
        network.load_state(self.params, self.buffers)
        optimizer.slots = {name: value.copy() for name, value in self.optimizer.slots.items()}


class MetricsLog:
    """Append-only metrics.csv with columns epoch,step,split,loss,error,lr,seconds."""

    def __init__(self, path: Path, deterministic: bool = False):
        self.path = Path(path)
        self.deterministic = deterministic
        if not self.path.exists():
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(METRICS_COLUMNS)

    def write(self, epoch: int, step: int, split: str, loss: float, error: float,
              lr: float, seconds: float) -> None:
        seconds = 0.0 if self.deterministic else seconds
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow([
                epoch, step, split, f"{loss:.8g}", f"{error:.6f}", f"{lr:.6g}", f"{seconds:.3f}",
            ])


def _max_leakage(network) -> float:
    layers = [layer for layer in network.eml_layers() if layer.fixation]
    return max((layer.weights.outside_energy_fraction() for layer in layers), default=0.0)


def evaluate(network, ds: Dataset, batch_size: int = 500, threads: int = 1,
             with_loss: bool = False):
    """
    Top-1 error in inference mode (dropout identity, BN running statistics).

    Batches may run on a thread pool; results come back in batch order, so the
    error does not depend on the thread count. with_loss=True returns
    (error, mean loss).
    """
    if len(ds) == 0:
        raise ValueError(f"cannot evaluate on an empty {ds.split} dataset")
    work = list(batches(ds, batch_size, training=False))

    def run(batch):
        images, labels = batch
        logits = network.forward(images, training=False)
        loss, _ = softmax_cross_entropy(logits, labels)
        return int(np.sum(np.argmax(logits, axis=1) != labels)), loss * len(labels)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, work))
    else:
        results = [run(batch) for batch in work]
    wrong = sum(r[0] for r in results)
    loss_sum = sum(r[1] for r in results)
    error = wrong / len(ds)
    return (error, loss_sum / len(ds)) if with_loss else error


def train(network, train_ds: Dataset, test_ds: Optional[Dataset], config: TrainRunConfig,
          metrics: Optional[MetricsLog] = None, optimizer: Optional[OptimizerState] = None,
          on_epoch_end: Optional[Callable[[EpochRecord, OptimizerState], None]] = None,
          log: Optional[Callable[[str], None]] = None, start_epoch: int = 0) -> List[EpochRecord]:
    """
    Run config.epochs epochs of forward -> loss -> backward -> optimizer step
    -> Weight Fixation, evaluating on test_ds every eval_every epochs.

    Each EpochRecord carries the largest imaginary residual the network's
    iDFT bridges discarded during the epoch's training steps.

    A non-finite loss or gradient restores the last snapshot (taken after each
    completed epoch) and raises DivergenceError carrying it.
    """
    optimizer = optimizer or OptimizerState(
        kind=config.optimizer, learning_rate=lr_at(config.lr_schedule, 0),
        momentum=config.momentum, weight_decay=config.weight_decay,
    )
    history: List[EpochRecord] = []
    step = 0
    snapshot = Snapshot.take(network, optimizer, start_epoch, step)

    for epoch in range(start_epoch, start_epoch + config.epochs):
        optimizer.learning_rate = lr_at(config.lr_schedule, epoch)
        started = time.perf_counter()
        losses, wrong, seen = [], 0, 0
        residual = 0.0
        for images, labels in batches(train_ds, config.batch_size, config.seed, epoch, training=True):
            try:
                logits = network.forward(images, training=True)
            except NonFiniteError as e:
                snapshot.restore(network, optimizer)
                raise DivergenceError(f"{e} at epoch {epoch + 1}, step {step}", snapshot) from None
            residual = max(residual, network.max_imag_residual())
            loss, grad = softmax_cross_entropy(logits, labels)
            if not np.isfinite(loss):
                snapshot.restore(network, optimizer)
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, step {step}", snapshot)
            network.backward(grad)
            try:
                optimizer_step(network.parameters(), network.gradients(), optimizer)
            except DivergenceError as e:
                snapshot.restore(network, optimizer)
                raise DivergenceError(f"{e} at epoch {epoch + 1}, step {step}", snapshot) from None
            network.apply_fixation()
            step += 1
            losses.append(loss)
            wrong += int(np.sum(np.argmax(logits, axis=1) != labels))
            seen += len(labels)

        seconds = time.perf_counter() - started
        train_loss = float(np.mean(losses)) if losses else float("nan")
        train_error = wrong / seen if seen else float("nan")
        test_error = test_loss = None
        if test_ds is not None and len(test_ds) and (epoch + 1 - start_epoch) % config.eval_every == 0:
            test_error, test_loss = evaluate(
                network, test_ds, config.eval_batch_size, config.threads, with_loss=True
            )
        record = EpochRecord(
            epoch=epoch + 1, step=step, train_loss=train_loss, train_error=train_error,
            test_error=test_error, test_loss=test_loss, lr=optimizer.learning_rate,
            seconds=seconds, fixation_leakage=_max_leakage(network), imag_residual=residual,
        )
        history.append(record)
        if metrics is not None:
            metrics.write(record.epoch, step, "train", train_loss, train_error, record.lr, seconds)
            if test_error is not None:
                metrics.write(record.epoch, step, "test", test_loss, test_error, record.lr, seconds)
        if log is not None:
            shown = "-" if test_error is None else f"{test_error:.4f}"
            log(f"epoch {record.epoch}: loss={train_loss:.4f} train_err={train_error:.4f} "
                f"test_err={shown} lr={record.lr:.3g} imag_residual={residual:.2e}")
        snapshot = Snapshot.take(network, optimizer, epoch + 1, step)
        if on_epoch_end is not None:
            on_epoch_end(record, optimizer)

    return history
