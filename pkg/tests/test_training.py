import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure project root is on path so we can import tfdmnet
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from tfdmnet.data import Dataset, synthetic_dataset  # noqa: E402
from tfdmnet.errors import ConfigError, DivergenceError  # noqa: E402
from tfdmnet.models import build_network, get_preset  # noqa: E402
from tfdmnet.training import (  # noqa: E402
    METRICS_COLUMNS,
    MetricsLog,
    OptimizerState,
    Snapshot,
    TrainRunConfig,
    analytic_gradients,
    error_rate,
    evaluate,
    gradcheck,
    lr_at,
    optimizer_step,
    softmax_cross_entropy,
    train,
)


# =============================================================================
# Loss
# =============================================================================


def test_cross_entropy_of_uniform_logits():
    loss, grad = softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 2]))
    assert loss == pytest.approx(np.log(3))
    np.testing.assert_allclose(grad, [[-1 / 3, 1 / 6, 1 / 6], [1 / 6, 1 / 6, -1 / 3]])


def test_cross_entropy_is_stable_for_large_logits():
    loss, grad = softmax_cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0)
    assert np.all(np.isfinite(grad))


def test_cross_entropy_rejects_out_of_range_label():
    with pytest.raises(ValueError, match="out of range"):
        softmax_cross_entropy(np.zeros((1, 3)), np.array([3]))


def test_error_rate_breaks_ties_towards_lowest_index():
    logits = np.array([[1.0, 1.0], [0.0, 2.0]])
    assert error_rate(logits, np.array([0, 1])) == 0.0
    assert error_rate(logits, np.array([1, 1])) == 0.5


# =============================================================================
# Optimizers
# =============================================================================


def test_rmsprop_step():
    params = {"w": np.array([1.0])}
    state = OptimizerState(kind="rmsprop", learning_rate=0.1, decay=0.9, epsilon=0.0)
    optimizer_step(params, {"w": np.array([2.0])}, state)
    acc = 0.1 * 4.0
    assert params["w"][0] == pytest.approx(1.0 - 0.1 * 2.0 / np.sqrt(acc))
    assert state.slots["w"][0] == pytest.approx(acc)


def test_sgd_momentum_step():
    params = {"w": np.array([1.0])}
    state = OptimizerState(kind="sgd", learning_rate=0.5, momentum=0.9)
    optimizer_step(params, {"w": np.array([1.0])}, state)
    optimizer_step(params, {"w": np.array([1.0])}, state)
    assert params["w"][0] == pytest.approx(1.0 - 0.5 - (0.9 * 0.5 + 0.5))


def test_non_finite_gradient_leaves_parameters_untouched():
    params = {"a": np.array([1.0]), "b": np.array([2.0])}
    state = OptimizerState(kind="sgd", learning_rate=1.0)
    with pytest.raises(DivergenceError):
        optimizer_step(params, {"a": np.array([1.0]), "b": np.array([np.nan])}, state)
    assert params["a"][0] == 1.0 and params["b"][0] == 2.0


def test_unknown_optimizer():
    with pytest.raises(ConfigError):
        OptimizerState(kind="adam")


def test_lr_schedule_is_piecewise_constant():
    schedule = [(0, 0.01), (60, 0.001), (90, 0.0001)]
    assert lr_at(schedule, 0) == 0.01
    assert lr_at(schedule, 59) == 0.01
    assert lr_at(schedule, 60) == 0.001
    assert lr_at(schedule, 119) == 0.0001


def test_train_run_config_rejects_single_sample_batches():
    with pytest.raises(ConfigError):
        TrainRunConfig(batch_size=1)


# =============================================================================
# Gradient checking
# =============================================================================


def test_gradcheck_passes_on_every_layer_kind(mini_cfg):
    network = build_network(mini_cfg, seed=0, precision="float64")
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 8, 8, 1))
    labels = np.array([0, 1, 2, 1])
    report = gradcheck(network, x, labels, tolerance=1e-4, max_entries=6, seed=0)
    assert report.passed, report.per_layer
    kinds = {name.split(".")[1] for name in report.per_layer}
    assert {"conv", "bn", "eml", "freq_bn", "flatten_head"} <= kinds


def test_gradcheck_catches_a_wrong_gradient(mini_cfg):
    network = build_network(mini_cfg, seed=0, precision="float64")
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 8, 8, 1))
    labels = np.array([2, 1, 0, 0])
    with network.deterministic():
        analytic = analytic_gradients(network, x, labels)
    analytic["04.eml.weights.imag"] = -analytic["04.eml.weights.imag"]
    report = gradcheck(network, x, labels, max_entries=4, analytic=analytic)
    assert not report.passed
    assert "04.eml.weights" in report.failing


def test_gradcheck_on_time_domain_network(small_cnn_cfg):
    network = build_network(small_cnn_cfg, seed=2, precision="float64")
    x = np.random.default_rng(2).standard_normal((4, 8, 8, 1))
    report = gradcheck(network, x, np.array([0, 1, 2, 0]), max_entries=6)
    assert report.passed, report.per_layer


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_gradcheck_accepts_vanishing_bias_gradient_before_batchnorm(small_cnn_cfg, seed):
    network = build_network(small_cnn_cfg, seed=seed, precision="float64")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 8, 8, 1))
    labels = np.array([0, 1, 2, 1])
    with network.deterministic():
        analytic = analytic_gradients(network, x, labels)
    assert np.abs(analytic["00.conv.bias"]).max() < 1e-12
    report = gradcheck(network, x, labels, max_entries=4, seed=seed, analytic=analytic)
    assert report.per_layer["00.conv"] < 1e-4


# =============================================================================
# Train / evaluate
# =============================================================================


def test_linear_model_learns_synthetic_classes(linear_cfg):
    train_ds = synthetic_dataset(200, (8, 8, 1), classes=3, seed=1, split="train")
    test_ds = synthetic_dataset(90, (8, 8, 1), classes=3, seed=1, split="test")
    network = build_network(linear_cfg, seed=1)
    config = TrainRunConfig(epochs=10, batch_size=20, seed=1, lr_schedule=[(0, 1e-2)])
    history = train(network, train_ds, test_ds, config)
    assert len(history) == 10
    assert history[-1].train_loss < history[0].train_loss
    assert history[-1].test_error < 0.2


def test_training_keeps_emls_on_their_support(mini_cfg, synthetic_pair):
    train_ds, test_ds = synthetic_pair
    network = build_network(mini_cfg, seed=0)
    config = TrainRunConfig(epochs=2, batch_size=8, seed=0, lr_schedule=[(0, 1e-3)])
    history = train(network, train_ds, test_ds, config)
    assert all(record.fixation_leakage < 1e-5 for record in history)
    assert history[-1].step == 2 * (64 // 8)


def test_zero_learning_rate_leaves_parameters_bit_identical(mini_cfg, synthetic_pair):
    train_ds, _ = synthetic_pair
    network = build_network(mini_cfg, seed=0)
    before = {name: value.copy() for name, value in network.parameters().items()}
    for kind in ("rmsprop", "sgd"):
        config = TrainRunConfig(epochs=1, batch_size=8, lr_schedule=[(0, 0.0)], optimizer=kind)
        train(network, train_ds, None, config)
    for name, value in network.parameters().items():
        assert value.tobytes() == before[name].tobytes(), name


def test_epoch_records_carry_the_imaginary_residual(mini_cfg, synthetic_pair):
    train_ds, _ = synthetic_pair
    network = build_network(mini_cfg, seed=0)
    history = train(network, train_ds, None, TrainRunConfig(epochs=2, batch_size=8))
    assert all(np.isfinite(record.imag_residual) and record.imag_residual > 0 for record in history)


def test_tfdm_lenet_memorizes_32_samples():
    data = synthetic_dataset(32, (28, 28, 1), classes=10, seed=0)
    network = build_network(get_preset("tfdm-lenet"), seed=0)
    optimizer = OptimizerState(kind="rmsprop", learning_rate=1e-3)
    config = TrainRunConfig(epochs=50, batch_size=32, lr_schedule=[(0, 1e-3)])
    loss = np.inf
    for chunk in range(10):
        train(network, data, None, config, optimizer=optimizer, start_epoch=50 * chunk)
        _, loss = evaluate(network, data, batch_size=32, with_loss=True)
        if loss < 0.01:
            break
    assert loss < 0.01


def test_tfdm_lenet_training_loss_decreases():
    decreasing = 0
    for seed in range(5):
        data = synthetic_dataset(200, (28, 28, 1), classes=10, seed=seed)
        network = build_network(get_preset("tfdm-lenet"), seed=seed)
        config = TrainRunConfig(epochs=5, batch_size=20, seed=seed, lr_schedule=[(0, 1e-4)])
        losses = [record.train_loss for record in train(network, data, None, config)]
        decreasing += all(later < earlier for earlier, later in zip(losses, losses[1:]))
    assert decreasing >= 4


def test_metrics_rows_and_determinism(tmp_path, mini_cfg, synthetic_pair):
    train_ds, test_ds = synthetic_pair
    outputs = []
    for run in ("a", "b"):
        network = build_network(mini_cfg, seed=5)
        metrics = MetricsLog(tmp_path / f"{run}.csv", deterministic=True)
        config = TrainRunConfig(epochs=2, batch_size=8, seed=5, lr_schedule=[(0, 1e-3)], deterministic=True)
        train(network, train_ds, test_ds, config, metrics=metrics)
        outputs.append((tmp_path / f"{run}.csv").read_bytes())
    assert outputs[0] == outputs[1]
    lines = outputs[0].decode().splitlines()
    assert lines[0] == ",".join(METRICS_COLUMNS)
    assert [line.split(",")[2] for line in lines[1:]] == ["train", "test", "train", "test"]
    assert all(line.endswith(",0.000") for line in lines[1:])


def test_eval_every_skips_test_rows(tmp_path, linear_cfg, synthetic_pair):
    train_ds, test_ds = synthetic_pair
    metrics = MetricsLog(tmp_path / "m.csv")
    config = TrainRunConfig(epochs=3, batch_size=16, eval_every=2)
    history = train(build_network(linear_cfg), train_ds, test_ds, config, metrics=metrics)
    assert [record.test_error is None for record in history] == [True, False, True]
    splits = [line.split(",")[2] for line in (tmp_path / "m.csv").read_text().splitlines()[1:]]
    assert splits == ["train", "train", "test", "train"]


def test_divergence_restores_snapshot(linear_cfg, synthetic_pair):
    train_ds, _ = synthetic_pair
    network = build_network(linear_cfg, seed=0)
    config = TrainRunConfig(epochs=2, batch_size=16, lr_schedule=[(0, 1e-3)])
    train(network, train_ds, None, config)
    good = {name: value.copy() for name, value in network.parameters().items()}
    network.parameters()["01.dense.weight"][0, 0] = np.nan
    with pytest.raises(DivergenceError) as excinfo:
        train(network, train_ds, None, config)
    assert isinstance(excinfo.value.checkpoint, Snapshot)
    assert np.isnan(excinfo.value.checkpoint.params["01.dense.weight"][0, 0])
    network.load_state(good, {})
    assert np.all(np.isfinite(network.parameters()["01.dense.weight"]))


def test_evaluate_does_not_depend_on_thread_count(mini_cfg, synthetic_pair):
    _, test_ds = synthetic_pair
    network = build_network(mini_cfg, seed=3)
    single = evaluate(network, test_ds, batch_size=7, threads=1)
    pooled = evaluate(network, test_ds, batch_size=7, threads=4)
    assert single == pooled
    error, loss = evaluate(network, test_ds, batch_size=7, with_loss=True)
    assert error == single and loss > 0


def test_evaluate_rejects_empty_dataset(linear_cfg):
    empty = Dataset(np.zeros((0, 8, 8, 1), dtype=np.float32), np.zeros(0, dtype=np.int64), "test", 3)
    with pytest.raises(ValueError, match="empty"):
        evaluate(build_network(linear_cfg), empty)


def test_snapshot_restore_round_trip(mini_cfg):
    network = build_network(mini_cfg, seed=0)
    optimizer = OptimizerState()
    snapshot = Snapshot.take(network, optimizer, epoch=0, step=0)
    network.parameters()["00.conv.kernel"][...] = 0.0
    optimizer.slots["x"] = np.ones(1)
    snapshot.restore(network, optimizer)
    np.testing.assert_array_equal(network.parameters()["00.conv.kernel"], snapshot.params["00.conv.kernel"])
    assert optimizer.slots == {}
