import json
import sys
from pathlib import Path

import pytest

# Ensure project root is on path so we can import tfdmnet
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from tfdmnet.cli import (  # noqa: E402
    EXIT_DIVERGED,
    EXIT_INPUT_ERROR,
    EXIT_OK,
    build_parser,
    main,
)

LINEAR_YAML = """
name: cli-linear
input: [8, 8, 1]
classes: 3
dataset: synthetic
recipe:
  epochs: 2
  batch_size: 16
  learning_rate: 0.01
layers:
  - {kind: flatten_head}
  - {kind: dense, units: 3}
"""


def _values(stdout: str) -> dict:
    pairs = (line.split("=", 1) for line in stdout.splitlines() if "=" in line)
    return {key: value for key, value in pairs}


@pytest.fixture
def linear_config(tmp_path) -> Path:
    path = tmp_path / "linear.yaml"
    path.write_text(LINEAR_YAML)
    return path


def test_no_command_prints_help(capsys):
    assert main([]) == EXIT_OK
    assert "count-ops" in capsys.readouterr().out


def test_presets_listing_and_show(capsys):
    assert main(["presets"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "tfdm-lenet" in out and "alias of" in out
    rows = {line.split()[0]: line for line in out.splitlines() if line.strip()}
    assert "freq" in rows["tfdm-lenet"].split("domains=")[1]
    assert "freq" not in rows["lenet-cnn"].split("domains=")[1]
    assert main(["presets", "--show", "tfdm-lenet"]) == EXIT_OK
    captured = capsys.readouterr()
    assert captured.out.startswith("name: tfdm-lenet")
    assert "Config is valid" in captured.err


def test_presets_show_unknown_name(capsys):
    assert main(["presets", "--show", "resnet"]) == EXIT_INPUT_ERROR
    assert "Available presets" in capsys.readouterr().err


def test_count_ops_single_and_compare(tmp_path, capsys):
    assert main(["count-ops", "--preset", "lenet-cnn"]) == EXIT_OK
    values = _values(capsys.readouterr().out)
    assert values["mult_ops"] == "693000"

    csv_path = tmp_path / "ops.csv"
    report_path = tmp_path / "ops.txt"
    code = main(["count-ops", "--preset", "tfdm-lenet", "--compare", "lenet-cnn",
                 "--csv", str(csv_path), "--report", str(report_path)])
    assert code == EXIT_OK
    values = _values(capsys.readouterr().out)
    assert values["first_mult_ops"] == "304080"
    assert float(values["ratio"]) < 1.0
    assert csv_path.read_text().startswith("row,first_layer")
    assert "ratio (mult)" in report_path.read_text()
    manifest = json.loads((tmp_path / "ops.manifest.json").read_text())
    assert manifest["command"] == "count-ops" and manifest["compare"] == "lenet-cnn"
    assert manifest["config"] == "tfdm-lenet" and "numpy" in manifest["versions"]


def test_count_ops_unknown_comparison(capsys):
    assert main(["count-ops", "--preset", "tfdm-lenet", "--compare", "resnet"]) == EXIT_INPUT_ERROR


def test_invalid_preset_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["count-ops", "--preset", "resnet"])
    assert excinfo.value.code == 2


def test_preset_and_config_are_exclusive(linear_config):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["count-ops", "--preset", "lenet-cnn", "--config", str(linear_config)])


def test_verify_fast(capsys):
    assert main(["verify", "--level", "fast", "--seed", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS ") == 12
    assert _values(out)["failed"] == "0"


def test_train_then_eval(tmp_path, linear_config, capsys):
    out_dir = tmp_path / "run"
    code = main(["train", "--config", str(linear_config), "--out", str(out_dir), "--seed", "2",
                 "--subset", "64", "--test-subset", "32", "--deterministic"])
    assert code == EXIT_OK
    values = _values(capsys.readouterr().out)
    assert values["epochs"] == "2"
    assert float(values["test_error"]) <= 1.0

    for name in ("config.yaml", "manifest.json", "metrics.csv", "last.ckpt", "best.ckpt"):
        assert (out_dir / name).is_file(), name
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["seed"] == 2 and manifest["deterministic"] is True
    assert manifest["train_samples"] == 64
    assert len(manifest["config_digest"]) == 64
    assert len((out_dir / "metrics.csv").read_text().splitlines()) == 1 + 2 * 2

    assert manifest["results"]["epochs_run"] == 2
    assert float(values["imag_residual"]) == manifest["results"]["imag_residual"] == 0.0

    assert main(["eval", "--checkpoint", str(out_dir / "best.ckpt"), "--subset", "32"]) == EXIT_OK
    error = _values(capsys.readouterr().out)["test_error"]
    eval_manifest = json.loads((out_dir / "best.eval.json").read_text())
    assert eval_manifest["command"] == "eval" and eval_manifest["seed"] == 2
    assert eval_manifest["config_digest"] == manifest["config_digest"]
    assert f"{eval_manifest['results']['test_error']:.6g}" == error


def test_train_missing_data_dir(tmp_path, capsys):
    code = main(["train", "--preset", "tfdm-lenet", "--data-dir", str(tmp_path / "absent"),
                 "--out", str(tmp_path / "run")])
    assert code == EXIT_INPUT_ERROR
    assert "data directory not found" in capsys.readouterr().err


def test_train_needs_a_data_dir_for_mnist(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("TFDM_DATA_DIR", raising=False)
    code = main(["train", "--preset", "tfdm-lenet", "--out", str(tmp_path / "run")])
    assert code == EXIT_INPUT_ERROR
    assert "TFDM_DATA_DIR" in capsys.readouterr().err


def test_train_divergence_exit_code(tmp_path, linear_config, capsys):
    code = main(["train", "--config", str(linear_config), "--out", str(tmp_path / "run"),
                 "--subset", "64", "--test-subset", "32", "--lr", "1e308", "--optimizer", "sgd",
                 "--deterministic"])
    assert code == EXIT_DIVERGED
    assert (tmp_path / "run" / "last_good.ckpt").is_file()
    assert "diverged" in capsys.readouterr().err


def test_eval_corrupt_checkpoint(tmp_path, capsys):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"TFDM" + b"\x00" * 64)
    assert main(["eval", "--checkpoint", str(path)]) == EXIT_INPUT_ERROR
    assert capsys.readouterr().err


def test_eval_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "absent.ckpt")]) == EXIT_INPUT_ERROR


def test_bad_config_file(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("name: bad\ninput: [8, 8, 1]\nclasses: 3\nlayers:\n  - {kind: dense, units: 3}\n")
    assert main(["count-ops", "--config", str(path)]) == EXIT_INPUT_ERROR
    assert "Config is invalid" in capsys.readouterr().err
