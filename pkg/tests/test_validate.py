import sys
from dataclasses import replace
from pathlib import Path

import pytest

# Ensure project root is on path so we can import tfdmnet
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from tfdmnet.config import (  # noqa: E402
    LayerSpec,
    NetworkConfig,
    TrainRecipe,
    config_digest,
    dump_config,
    load_config,
    parse_config,
)
from tfdmnet.errors import ConfigError  # noqa: E402
from tfdmnet.models import get_preset  # noqa: E402
from tfdmnet.validate import check_config, format_validation_result, infer_geometry, validate_config  # noqa: E402


SAMPLE_YAML = """
name: tiny-tfdm
input: [8, 8, 1]
classes: 3
dataset: synthetic
assumed:
  - channel count picked for the example
layers:
  - {kind: bridge_to_freq}
  - {kind: eml, k: 3, channels: 2}
  - {kind: split_relu}
  - {kind: flatten_head}
  - {kind: dense, units: 3}
"""


def _cfg(*layers, classes=3, shape=(8, 8, 1)):
    return NetworkConfig("test", shape, classes, tuple(layers))


# =============================================================================
# Config files
# =============================================================================


def test_parse_config_reads_layers_and_defaults():
    cfg = parse_config(SAMPLE_YAML)
    assert cfg.name == "tiny-tfdm"
    assert cfg.input_shape == (8, 8, 1)
    assert cfg.layers[1] == LayerSpec("eml", k=3, channels=2)
    assert cfg.recipe == TrainRecipe()
    assert validate_config(cfg).is_valid


def test_dump_and_parse_preserve_preset():
    cfg = get_preset("tfdm-lenet-no-wf-bn-do")
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert config_digest(again) == config_digest(cfg)


def test_digest_changes_with_content():
    cfg = get_preset("tfdm-lenet")
    assert config_digest(cfg) != config_digest(replace(cfg, classes=11))


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.yaml")


def test_load_config_from_file(tmp_path):
    path = tmp_path / "net.yaml"
    path.write_text(SAMPLE_YAML)
    assert load_config(path).name == "tiny-tfdm"


@pytest.mark.parametrize("text, message", [
    ("name: x\ninput: [8, 8]\nclasses: 3\nlayers: []\n", "input"),
    ("name: x\ninput: [8, 8, 1]\nlayers: []\n", "classes"),
    ("name: x\ninput: [8, 8, 1]\nclasses: 3\nlayers:\n  - {kind: eml, size: 3}\n", "unknown keys"),
    ("name: x\ninput: [8, 8, 1]\nclasses: 3\nlayers:\n  - {k: 3}\n", "kind"),
    ("- just\n- a list\n", "mapping"),
    ("name: [unclosed\n", "YAML"),
])
def test_parse_config_rejects_bad_documents(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text)


def test_recipe_schedule_with_decay():
    recipe = TrainRecipe(optimizer="sgd", learning_rate=0.01, lr_decay_epochs=(60, 90), lr_decay=0.1)
    schedule = recipe.lr_schedule()
    assert [start for start, _ in schedule] == [0, 60, 90]
    assert schedule[2][1] == pytest.approx(1e-4)
    assert recipe.lr_schedule(1.0)[1][1] == pytest.approx(0.1)


# =============================================================================
# Validation
# =============================================================================


def test_every_preset_is_valid():
    for name in ("lenet-cnn", "tfdm-lenet", "vgg-small-tfdm", "vgg-large-tfdm-mixture", "alexnet-cnn"):
        result = validate_config(get_preset(name))
        assert result.is_valid, result.errors


def test_geometry_chains_shapes_through_the_head():
    geometry = check_config(get_preset("tfdm-lenet"))
    eml = [geom for geom in geometry if geom.kind == "eml"]
    assert eml[0].in_shape == (28, 28, 1) and eml[0].out_shape == (28, 28, 6)
    assert eml[1].in_shape == (14, 14, 6)
    dense = [geom for geom in geometry if geom.kind == "dense"]
    assert dense[0].in_shape == (7 * 7 * 16,) and dense[0].branch
    assert dense[-1].in_shape == (2 * 84,) and not dense[-1].branch


def test_freq_layer_in_time_domain_is_rejected():
    result = validate_config(_cfg(
        LayerSpec("eml", k=3, channels=2), LayerSpec("flatten_head"), LayerSpec("dense", units=3),
    ))
    assert not result.is_valid
    assert result.errors[0].startswith("layer 0 (eml)")


def test_second_bridge_is_rejected():
    result = validate_config(_cfg(
        LayerSpec("bridge_to_freq"), LayerSpec("bridge_to_time"), LayerSpec("bridge_to_freq"),
        LayerSpec("flatten_head"), LayerSpec("dense", units=3),
    ))
    assert "layer 2" in result.errors[0]


def test_oversized_eml_filter_is_rejected():
    with pytest.raises(ConfigError, match="does not fit"):
        check_config(_cfg(
            LayerSpec("bridge_to_freq"), LayerSpec("eml", k=9, channels=2),
            LayerSpec("flatten_head"), LayerSpec("dense", units=3),
        ))


def test_strided_eml_is_rejected():
    result = validate_config(_cfg(
        LayerSpec("bridge_to_freq"), LayerSpec("eml", k=3, channels=2, stride=2),
        LayerSpec("flatten_head"), LayerSpec("dense", units=3),
    ))
    assert "strided" in result.errors[0]


def test_dropout_rate_out_of_range():
    result = validate_config(_cfg(
        LayerSpec("flatten_head"), LayerSpec("dropout", p=1.0), LayerSpec("dense", units=3),
    ))
    assert "dropout rate" in result.errors[0]


def test_last_layer_must_emit_class_logits():
    result = validate_config(_cfg(LayerSpec("flatten_head"), LayerSpec("dense", units=4)))
    assert "logits" in result.errors[0]
    result = validate_config(_cfg(LayerSpec("conv", k=3, channels=2)))
    assert "flatten_head" in result.errors[0]


def test_dense_before_flatten_is_rejected():
    result = validate_config(_cfg(LayerSpec("dense", units=3)))
    assert "flatten_head" in result.errors[0]


def test_unknown_kind_and_bad_input():
    assert "unknown kind" in validate_config(_cfg(LayerSpec("attention"))).errors[0]
    assert not validate_config(_cfg(LayerSpec("flatten_head"), shape=(0, 8, 1))).is_valid
    assert not validate_config(_cfg(LayerSpec("flatten_head"), classes=1)).is_valid


def test_pool_window_larger_than_map():
    result = validate_config(_cfg(
        LayerSpec("maxpool", window=9), LayerSpec("flatten_head"), LayerSpec("dense", units=3),
    ))
    assert "exceeds" in result.errors[0]


def test_one_by_one_eml_warns_and_assumed_layers_inform():
    cfg = _cfg(
        LayerSpec("bridge_to_freq"), LayerSpec("eml", k=1, channels=2, assumed=True),
        LayerSpec("flatten_head"), LayerSpec("dense", units=3),
    )
    geometry, result = infer_geometry(cfg)
    assert result.is_valid
    assert any("1x1" in warning for warning in result.warnings)
    assert any("assumed" in note for note in result.info)
    text = format_validation_result(result)
    assert "Warnings:" in text and "Config is valid (with warnings)" in text


def test_format_invalid_result_lists_errors():
    result = validate_config(_cfg(LayerSpec("dense", units=3)))
    text = format_validation_result(result, verbose=False)
    assert "Errors (must fix):" in text
    assert "Config is invalid (1 error(s))" in text
