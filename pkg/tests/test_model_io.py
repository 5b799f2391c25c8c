import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ffnrep.config import ModelConfig, preset_config
from ffnrep.errors import CorruptionError, FormatError, VersionError
from ffnrep.initializers import init_weights, truncated_normal_std
from ffnrep.model import build_model, freeze_model, randomize_batchnorms
from ffnrep.model_io import MAGIC, decode_model, encode_model, load_model, models_identical, save_model


def test_init_is_deterministic_and_name_keyed():
    a = init_weights((4, 5), 0, "blocks.0.ffn.fc1.weight")
    b = init_weights((4, 5), 0, "blocks.0.ffn.fc1.weight")
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, init_weights((4, 5), 0, "blocks.1.ffn.fc1.weight"))
    assert not np.array_equal(a, init_weights((4, 5), 1, "blocks.0.ffn.fc1.weight"))


def test_init_statistics():
    n = 100_000
    x = init_weights((n,), 42, "stat")
    sigma = truncated_normal_std()
    assert abs(x.mean()) <= 3 * sigma / np.sqrt(n)
    assert x.std() == pytest.approx(sigma, rel=0.10)
    assert np.all(np.abs(x) <= 0.04)


def test_truncated_std_value():
    # std of N(0, 0.02) clipped to +-2 sigma: 0.02 * sqrt(1 - 2*2*phi(2)/(2*Phi(2)-1))
    assert truncated_normal_std() == pytest.approx(0.02 * 0.8796, rel=1e-3)


@pytest.mark.parametrize("preset", ["deit-tiny", "pool-tiny"])
@pytest.mark.parametrize("form", ["vanilla-ln", "idle-train", "idle-infer"])
def test_round_trip_bit_exact(preset, form, tmp_path):
    m = build_model(preset_config(preset, depth=2, ffn_form=form))
    if form == "idle-train":
        randomize_batchnorms(m, 1)
    path = tmp_path / "m.rpwt"
    save_model(m, path)
    back = load_model(path)
    assert models_identical(m, back)
    assert encode_model(back) == path.read_bytes()


def test_infer_layout_survives(tmp_path):
    m = build_model(preset_config("deit-tiny", depth=1, ffn_form="idle-infer", idle_ratio=0.5))
    save_model(m, tmp_path / "i.rpwt")
    ffn = load_model(tmp_path / "i.rpwt").blocks[0].ffn
    assert ffn.w_act_in.shape == (192, 384)
    assert ffn.w_act_out.shape == (384, 192)
    assert ffn.w_merged.shape == (192, 192)


def test_frozen_flags_round_trip():
    m = build_model(preset_config("deit-tiny", depth=2), np.float64)
    m.blocks[1].ffn.bn2.freeze()
    back = decode_model(encode_model(m))
    assert not back.blocks[0].ffn.bn1.frozen
    assert back.blocks[1].ffn.bn2.frozen
    assert models_identical(m, back)
    freeze_model(back)
    assert not models_identical(m, back)


def test_construction_order_does_not_matter():
    cfg = preset_config("deit-tiny", depth=2)
    a = build_model(cfg)
    init_weights((3, 3), 0, "unrelated")  # no global stream to disturb
    b = build_model(cfg)
    assert encode_model(a) == encode_model(b)


def _blob():
    return encode_model(build_model(preset_config("deit-tiny", depth=1)))


def test_bad_magic():
    data = b"XXXX" + _blob()[4:]
    with pytest.raises(FormatError, match="magic"):
        decode_model(data)


def test_unknown_version():
    data = MAGIC + struct.pack("<I", 99) + _blob()[8:]
    with pytest.raises(VersionError):
        decode_model(data)


@pytest.mark.parametrize("cut", [6, 40, 5000, -3])
def test_truncation_reports_offset(cut):
    data = _blob()
    with pytest.raises(CorruptionError) as exc:
        decode_model(data[:cut])
    assert exc.value.offset is not None
    assert "offset" in str(exc.value)


def test_trailing_bytes_rejected():
    with pytest.raises(CorruptionError):
        decode_model(_blob() + b"\0")


@given(st.integers(1, 4), st.sampled_from([8, 16]), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_small_config_round_trip(depth, c, theta, seed):
    cfg = ModelConfig(depth=depth, embed_dim=c, heads=2, idle_ratio=theta, patch_size=2, image_size=4, num_classes=3, seed=seed)
    m = build_model(cfg, np.float64)
    assert models_identical(m, decode_model(encode_model(m)))
