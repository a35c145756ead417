import numpy as np
import pytest

from remar_ds.autodiff.serialize import FormatError
from remar_ds.checkpoint import checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from remar_ds.network import ModelConfig, ReMARDS


def _trained_like(cfg, seed=0):
    model = ReMARDS(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    for bn in (m for m in model.modules() if hasattr(m, "running_mean")):
        bn.running_mean[...] = rng.standard_normal(bn.running_mean.shape)
        bn.running_var[...] = rng.uniform(0.5, 2.0, bn.running_var.shape)
    return model


@pytest.mark.parametrize("variant", ["full", "+", "++++"])
def test_roundtrip_bit_identical(tmp_path, variant):
    cfg = ModelConfig(levels=3, base_channels=4, image_size=32).variant(variant)
    model = _trained_like(cfg)
    save_checkpoint(tmp_path / "m.ckpt", model, {"epoch": "7"})
    loaded, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.config == cfg and meta == {"epoch": "7"}
    for (k, a), (k2, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert k == k2 and np.array_equal(a, b)
    x = np.random.default_rng(1).standard_normal((2, 1, 32, 32))
    assert np.array_equal(model(x, mode="eval").data, loaded(x, mode="eval").data)


def test_bytes_deterministic():
    cfg = ModelConfig(levels=2, base_channels=4)
    assert checkpoint_bytes(ReMARDS(cfg, seed=1)) == checkpoint_bytes(ReMARDS(cfg, seed=1))


def test_float64_model_stored_as_float32(tmp_path):
    cfg = ModelConfig(levels=2, base_channels=4, precision="float64")
    model = _trained_like(cfg)
    save_checkpoint(tmp_path / "m.ckpt", model)
    loaded, _ = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.config.precision == "float64"
    for k, a in model.state_dict().items():
        b = loaded.state_dict()[k]
        assert b.dtype == np.float64
        np.testing.assert_array_equal(b, np.asarray(a, dtype=np.float32).astype(np.float64))


def test_precision_override(tmp_path):
    model = _trained_like(ModelConfig(levels=2, base_channels=4))
    save_checkpoint(tmp_path / "m.ckpt", model)
    loaded, _ = load_checkpoint(tmp_path / "m.ckpt", precision="float64")
    assert loaded.config.precision == "float64"
    assert all(v.dtype == np.float64 for v in loaded.state_dict().values())


def test_corrupt_header_rejected():
    data = checkpoint_bytes(ReMARDS(ModelConfig(levels=2, base_channels=4)))
    with pytest.raises(FormatError):
        parse_checkpoint(b"X" + data[1:])


def test_truncated_payload_rejected():
    data = checkpoint_bytes(ReMARDS(ModelConfig(levels=2, base_channels=4)))
    with pytest.raises(FormatError):
        parse_checkpoint(data[:-10])


def test_mismatched_architecture_rejected():
    data = checkpoint_bytes(ReMARDS(ModelConfig(levels=2, base_channels=4)))
    data = data.replace(b"base_channels=4", b"base_channels=8", 1)
    with pytest.raises((FormatError, ValueError, KeyError)):
        cfg, state, _ = parse_checkpoint(data)
        ReMARDS(cfg).load_state_dict(state)
