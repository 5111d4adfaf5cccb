"""Checkpoint serialization: byte-exact round trips, config fidelity, and
corruption diagnostics."""

import numpy as np
import pytest

from hotspotnet.backbone import BackboneConfig
from hotspotnet.checkpoint import (config_from_text, config_to_text,
                                   load_checkpoint, save_checkpoint)
from hotspotnet.head import HeadConfig
from hotspotnet.model import Detector, ModelConfig
from hotspotnet.trainer import Adam, TrainConfig


def small_config():
    return ModelConfig(backbone=BackboneConfig(input_resolution=(32, 32)),
                       head=HeadConfig())


class TestConfigText:
    def test_round_trip(self):
        cfg = small_config()
        text = config_to_text(cfg)
        back = config_from_text(text)
        assert config_to_text(back) == text
        assert back.backbone.input_resolution == (32, 32)
        assert back.head.size_ranges == ((0.0, 0.1), (0.1, 0.3), (0.3, 1.0))


class TestRoundTrip:
    def test_save_load_save_byte_identical(self, tmp_path):
        model = Detector(small_config(), seed=17)
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_checkpoint(p1, model)
        loaded, state = load_checkpoint(p1)
        assert state is None
        save_checkpoint(p2, loaded)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_parameters_restored_exactly(self, tmp_path):
        model = Detector(small_config(), seed=23)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        for a, b in zip(model.params(), loaded.params()):
            assert a.name == b.name
            assert np.array_equal(a.value, b.value)

    def test_adam_state_round_trip(self, tmp_path):
        model = Detector(small_config(), seed=2)
        adam = Adam(model.params())
        cfg = TrainConfig(epochs=1)
        for p in model.params():
            p.grad[...] = 0.01
        adam.apply(model.params(), 1e-3, cfg)
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_checkpoint(p1, model, adam)
        loaded, state = load_checkpoint(p1)
        assert state is not None and state["step"] == 1
        adam2 = Adam(loaded.params())
        adam2.step = state["step"]
        adam2.m, adam2.v = state["m"], state["v"]
        save_checkpoint(p2, loaded, adam2)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_forward_identical_after_reload(self, tmp_path):
        model = Detector(small_config(), seed=5)
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        x = np.random.default_rng(0).random((1, 32, 32, 3), dtype=np.float32)
        for a, b in zip(model.forward(x), loaded.forward(x)):
            assert np.array_equal(a, b)


class TestDiagnostics:
    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.ckpt"
        p.write_bytes(b"NOTACKPT" + bytes(32))
        with pytest.raises(ValueError, match="bad magic"):
            load_checkpoint(str(p))
