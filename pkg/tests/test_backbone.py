"""Backbone: table-exact shapes, deterministic init, parameter accounting,
receptive-field locality, and batch invariance."""

import numpy as np
import pytest

from hotspotnet.backbone import BackboneConfig, build_backbone

EXPECTED_224 = {
    "conv1": (112, 112, 32),
    "block1.depthwise": (112, 112, 32),
    "block1.pointwise": (112, 112, 64),
    "block1.se": (112, 112, 64),
    "block2.depthwise": (56, 56, 64),
    "block2.pointwise": (56, 56, 128),
    "block2.se": (56, 56, 128),
    "block3.depthwise": (28, 28, 128),
    "block3.pointwise": (28, 28, 256),
    "block3.se": (28, 28, 256),
}


class TestConfig:
    def test_default_strides_and_widths(self):
        cfg = BackboneConfig()
        assert cfg.stage_widths == (32, 64, 128, 256)
        assert cfg.total_stride() == 8

    def test_indivisible_resolution_rejected(self):
        with pytest.raises(ValueError, match="not divisible"):
            BackboneConfig(input_resolution=(225, 225))

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError, match="equal length"):
            BackboneConfig(stage_widths=(32, 64), stage_strides=(2, 1, 2))


class TestBuild:
    def test_stem_is_3x3_stride2(self):
        bb = build_backbone(BackboneConfig(), seed=0)
        assert bb.stem.w.value.shape == (3, 3, 3, 32)
        assert bb.stem.stride == 2

    def test_same_seed_bit_identical(self):
        a = build_backbone(BackboneConfig(), seed=11)
        b = build_backbone(BackboneConfig(), seed=11)
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa.value, pb.value)

    def test_different_seed_differs(self):
        a = build_backbone(BackboneConfig(), seed=1)
        b = build_backbone(BackboneConfig(), seed=2)
        assert not np.array_equal(a.stem.w.value, b.stem.w.value)

    def test_conv1_parameter_count(self):
        bb = build_backbone(BackboneConfig(), seed=0)
        assert bb.stem.w.value.size + bb.stem.b.value.size == 896

    def test_layer_table_counts(self):
        rows = {r.name: r for r in build_backbone(BackboneConfig(), 0).layer_table()}
        assert rows["conv1"].params == 896
        assert rows["block1.depthwise"].params == 3 * 3 * 32 + 32 == 320

    def test_layer_table_matches_allocations(self):
        bb = build_backbone(BackboneConfig(), seed=0)
        table_total = sum(r.params for r in bb.layer_table())
        actual_total = sum(p.value.size for p in bb.params())
        assert table_total == actual_total


class TestForward:
    def test_table_shapes_at_224(self):
        bb = build_backbone(BackboneConfig(), seed=0)
        rows = {r.name: r.out_shape for r in bb.layer_table()}
        for name, shape in EXPECTED_224.items():
            assert rows[name] == shape, name
        x = np.random.default_rng(0).random((1, 224, 224, 3), dtype=np.float32)
        feats = bb.forward(x)
        assert feats.shallow.shape == (1, 112, 112, 64)
        assert feats.intermediate.shape == (1, 56, 56, 128)
        assert feats.deep.shape == (1, 28, 28, 256)

    def test_zero_image_zero_features(self):
        bb = build_backbone(BackboneConfig(input_resolution=(32, 32)), seed=0)
        feats = bb.forward(np.zeros((1, 32, 32, 3), dtype=np.float32))
        # biases are zero-initialized, so every ReLU output stays zero
        assert np.all(feats.shallow == 0.0)
        assert np.all(feats.deep == 0.0)

    def test_wrong_resolution_rejected(self):
        bb = build_backbone(BackboneConfig(), seed=0)
        with pytest.raises(ValueError, match="expects"):
            bb.forward(np.zeros((1, 64, 64, 3), dtype=np.float32))

    def test_deterministic_forward(self):
        bb = build_backbone(BackboneConfig(input_resolution=(32, 32)), seed=3)
        x = np.random.default_rng(5).random((1, 32, 32, 3), dtype=np.float32)
        f1 = bb.forward(x)
        f2 = bb.forward(x)
        assert np.array_equal(f1.deep, f2.deep)

    def test_batch_invariance(self):
        bb = build_backbone(BackboneConfig(input_resolution=(32, 32)), seed=3)
        x = np.random.default_rng(5).random((3, 32, 32, 3), dtype=np.float32)
        batched = bb.forward(x)
        for i in range(3):
            single = bb.forward(x[i:i + 1])
            np.testing.assert_allclose(single.deep[0], batched.deep[i], atol=1e-5)

    def test_receptive_field_locality(self):
        """With input-independent channel gates, a single-pixel perturbation
        reaches only deep cells within the analytic receptive field."""
        cfg = BackboneConfig(input_resolution=(64, 64))
        bb = build_backbone(cfg, seed=7)
        for blk in bb.blocks:  # freeze SE gates at exactly 0.5
            blk.se.fc1.w.value[...] = 0.0
            blk.se.fc1.b.value[...] = 0.0
            blk.se.fc2.w.value[...] = 0.0
            blk.se.fc2.b.value[...] = 0.0
        x = np.random.default_rng(1).random((1, 64, 64, 3), dtype=np.float32)
        base = bb.forward(x).deep
        x2 = x.copy()
        pi, pj = 33, 18
        x2[0, pi, pj, :] += 1.0
        changed = np.any(bb.forward(x2).deep != base, axis=(0, 3))
        # analytic: rf=19 input pixels, stride 8 -> at most 3 cells per axis
        rows = np.nonzero(changed.any(axis=1))[0]
        cols = np.nonzero(changed.any(axis=0))[0]
        assert len(rows) and len(rows) <= 3 and len(cols) <= 3
        assert abs(rows.mean() - pi / 8) <= 2.0
        assert abs(cols.mean() - pj / 8) <= 2.0
