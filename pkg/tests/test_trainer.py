"""Cosine schedule exactness, Adam closed forms, determinism, and the
training-loop bookkeeping (steps, curve rows, checkpoints, divergence)."""

import os

import numpy as np
import pytest

from hotspotnet.backbone import BackboneConfig
from hotspotnet.dataset import load_split
from hotspotnet.evaluation import read_epoch_curve
from hotspotnet.layers import Param
from hotspotnet.model import Detector, ModelConfig
from hotspotnet.synthetic import SceneSpec, generate_split
from hotspotnet.trainer import Adam, TrainConfig, cosine_lr, train


class TestCosineLr:
    def test_initial_value(self):
        cfg = TrainConfig(epochs=200)
        assert abs(cosine_lr(0, cfg) - 0.001) < 1e-12

    def test_final_epoch_hits_floor(self):
        cfg = TrainConfig(epochs=200, lr_min=1e-5)
        assert abs(cosine_lr(199, cfg) - 1e-5) < 1e-12

    def test_midpoint_is_half(self):
        cfg = TrainConfig(epochs=201)
        assert abs(cosine_lr(100, cfg) - 0.0005) < 1e-12

    def test_non_increasing_over_200_epochs(self):
        cfg = TrainConfig(epochs=200)
        values = [cosine_lr(e, cfg) for e in range(200)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_out_of_range_rejected(self):
        cfg = TrainConfig(epochs=10)
        with pytest.raises(ValueError):
            cosine_lr(10, cfg)
        with pytest.raises(ValueError):
            cosine_lr(-1, cfg)

    def test_single_epoch_schedule(self):
        assert cosine_lr(0, TrainConfig(epochs=1)) == 0.001


class TestAdam:
    def test_zero_gradient_no_decay_leaves_params(self):
        p = Param("w", np.array([1.0, -2.0], dtype=np.float32))
        adam = Adam([p])
        cfg = TrainConfig(weight_decay=0.0)
        assert adam.apply([p], 0.01, cfg)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_first_step_magnitude_is_lr(self):
        p = Param("w", np.array([0.5], dtype=np.float32))
        p.grad[...] = 1.0
        adam = Adam([p])
        cfg = TrainConfig(weight_decay=0.0)
        adam.apply([p], 0.01, cfg)
        assert abs(float(p.value[0]) - (0.5 - 0.01)) < 1e-6

    def test_decoupled_weight_decay(self):
        p = Param("w", np.array([2.0], dtype=np.float32))
        adam = Adam([p])
        cfg = TrainConfig(weight_decay=0.1)
        adam.apply([p], 0.01, cfg)  # zero grad: only decay acts
        assert abs(float(p.value[0]) - 2.0 * (1 - 0.01 * 0.1)) < 1e-6

    def test_non_finite_gradient_skips_step(self):
        p = Param("w", np.array([1.0], dtype=np.float32))
        p.grad[...] = np.nan
        adam = Adam([p])
        cfg = TrainConfig()
        assert not adam.apply([p], 0.01, cfg)
        assert adam.skipped == 1 and adam.step == 0
        assert p.value[0] == 1.0

    def test_deterministic_across_runs(self):
        def run():
            rng = np.random.default_rng(0)
            p = Param("w", rng.standard_normal(8).astype(np.float32))
            adam = Adam([p])
            cfg = TrainConfig()
            for i in range(20):
                p.grad[...] = rng.standard_normal(8).astype(np.float32)
                adam.apply([p], 1e-3, cfg)
            return p.value.copy()

        assert np.array_equal(run(), run())


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("ds"))
    spec = SceneSpec(image_size=(64, 64), hotspot_size=(0.12, 0.26),
                     hotspot_count=(1, 2))
    generate_split(spec, count=4, seed=5, root=root)
    return load_split(root, "train").items


def tiny_model(seed=0):
    return Detector(ModelConfig(
        backbone=BackboneConfig(input_resolution=(32, 32))), seed=seed)


class TestTrainLoop:
    def test_one_epoch_counts_and_curve(self, tiny_dataset, tmp_path):
        model = tiny_model()
        cfg = TrainConfig(epochs=1, batch_size=4, eval_every=1, seed=0,
                          eval_split="train", augment_flip=False,
                          augment_crop=False)
        res = train(model, {"train": tiny_dataset}, cfg, str(tmp_path))
        assert res.steps == 1  # 4 images, batch 4
        assert res.epochs_run == 1
        rows = read_epoch_curve(res.curve_path)
        assert len(rows) == 1 and rows[0][0] == 1

    def test_runs_all_epochs_without_early_stop(self, tiny_dataset, tmp_path):
        model = tiny_model()
        cfg = TrainConfig(epochs=5, batch_size=4, eval_every=2, seed=0,
                          eval_split="train", augment_flip=False,
                          augment_crop=False)
        res = train(model, {"train": tiny_dataset}, cfg, str(tmp_path))
        assert res.epochs_run == 5
        assert res.steps == 5

    def test_checkpoints_written(self, tiny_dataset, tmp_path):
        model = tiny_model()
        cfg = TrainConfig(epochs=2, batch_size=4, eval_every=1, seed=0,
                          eval_split="train", augment_flip=False,
                          augment_crop=False)
        res = train(model, {"train": tiny_dataset}, cfg, str(tmp_path))
        assert os.path.exists(res.latest_path)
        assert os.path.exists(res.best_path)

    def test_identical_seeds_identical_checkpoints(self, tiny_dataset, tmp_path):
        outs = []
        for name in ("a", "b"):
            model = tiny_model(seed=9)
            cfg = TrainConfig(epochs=2, batch_size=2, eval_every=2, seed=9,
                              eval_split="train")
            res = train(model, {"train": tiny_dataset}, cfg,
                        str(tmp_path / name))
            outs.append(res)
        a = open(outs[0].latest_path, "rb").read()
        b = open(outs[1].latest_path, "rb").read()
        assert a == b

    def test_augmentation_stream_is_seed_stable(self, tiny_dataset, tmp_path):
        losses = []
        for name in ("a", "b"):
            model = tiny_model(seed=3)
            cfg = TrainConfig(epochs=3, batch_size=2, eval_every=3, seed=3,
                              eval_split="train")
            res = train(model, {"train": tiny_dataset}, cfg, str(tmp_path / name))
            losses.append(res.losses)
        assert losses[0] == losses[1]

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_aborts_and_keeps_checkpoint(self, tiny_dataset, tmp_path):
        model = tiny_model()
        cfg = TrainConfig(epochs=4, batch_size=4, eval_every=1, seed=0,
                          eval_split="train", augment_flip=False,
                          augment_crop=False)
        res = train(model, {"train": tiny_dataset}, cfg, str(tmp_path))
        assert not res.aborted
        good_bytes = open(res.latest_path, "rb").read()
        # poison the weights so the next run diverges immediately
        model2 = tiny_model()
        model2.params()[0].value[...] = np.float32(1e38)
        res2 = train(model2, {"train": tiny_dataset}, cfg, str(tmp_path))
        assert res2.aborted
        assert res2.steps == 0
        # latest checkpoint was not overwritten by the diverged run
        assert open(res2.latest_path, "rb").read() == good_bytes

    def test_empty_training_split_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="empty"):
            train(tiny_model(), {"train": []}, TrainConfig(), str(tmp_path))

    def test_max_steps_cap(self, tiny_dataset, tmp_path):
        model = tiny_model()
        cfg = TrainConfig(epochs=50, batch_size=2, eval_every=50, seed=0,
                          eval_split="train", max_steps=3,
                          augment_flip=False, augment_crop=False)
        res = train(model, {"train": tiny_dataset}, cfg, str(tmp_path))
        assert res.steps == 3
