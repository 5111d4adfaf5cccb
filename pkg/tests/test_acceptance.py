"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line.  Criteria 5/6/8 share one desk-scale overfit run (16 synthetic
scenes, a few hundred full-batch steps at reduced resolution) plus a second
run for the determinism check.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import pytest

from conftest import (fd_gradient, max_rel_err, ref_conv2d, ref_depthwise,
                      ref_fc, ref_pointwise, ref_se)
from test_evaluation import labeled, oracle_ap
from test_postprocess import oracle_nms, random_dets

from hotspotnet import ops
from hotspotnet.backbone import BackboneConfig
from hotspotnet.checkpoint import load_checkpoint, save_checkpoint
from hotspotnet.dataset import (AnnotationError, dataset_stats, load_split,
                                parse_annotations)
from hotspotnet.evaluation import (average_precision, mean_average_precision,
                                   read_epoch_curve)
from hotspotnet.head import HeadConfig, assign_targets, detection_loss
from hotspotnet.imageio import decode_pnm, encode_pgm, encode_ppm
from hotspotnet.infer import evaluate_split
from hotspotnet.model import Detector, ModelConfig, format_summary
from hotspotnet.postprocess import Detection, NMSConfig, iou, nms
from hotspotnet.robustness import run_suite
from hotspotnet.se import SEBlock
from hotspotnet.synthetic import SceneSpec, generate_split
from hotspotnet.trainer import TrainConfig, cosine_lr, train
from hotspotnet.transforms import (adjust_brightness_contrast, flip_horizontal,
                                   gaussian_blur, gaussian_kernel1d,
                                   to_grayscale)

GRAD_SEEDS = 20
REL_TOL = 1e-3


@contextmanager
def criterion(num: int, name: str):
    try:
        yield
    except BaseException:
        print(f"[C{num:02d}] FAIL {name}")
        raise
    print(f"[C{num:02d}] PASS {name}")


# ---------------------------------------------------------------- overfit run

OVERFIT = dict(model_seed=4, data_seed=7, lr=2e-4, steps=300, input_size=64)


@dataclass
class OverfitRun:
    root: str
    out_dir: str
    items: list
    result: object
    model: Detector


def _run_overfit(root: str, out_dir: str) -> OverfitRun:
    spec = SceneSpec(hotspot_size=(0.12, 0.26), hotspot_count=(1, 3),
                     image_size=(128, 128))
    if not os.path.exists(os.path.join(root, "manifest.txt")):
        generate_split(spec, count=16, seed=OVERFIT["data_seed"], root=root)
    items = load_split(root, "train").items
    size = OVERFIT["input_size"]
    model = Detector(ModelConfig(
        backbone=BackboneConfig(input_resolution=(size, size))),
        seed=OVERFIT["model_seed"])
    cfg = TrainConfig(
        lr0=OVERFIT["lr"], batch_size=16, epochs=OVERFIT["steps"],
        eval_every=50, seed=OVERFIT["model_seed"], augment_flip=False,
        augment_crop=False, eval_split="train", eval_conf=0.05,
        max_steps=OVERFIT["steps"])
    result = train(model, {"train": items}, cfg, out_dir)
    return OverfitRun(root, out_dir, items, result, model)


@pytest.fixture(scope="module")
def overfit(tmp_path_factory):
    base = tmp_path_factory.mktemp("overfit")
    return _run_overfit(str(base / "data"), str(base / "run_a"))


# ------------------------------------------------------------------ criteria

def test_c01_shape_conformance():
    with criterion(1, "shape conformance at 224x224"):
        model = Detector(ModelConfig(), seed=0)
        rows = {r.name: r.out_shape for r in model.layer_table()}
        expected = {
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
        for name, shape in expected.items():
            assert rows[name] == shape, name
        x = np.random.default_rng(0).random((1, 224, 224, 3),
                                            dtype=np.float32) * 2 - 1
        feats, f_agg, grids = model.forward_full(x)
        assert feats.shallow.shape == (1, 112, 112, 64)
        assert feats.intermediate.shape == (1, 56, 56, 128)
        assert feats.deep.shape == (1, 28, 28, 256)
        assert f_agg.shape == (1, 28, 28, 256)
        assert [g.shape for g in grids] == [(1, 28, 28, 6)] * 3


def test_c02_gradient_correctness():
    with criterion(2, f"gradient checks vs finite differences ({GRAD_SEEDS} seeds/op)"):
        for seed in range(GRAD_SEEDS):
            rng = np.random.default_rng(seed)

            # conv2d
            x = rng.standard_normal((1, 5, 5, 2)).astype(np.float32)
            w = rng.standard_normal((3, 3, 2, 2)).astype(np.float32) * 0.5
            b = rng.standard_normal(2).astype(np.float32) * 0.1
            up = rng.standard_normal((1, 3, 3, 2)).astype(np.float32)
            gx, gw, gb = ops.conv2d_backward(x, w, 2, 1, up)
            fn = lambda xx, ww, bb: float(np.sum(ref_conv2d(xx, ww, bb, 2, 1) * up))
            for which, a in enumerate((gx, gw, gb)):
                assert max_rel_err(a, fd_gradient(fn, [x, w, b], which)) < REL_TOL

            # depthwise
            x = rng.standard_normal((1, 5, 5, 3)).astype(np.float32)
            w = rng.standard_normal((3, 3, 3)).astype(np.float32) * 0.5
            b = rng.standard_normal(3).astype(np.float32) * 0.1
            up = rng.standard_normal((1, 5, 5, 3)).astype(np.float32)
            gx, gw, gb = ops.depthwise_conv2d_backward(x, w, 1, 1, up)
            fn = lambda xx, ww, bb: float(np.sum(ref_depthwise(xx, ww, bb, 1, 1) * up))
            for which, a in enumerate((gx, gw, gb)):
                assert max_rel_err(a, fd_gradient(fn, [x, w, b], which)) < REL_TOL

            # pointwise
            x = rng.standard_normal((1, 4, 4, 3)).astype(np.float32)
            w = rng.standard_normal((1, 1, 3, 2)).astype(np.float32)
            b = rng.standard_normal(2).astype(np.float32)
            up = rng.standard_normal((1, 4, 4, 2)).astype(np.float32)
            gx, gw, gb = ops.pointwise_conv2d_backward(x, w, up)
            fn = lambda xx, ww, bb: float(np.sum(ref_pointwise(xx, ww, bb) * up))
            for which, a in enumerate((gx, gw, gb)):
                assert max_rel_err(a, fd_gradient(fn, [x, w, b], which)) < REL_TOL

            # fully connected
            x = rng.standard_normal((2, 4)).astype(np.float32)
            w = rng.standard_normal((3, 4)).astype(np.float32)
            b = rng.standard_normal(3).astype(np.float32)
            up = rng.standard_normal((2, 3)).astype(np.float32)
            gx, gw, gb = ops.fully_connected_backward(x, w, up)
            fn = lambda xx, ww, bb: float(np.sum(ref_fc(xx, ww, bb) * up))
            for which, a in enumerate((gx, gw, gb)):
                assert max_rel_err(a, fd_gradient(fn, [x, w, b], which)) < REL_TOL

            # SE block
            blk = SEBlock("se", 4, 2, rng=np.random.default_rng(seed + 1000))
            x = rng.standard_normal((1, 4, 4, 4)).astype(np.float32)
            up = rng.standard_normal((1, 4, 4, 4)).astype(np.float32)
            blk.forward(x)
            gx = blk.backward(up)
            arrays = [x, blk.fc1.w.value, blk.fc1.b.value,
                      blk.fc2.w.value, blk.fc2.b.value]
            fn = lambda xx, w1, b1, w2, b2: float(
                np.sum(ref_se(xx, w1, b1, w2, b2) * up))
            analytic = [gx, blk.fc1.w.grad, blk.fc1.b.grad,
                        blk.fc2.w.grad, blk.fc2.b.grad]
            for which, a in enumerate(analytic):
                assert max_rel_err(a, fd_gradient(fn, arrays, which)) < REL_TOL

        # full composite loss through the three heads
        from hotspotnet.head import DetectionHeads
        for seed in range(GRAD_SEEDS):
            rng = np.random.default_rng(seed)
            cfg = HeadConfig()
            heads = DetectionHeads(2, cfg, rng=np.random.default_rng(seed + 500))
            f_agg = rng.standard_normal((1, 4, 4, 2)).astype(np.float32)
            gt = [Detection(0, 1.0, float(rng.uniform(0.3, 0.7)),
                            float(rng.uniform(0.3, 0.7)), 0.28, 0.22)]
            targets = assign_targets([gt], (4, 4), cfg)
            grids = heads.forward(f_agg)
            _, grid_grads = detection_loss(grids, targets, cfg)
            heads.zero_grads()
            g_agg = heads.backward(grid_grads)

            def scalar(ff, w0, w1, w2, b0, b1, b2):
                gs = [ref_conv2d(ff, w, b, 1, 1)
                      for w, b in zip((w0, w1, w2), (b0, b1, b2))]
                bd, _ = detection_loss(gs, targets, cfg)
                return bd.total

            arrays = ([f_agg] + [h.w.value for h in heads.heads]
                      + [h.b.value for h in heads.heads])
            analytic = ([g_agg] + [h.w.grad for h in heads.heads]
                        + [h.b.grad for h in heads.heads])
            for which, a in enumerate(analytic):
                assert max_rel_err(a, fd_gradient(scalar, arrays, which)) < REL_TOL


def test_c03_nms_oracle_equivalence():
    with criterion(3, "NMS equals brute-force reference (200 instances x "
                      "3 thresholds) + properties"):
        rng = np.random.default_rng(20240501)
        cases = [random_dets(rng, int(rng.integers(0, 21)), classes=2)
                 for _ in range(200)]
        for threshold in (0.3, 0.5, 0.7):
            for dets in cases:
                got = nms(dets, NMSConfig(iou_threshold=threshold))
                assert got == oracle_nms(dets, threshold)
        for dets in cases[:50]:
            once = nms(dets, NMSConfig(iou_threshold=0.5))
            assert nms(once, NMSConfig(iou_threshold=0.5)) == once
            counts = [len(nms(dets, NMSConfig(iou_threshold=t)))
                      for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
            assert counts == sorted(counts)


def test_c04_iou_and_ap_oracles():
    with criterion(4, "IoU / AP / mAP against independent oracles"):
        rng = np.random.default_rng(77)
        for _ in range(100):
            a, b = random_dets(rng, 2)
            ax1, ay1, ax2, ay2 = a.corners()
            bx1, by1, bx2, by2 = b.corners()
            iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
            ih = max(0.0, min(ay2, by2) - max(ay1, by1))
            inter = iw * ih
            union = a.area() + b.area() - inter
            assert abs(iou(a, b) - (inter / union if union else 0.0)) <= 1e-9

        scenarios = [
            ([True], 1),
            ([True, False], 1),          # 1.0
            ([False, True], 1),          # 0.5
            ([True, True, False, True], 3),
            ([False, False, True, True, False, True], 5),
            ([True, False, True, True, False, False, True, False, True, False], 6),
        ]
        for flags, total_gt in scenarios:
            got = average_precision(labeled(*flags), total_gt)
            assert abs(got - oracle_ap(flags, total_gt)) <= 1e-6
        assert average_precision(labeled(True, False), 1) == 1.0
        assert average_precision(labeled(False, True), 1) == 0.5

        assert mean_average_precision({0: 0.908}) == 0.908
        assert abs(mean_average_precision({0: 0.6, 1: 0.9, 2: 0.3}) - 0.6) < 1e-12
        assert mean_average_precision({0: 1.0, 1: 0.0}) == 0.5


def test_c05_overfit_surrogate(overfit):
    with criterion(5, "desk-scale overfit reaches train mAP@0.5 >= 0.90"):
        res = overfit.result
        assert res.steps <= 500
        decreasing = sum(1 for i in range(1, 11)
                         if res.losses[i] < res.losses[i - 1])
        assert decreasing >= 9, f"only {decreasing}/10 first steps decreased"
        assert res.final_map >= 0.90, f"train mAP {res.final_map:.4f}"
        rows = read_epoch_curve(res.curve_path)
        keys = [e for e, _ in rows]
        assert keys == sorted(set(keys)) and len(keys) >= 2
        print(f"      steps {res.steps}, final train mAP {res.final_map:.4f}, "
              f"first-10 decreasing {decreasing}/10")


def test_c06_determinism(overfit, tmp_path):
    with criterion(6, "re-run with identical seeds is byte-identical"):
        run_b = _run_overfit(overfit.root, str(tmp_path / "run_b"))
        a_bytes = open(overfit.result.latest_path, "rb").read()
        b_bytes = open(run_b.result.latest_path, "rb").read()
        assert a_bytes == b_bytes
        report_a = evaluate_split(overfit.model, overfit.items, 0.05, 0.5)
        report_b = evaluate_split(run_b.model, run_b.items, 0.05, 0.5)
        assert report_a.summary_line() == report_b.summary_line()
        assert report_a.to_text() == report_b.to_text()


def test_c07_cosine_schedule():
    with criterion(7, "cosine schedule endpoints, midpoint, monotone"):
        cfg = TrainConfig(epochs=200, lr0=0.001, lr_min=0.0)
        assert abs(cosine_lr(0, cfg) - 0.001) < 1e-12
        assert abs(cosine_lr(199, cfg) - 0.0) < 1e-12
        values = [cosine_lr(e, cfg) for e in range(200)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        mid = TrainConfig(epochs=201, lr0=0.001, lr_min=0.0)
        assert abs(cosine_lr(100, mid) - 0.0005) < 1e-12
        floor = TrainConfig(epochs=200, lr0=0.001, lr_min=1e-4)
        assert abs(cosine_lr(199, floor) - 1e-4) < 1e-12


def test_c08_robustness_harness(overfit):
    with criterion(8, "robustness sweep rows + pixel-exact transform probes"):
        results = run_suite(overfit.model, overfit.items, "all",
                            conf_threshold=0.25)
        by_name = {r.name: r for r in results}
        expected_rows = {"identity", "brightness-40_contrast-40",
                         "brightness+25", "contrast+25",
                         "brightness-35_contrast-35", "grayscale",
                         "blur_sigma1", "blur_sigma2"}
        assert expected_rows <= set(by_name)
        assert by_name["identity"].identical_to_baseline
        assert by_name["identity"].mean_conf_delta == 0.0
        for name in expected_rows:
            assert len(by_name[name].per_image) == len(overfit.items)

        # closed-form pixel probes
        mid = np.full((4, 4, 3), 0.5, dtype=np.float32)
        assert np.all(adjust_brightness_contrast(mid, 0.0, 0.6) == 0.5)
        probe = np.ones((1, 1, 3), dtype=np.float32)
        np.testing.assert_allclose(
            adjust_brightness_contrast(probe, -0.4, 0.6), 0.4, atol=1e-6)
        red = np.zeros((1, 1, 3), dtype=np.float32)
        red[..., 0] = 1.0
        np.testing.assert_allclose(to_grayscale(red), 0.299, atol=1e-6)
        const = np.full((9, 9, 3), 0.25, dtype=np.float32)
        np.testing.assert_allclose(gaussian_blur(const, 1.0), 0.25, atol=1e-6)
        assert abs(float(gaussian_kernel1d(2.0).sum()) - 1.0) < 1e-6
        item = overfit.items[0]
        flipped_twice = flip_horizontal(flip_horizontal(item))
        assert np.array_equal(flipped_twice.pixels, item.pixels)
        assert flipped_twice.boxes == item.boxes
        print("      per-transform mAP: "
              + " ".join(f"{r.name}={r.map_value:.3f}" for r in results))


def test_c09_summary_and_bench(overfit, capsys):
    with criterion(9, "analytic counts + published reference line + bench"):
        model = Detector(ModelConfig(), seed=0)
        rows = {r.name: r for r in model.layer_table()}
        assert rows["conv1"].params == 896
        assert rows["block1.depthwise"].params == 320
        text = format_summary(model)
        assert "paper: 36.10M params, 25.53 GFLOPs, 25.22 ms" in text

        from hotspotnet.cli import main
        ckpt = os.path.join(overfit.out_dir, "best.ckpt")
        assert main(["bench", "--model", ckpt, "--runs", "3",
                     "--image-size", "64"]) == 0
        out = capsys.readouterr().out
        assert "bench runs 3 mean_ms" in out and "std_ms" in out


def test_c10_io_round_trips(overfit, tmp_path):
    with criterion(10, "I/O round-trips, parse diagnostics, stats totals"):
        rng = np.random.default_rng(5)
        px = rng.random((11, 13, 3)).astype(np.float32)
        data = encode_ppm(px)
        assert encode_ppm(decode_pnm(data)) == data
        gray = rng.random((7, 9)).astype(np.float32)
        gdata = encode_pgm(gray)
        assert encode_pgm(decode_pnm(gdata)[..., :1]) == gdata

        ckpt = str(tmp_path / "roundtrip.ckpt")
        model = Detector(ModelConfig(
            backbone=BackboneConfig(input_resolution=(32, 32))), seed=12)
        save_checkpoint(ckpt, model)
        loaded, _ = load_checkpoint(ckpt)
        ckpt2 = str(tmp_path / "roundtrip2.ckpt")
        save_checkpoint(ckpt2, loaded)
        assert open(ckpt, "rb").read() == open(ckpt2, "rb").read()

        bad_lines = {
            "0 0.5 0.5 0.1": "expected 5 fields",
            "0 x 0.5 0.1 0.2": "non-numeric",
            "0 1.5 0.5 0.1 0.2": "cx=1.5",
            "0 0.5 0.5 0.0 0.2": "w=0.0",
            "-1 0.5 0.5 0.1 0.2": "class id",
        }
        for i, (line, fragment) in enumerate(bad_lines.items(), start=1):
            path = tmp_path / f"bad{i}.txt"
            path.write_text(("0 0.5 0.5 0.1 0.1\n" * (i - 1)) + line + "\n")
            with pytest.raises(AnnotationError) as exc:
                parse_annotations(str(path))
            assert f"line {i}" in str(exc.value)
            assert fragment in str(exc.value)

        split = load_split(overfit.root, "train")
        report = dataset_stats(split)
        total = sum(len(it.boxes) for it in split.items)
        assert report.instances == total
        assert int(report.center_hist.sum()) == total
        assert int(report.size_hist.sum()) == total
