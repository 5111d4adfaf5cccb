"""Command-line front end.

Commands: gen, train, infer, eval, robust, stats, summary, bench.  Every flag
has a defined default; values resolve as built-in defaults < config file
(plain ``key=value`` lines, ``#`` comments) < command-line flags.  Commands
exit 0 on success and nonzero with a single-line ``error: ...`` diagnostic on
failure.  Report-producing commands also render PNG figures next to their
text/CSV outputs unless ``--no-figures`` is given.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .backbone import BackboneConfig
from .checkpoint import load_checkpoint
from .dataset import dataset_stats, load_split, write_stats_report
from .evaluation import read_epoch_curve
from .head import HeadConfig
from .imageio import draw_detections, load_image, save_ppm
from .infer import detect_image, evaluate_split
from .model import Detector, ModelConfig, format_summary
from .postprocess import NMSConfig
from .robustness import SUITES, run_suite, write_report
from .synthetic import generate_split, preset_spec
from .trainer import TrainConfig, train


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line, machine-parseable
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def parse_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            key, sep, value = stripped.partition("=")
            if not sep:
                raise CliError(f"{path} line {lineno}: expected key=value")
            out[key.strip()] = value.strip()
    return out


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _convert(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise CliError(f"expected boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


class Flags:
    """Per-command flag schema driving argparse setup and config-file merge."""

    def __init__(self, spec: dict[str, tuple]):
        # name -> (default, help); default None marks a required flag
        self.spec = spec

    def install(self, parser: argparse.ArgumentParser) -> None:
        for name, (default, help_text) in self.spec.items():
            flag = "--" + name
            if isinstance(default, bool):
                parser.add_argument(flag, action="store_const", const=True,
                                    default=None,
                                    help=f"{help_text} (default: {default})")
            elif default is None:
                parser.add_argument(flag, default=None, help=f"{help_text} (required)")
            else:
                parser.add_argument(flag, default=None, type=str,
                                    help=f"{help_text} (default: {default})")
        parser.add_argument("--config", default=None,
                            help="key=value config file (default: none)")

    def resolve(self, args: argparse.Namespace) -> dict:
        file_cfg = parse_config_file(args.config) if args.config else {}
        unknown = set(file_cfg) - set(self.spec)
        if unknown:
            raise CliError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        out = {}
        for name, (default, _) in self.spec.items():
            cli_val = getattr(args, name.replace("-", "_"))
            if cli_val is not None:
                out[name] = (_convert(cli_val, default)
                             if isinstance(cli_val, str) and default is not None
                             else cli_val)
            elif name in file_cfg:
                out[name] = _convert(file_cfg[name], default if default is not None else "")
            elif default is None:
                raise CliError(f"missing required flag --{name}")
            else:
                out[name] = default
        return out


GEN_FLAGS = Flags({
    "out": (None, "output dataset directory"),
    "count": (16, "number of training scenes"),
    "val-count": (0, "number of validation scenes"),
    "test-count": (0, "number of test scenes"),
    "seed": (7, "generator seed"),
    "preset": ("default", f"scene preset, one of {sorted(['default', 'high-irradiance'])}"),
    "image-size": (128, "square scene resolution in pixels"),
    "force": (False, "overwrite a non-empty output directory"),
})

TRAIN_FLAGS = Flags({
    "data": (None, "dataset root directory"),
    "out": (None, "output directory for checkpoints and curves"),
    "epochs": (200, "training epochs"),
    "batch-size": (16, "samples per optimizer step"),
    "lr": (0.001, "initial learning rate (cosine-decayed)"),
    "lr-min": (0.0, "cosine floor learning rate"),
    "weight-decay": (0.0005, "decoupled weight decay"),
    "seed": (0, "training seed"),
    "eval-every": (10, "evaluate every N epochs"),
    "input-size": (224, "square model input resolution"),
    "eval-split": ("val", "split evaluated during training"),
    "eval-conf": (0.05, "confidence threshold for in-training evaluation"),
    "eval-iou": (0.5, "IoU threshold for mAP matching"),
    "nms-iou": (0.5, "NMS IoU threshold"),
    "max-steps": (0, "stop after N optimizer steps (0 = no cap)"),
    "lambda-neg": (0.1, "negative-cell weight in the confidence loss"),
    "no-augment": (False, "disable flip/crop augmentation"),
    "no-figures": (False, "skip PNG figure rendering"),
})

INFER_FLAGS = Flags({
    "model": (None, "checkpoint path"),
    "input": (None, "image file or directory of .ppm/.pgm files"),
    "conf": (0.25, "confidence threshold"),
    "nms-iou": (0.5, "NMS IoU threshold"),
    "annotate-out": ("", "directory for annotated PPM copies"),
    "out": ("", "also write detection lines to this file"),
})

EVAL_FLAGS = Flags({
    "model": (None, "checkpoint path"),
    "data": (None, "dataset root directory"),
    "split": ("test", "dataset split to evaluate"),
    "iou": (0.5, "IoU threshold for mAP matching"),
    "conf": (0.05, "confidence threshold"),
    "nms-iou": (0.5, "NMS IoU threshold"),
    "out": ("", "directory for report files"),
    "no-figures": (False, "skip PNG figure rendering"),
})

ROBUST_FLAGS = Flags({
    "model": (None, "checkpoint path"),
    "data": (None, "dataset root directory"),
    "split": ("test", "dataset split to evaluate"),
    "suite": ("all", f"transform suite, one of {sorted(SUITES)}"),
    "conf": (0.25, "confidence threshold"),
    "nms-iou": (0.5, "NMS IoU threshold"),
    "iou": (0.5, "IoU threshold for per-transform mAP"),
    "out": ("", "directory for report files"),
    "no-figures": (False, "skip PNG figure rendering"),
})

STATS_FLAGS = Flags({
    "data": (None, "dataset root directory"),
    "split": ("train", "dataset split to analyze"),
    "bins": (32, "histogram bins per axis"),
    "out": ("", "directory for report files"),
    "no-figures": (False, "skip PNG figure rendering"),
})

SUMMARY_FLAGS = Flags({
    "model": (None, "checkpoint path"),
})

BENCH_FLAGS = Flags({
    "model": (None, "checkpoint path"),
    "runs": (10, "timed runs (after 2 warmup runs)"),
    "image-size": (640, "synthetic probe image resolution"),
    "seed": (0, "probe image seed"),
})


def cmd_gen(v: dict) -> int:
    out = v["out"]
    if os.path.isdir(out) and os.listdir(out) and not v["force"]:
        raise CliError(f"output directory {out} is not empty (use --force)")
    size = (v["image-size"], v["image-size"])
    template = preset_spec(v["preset"], image_size=size)
    counts = [("train", v["count"], v["seed"]),
              ("val", v["val-count"], v["seed"] + 1),
              ("test", v["test-count"], v["seed"] + 2)]
    total = 0
    for split, count, seed in counts:
        if count > 0:
            ids = generate_split(template, count, seed, out, split)
            total += len(ids)
            print(f"gen {split}: {len(ids)} scene(s)")
    if total == 0:
        raise CliError("nothing generated: all counts are zero")
    print(f"gen done: {total} scene(s) at {out}")
    return 0


def cmd_train(v: dict) -> int:
    size = v["input-size"]
    config = ModelConfig(
        backbone=BackboneConfig(input_resolution=(size, size)),
        head=HeadConfig(lambda_neg=v["lambda-neg"]))
    model = Detector(config, seed=v["seed"])
    splits = {"train": load_split(v["data"], "train").items}
    if v["eval-split"] != "train":
        try:
            splits[v["eval-split"]] = load_split(v["data"], v["eval-split"]).items
        except (ValueError, FileNotFoundError):
            print(f"note: split '{v['eval-split']}' unavailable, evaluating on train",
                  file=sys.stderr)
    cfg = TrainConfig(
        lr0=v["lr"], lr_min=v["lr-min"], batch_size=v["batch-size"],
        epochs=v["epochs"], weight_decay=v["weight-decay"], seed=v["seed"],
        eval_every=v["eval-every"], augment_flip=not v["no-augment"],
        augment_crop=not v["no-augment"], max_steps=v["max-steps"],
        eval_split=v["eval-split"], eval_conf=v["eval-conf"],
        eval_iou=v["eval-iou"], nms_iou=v["nms-iou"])
    result = train(model, splits, cfg, v["out"])
    if not v["no-figures"]:
        from .figures import save_epoch_curve
        png = os.path.join(v["out"], "epoch_curve.png")
        save_epoch_curve(read_epoch_curve(result.curve_path), png)
    status = "aborted" if result.aborted else "done"
    print(f"train {status}: epochs {result.epochs_run} steps {result.steps} "
          f"final_map {result.final_map:.6f} best_map {result.best_map:.6f}")
    print(f"checkpoints: {result.latest_path} {result.best_path}")
    if result.aborted:
        raise CliError("training aborted on non-finite loss")
    return 0


def _input_files(path: str) -> list[str]:
    if os.path.isdir(path):
        files = sorted(
            os.path.join(path, f) for f in os.listdir(path)
            if f.endswith((".ppm", ".pgm")))
        if not files:
            raise CliError(f"no .ppm/.pgm files in directory {path}")
        return files
    return [path]


def cmd_infer(v: dict) -> int:
    model, _ = load_checkpoint(v["model"])
    nms_cfg = NMSConfig(iou_threshold=v["nms-iou"])
    files = _input_files(v["input"])
    out_fh = open(v["out"], "w", encoding="utf-8") if v["out"] else None
    if v["annotate-out"]:
        os.makedirs(v["annotate-out"], exist_ok=True)
    failures = 0
    try:
        for path in files:
            image_id = os.path.splitext(os.path.basename(path))[0]
            try:
                pixels = load_image(path)
                dets = detect_image(model, pixels, v["conf"], nms_cfg)
            except (ValueError, OSError) as exc:
                failures += 1
                print(f"error: {path}: {exc}", file=sys.stderr)
                continue
            for d in dets:
                line = d.to_line(image_id)
                print(line)
                if out_fh:
                    out_fh.write(line + "\n")
            if v["annotate-out"]:
                annotated = draw_detections(pixels, dets)
                save_ppm(os.path.join(v["annotate-out"], image_id + ".ppm"),
                         annotated)
    finally:
        if out_fh:
            out_fh.close()
    if failures:
        raise CliError(f"{failures} of {len(files)} input(s) failed")
    return 0


def cmd_eval(v: dict) -> int:
    model, _ = load_checkpoint(v["model"])
    items = load_split(v["data"], v["split"]).items
    report = evaluate_split(model, items, v["conf"], v["iou"],
                            NMSConfig(iou_threshold=v["nms-iou"]))
    print(report.to_text())
    if v["out"]:
        os.makedirs(v["out"], exist_ok=True)
        with open(os.path.join(v["out"], "eval_report.txt"), "w",
                  encoding="utf-8") as f:
            f.write(report.to_text() + "\n")
        with open(os.path.join(v["out"], "pr_curve.csv"), "w",
                  encoding="utf-8") as f:
            f.write("recall,precision\n")
            for r, p in report.pr_points:
                f.write(f"{r:.6f},{p:.6f}\n")
        if not v["no-figures"]:
            from .figures import save_pr_curve
            ap0 = report.per_class_ap.get(0, 0.0)
            save_pr_curve(report.pr_points, ap0,
                          os.path.join(v["out"], "pr_curve.png"))
    return 0


def cmd_robust(v: dict) -> int:
    model, _ = load_checkpoint(v["model"])
    items = load_split(v["data"], v["split"]).items
    results = run_suite(model, items, v["suite"], v["conf"],
                        NMSConfig(iou_threshold=v["nms-iou"]), v["iou"])
    for res in results:
        print(f"robust {res.name} map {res.map_value:.6f} "
              f"mean_conf_delta {res.mean_conf_delta:+.6f} "
              f"matched {res.matched_total}"
              + (" identical" if res.identical_to_baseline else ""))
    if v["out"]:
        write_report(results, v["out"])
        if not v["no-figures"]:
            from .figures import save_robustness_chart
            save_robustness_chart(
                [r.name for r in results], [r.map_value for r in results],
                [r.mean_conf_delta for r in results],
                os.path.join(v["out"], "robustness.png"))
    return 0


def cmd_stats(v: dict) -> int:
    split = load_split(v["data"], v["split"])
    report = dataset_stats(split, bins=v["bins"])
    print(report.summary_line())
    for name in ("cx", "cy", "w", "h"):
        m = report.marginals[name]
        print(f"  {name}: mean {m['mean']:.4f} std {m['std']:.4f} "
              f"min {m['min']:.4f} max {m['max']:.4f}")
    if v["out"]:
        write_stats_report(report, v["out"])
        if not v["no-figures"]:
            from .figures import save_stats_heatmaps
            save_stats_heatmaps(report.center_hist, report.size_hist,
                                os.path.join(v["out"], "stats_hist.png"))
    return 0


def cmd_summary(v: dict) -> int:
    model, _ = load_checkpoint(v["model"])
    print(format_summary(model))
    return 0


def cmd_bench(v: dict) -> int:
    if v["runs"] < 3:
        raise CliError("bench requires --runs >= 3")
    model, _ = load_checkpoint(v["model"])
    rng = np.random.default_rng(v["seed"])
    probe = rng.random((v["image-size"], v["image-size"], 3), dtype=np.float32)
    for _ in range(2):  # warmup
        detect_image(model, probe)
    times = []
    for _ in range(v["runs"]):
        t0 = time.perf_counter()
        detect_image(model, probe)
        times.append((time.perf_counter() - t0) * 1000.0)
    arr = np.asarray(times)
    print(f"bench runs {v['runs']} mean_ms {arr.mean():.3f} std_ms {arr.std():.3f}")
    return 0


COMMANDS = {
    "gen": (GEN_FLAGS, cmd_gen, "generate a synthetic dataset"),
    "train": (TRAIN_FLAGS, cmd_train, "train a detector"),
    "infer": (INFER_FLAGS, cmd_infer, "run inference on images"),
    "eval": (EVAL_FLAGS, cmd_eval, "evaluate a checkpoint on a split"),
    "robust": (ROBUST_FLAGS, cmd_robust, "robustness sweep under transforms"),
    "stats": (STATS_FLAGS, cmd_stats, "dataset distribution statistics"),
    "summary": (SUMMARY_FLAGS, cmd_summary, "model layer/parameter summary"),
    "bench": (BENCH_FLAGS, cmd_bench, "inference wall-time benchmark"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hotspotnet",
                     description="thermal hotspot detection toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command",
                                parser_class=_Parser)
    for name, (flags, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        flags.install(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2
    flags, fn, _ = COMMANDS[args.command]
    try:
        values = flags.resolve(args)
        return fn(values)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
