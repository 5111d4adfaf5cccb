"""Dataset layout, annotation parsing, and distribution statistics.

On-disk layout: ``<root>/images/<split>/<id>.ppm|pgm`` and
``<root>/labels/<split>/<id>.txt`` sharing basenames, plus a ``manifest.txt``
at the root with one ``<split> <id>`` line per item.  Annotation files carry
one normalized box per line: ``class cx cy w h``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .imageio import load_image
from .postprocess import Detection

SPLIT_NAMES = ("train", "val", "test")


class AnnotationError(ValueError):
    pass


@dataclass
class AnnotatedImage:
    image_id: str
    pixels: np.ndarray                    # (H, W, 3) float32 in [0, 1]
    boxes: list[Detection] = field(default_factory=list)


@dataclass
class DatasetSplit:
    name: str
    items: list[AnnotatedImage] = field(default_factory=list)

    def __post_init__(self):
        ids = [it.image_id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate image ids in split '{self.name}'")


def parse_annotation_line(line: str, lineno: int) -> Detection:
    fields = line.split()
    if len(fields) != 5:
        raise AnnotationError(
            f"line {lineno}: expected 5 fields 'class cx cy w h', got {len(fields)}")
    try:
        class_id = int(fields[0])
        cx, cy, w, h = (float(v) for v in fields[1:])
    except ValueError:
        raise AnnotationError(f"line {lineno}: non-numeric field in {line!r}") from None
    if class_id < 0:
        raise AnnotationError(f"line {lineno}: class id must be >= 0, got {class_id}")
    for name, v in (("cx", cx), ("cy", cy)):
        if not 0.0 <= v <= 1.0:
            raise AnnotationError(f"line {lineno}: {name}={v} out of range [0, 1]")
    for name, v in (("w", w), ("h", h)):
        if not 0.0 < v <= 1.0:
            raise AnnotationError(f"line {lineno}: {name}={v} out of range (0, 1]")
    return Detection(class_id, 1.0, cx, cy, w, h)


def parse_annotations(path: str) -> list[Detection]:
    """Parses one label file; an empty file is a valid negative image."""
    boxes = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            boxes.append(parse_annotation_line(stripped, lineno))
    return boxes


def read_manifest(root: str) -> dict[str, list[str]]:
    path = os.path.join(root, "manifest.txt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    splits: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise ValueError(f"manifest line {lineno}: expected '<split> <id>'")
            splits.setdefault(parts[0], []).append(parts[1])
    return splits


def _find_image(root: str, split: str, image_id: str) -> str:
    for ext in (".ppm", ".pgm"):
        path = os.path.join(root, "images", split, image_id + ext)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(
        f"image for id '{image_id}' not found under {root}/images/{split}")


def load_split(root: str, split: str) -> DatasetSplit:
    ids = read_manifest(root).get(split)
    if ids is None:
        raise ValueError(f"split '{split}' not present in manifest at {root}")
    items = []
    for image_id in ids:
        pixels = load_image(_find_image(root, split, image_id))
        label_path = os.path.join(root, "labels", split, image_id + ".txt")
        try:
            boxes = parse_annotations(label_path)
        except AnnotationError as exc:
            raise AnnotationError(f"{label_path}: {exc}") from None
        items.append(AnnotatedImage(image_id, pixels, boxes))
    return DatasetSplit(split, items)


@dataclass
class StatsReport:
    split: str
    images: int
    instances: int
    bins: int
    center_hist: np.ndarray            # (bins, bins) counts over (cy, cx)
    size_hist: np.ndarray              # (bins, bins) counts over (h, w)
    marginals: dict[str, dict[str, float]]

    def summary_line(self) -> str:
        return (f"stats split {self.split} images {self.images} "
                f"instances {self.instances}")


def dataset_stats(split: DatasetSplit, bins: int = 32) -> StatsReport:
    """Instance counts, 2-D center/size histograms, and marginal summaries."""
    values = {"cx": [], "cy": [], "w": [], "h": []}
    for item in split.items:
        for b in item.boxes:
            values["cx"].append(b.cx)
            values["cy"].append(b.cy)
            values["w"].append(b.w)
            values["h"].append(b.h)
    center_hist = np.zeros((bins, bins), dtype=np.int64)
    size_hist = np.zeros((bins, bins), dtype=np.int64)

    def _bin(v: float) -> int:
        return min(int(v * bins), bins - 1)

    for cx, cy, w, h in zip(values["cx"], values["cy"], values["w"], values["h"]):
        center_hist[_bin(cy), _bin(cx)] += 1
        size_hist[_bin(h), _bin(w)] += 1
    marginals = {}
    for name, vals in values.items():
        if vals:
            arr = np.asarray(vals, dtype=np.float64)
            marginals[name] = {
                "mean": float(arr.mean()), "std": float(arr.std()),
                "min": float(arr.min()), "max": float(arr.max()),
            }
        else:
            marginals[name] = {"mean": 0.0, "std": 0.0, "min": 0.0, "max": 0.0}
    return StatsReport(
        split=split.name, images=len(split.items), instances=len(values["cx"]),
        bins=bins, center_hist=center_hist, size_hist=size_hist,
        marginals=marginals)


def hist_csv_rows(hist: np.ndarray, bins: int) -> list[str]:
    rows = ["row,col,lo_y,lo_x,count"]
    for r in range(bins):
        for c in range(bins):
            rows.append(f"{r},{c},{r / bins:.6f},{c / bins:.6f},{int(hist[r, c])}")
    return rows


def write_stats_report(report: StatsReport, out_dir: str) -> dict[str, str]:
    """Writes summary + histogram CSVs; returns the written paths by kind."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    summary = os.path.join(out_dir, "stats_summary.csv")
    with open(summary, "w", encoding="utf-8") as f:
        f.write("field,count,mean,std,min,max\n")
        f.write(f"images,{report.images},,,,\n")
        f.write(f"instances,{report.instances},,,,\n")
        for name in ("cx", "cy", "w", "h"):
            m = report.marginals[name]
            f.write(f"{name},{report.instances},{m['mean']:.6f},{m['std']:.6f},"
                    f"{m['min']:.6f},{m['max']:.6f}\n")
    paths["summary"] = summary
    for kind, hist in (("centers", report.center_hist), ("sizes", report.size_hist)):
        path = os.path.join(out_dir, f"stats_hist_{kind}.csv")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(hist_csv_rows(hist, report.bins)) + "\n")
        paths[kind] = path
    return paths
