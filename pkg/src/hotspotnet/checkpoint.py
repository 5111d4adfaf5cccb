"""Flat binary checkpoint format.

Layout (all integers little-endian):

    magic   8 bytes  b"HSNETCKP"
    version u32      currently 1
    config  u32 length + utf-8 key=value lines (model configuration)
    step    u64      optimizer step count (0 when no optimizer state follows)
    count   u32      number of tensor records
    record  u32 name length, name utf-8, u32 rank, u32*rank extents,
            float32 little-endian values in row-major order

Parameter tensors appear first in declaration order under ``param.<name>``;
optimizer moments, when present, follow as ``adam.m.<name>`` / ``adam.v.<name>``.
Round-tripping a checkpoint is bit-exact.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .backbone import BackboneConfig
from .head import HeadConfig
from .model import Detector, ModelConfig
from .ops import FLOAT

MAGIC = b"HSNETCKP"
VERSION = 1


def config_to_text(config: ModelConfig) -> str:
    bb, hd = config.backbone, config.head
    uh, uw = config.resolved_unified()
    lines = [
        f"input_h={bb.input_resolution[0]}",
        f"input_w={bb.input_resolution[1]}",
        "widths=" + ",".join(str(v) for v in bb.stage_widths),
        "strides=" + ",".join(str(v) for v in bb.stage_strides),
        f"se_reduction={bb.se_reduction}",
        f"num_classes={hd.num_classes}",
        "size_bounds=" + ",".join(f"{hi:.6f}" for _, hi in hd.size_ranges),
        f"lambda_neg={hd.lambda_neg:.6f}",
        f"agg_channels={config.agg_channels}",
        f"unified_h={uh}",
        f"unified_w={uw}",
    ]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ModelConfig:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    bounds = [float(v) for v in kv["size_bounds"].split(",")]
    ranges, lo = [], 0.0
    for hi in bounds:
        ranges.append((lo, hi))
        lo = hi
    return ModelConfig(
        backbone=BackboneConfig(
            input_resolution=(int(kv["input_h"]), int(kv["input_w"])),
            stage_widths=tuple(int(v) for v in kv["widths"].split(",")),
            stage_strides=tuple(int(v) for v in kv["strides"].split(",")),
            se_reduction=int(kv["se_reduction"]),
        ),
        head=HeadConfig(
            num_classes=int(kv["num_classes"]),
            size_ranges=tuple(ranges),
            lambda_neg=float(kv["lambda_neg"]),
        ),
        agg_channels=int(kv["agg_channels"]),
        unified_resolution=(int(kv["unified_h"]), int(kv["unified_w"])),
    )


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype=FLOAT)
    name_b = name.encode("utf-8")
    buf.write(struct.pack("<I", len(name_b)))
    buf.write(name_b)
    buf.write(struct.pack("<I", data.ndim))
    buf.write(struct.pack(f"<{data.ndim}I", *data.shape))
    buf.write(data.astype("<f4").tobytes())


def _read_tensor(buf: io.BufferedReader):
    (name_len,) = struct.unpack("<I", buf.read(4))
    name = buf.read(name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", buf.read(4))
    shape = struct.unpack(f"<{rank}I", buf.read(4 * rank))
    count = int(np.prod(shape)) if rank else 1
    arr = np.frombuffer(buf.read(4 * count), dtype="<f4").reshape(shape).astype(FLOAT)
    return name, arr


def save_checkpoint(path: str, model: Detector, adam=None) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = config_to_text(model.config).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    params = model.params()
    tensors = [("param." + p.name, p.value) for p in params]
    step = 0
    if adam is not None:
        step = adam.step
        tensors += [("adam.m." + p.name, m) for p, m in zip(params, adam.m)]
        tensors += [("adam.v." + p.name, v) for p, v in zip(params, adam.v)]
    buf.write(struct.pack("<Q", step))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _write_tensor(buf, name, arr)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path: str):
    """Returns (model, adam_state) where adam_state is None or a dict with
    'step', 'm', 'v' aligned to the model's parameter order."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", f.read(4))
        config = config_from_text(f.read(cfg_len).decode("utf-8"))
        (step,) = struct.unpack("<Q", f.read(8))
        (count,) = struct.unpack("<I", f.read(4))
        tensors = dict(_read_tensor(f) for _ in range(count))
    model = Detector(config, seed=0)
    for p in model.params():
        key = "param." + p.name
        if key not in tensors:
            raise ValueError(f"{path}: missing tensor {key}")
        if tensors[key].shape != p.value.shape:
            raise ValueError(
                f"{path}: tensor {key} shape {tensors[key].shape} != expected "
                f"{p.value.shape}")
        p.value[...] = tensors[key]
    adam_state = None
    if any(k.startswith("adam.m.") for k in tensors):
        adam_state = {
            "step": step,
            "m": [tensors["adam.m." + p.name].copy() for p in model.params()],
            "v": [tensors["adam.v." + p.name].copy() for p in model.params()],
        }
    return model, adam_state
