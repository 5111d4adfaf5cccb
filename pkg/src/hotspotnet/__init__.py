"""Desk-scale thermal hotspot detection: a depthwise-separable CNN with
channel attention, anchor-free heads, NMS post-processing, and mAP
evaluation, driven end-to-end by a small CLI."""

__version__ = "0.1.0"

from .backbone import BackboneConfig
from .head import HeadConfig
from .model import Detector, ModelConfig
from .postprocess import Detection, NMSConfig, iou, nms

__all__ = [
    "BackboneConfig",
    "Detection",
    "Detector",
    "HeadConfig",
    "ModelConfig",
    "NMSConfig",
    "iou",
    "nms",
    "__version__",
]
