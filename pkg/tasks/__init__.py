from tasks.anchors import AnchorSet, anchor_match, decode_detections
from tasks.depth import DepthModel
from tasks.detector import GridDetector
from tasks.interface import TaskInterface, TaskInterfaceError, TaskModel
from tasks.linear import LinearModel
from tasks.motion import MotionModel
from tasks.normals import NormalsModel
from tasks.parameters import ModelParameters
from tasks.registry import MODEL_KINDS, build_model
from tasks.segmentation import SegmentationModel

__all__ = [
    "AnchorSet",
    "DepthModel",
    "GridDetector",
    "LinearModel",
    "MODEL_KINDS",
    "ModelParameters",
    "MotionModel",
    "NormalsModel",
    "SegmentationModel",
    "TaskInterface",
    "TaskInterfaceError",
    "TaskModel",
    "anchor_match",
    "build_model",
    "decode_detections",
]
