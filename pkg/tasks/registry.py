# tasks/registry.py

import logging
from typing import Any, Dict, Type

from tasks.depth import DepthModel
from tasks.detector import GridDetector
from tasks.interface import TaskModel
from tasks.linear import LinearModel
from tasks.motion import MotionModel
from tasks.normals import NormalsModel
from tasks.segmentation import SegmentationModel

logger = logging.getLogger(__name__)

MODEL_KINDS: Dict[str, Type[TaskModel]] = {
    cls.kind: cls
    for cls in (DepthModel, MotionModel, SegmentationModel, NormalsModel, GridDetector, LinearModel)
}


def build_model(kind: str, task_id: str, **options: Any) -> TaskModel:
    """Instantiate a task model by kind; ``options`` go to its constructor."""
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind '{kind}' (known: {sorted(MODEL_KINDS)})") from None
    model = cls(task_id=task_id, **options)
    logger.debug(f"Built {model!r} with options {options}")
    return model
