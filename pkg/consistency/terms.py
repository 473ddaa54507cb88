# consistency/terms.py

import logging
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from autodiff.tensor import Tensor
from consistency.detection import DetectionGrid, pc_in_time_loss
from consistency.errors import ConsistencyError
from consistency.normals import DEFAULT_BETA, DEFAULT_WINDOW, normals_consistency_loss, normals_from_depth
from consistency.photometric import PhotometricConfig, photometric_loss
from consistency.segmentation import combined_2d_loss, movable_mask
from geometry.camera import CameraIntrinsics, RigidMotion, warp

logger = logging.getLogger(__name__)

Outputs = Mapping[str, Tensor]
Sample = Mapping[str, np.ndarray]


class ConsistencyOptions(BaseModel):
    """Knobs shared by the registered consistency terms."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    movable_classes: List[int] = Field(default_factory=lambda: [2, 3])
    photometric: PhotometricConfig = PhotometricConfig()
    beta: float = Field(default=DEFAULT_BETA, gt=0)
    window: int = Field(default=DEFAULT_WINDOW, ge=1)


TermFn = Callable[[Dict[str, Outputs], Sequence[str], Sample, ConsistencyOptions], Tensor]


@dataclass(frozen=True)
class ConsistencyTerm:
    name: str
    required_outputs: FrozenSet[str]
    fn: TermFn
    min_participants: int = 1
    description: str = ""

    def __call__(self, predictions: Dict[str, Outputs], participants: Sequence[str], sample: Sample, options: Optional[ConsistencyOptions] = None) -> Tensor:
        if len(participants) < self.min_participants:
            raise ConsistencyError(f"term '{self.name}' needs at least {self.min_participants} participants")
        return self.fn(predictions, participants, sample, options or ConsistencyOptions())


_REGISTRY: Dict[str, ConsistencyTerm] = {}


def register_term(name: str, required_outputs: Sequence[str], min_participants: int = 1, description: str = ""):
    def decorator(fn: TermFn) -> TermFn:
        _REGISTRY[name] = ConsistencyTerm(name, frozenset(required_outputs), fn, min_participants, description)
        return fn
    return decorator


def get_term(name: str) -> ConsistencyTerm:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ConsistencyError(f"unknown consistency term '{name}' (known: {sorted(_REGISTRY)})") from None


def registered_terms() -> List[str]:
    return sorted(_REGISTRY)


def merge_outputs(predictions: Dict[str, Outputs], participants: Sequence[str]) -> Dict[str, Tensor]:
    merged: Dict[str, Tensor] = {}
    for task_id in participants:
        for key, value in predictions[task_id].items():
            if key in merged:
                raise ConsistencyError(f"output '{key}' produced by more than one participant")
            merged[key] = value
    return merged


def _require(outputs: Mapping[str, Tensor], keys: Sequence[str], term: str):
    missing = [k for k in keys if k not in outputs]
    if missing:
        raise ConsistencyError(f"term '{term}' is missing predictions {missing}")


# --- Frame-pair terms ---

def frame_pair_warps(outputs: Mapping[str, Tensor], sample: Sample, movable: Optional[Sequence[int]]):
    """Warp both frames of a pair with predicted depth, ego-motion and (when movable classes are known) object motion."""
    K = CameraIntrinsics.from_array(sample["intrinsics"])
    masks = [None, None]
    if movable is not None and "logits1" in outputs:
        masks = [movable_mask(outputs["logits1"], movable), movable_mask(outputs["logits2"], movable)]
    use_object_motion = masks[0] is not None and "delta_t12" in outputs

    warp12 = warp(
        outputs["depth1"],
        RigidMotion(outputs["rotation12"], outputs["translation12"]),
        K,
        outputs["delta_t12"] if use_object_motion else None,
        masks[0],
    )
    warp21 = warp(
        outputs["depth2"],
        RigidMotion(outputs["rotation21"], outputs["translation21"]),
        K,
        outputs["delta_t21"] if use_object_motion else None,
        masks[1],
    )
    return warp12, warp21


def _covisibility(sample: Sample):
    return sample.get("covis12"), sample.get("covis21")


@register_term(
    "scene_2d",
    ("depth1", "depth2", "rotation12", "translation12", "rotation21", "translation21", "logits1", "logits2"),
    description="photometric + segmentation consistency through depth, ego-motion and object motion",
)
def scene_2d_term(predictions, participants, sample, options):
    outputs = merge_outputs(predictions, participants)
    _require(outputs, sorted(get_term("scene_2d").required_outputs), "scene_2d")
    warp12, warp21 = frame_pair_warps(outputs, sample, options.movable_classes)
    mask1, mask2 = _covisibility(sample)
    return combined_2d_loss(
        Tensor(sample["rgb1"]), Tensor(sample["rgb2"]),
        outputs["logits1"], outputs["logits2"],
        warp12, warp21, options.photometric, mask1, mask2,
    )


@register_term(
    "photometric",
    ("depth1", "depth2", "rotation12", "translation12", "rotation21", "translation21"),
    description="photometric consistency of depth and ego-motion on a static scene",
)
def photometric_term(predictions, participants, sample, options):
    outputs = merge_outputs(predictions, participants)
    _require(outputs, sorted(get_term("photometric").required_outputs), "photometric")
    warp12, warp21 = frame_pair_warps(outputs, sample, None)
    mask1, mask2 = _covisibility(sample)
    return photometric_loss(Tensor(sample["rgb1"]), Tensor(sample["rgb2"]), warp12, warp21, options.photometric, mask1, mask2)


# --- Depth and normals ---

@register_term("normals", ("depth1", "normals1"), description="cosine distance between predicted normals and normals of predicted depth")
def normals_term(predictions, participants, sample, options):
    outputs = merge_outputs(predictions, participants)
    _require(outputs, ("depth1", "normals1"), "normals")
    K = CameraIntrinsics.from_array(sample["intrinsics"])
    n_depth, valid = normals_from_depth(outputs["depth1"], K, options.beta, options.window)
    return normals_consistency_loss(n_depth, outputs["normals1"], valid)


# --- Detection in time ---

@register_term("pc_in_time", ("class_logits", "residuals", "flow"), description="class and residual agreement along predicted box flow")
def pc_in_time_term(predictions, participants, sample, options):
    outputs = merge_outputs(predictions, participants)
    _require(outputs, ("class_logits", "residuals", "flow"), "pc_in_time")
    grid = DetectionGrid(outputs["class_logits"], outputs["residuals"], outputs["flow"])
    return pc_in_time_loss(grid)


# --- Toy coupling ---

@register_term("equality", ("output",), min_participants=2, description="mean squared difference between two models' outputs")
def equality_term(predictions, participants, sample, options):
    first, second = participants[0], participants[1]
    a, b = predictions[first]["output"], predictions[second]["output"]
    if a.shape != b.shape:
        raise ConsistencyError(f"equality term needs equal shapes, got {a.shape} and {b.shape}")
    diff = a - b
    return (diff * diff).mean()
