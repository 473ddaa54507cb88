# tasks/motion.py

import logging
from typing import Dict, Mapping, Optional

import numpy as np

from autodiff.tensor import Tensor, absolute, concatenate, getitem, reshape
from geometry.camera import RigidMotion, rotation_from_params
from tasks.interface import TaskInterface, TaskModel
from tasks.layers import DenseLayer, EncoderDecoder, image_input
from tasks.parameters import ModelParameters

logger = logging.getLogger(__name__)

# Small output scale keeps the initial motion near identity.
EGO_SCALE = 0.01
OBJECT_SCALE = 0.01

# gt_motion layout
MOTION_FIELDS = ("axis_angle12", "translation12", "axis_angle21", "translation21")


class MotionModel(TaskModel):
    """
    Camera ego-motion in both directions plus per-pixel object translation
    fields, all from one pass over the channel-concatenated frame pair.
    """

    kind = "motion"
    label_fields = ("motion",)

    def __init__(self, task_id: str = "motion", height: int = 64, width: int = 64, channels: int = 8):
        super().__init__(task_id)
        self.height = height
        self.width = width
        self.net = EncoderDecoder("motion", 6, 6, channels)
        self.ego = DenseLayer("motion.ego", self.net.bottleneck_channels, 12)

    def interface(self) -> TaskInterface:
        image = (self.height, self.width, 3)
        field = (self.height, self.width, 3)
        outputs = {"delta_t12": field, "delta_t21": field}
        for direction in ("12", "21"):
            outputs[f"axis_angle{direction}"] = (3,)
            outputs[f"translation{direction}"] = (3,)
            outputs[f"rotation{direction}"] = (3, 3)
        return TaskInterface(self.task_id, inputs={"rgb1": image, "rgb2": image}, outputs=outputs)

    def init_params(self, seed: int) -> ModelParameters:
        rng = np.random.default_rng(seed)
        params = self.net.init(rng)
        params.update(self.ego.init(rng))
        return ModelParameters.from_arrays(params)

    def forward(self, params: ModelParameters, inputs: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        dense, bottleneck = self.net(params.tensors, image_input(inputs["rgb1"], inputs["rgb2"]))

        # Global average pooling feeds the ego-motion head.
        pooled = reshape(bottleneck.mean(axis=(0, 1)), (1, self.net.bottleneck_channels))
        ego = reshape(self.ego(params.tensors, pooled), (12,)) * EGO_SCALE

        outputs: Dict[str, Tensor] = {}
        for index, name in enumerate(MOTION_FIELDS):
            outputs[name] = getitem(ego, slice(3 * index, 3 * index + 3))
        outputs["rotation12"] = rotation_from_params(outputs["axis_angle12"])
        outputs["rotation21"] = rotation_from_params(outputs["axis_angle21"])
        outputs["delta_t12"] = getitem(dense, (Ellipsis, slice(0, 3))) * OBJECT_SCALE
        outputs["delta_t21"] = getitem(dense, (Ellipsis, slice(3, 6))) * OBJECT_SCALE
        return outputs

    def motions(self, outputs: Mapping[str, Tensor]):
        """(RigidMotion 1→2, RigidMotion 2→1) from a forward pass."""
        return (
            RigidMotion(outputs["rotation12"], outputs["translation12"]),
            RigidMotion(outputs["rotation21"], outputs["translation21"]),
        )

    def supervised_loss(self, outputs: Mapping[str, Tensor], sample: Mapping[str, np.ndarray]) -> Optional[Tensor]:
        """L1 on axis-angle and translation against ``gt_motion``."""
        if "gt_motion" not in sample:
            return None
        predicted = concatenate([outputs[name] for name in MOTION_FIELDS])
        return absolute(predicted - np.asarray(sample["gt_motion"], dtype=np.float64)).mean()
