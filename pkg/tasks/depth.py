# tasks/depth.py

import logging
from typing import Dict, Mapping, Optional

import numpy as np

from autodiff.tensor import Tensor, reshape, softplus
from tasks.interface import TaskInterface, TaskModel
from tasks.layers import EncoderDecoder, image_input
from tasks.losses import depth_l1, total_loss
from tasks.parameters import ModelParameters

logger = logging.getLogger(__name__)

DEPTH_FLOOR = 1e-3
PRIOR_DEPTH = 5.0

FRAMES = (("rgb1", "depth1", "gt_depth1"), ("rgb2", "depth2", "gt_depth2"))


class DepthModel(TaskModel):
    """Per-pixel depth from a single RGB frame; ``rgb2`` is optional and predicted independently."""

    kind = "depth"
    label_fields = ("depth",)

    def __init__(self, task_id: str = "depth", height: int = 64, width: int = 64, channels: int = 8, prior_depth: float = PRIOR_DEPTH):
        super().__init__(task_id)
        self.height = height
        self.width = width
        self.prior_depth = prior_depth
        self.net = EncoderDecoder("depth", 3, 1, channels)

    def interface(self) -> TaskInterface:
        image = (self.height, self.width, 3)
        plane = (self.height, self.width)
        return TaskInterface(
            self.task_id,
            inputs={"rgb1": image},
            outputs={"depth1": plane, "depth2": plane},
            optional_inputs={"rgb2": image},
        )

    def init_params(self, seed: int) -> ModelParameters:
        params = self.net.init(np.random.default_rng(seed))
        # Start near the prior depth instead of softplus(0).
        params["depth.head.bias"] = np.full(1, np.log(np.expm1(self.prior_depth - DEPTH_FLOOR)))
        return ModelParameters.from_arrays(params)

    def depth(self, params: ModelParameters, rgb: np.ndarray) -> Tensor:
        head, _ = self.net(params.tensors, image_input(rgb))
        return softplus(reshape(head, (self.height, self.width))) + DEPTH_FLOOR

    def forward(self, params: ModelParameters, inputs: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        return {out: self.depth(params, inputs[key]) for key, out, _ in FRAMES if key in inputs}

    def supervised_loss(self, outputs: Mapping[str, Tensor], sample: Mapping[str, np.ndarray]) -> Optional[Tensor]:
        return total_loss(*(depth_l1(outputs[out], sample[gt]) for _, out, gt in FRAMES if out in outputs and gt in sample))
