# tasks/normals.py

from typing import Dict, Mapping, Optional

import numpy as np

from autodiff.tensor import Tensor, sqrt
from tasks.interface import TaskInterface, TaskModel
from tasks.layers import EncoderDecoder, image_input
from tasks.losses import normals_cosine, total_loss
from tasks.parameters import ModelParameters

UNIT_EPS = 1e-12

FRAMES = (("rgb1", "normals1", "gt_normals1"), ("rgb2", "normals2", "gt_normals2"))


class NormalsModel(TaskModel):
    """
    Unit surface normals per pixel, in camera coordinates.

    Normals point away from the camera: a fronto-parallel wall gives (0, 0, 1).
    """

    kind = "normals"
    label_fields = ("normals",)

    def __init__(self, task_id: str = "normals", height: int = 64, width: int = 64, channels: int = 8):
        super().__init__(task_id)
        self.height = height
        self.width = width
        self.net = EncoderDecoder("normals", 3, 3, channels)

    def interface(self) -> TaskInterface:
        image = (self.height, self.width, 3)
        field = (self.height, self.width, 3)
        return TaskInterface(
            self.task_id,
            inputs={"rgb1": image},
            outputs={"normals1": field, "normals2": field},
            optional_inputs={"rgb2": image},
        )

    def init_params(self, seed: int) -> ModelParameters:
        params = self.net.init(np.random.default_rng(seed))
        params["normals.head.bias"] = np.array([0.0, 0.0, 1.0])
        return ModelParameters.from_arrays(params)

    def normals(self, params: ModelParameters, rgb: np.ndarray) -> Tensor:
        v, _ = self.net(params.tensors, image_input(rgb))
        return v / sqrt((v * v).sum(axis=-1, keepdims=True) + UNIT_EPS)

    def forward(self, params: ModelParameters, inputs: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        return {out: self.normals(params, inputs[key]) for key, out, _ in FRAMES if key in inputs}

    def supervised_loss(self, outputs: Mapping[str, Tensor], sample: Mapping[str, np.ndarray]) -> Optional[Tensor]:
        return total_loss(*(normals_cosine(outputs[out], sample[gt]) for _, out, gt in FRAMES if out in outputs and gt in sample))
