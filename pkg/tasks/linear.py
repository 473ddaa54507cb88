# tasks/linear.py

from typing import Dict, Mapping, Optional

import numpy as np

from autodiff.tensor import Tensor
from tasks.interface import TaskInterface, TaskModel
from tasks.layers import DenseLayer
from tasks.losses import mean_squared_error
from tasks.parameters import ModelParameters


class LinearModel(TaskModel):
    """y = x·W + b on a batch of feature rows; the toy model for coupled least squares."""

    kind = "linear"
    label_fields = ("y",)

    def __init__(self, task_id: str = "linear", n_samples: int = 16, in_features: int = 3, out_features: int = 1, init_scale: float = 1.0):
        super().__init__(task_id)
        self.n_samples = n_samples
        self.init_scale = init_scale
        self.layer = DenseLayer(task_id, in_features, out_features)

    def interface(self) -> TaskInterface:
        return TaskInterface(
            self.task_id,
            inputs={"x": (self.n_samples, self.layer.in_features)},
            outputs={"output": (self.n_samples, self.layer.out_features)},
        )

    def init_params(self, seed: int) -> ModelParameters:
        params = self.layer.init(np.random.default_rng(seed))
        return ModelParameters.from_arrays({name: self.init_scale * value for name, value in params.items()})

    def forward(self, params: ModelParameters, inputs: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        return {"output": self.layer(params.tensors, Tensor(inputs["x"]))}

    def supervised_loss(self, outputs: Mapping[str, Tensor], sample: Mapping[str, np.ndarray]) -> Optional[Tensor]:
        if "gt_y" not in sample:
            return None
        return mean_squared_error(outputs["output"], sample["gt_y"])
