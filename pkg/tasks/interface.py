# tasks/interface.py

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from autodiff.tensor import Tensor
from tasks.parameters import ModelParameters

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]


class TaskInterfaceError(ValueError):
    """Inputs do not match a model's declared interface."""


@dataclass(frozen=True)
class TaskInterface:
    task_id: str
    inputs: Dict[str, Shape]
    outputs: Dict[str, Shape]
    optional_inputs: Dict[str, Shape] = field(default_factory=dict)

    def check_inputs(self, inputs: Mapping[str, np.ndarray]):
        for key, shape in self.inputs.items():
            if key not in inputs:
                raise TaskInterfaceError(f"task '{self.task_id}' requires input '{key}'")
            if tuple(np.shape(inputs[key])) != shape:
                raise TaskInterfaceError(f"task '{self.task_id}' input '{key}' has shape {np.shape(inputs[key])}, expected {shape}")
        for key, shape in self.optional_inputs.items():
            if key in inputs and tuple(np.shape(inputs[key])) != shape:
                raise TaskInterfaceError(f"task '{self.task_id}' input '{key}' has shape {np.shape(inputs[key])}, expected {shape}")

    def check_outputs(self, outputs: Mapping[str, Tensor]):
        for key, value in outputs.items():
            expected = self.outputs.get(key)
            if expected is None:
                raise TaskInterfaceError(f"task '{self.task_id}' produced undeclared output '{key}'")
            if value.shape != expected:
                raise TaskInterfaceError(f"task '{self.task_id}' output '{key}' has shape {value.shape}, expected {expected}")


class TaskModel(ABC):
    """
    A task network: parameters live outside the model in ``ModelParameters``
    so any snapshot can be evaluated by the same instance.
    """

    kind: str = "base"
    # Dataset label fields the supervised loss reads.
    label_fields: Tuple[str, ...] = ()

    def __init__(self, task_id: str):
        self.task_id = task_id

    @abstractmethod
    def interface(self) -> TaskInterface:
        ...

    @abstractmethod
    def init_params(self, seed: int) -> ModelParameters:
        ...

    @abstractmethod
    def forward(self, params: ModelParameters, inputs: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        ...

    def supervised_loss(self, outputs: Mapping[str, Tensor], sample: Mapping[str, np.ndarray]) -> Optional[Tensor]:
        """Loss against the labels in ``sample``, or None when the sample carries none."""
        return None

    def select_inputs(self, sample: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        spec = self.interface()
        keys = list(spec.inputs) + [k for k in spec.optional_inputs if k in sample]
        return {key: sample[key] for key in keys}

    def __call__(self, params: ModelParameters, inputs: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        spec = self.interface()
        spec.check_inputs(inputs)
        outputs = self.forward(params, inputs)
        spec.check_outputs(outputs)
        return outputs

    def __repr__(self):
        return f"<{type(self).__name__}(task_id='{self.task_id}')>"
