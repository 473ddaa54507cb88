# tasks/segmentation.py

from typing import Dict, Mapping, Optional

import numpy as np

from autodiff.tensor import Tensor
from tasks.interface import TaskInterface, TaskModel
from tasks.layers import EncoderDecoder, image_input
from tasks.losses import seg_cross_entropy, total_loss
from tasks.parameters import ModelParameters

FRAMES = (("rgb1", "logits1", "gt_seg1"), ("rgb2", "logits2", "gt_seg2"))


class SegmentationModel(TaskModel):
    """Per-pixel class logits for each frame present in the inputs."""

    kind = "segmentation"
    label_fields = ("seg",)

    def __init__(self, task_id: str = "segmentation", height: int = 64, width: int = 64, n_classes: int = 4, channels: int = 8):
        super().__init__(task_id)
        self.height = height
        self.width = width
        self.n_classes = n_classes
        self.net = EncoderDecoder("seg", 3, n_classes, channels)

    def interface(self) -> TaskInterface:
        image = (self.height, self.width, 3)
        logits = (self.height, self.width, self.n_classes)
        return TaskInterface(
            self.task_id,
            inputs={"rgb1": image},
            outputs={"logits1": logits, "logits2": logits},
            optional_inputs={"rgb2": image},
        )

    def init_params(self, seed: int) -> ModelParameters:
        return ModelParameters.from_arrays(self.net.init(np.random.default_rng(seed)))

    def forward(self, params: ModelParameters, inputs: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        outputs = {}
        for key, out, _ in FRAMES:
            if key in inputs:
                outputs[out], _ = self.net(params.tensors, image_input(inputs[key]))
        return outputs

    def supervised_loss(self, outputs: Mapping[str, Tensor], sample: Mapping[str, np.ndarray]) -> Optional[Tensor]:
        return total_loss(*(seg_cross_entropy(outputs[out], sample[gt]) for _, out, gt in FRAMES if out in outputs and gt in sample))
