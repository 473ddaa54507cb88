# tasks/detector.py

import logging
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from autodiff.functional import upsample_nearest
from autodiff.tensor import Tensor, concatenate, relu, reshape, stack
from consistency.detection import DetectionGrid
from geometry.errors import GeometryError
from geometry.grid import GridSpec
from tasks.anchors import (
    DEFAULT_NMS_IOU,
    DEFAULT_SCORE_THRESHOLD,
    AnchorSet,
    decode_detections,
    sequence_targets,
)
from tasks.interface import TaskInterface, TaskModel
from tasks.layers import ConvLayer
from tasks.losses import flow_l2, residual_loss, sigmoid_cross_entropy, total_loss
from tasks.parameters import ModelParameters

logger = logging.getLogger(__name__)

PILLAR_FEATURES = 3
CLASS_PRIOR_LOGIT = -2.0


class GridDetector(TaskModel):
    """
    Single-class box detector on the bird's-eye-view grid.

    Input ``pillars`` is (n_f, n_x, n_y, 3) with per-cell point count, mean
    height and max height for every frame of the sequence, frame 0 current.
    The class and residual heads run on each frame with shared weights; the
    flow head reads the concatenated per-frame features.
    """

    kind = "detector"
    label_fields = ("boxes", "flow")

    def __init__(
        self,
        task_id: str = "detector",
        grid: Optional[GridSpec] = None,
        channels: int = 16,
        score_threshold: float = DEFAULT_SCORE_THRESHOLD,
        nms_iou: float = DEFAULT_NMS_IOU,
    ):
        super().__init__(task_id)
        self.grid = grid or GridSpec()
        if self.grid.n_x % 2 or self.grid.n_y % 2:
            raise GeometryError(f"detector grid sides must be even, got {self.grid.n_x}x{self.grid.n_y}")
        self.anchors = AnchorSet(self.grid)
        self.score_threshold = score_threshold
        self.nms_iou = nms_iou

        c, n_a, n_f = channels, self.grid.n_anchors, self.grid.n_frames
        self.channels = c
        self.block1 = ConvLayer("det.block1", PILLAR_FEATURES, c)
        self.block2 = ConvLayer("det.block2", c, 2 * c, stride=2)
        self.block3 = ConvLayer("det.block3", 3 * c, c)
        self.class_head = ConvLayer("det.class", c, n_a, kernel=1)
        self.residual_head = ConvLayer("det.residual", c, 7 * n_a, kernel=1)
        self.flow_head = ConvLayer("det.flow", n_f * c, 3 * (n_f - 1) * n_a)

    @property
    def layers(self) -> List[ConvLayer]:
        return [self.block1, self.block2, self.block3, self.class_head, self.residual_head, self.flow_head]

    def interface(self) -> TaskInterface:
        g = self.grid
        cells = (g.n_x, g.n_y, g.n_anchors)
        return TaskInterface(
            self.task_id,
            inputs={"pillars": (g.n_frames, g.n_x, g.n_y, PILLAR_FEATURES)},
            outputs={
                "class_logits": cells + (g.n_frames,),
                "residuals": cells + (g.n_frames, 7),
                "flow": cells + (g.n_frames - 1, 3),
            },
        )

    def init_params(self, seed: int) -> ModelParameters:
        rng = np.random.default_rng(seed)
        params: Dict[str, np.ndarray] = {}
        for layer in self.layers:
            params.update(layer.init(rng))
        params["det.class.bias"] = np.full(self.grid.n_anchors, CLASS_PRIOR_LOGIT)
        return ModelParameters.from_arrays(params)

    def _backbone(self, params: Mapping[str, Tensor], frame: np.ndarray) -> Tensor:
        features = np.array(frame, dtype=np.float64)
        features[..., 0] = np.log1p(features[..., 0])
        x = Tensor(features)
        b1 = relu(self.block1(params, x))
        b2 = relu(self.block2(params, b1))
        return relu(self.block3(params, concatenate([upsample_nearest(b2, 2), b1], axis=-1)))

    def forward(self, params: ModelParameters, inputs: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        g = self.grid
        cells = (g.n_x, g.n_y, g.n_anchors)
        features = [self._backbone(params.tensors, frame) for frame in np.asarray(inputs["pillars"])]
        class_logits = stack([reshape(self.class_head(params.tensors, f), cells) for f in features], axis=-1)
        residuals = stack([reshape(self.residual_head(params.tensors, f), cells + (7,)) for f in features], axis=3)
        flow = reshape(self.flow_head(params.tensors, concatenate(features, axis=-1)), cells + (g.n_frames - 1, 3))
        return {"class_logits": class_logits, "residuals": residuals, "flow": flow}

    def detection_grid(self, outputs: Mapping[str, Tensor]) -> DetectionGrid:
        return DetectionGrid(outputs["class_logits"], outputs["residuals"], outputs["flow"])

    def supervised_loss(self, outputs: Mapping[str, Tensor], sample: Mapping[str, np.ndarray]) -> Optional[Tensor]:
        """Sigmoid cross-entropy on classes, smooth-L1 on residuals of positives, L2 on frame-0 flow."""
        if "gt_boxes" not in sample:
            return None
        targets = sequence_targets(sample["gt_boxes"], self.anchors, sample.get("gt_flow"))
        class_loss = sigmoid_cross_entropy(outputs["class_logits"], targets.classes)
        box_loss = residual_loss(outputs["residuals"], targets.residuals, targets.positive)
        flow_loss = flow_l2(outputs["flow"], targets.flow, targets.flow_positive) if "gt_flow" in sample else None
        return total_loss(class_loss, box_loss, flow_loss)

    def detect(self, outputs: Mapping[str, Tensor], frame: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        """Decoded world boxes and scores for one frame of a forward pass."""
        return decode_detections(
            outputs["class_logits"].data[..., frame],
            outputs["residuals"].data[..., frame, :],
            self.anchors,
            self.score_threshold,
            self.nms_iou,
        )
