# tasks/anchors.py

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from evaluation.boxes import rotated_nms
from geometry.grid import GridSpec, nearest_anchor, round_half_down, wrap_angle

logger = logging.getLogger(__name__)

DEFAULT_SCORE_THRESHOLD = 0.5
DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class AnchorSet:
    """Reference vehicle box at every cell and anchor heading. Dimensions in metres; z is the box centre height."""

    grid: GridSpec = field(default_factory=GridSpec)
    z: float = 0.8
    width: float = 1.8
    length: float = 4.5
    height: float = 1.6

    @property
    def constants(self) -> np.ndarray:
        return np.array([self.z, self.width, self.length, self.height])

    def encode(self, boxes: np.ndarray, ix: np.ndarray, iy: np.ndarray, ia: np.ndarray) -> np.ndarray:
        """7-value residuals of world boxes against the anchors at (ix, iy, ia); positions in grid units."""
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
        gx, gy = self.grid.to_grid(boxes[:, 0]), self.grid.to_grid(boxes[:, 1])
        return np.column_stack([
            gx - ix,
            gy - iy,
            boxes[:, 2:6] - self.constants,
            wrap_angle(boxes[:, 6] - ia * self.grid.anchor_step),
        ])

    def decode(self, residuals: np.ndarray, ix: np.ndarray, iy: np.ndarray, ia: np.ndarray) -> np.ndarray:
        residuals = np.asarray(residuals, dtype=np.float64).reshape(-1, 7)
        return np.column_stack([
            self.grid.to_meters(ix + residuals[:, 0]),
            self.grid.to_meters(iy + residuals[:, 1]),
            residuals[:, 2:6] + self.constants,
            ia * self.grid.anchor_step + residuals[:, 6],
        ])


@dataclass
class AnchorTargets:
    positive: np.ndarray    # (n_x, n_y, n_a) bool
    residuals: np.ndarray   # (n_x, n_y, n_a, 7)
    box_index: np.ndarray   # (n_x, n_y, n_a) int, −1 for negatives
    dropped: List[int] = field(default_factory=list)

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.positive))


def anchor_cells(boxes: np.ndarray, anchors: AnchorSet) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cell containing each box centre and the anchor nearest its heading modulo π."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    grid = anchors.grid
    return (
        round_half_down(grid.to_grid(boxes[:, 0])),
        round_half_down(grid.to_grid(boxes[:, 1])),
        nearest_anchor(boxes[:, 6], grid),
    )


def anchor_match(boxes: np.ndarray, anchors: AnchorSet) -> AnchorTargets:
    """
    Assign each ground-truth box to one (cell, anchor) slot.

    Boxes whose centre falls outside the grid are ignored. When two boxes
    claim the same slot the one whose centre is nearer the cell centre wins
    and the other is dropped.
    """
    grid = anchors.grid
    shape = (grid.n_x, grid.n_y, grid.n_anchors)
    targets = AnchorTargets(np.zeros(shape, dtype=bool), np.zeros(shape + (7,)), np.full(shape, -1, dtype=np.int64))
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    if len(boxes) == 0:
        return targets

    ix, iy, ia = anchor_cells(boxes, anchors)
    inside = grid.in_grid(ix, iy)
    if not inside.all():
        logger.debug(f"{int(np.count_nonzero(~inside))} boxes fall outside the grid")
    residuals = anchors.encode(boxes, ix, iy, ia)
    distance = residuals[:, 0] ** 2 + residuals[:, 1] ** 2

    for b in np.argsort(distance, kind="stable"):
        if not inside[b]:
            continue
        slot = (ix[b], iy[b], ia[b])
        if targets.positive[slot]:
            targets.dropped.append(int(b))
            logger.warning(f"Box {b} dropped: anchor slot {tuple(int(v) for v in slot)} already taken by box {targets.box_index[slot]}")
            continue
        targets.positive[slot] = True
        targets.residuals[slot] = residuals[b]
        targets.box_index[slot] = b
    return targets


@dataclass
class SequenceTargets:
    """Detector targets over a whole point-cloud sequence."""

    classes: np.ndarray         # (n_x, n_y, n_a, n_f)
    residuals: np.ndarray       # (n_x, n_y, n_a, n_f, 7)
    positive: np.ndarray        # (n_x, n_y, n_a, n_f) bool
    flow: np.ndarray            # (n_x, n_y, n_a, n_f − 1, 3)
    flow_positive: np.ndarray   # (n_x, n_y, n_a) bool


def sequence_targets(gt_boxes: np.ndarray, anchors: AnchorSet, gt_flow: Optional[np.ndarray] = None) -> SequenceTargets:
    """
    Per-frame anchor targets for ``gt_boxes`` (n_f, B, 7), track b in every
    frame. Flow targets (B, n_f − 1, 3) are placed on the frame-0 anchors.
    """
    grid = anchors.grid
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64)
    n_f = grid.n_frames
    shape = (grid.n_x, grid.n_y, grid.n_anchors)
    positive = np.zeros(shape + (n_f,), dtype=bool)
    residuals = np.zeros(shape + (n_f, 7))
    flow = np.zeros(shape + (n_f - 1, 3))
    flow_positive = np.zeros(shape, dtype=bool)

    for f in range(n_f):
        frame = anchor_match(gt_boxes[f] if len(gt_boxes) else np.zeros((0, 7)), anchors)
        positive[..., f] = frame.positive
        residuals[..., f, :] = frame.residuals
        if f == 0 and gt_flow is not None:
            tracks = frame.box_index[frame.positive]
            flow[frame.positive] = np.asarray(gt_flow, dtype=np.float64)[tracks]
            flow_positive = frame.positive.copy()
    return SequenceTargets(positive.astype(np.float64), residuals, positive, flow, flow_positive)


def decode_detections(
    class_logits: np.ndarray,
    residuals: np.ndarray,
    anchors: AnchorSet,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    nms_iou: float = DEFAULT_NMS_IOU,
    max_detections: int = 100,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    World boxes and scores for one frame: (n_x, n_y, n_a) logits and
    (n_x, n_y, n_a, 7) residuals. Anchors scoring above the threshold are
    decoded, then rotated greedy NMS keeps the best ``max_detections``.
    """
    scores = 1.0 / (1.0 + np.exp(-np.asarray(class_logits, dtype=np.float64)))
    ix, iy, ia = np.nonzero(scores > score_threshold)
    if ix.size == 0:
        return np.zeros((0, 7)), np.zeros(0)
    boxes = anchors.decode(np.asarray(residuals)[ix, iy, ia], ix, iy, ia)
    picked = scores[ix, iy, ia]
    keep = rotated_nms(boxes, picked, nms_iou)[:max_detections]
    return boxes[keep], picked[keep]
