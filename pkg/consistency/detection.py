# consistency/detection.py

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from autodiff.tensor import Tensor, TensorLike, as_tensor, getitem
from consistency.errors import ConsistencyError
from geometry.grid import GridSpec, angle_shift, round_half_down, wrap_angle

logger = logging.getLogger(__name__)

RESIDUAL_NAMES = ("dx", "dy", "dz", "dw", "dl", "dh", "dtheta")
SNAPPED_AXES = (0, 1, 6)
CONSTANT_AXES = (2, 3, 4, 5)
PARTICIPATION_LOGIT = 0.0  # sigmoid(logit) > 0.5


@dataclass(frozen=True)
class DetectionGrid:
    """
    Detector outputs on the BEV grid.

    class_logits: (n_x, n_y, n_a, n_f)
    residuals:    (n_x, n_y, n_a, n_f, 7) ordered (dx, dy, dz, dw, dl, dh, dθ)
    flow:         (n_x, n_y, n_a, n_f − 1, 3) ordered (flow_x, flow_y, flow_θ)

    Frame 0 is the current frame; flow slot k − 1 maps a frame-0 cell to its
    position in frame k.
    """

    class_logits: Tensor
    residuals: Tensor
    flow: Tensor

    def __post_init__(self):
        n_x, n_y, n_a, n_f = self.class_logits.shape
        if self.residuals.shape != (n_x, n_y, n_a, n_f, 7):
            raise ConsistencyError(f"residuals {self.residuals.shape} inconsistent with logits {self.class_logits.shape}")
        if self.flow.shape != (n_x, n_y, n_a, n_f - 1, 3):
            raise ConsistencyError(f"flow {self.flow.shape} inconsistent with logits {self.class_logits.shape}")

    @classmethod
    def from_arrays(cls, class_logits: TensorLike, residuals: TensorLike, flow: TensorLike) -> "DetectionGrid":
        return cls(as_tensor(class_logits), as_tensor(residuals), as_tensor(flow))

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.class_logits.shape

    def spec(self, cell_size: float = 0.32) -> GridSpec:
        n_x, n_y, n_a, n_f = self.shape
        return GridSpec(n_x, n_y, cell_size, n_a, n_f)


@dataclass(frozen=True)
class SnapResult:
    x: np.ndarray
    y: np.ndarray
    anchor: np.ndarray
    shift: np.ndarray  # (N, 3) snapped displacement (x′ − x, y′ − y, θ′ − θ)
    in_grid: np.ndarray

    def remainder(self, flow) -> np.ndarray:
        """flow_i − (i′ − i) for each pair."""
        return np.asarray(flow, dtype=np.float64) - self.shift


def anchor_snap(x, y, anchor, flow_x, flow_y, flow_theta, grid: GridSpec) -> SnapResult:
    """
    Snap (x + flow_x, y + flow_y) to the nearest cell and the anchor heading
    plus flow_θ to the nearest anchor orientation, ties rounding toward
    negative. The remainder flow_i − (i′ − i) is what snapping discarded.
    """
    x, y, anchor = (np.asarray(v, dtype=np.int64) for v in (x, y, anchor))
    flow_x, flow_y, flow_theta = (np.asarray(v, dtype=np.float64) for v in (flow_x, flow_y, flow_theta))

    x_new = round_half_down(x + flow_x)
    y_new = round_half_down(y + flow_y)
    heading = anchor * grid.anchor_step + flow_theta
    steps = round_half_down(heading / grid.anchor_step)
    anchor_new = np.mod(steps, grid.n_anchors)
    turn = wrap_angle(anchor_new * grid.anchor_step - anchor * grid.anchor_step)

    shift = np.stack([x_new - x, y_new - y, turn], axis=-1).astype(np.float64)
    return SnapResult(x_new, y_new, anchor_new, shift, grid.in_grid(x_new, y_new))


@dataclass(frozen=True)
class FlowPairs:
    source: Tuple[np.ndarray, np.ndarray, np.ndarray]
    target: Tuple[np.ndarray, np.ndarray, np.ndarray]
    shift: np.ndarray

    @property
    def count(self) -> int:
        return int(self.source[0].size)


def flow_pairs(grid: DetectionGrid, k: int) -> FlowPairs:
    """Participating frame-0 cells and the frame-k anchors their predicted flow snaps to."""
    n_x, n_y, n_a, n_f = grid.shape
    if not 1 <= k <= n_f - 1:
        raise ConsistencyError(f"frame offset {k} outside [1, {n_f - 1}]")
    spec = grid.spec()

    ix, iy, ia = np.nonzero(grid.class_logits.data[..., 0] > PARTICIPATION_LOGIT)
    flow = grid.flow.data[ix, iy, ia, k - 1]
    snapped = anchor_snap(ix, iy, ia, flow[:, 0], flow[:, 1], flow[:, 2], spec)
    keep = snapped.in_grid
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        logger.debug(f"{dropped} flow targets fall outside the grid for frame offset {k}")
    return FlowPairs(
        (ix[keep], iy[keep], ia[keep]),
        (snapped.x[keep], snapped.y[keep], snapped.anchor[keep]),
        snapped.shift[keep],
    )


def detection_class_consistency(grid: DetectionGrid, k: int) -> Tensor:
    """Mean squared difference of class logits between flow-connected detections in frames 0 and k."""
    pairs = flow_pairs(grid, k)
    if pairs.count == 0:
        return Tensor(0.0)
    current = getitem(grid.class_logits, pairs.source + (0,))
    past = getitem(grid.class_logits, pairs.target + (k,))
    diff = current - past
    return (diff * diff).mean()


def detection_residual_consistency(grid: DetectionGrid, k: int) -> Tensor:
    """
    Residual agreement between flow-connected detections.

    Position and heading residuals must differ by exactly the snapping
    remainder; box height, width, length and elevation residuals must match.
    The heading term is taken modulo π.
    """
    pairs = flow_pairs(grid, k)
    if pairs.count == 0:
        return Tensor(0.0)
    current = getitem(grid.residuals, pairs.source + (0,))
    past = getitem(grid.residuals, pairs.target + (k,))
    flow = getitem(grid.flow, pairs.source + (k - 1,))
    remainder = flow - pairs.shift

    snapped_axes = np.array(SNAPPED_AXES)
    # flow = (i′ + past) − (i + current), so past − current equals the remainder
    delta =getitem(past, (slice(None), snapped_axes)) - getitem(current, (slice(None), snapped_axes)) - remainder
    heading_wrap = np.zeros(delta.shape)
    heading_wrap[:, 2] = angle_shift(delta.data[:, 2])
    delta = delta + heading_wrap

    constant_axes = np.array(CONSTANT_AXES)
    same = getitem(past, (slice(None), constant_axes)) - getitem(current, (slice(None), constant_axes))
    per_pair = (delta * delta).sum(axis=-1) + (same * same).sum(axis=-1)
    return per_pair.mean()


def combined_pc_loss(grid: DetectionGrid, k: int) -> Tensor:
    return detection_class_consistency(grid, k) + detection_residual_consistency(grid, k)


def pc_in_time_loss(grid: DetectionGrid) -> Tensor:
    """Sum of the combined point-cloud consistency over every frame offset."""
    n_f = grid.shape[3]
    total = combined_pc_loss(grid, 1)
    for k in range(2, n_f):
        total = total + combined_pc_loss(grid, k)
    return total
