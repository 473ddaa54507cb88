# synth/point_clouds.py

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from consistency.detection import anchor_snap
from geometry.grid import GridSpec, round_half_down, wrap_angle
from synth.errors import SceneConfigError
from tasks.anchors import AnchorSet, anchor_match, sequence_targets

logger = logging.getLogger(__name__)

FRAME_SPACING = 0.5  # seconds between consecutive point clouds
PLACEMENT_TRIES = 200


class SequenceConfig(BaseModel):
    """Point-cloud sequence on the detection grid; frame 0 is the current frame, frame k is k·Δ seconds earlier."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_x: int = Field(default=64, ge=2)
    n_y: int = Field(default=64, ge=2)
    cell_size: float = Field(default=0.32, gt=0)
    n_anchors: int = Field(default=2, ge=1)
    n_frames: int = Field(default=3, ge=2)
    frame_spacing: float = Field(default=FRAME_SPACING, gt=0)
    n_vehicles: int = Field(default=3, ge=0)
    max_speed: float = Field(default=4.0, ge=0)
    max_yaw_rate: float = Field(default=0.2, ge=0)
    dimension_jitter: float = Field(default=0.2, ge=0)
    points_per_box: int = Field(default=200, ge=1)
    ground_points: int = Field(default=800, ge=0)
    margin: float = Field(default=1.5, ge=0)
    static: bool = False

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.n_x, self.n_y, self.cell_size, self.n_anchors, self.n_frames)


@dataclass(frozen=True)
class BoxTrack:
    """One vehicle across the sequence: (n_f, 7) world boxes (x, y, z, w, ℓ, h, θ), constant z, w, ℓ, h."""

    boxes: np.ndarray
    grid: GridSpec

    @property
    def grid_boxes(self) -> np.ndarray:
        """Same boxes with x, y in grid units."""
        boxes = self.boxes.copy()
        boxes[:, :2] = self.grid.to_grid(boxes[:, :2])
        return boxes

    def flow(self) -> np.ndarray:
        """(n_f − 1, 3) displacement from frame 0 to each earlier frame: grid units and heading modulo π."""
        g = self.grid_boxes
        return np.column_stack([
            g[1:, 0] - g[0, 0],
            g[1:, 1] - g[0, 1],
            wrap_angle(g[1:, 6] - g[0, 6]),
        ])


@dataclass
class PointCloudSequence:
    clouds: List[np.ndarray]     # per frame (N, 3) points (x, y, height)
    tracks: List[BoxTrack]
    grid: GridSpec

    @property
    def gt_boxes(self) -> np.ndarray:
        if not self.tracks:
            return np.zeros((self.grid.n_frames, 0, 7))
        return np.stack([t.boxes for t in self.tracks], axis=1)

    @property
    def gt_flow(self) -> np.ndarray:
        if not self.tracks:
            return np.zeros((0, self.grid.n_frames - 1, 3))
        return np.stack([t.flow() for t in self.tracks])

    def sample(self) -> Dict[str, np.ndarray]:
        return {
            "pillars": np.stack([voxelize(cloud, self.grid) for cloud in self.clouds]),
            "gt_boxes": self.gt_boxes,
            "gt_flow": self.gt_flow,
        }


def _box_surface_points(box: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Points on the top and four sides of a box resting on the ground."""
    x, y, z, w, l, h, theta = box
    face = rng.integers(0, 5, count)
    u, v = rng.uniform(-0.5, 0.5, count), rng.uniform(0.0, 1.0, count)
    local = np.zeros((count, 3))
    # top
    top = face == 0
    local[top] = np.column_stack([u[top] * l, rng.uniform(-0.5, 0.5, top.sum()) * w, np.full(top.sum(), h)])
    # front/back faces along the heading
    for sign, index in ((1.0, 1), (-1.0, 2)):
        m = face == index
        local[m] = np.column_stack([np.full(m.sum(), sign * 0.5 * l), u[m] * w, v[m] * h])
    # left/right faces
    for sign, index in ((1.0, 3), (-1.0, 4)):
        m = face == index
        local[m] = np.column_stack([u[m] * l, np.full(m.sum(), sign * 0.5 * w), v[m] * h])
    c, s = np.cos(theta), np.sin(theta)
    world = np.empty_like(local)
    world[:, 0] = x + c * local[:, 0] - s * local[:, 1]
    world[:, 1] = y + s * local[:, 0] + c * local[:, 1]
    world[:, 2] = local[:, 2]
    return world


def _place_vehicles(config: SequenceConfig, anchors: AnchorSet, rng: np.random.Generator) -> np.ndarray:
    """(n_vehicles, 2) frame-0 centres at least one jittered box diagonal apart."""
    x_min, x_max, y_min, y_max = config.grid.extent
    low = np.array([x_min, y_min]) + config.margin
    high = np.array([x_max, y_max]) - config.margin
    if np.any(high < low):
        raise SceneConfigError(f"margin {config.margin} leaves no room on a {config.n_x}x{config.n_y} grid")
    clearance = np.hypot(anchors.length + config.dimension_jitter, anchors.width + config.dimension_jitter)
    for _ in range(PLACEMENT_TRIES):
        centers = rng.uniform(low, high, (config.n_vehicles, 2))
        gaps = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
        np.fill_diagonal(gaps, np.inf)
        if config.n_vehicles < 2 or gaps.min() > clearance:
            return centers
    raise SceneConfigError(f"could not place {config.n_vehicles} vehicles on a {config.n_x}x{config.n_y} grid")


def _sample_tracks(config: SequenceConfig, rng: np.random.Generator) -> List[BoxTrack]:
    grid = config.grid
    anchors = AnchorSet(grid)
    tracks: List[BoxTrack] = []
    for x, y in _place_vehicles(config, anchors, rng):
        jitter = rng.uniform(-config.dimension_jitter, config.dimension_jitter, 3)
        w, l, h = anchors.width + jitter[0], anchors.length + jitter[1], anchors.height + jitter[2]
        theta0 = rng.uniform(-np.pi, np.pi)
        speed = 0.0 if config.static else rng.uniform(0.0, config.max_speed)
        yaw_rate = 0.0 if config.static else rng.uniform(-config.max_yaw_rate, config.max_yaw_rate)

        boxes = np.zeros((grid.n_frames, 7))
        for k in range(grid.n_frames):
            elapsed = k * config.frame_spacing
            boxes[k] = [
                x - speed * elapsed * np.cos(theta0),
                y - speed * elapsed * np.sin(theta0),
                0.5 * h,
                w, l, h,
                theta0 - yaw_rate * elapsed,
            ]
        tracks.append(BoxTrack(boxes, grid))
    return tracks


def generate_point_cloud_sequence(seed: int, config: Optional[SequenceConfig] = None) -> PointCloudSequence:
    """n_f point clouds of vehicles on a ground plane, with exact box tracks and flow."""
    config = config or SequenceConfig()
    rng = np.random.default_rng(seed)
    grid = config.grid
    tracks = _sample_tracks(config, rng)
    x_min, x_max, y_min, y_max = grid.extent

    clouds = []
    for k in range(grid.n_frames):
        parts = [np.column_stack([
            rng.uniform(x_min, x_max, config.ground_points),
            rng.uniform(y_min, y_max, config.ground_points),
            np.zeros(config.ground_points),
        ])]
        parts.extend(_box_surface_points(t.boxes[k], config.points_per_box, rng) for t in tracks)
        clouds.append(np.concatenate(parts))
    return PointCloudSequence(clouds, tracks, grid)


def voxelize(points: np.ndarray, grid: GridSpec) -> np.ndarray:
    """(n_x, n_y, 3) pillar features: point count, mean height, max height (zero in empty cells)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ix = round_half_down(grid.to_grid(points[:, 0]))
    iy = round_half_down(grid.to_grid(points[:, 1]))
    keep = grid.in_grid(ix, iy)
    ix, iy, height = ix[keep], iy[keep], points[keep, 2]

    features = np.zeros((grid.n_x, grid.n_y, 3))
    count = np.zeros((grid.n_x, grid.n_y))
    total = np.zeros((grid.n_x, grid.n_y))
    top = np.full((grid.n_x, grid.n_y), -np.inf)
    np.add.at(count, (ix, iy), 1.0)
    np.add.at(total, (ix, iy), height)
    np.maximum.at(top, (ix, iy), height)
    occupied = count > 0
    features[..., 0] = count
    features[..., 1] = np.where(occupied, total / np.maximum(count, 1.0), 0.0)
    features[..., 2] = np.where(occupied, top, 0.0)
    return features


def exact_track_grid(
    gt_boxes: np.ndarray,
    gt_flow: np.ndarray,
    anchors: AnchorSet,
    logit: float = 10.0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Detector outputs that follow the ground-truth tracks exactly: positives
    at every matched anchor, flow equal to the true displacement, and at each
    flow target the residuals of the true box against the snapped anchor.
    Returns (class_logits, residuals, flow) as arrays.
    """
    grid = anchors.grid
    targets = sequence_targets(gt_boxes, anchors, gt_flow)
    class_logits = np.where(targets.positive, logit, -logit)
    residuals = targets.residuals.copy()
    flow = targets.flow.copy()

    frame0 = anchor_match(np.asarray(gt_boxes)[0], anchors)
    ix, iy, ia = np.nonzero(frame0.positive)
    tracks = frame0.box_index[ix, iy, ia]
    for k in range(1, grid.n_frames):
        step = np.asarray(gt_flow, dtype=np.float64)[tracks, k - 1]
        snapped = anchor_snap(ix, iy, ia, step[:, 0], step[:, 1], step[:, 2], grid)
        inside = snapped.in_grid
        tx, ty, ta = snapped.x[inside], snapped.y[inside], snapped.anchor[inside]
        class_logits[tx, ty, ta, k] = logit
        residuals[tx, ty, ta, k] = anchors.encode(np.asarray(gt_boxes)[k, tracks[inside]], tx, ty, ta)
    return class_logits, residuals, flow
