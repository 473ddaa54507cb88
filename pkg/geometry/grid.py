# geometry/grid.py

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from geometry.errors import GeometryError


@dataclass(frozen=True)
class GridSpec:
    """
    Bird's-eye-view detection grid.

    Cell (i, j) is centred on world coordinates (i·cell_size, j·cell_size);
    grid units are world metres divided by ``cell_size``.
    """

    n_x: int = 64
    n_y: int = 64
    cell_size: float = 0.32
    n_anchors: int = 2
    n_frames: int = 3

    def __post_init__(self):
        if self.n_x < 2 or self.n_y < 2:
            raise GeometryError(f"grid must be at least 2x2, got {self.n_x}x{self.n_y}")
        if self.cell_size <= 0:
            raise GeometryError(f"cell size must be positive, got {self.cell_size}")
        if self.n_anchors < 1 or self.n_frames < 2:
            raise GeometryError("a detection grid needs at least one anchor and two frames")

    @property
    def anchor_step(self) -> float:
        return np.pi / self.n_anchors

    def anchor_orientations(self) -> np.ndarray:
        """Evenly spaced anchor headings on [0, π); {0, π/2} for two anchors."""
        return np.arange(self.n_anchors) * self.anchor_step

    def to_grid(self, meters):
        return np.asarray(meters, dtype=np.float64) / self.cell_size

    def to_meters(self, grid_units):
        return np.asarray(grid_units, dtype=np.float64) * self.cell_size

    def in_grid(self, ix, iy) -> np.ndarray:
        ix, iy = np.asarray(ix), np.asarray(iy)
        return (ix >= 0) & (ix < self.n_x) & (iy >= 0) & (iy < self.n_y)

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        half = 0.5 * self.cell_size
        return (-half, (self.n_x - 0.5) * self.cell_size, -half, (self.n_y - 0.5) * self.cell_size)


def round_half_down(values) -> np.ndarray:
    """Nearest integer, ties rounded toward negative infinity."""
    return np.ceil(np.asarray(values, dtype=np.float64) - 0.5).astype(np.int64)


def wrap_angle(values, period: float = np.pi):
    """Wrap into (−period/2, period/2]."""
    values = np.asarray(values, dtype=np.float64)
    return values - period * np.ceil(values / period - 0.5)


def angle_shift(values, period: float = np.pi) -> np.ndarray:
    """The constant that ``wrap_angle`` adds; lets differentiable code wrap by a fixed shift."""
    values = np.asarray(values, dtype=np.float64)
    return -period * np.ceil(values / period - 0.5)


def nearest_anchor(headings, grid: GridSpec) -> np.ndarray:
    """Index of the anchor orientation closest to each heading, modulo π."""
    steps = round_half_down(wrap_angle(headings, np.pi * 2) / grid.anchor_step)
    return np.mod(steps, grid.n_anchors)
