# geometry/camera.py

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from autodiff.tensor import (
    Tensor,
    TensorLike,
    as_tensor,
    concatenate,
    cos,
    getitem,
    matmul,
    reshape,
    sin,
    sqrt,
    stack,
    transpose,
    where,
)
from geometry.errors import GeometryError

logger = logging.getLogger(__name__)

EPS_DEPTH = 1e-6
SMALL_ANGLE_SQ = 1e-8


# --- Camera model ---

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    x0: float
    y0: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def from_array(cls, values) -> "CameraIntrinsics":
        fx, fy, x0, y0 = (float(v) for v in np.asarray(values).reshape(4))
        return cls(fx, fy, x0, y0)

    @classmethod
    def centered(cls, height: int, width: int) -> "CameraIntrinsics":
        """Square pixels, focal length equal to the image width, principal point at the centre."""
        return cls(float(width), float(width), (width - 1) / 2.0, (height - 1) / 2.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.x0, self.y0])

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.x0], [0.0, self.fy, self.y0], [0.0, 0.0, 1.0]])

    def inverse_matrix(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.x0 / self.fx],
            [0.0, 1.0 / self.fy, -self.y0 / self.fy],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True)
class RigidMotion:
    """(R, T) mapping frame-1 camera coordinates into frame-2 camera coordinates."""

    rotation: Tensor
    translation: Tensor

    def __post_init__(self):
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise GeometryError(f"rigid motion needs a 3x3 rotation and a 3-vector, got {self.rotation.shape} and {self.translation.shape}")

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls(Tensor(np.eye(3)), Tensor(np.zeros(3)))

    @classmethod
    def from_params(cls, axis_angle: TensorLike, translation: TensorLike) -> "RigidMotion":
        return cls(rotation_from_params(axis_angle), as_tensor(translation))

    def inverse(self) -> "RigidMotion":
        r_t = transpose(self.rotation)
        t = -reshape(matmul(r_t, reshape(self.translation, (3, 1))), (3,))
        return RigidMotion(r_t, t)

    def is_orthonormal(self, atol: float = 1e-9) -> bool:
        r = self.rotation.data
        return bool(np.allclose(r.T @ r, np.eye(3), atol=atol) and abs(np.linalg.det(r) - 1.0) < atol)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.data.T + self.translation.data


def rotation_from_params(axis_angle: TensorLike) -> Tensor:
    """
    Exponential map from an axis-angle 3-vector to a rotation matrix.

    Uses R = I + A·[v]x + B·[v]x² with A = sin θ/θ and B = (1 − cos θ)/θ²,
    switching to their Taylor expansions near θ = 0.
    """
    v = as_tensor(axis_angle)
    if v.shape != (3,):
        raise GeometryError(f"axis-angle must be a 3-vector, got {v.shape}")
    vx, vy, vz = (getitem(v, i) for i in range(3))
    zero = Tensor(0.0)
    skew = stack([
        stack([zero, -vz, vy]),
        stack([vz, zero, -vx]),
        stack([-vy, vx, zero]),
    ])
    theta_sq = (v * v).sum()
    if theta_sq.item() < SMALL_ANGLE_SQ:
        a = 1.0 - theta_sq / 6.0
        b = 0.5 - theta_sq / 24.0
    else:
        theta = sqrt(theta_sq)
        a = sin(theta) / theta
        b = (1.0 - cos(theta)) / theta_sq
    return Tensor(np.eye(3)) + a * skew + b * matmul(skew, skew)


# --- Pixel grids ---

def pixel_grid(height: int, width: int) -> np.ndarray:
    """Homogeneous pixel coordinates p = (j, i, 1) with shape (H, W, 3)."""
    jj, ii = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    return np.stack([jj, ii, np.ones_like(jj)], axis=-1)


def backproject(z: TensorLike, K: CameraIntrinsics) -> Tensor:
    """Point cloud r = z · K⁻¹ · (j, i, 1) for every pixel."""
    z = as_tensor(z)
    if z.ndim != 2:
        raise GeometryError(f"depth map must be (H, W), got {z.shape}")
    rays = pixel_grid(*z.shape) @ K.inverse_matrix().T
    return reshape(z, z.shape + (1,)) * rays


# --- Warping ---

@dataclass(frozen=True)
class WarpResult:
    coords: Tensor   # (H, W, 2) inhomogeneous target pixel coordinates (x′, y′)
    depth: Tensor    # (H, W) target depth z′
    valid: np.ndarray  # (H, W) z′ > ε_depth

    def with_mask(self, mask: Optional[np.ndarray]) -> "WarpResult":
        if mask is None:
            return self
        return WarpResult(self.coords, self.depth, self.valid & np.asarray(mask, dtype=bool))


def warp_points(
    z: TensorLike,
    pixels: TensorLike,
    motion: RigidMotion,
    K: CameraIntrinsics,
    delta_t: Optional[TensorLike] = None,
    movable: Optional[np.ndarray] = None,
) -> WarpResult:
    """
    Evaluate z′p′ = K R K⁻¹ z p + K(m·δt + T) at homogeneous pixel
    coordinates ``pixels`` of shape (..., 3).
    """
    z = as_tensor(z)
    pixels = as_tensor(pixels)
    if pixels.shape[:-1] != z.shape or pixels.shape[-1] != 3:
        raise GeometryError(f"pixels {pixels.shape} do not match depth {z.shape}")
    n = int(np.prod(z.shape))
    k_mat = Tensor(K.matrix())

    zp = reshape(reshape(z, z.shape + (1,)) * pixels, (n, 3))
    krk = matmul(matmul(k_mat, motion.rotation), Tensor(K.inverse_matrix()))
    shift = reshape(motion.translation, (1, 3))
    if delta_t is not None:
        delta_t = as_tensor(delta_t)
        if delta_t.shape != z.shape + (3,):
            raise GeometryError(f"delta_t {delta_t.shape} does not match depth {z.shape}")
        m = np.ones(z.shape) if movable is None else np.asarray(movable, dtype=np.float64)
        shift = reshape(delta_t * m[..., None], (n, 3)) + shift
    s = matmul(zp, transpose(krk)) + matmul(shift, transpose(k_mat))
    s = reshape(s, z.shape + (3,))

    z_prime = getitem(s, (Ellipsis, 2))
    valid = z_prime.data > EPS_DEPTH
    safe = where(valid, z_prime, 1.0)
    coords = getitem(s, (Ellipsis, slice(0, 2))) / reshape(safe, safe.shape + (1,))
    return WarpResult(coords, z_prime, valid)


def warp(
    z1: TensorLike,
    motion: RigidMotion,
    K: CameraIntrinsics,
    delta_t: Optional[TensorLike] = None,
    movable: Optional[np.ndarray] = None,
) -> WarpResult:
    """Warp every pixel of frame 1 into frame 2."""
    z1 = as_tensor(z1)
    if z1.ndim != 2:
        raise GeometryError(f"depth map must be (H, W), got {z1.shape}")
    return warp_points(z1, Tensor(pixel_grid(*z1.shape)), motion, K, delta_t, movable)


def homogeneous(coords: TensorLike) -> Tensor:
    coords = as_tensor(coords)
    ones = Tensor(np.ones(coords.shape[:-1] + (1,)))
    return concatenate([coords, ones], axis=-1)


# --- Sampling ---

def bilinear_sample(image: TensorLike, coords: TensorLike) -> Tuple[Tensor, np.ndarray]:
    """
    Bilinearly sample an (H, W, C) image at (H′, W′, 2) pixel coordinates.

    The lower neighbour is clamped to [0, W − 2] so samples on the last row or
    column are exact. Coordinates outside [0, W − 1] × [0, H − 1] give value 0
    and mask 0.
    """
    image, coords = as_tensor(image), as_tensor(coords)
    if image.ndim != 3:
        raise GeometryError(f"image must be (H, W, C), got {image.shape}")
    h, w, _ = image.shape
    if h < 2 or w < 2:
        raise GeometryError(f"bilinear sampling needs at least a 2x2 image, got {h}x{w}")

    x = getitem(coords, (Ellipsis, 0))
    y = getitem(coords, (Ellipsis, 1))
    xv, yv = x.data, y.data
    inside = (xv >= 0) & (xv <= w - 1) & (yv >= 0) & (yv <= h - 1)

    x0 = np.clip(np.floor(np.nan_to_num(xv)), 0, w - 2).astype(np.int64)
    y0 = np.clip(np.floor(np.nan_to_num(yv)), 0, h - 2).astype(np.int64)
    wx = reshape(x - x0.astype(np.float64), x.shape + (1,))
    wy = reshape(y - y0.astype(np.float64), y.shape + (1,))

    i00 = getitem(image, (y0, x0))
    i01 = getitem(image, (y0, x0 + 1))
    i10 = getitem(image, (y0 + 1, x0))
    i11 = getitem(image, (y0 + 1, x0 + 1))
    value = (1.0 - wx) * (1.0 - wy) * i00 + wx * (1.0 - wy) * i01 + (1.0 - wx) * wy * i10 + wx * wy * i11

    mask = inside.astype(np.float64)
    return value * mask[..., None], inside
