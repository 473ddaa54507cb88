from geometry.camera import (
    CameraIntrinsics,
    RigidMotion,
    WarpResult,
    backproject,
    bilinear_sample,
    homogeneous,
    pixel_grid,
    rotation_from_params,
    warp,
    warp_points,
)
from geometry.errors import GeometryError
from geometry.grid import GridSpec

__all__ = [
    "CameraIntrinsics",
    "GeometryError",
    "GridSpec",
    "RigidMotion",
    "WarpResult",
    "backproject",
    "bilinear_sample",
    "homogeneous",
    "pixel_grid",
    "rotation_from_params",
    "warp",
    "warp_points",
]
