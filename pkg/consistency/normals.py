# consistency/normals.py

import logging
import warnings
from typing import Tuple

import numpy as np

from autodiff import functional as F
from autodiff.tensor import Tensor, TensorLike, as_tensor, getitem, where
from consistency.errors import ConsistencyError, ConsistencyWarning
from geometry.camera import CameraIntrinsics, backproject

logger = logging.getLogger(__name__)

EPS_NORM = 1e-12
DEFAULT_BETA = 0.05
DEFAULT_WINDOW = 3


def _central_differences(r: Tensor) -> Tuple[Tensor, Tensor]:
    """Chords r[i, j+1] − r[i, j−1] and r[i+1, j] − r[i−1, j], zero-padded at the borders."""
    padded_x = F.pad(r, ((0, 0), (1, 1), (0, 0)))
    padded_y = F.pad(r, ((1, 1), (0, 0), (0, 0)))
    d_x = getitem(padded_x, (slice(None), slice(2, None))) - getitem(padded_x, (slice(None), slice(None, -2)))
    d_y = getitem(padded_y, (slice(2, None),)) - getitem(padded_y, (slice(None, -2),))
    return d_x, d_y


def normals_from_depth(
    z: TensorLike,
    K: CameraIntrinsics,
    beta: float = DEFAULT_BETA,
    window: int = DEFAULT_WINDOW,
) -> Tuple[Tensor, np.ndarray]:
    """
    Surface normals of a depth map and their validity mask.

    1. Backproject the depth map to a point cloud.
    2. Take central differences along x and y.
    3. Mark pixels whose relative depth change exceeds ``beta`` as invalid and
       zero their derivatives.
    4. Average the derivatives over a ``window``×``window`` neighbourhood.
    5. Cross the averaged derivatives and normalize.

    Normals point away from the camera (+z for a fronto-parallel plane).
    Border pixels and pixels with a vanishing cross product are invalid.
    """
    z = as_tensor(z)
    if beta <= 0:
        raise ConsistencyError(f"beta must be positive, got {beta}")
    if window < 1 or window % 2 == 0:
        raise ConsistencyError(f"window must be odd and at least 1, got {window}")
    h, w = z.shape
    r = backproject(z, K)
    d_x, d_y = _central_differences(r)

    depth = z.data
    interior = np.zeros((h, w), dtype=bool)
    interior[1:-1, 1:-1] = True
    valid = (
        interior
        & (np.abs(d_x.data[..., 2]) < depth * beta)
        & (np.abs(d_y.data[..., 2]) < depth * beta)
    )

    keep = valid.astype(np.float64)[..., None]
    half = window // 2
    spread = ((half, half), (half, half), (0, 0))
    mean_x = F.window_mean(F.pad(d_x * keep, spread), window)
    mean_y = F.window_mean(F.pad(d_y * keep, spread), window)

    normal = F.cross(mean_x, mean_y)
    length = F.norm(normal, axis=-1)
    valid &= length.data >= EPS_NORM
    safe = where(valid, length, 1.0)
    unit = normal / safe.reshape(safe.shape + (1,))
    return unit * valid.astype(np.float64)[..., None], valid


def normals_consistency_loss(n_depth: TensorLike, n_pred: TensorLike, valid: np.ndarray) -> Tensor:
    """Mean cosine distance 1 − n_d·n_p over valid pixels; in [0, 2]."""
    n_depth, n_pred = as_tensor(n_depth), as_tensor(n_pred)
    if n_depth.shape != n_pred.shape:
        raise ConsistencyError(f"normal maps differ in shape: {n_depth.shape} vs {n_pred.shape}")
    loss, count = F.masked_mean(1.0 - F.dot(n_depth, n_pred, axis=-1), valid)
    if count == 0:
        logger.warning("Normals consistency has no valid pixels")
        warnings.warn("normals consistency: no valid pixels", ConsistencyWarning, stacklevel=2)
    return loss
