# consistency/segmentation.py

import logging
import warnings
from typing import Iterable, Optional

import numpy as np

from autodiff import functional as F
from autodiff.tensor import Tensor, TensorLike, as_tensor
from consistency.errors import ConsistencyError, ConsistencyWarning
from consistency.photometric import PhotometricConfig, photometric_loss
from geometry.camera import WarpResult, bilinear_sample

logger = logging.getLogger(__name__)


def movable_mask(logits: TensorLike, movable_classes: Iterable[int]) -> np.ndarray:
    """m(i, j) = 1 where the argmax class is movable. Constant w.r.t. the logits."""
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = values.argmax(axis=-1)
    return np.isin(labels, list(movable_classes)).astype(np.float64)


def _direction(target: Tensor, source: Tensor, result: WarpResult):
    sampled, inside = bilinear_sample(source, result.coords)
    valid = result.valid & inside
    diff = sampled - target
    loss, count = F.masked_mean((diff * diff).sum(axis=-1), valid)
    return loss, count


def seg_consistency_loss(
    logits1: TensorLike,
    logits2: TensorLike,
    warp12: WarpResult,
    warp21: WarpResult,
    mask1: Optional[np.ndarray] = None,
    mask2: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Squared L2 distance between each frame's logits and the peer frame's
    logits sampled at the warped coordinates, summed over classes and
    averaged over valid pixels, for both directions.
    """
    logits1, logits2 = as_tensor(logits1), as_tensor(logits2)
    if logits1.ndim != 3 or logits2.ndim != 3:
        raise ConsistencyError(f"logit maps must be (H, W, C), got {logits1.shape} and {logits2.shape}")
    if logits1.shape[-1] != logits2.shape[-1]:
        raise ConsistencyError(f"class counts differ: {logits1.shape[-1]} vs {logits2.shape[-1]}")

    forward, n_forward = _direction(logits1, logits2, warp12.with_mask(mask1))
    backward, n_backward = _direction(logits2, logits1, warp21.with_mask(mask2))
    if n_forward == 0 and n_backward == 0:
        logger.warning("Segmentation consistency has no valid pixels in either direction")
        warnings.warn("segmentation consistency: no valid pixels", ConsistencyWarning, stacklevel=2)
    return forward + backward


def combined_2d_loss(
    image1: TensorLike,
    image2: TensorLike,
    logits1: TensorLike,
    logits2: TensorLike,
    warp12: WarpResult,
    warp21: WarpResult,
    config: PhotometricConfig = PhotometricConfig(),
    mask1: Optional[np.ndarray] = None,
    mask2: Optional[np.ndarray] = None,
) -> Tensor:
    """Photometric plus segmentation consistency for a frame pair."""
    photometric = photometric_loss(image1, image2, warp12, warp21, config, mask1, mask2)
    segmentation = seg_consistency_loss(logits1, logits2, warp12, warp21, mask1, mask2)
    return photometric + segmentation
