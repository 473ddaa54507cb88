# consistency/photometric.py

import logging
import warnings
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from autodiff import functional as F
from autodiff.tensor import Tensor, TensorLike, absolute, as_tensor
from consistency.errors import ConsistencyError, ConsistencyWarning
from geometry.camera import WarpResult, bilinear_sample

logger = logging.getLogger(__name__)


class PhotometricConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    w_l1: float = 0.15
    w_ssim: float = 0.85
    ssim_window: int = 3
    ssim_c1: float = 0.01 ** 2
    ssim_c2: float = 0.03 ** 2

    @field_validator("ssim_window")
    @classmethod
    def _odd_window(cls, value: int) -> int:
        if value < 3 or value % 2 == 0:
            raise ValueError(f"SSIM window must be odd and at least 3, got {value}")
        return value

    @model_validator(mode="after")
    def _weights(self):
        if self.w_l1 < 0 or self.w_ssim < 0 or (self.w_l1 == 0 and self.w_ssim == 0):
            raise ValueError("photometric weights must be non-negative and not both zero")
        return self


def _box_filter(x: Tensor, size: int) -> Tensor:
    r = size // 2
    return F.window_mean(F.pad(x, ((r, r), (r, r), (0, 0)), mode="reflect"), size)


def ssim(a: TensorLike, b: TensorLike, config: PhotometricConfig = PhotometricConfig()) -> Tensor:
    """Per-pixel, per-channel SSIM of two (H, W, C) images with a uniform window."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ConsistencyError(f"SSIM inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a.reshape(a.shape + (1,)), b.reshape(b.shape + (1,))
    n = config.ssim_window
    if n > a.shape[0] or n > a.shape[1]:
        raise ConsistencyError(f"SSIM window {n} larger than the {a.shape[0]}x{a.shape[1]} image")

    mu_a = _box_filter(a, n)
    mu_b = _box_filter(b, n)
    sigma_a = _box_filter(a * a, n) - mu_a * mu_a
    sigma_b = _box_filter(b * b, n) - mu_b * mu_b
    sigma_ab = _box_filter(a * b, n) - mu_a * mu_b

    numerator = (2.0 * mu_a * mu_b + config.ssim_c1) * (2.0 * sigma_ab + config.ssim_c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + config.ssim_c1) * (sigma_a + sigma_b + config.ssim_c2)
    return numerator / denominator


def erode(mask: np.ndarray, size: int) -> np.ndarray:
    """Pixels whose whole reflect-padded window is valid."""
    r = size // 2
    padded = np.pad(np.asarray(mask, dtype=np.uint8), r, mode="reflect")
    return sliding_window_view(padded, (size, size)).all(axis=(-2, -1))


def _direction_loss(target: Tensor, source: Tensor, result: WarpResult, config: PhotometricConfig):
    """Reconstruct ``target`` by sampling ``source`` at the warped coordinates."""
    reconstructed, inside = bilinear_sample(source, result.coords)
    valid = result.valid & inside
    if not valid.any():
        return None

    loss = None
    if config.w_l1 > 0:
        l1, _ = F.masked_mean(absolute(reconstructed - target).mean(axis=-1), valid)
        loss = config.w_l1 * l1
    if config.w_ssim > 0:
        structural = (1.0 - ssim(reconstructed, target, config).mean(axis=-1)) / 2.0
        term, _ = F.masked_mean(structural, erode(valid, config.ssim_window))
        term = config.w_ssim * term
        loss = term if loss is None else loss + term
    return loss


def photometric_loss(
    image1: TensorLike,
    image2: TensorLike,
    warp12: WarpResult,
    warp21: WarpResult,
    config: PhotometricConfig = PhotometricConfig(),
    mask1: Optional[np.ndarray] = None,
    mask2: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Symmetric photometric loss between a frame pair.

    Each direction mixes an L1 term and a (1 − SSIM)/2 term, both averaged over
    the pixels whose warp is valid and in bounds (and set in the optional
    extra masks). Directions without valid pixels contribute 0.
    """
    image1, image2 = as_tensor(image1), as_tensor(image2)
    if image1.shape != image2.shape:
        raise ConsistencyError(f"frame shapes differ: {image1.shape} vs {image2.shape}")

    forward = _direction_loss(image1, image2, warp12.with_mask(mask1), config)
    backward = _direction_loss(image2, image1, warp21.with_mask(mask2), config)
    if forward is None and backward is None:
        logger.warning("Photometric loss has no valid pixels in either direction")
        warnings.warn("photometric loss: no valid pixels", ConsistencyWarning, stacklevel=2)
        return Tensor(0.0)
    if forward is None:
        return backward
    if backward is None:
        return forward
    return forward + backward
