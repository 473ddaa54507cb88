# tasks/losses.py

import logging
from typing import Optional

import numpy as np

from autodiff.functional import dot, log_softmax, masked_mean
from autodiff.tensor import Tensor, TensorLike, absolute, as_tensor, getitem, softplus, where

logger = logging.getLogger(__name__)

SMOOTH_L1_BETA = 1.0


def total_loss(*terms: Optional[Tensor]) -> Optional[Tensor]:
    """Sum of the terms that are present; None when there are none."""
    present = [t for t in terms if t is not None]
    if not present:
        return None
    total = present[0]
    for term in present[1:]:
        total = total + term
    return total


# --- Dense losses ---

def depth_l1(pred: TensorLike, gt: np.ndarray) -> Tensor:
    """Mean absolute depth error over pixels with positive ground truth."""
    gt = np.asarray(gt, dtype=np.float64)
    valid = gt > 0
    loss, _ = masked_mean(absolute(as_tensor(pred) - np.where(valid, gt, 0.0)), valid)
    return loss


def seg_cross_entropy(logits: TensorLike, labels: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Softmax cross-entropy; pixels labelled ``ignore_index`` do not count."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = logits.shape[-1]
    valid = labels != ignore_index
    onehot = np.eye(n_classes)[np.where(valid, labels, 0)]
    nll = -(log_softmax(logits) * onehot).sum(axis=-1)
    loss, _ = masked_mean(nll, valid)
    return loss


def normals_cosine(pred: TensorLike, gt: np.ndarray) -> Tensor:
    """Mean of 1 − n̂·n over pixels whose ground-truth normal is set."""
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.linalg.norm(gt, axis=-1) > 0.5
    loss, _ = masked_mean(1.0 - dot(pred, gt), valid)
    return loss


# --- Detector losses ---

def sigmoid_cross_entropy(logits: TensorLike, targets: np.ndarray, balanced: bool = True) -> Tensor:
    """
    Binary cross-entropy on logits, softplus(l) − t·l.

    With ``balanced`` the positive and negative cells are averaged separately
    and the two means added, so the sparse positives are not swamped.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    per_cell = softplus(logits) - logits * targets
    if not balanced:
        return per_cell.mean()
    positive, _ = masked_mean(per_cell, targets > 0.5)
    negative, _ = masked_mean(per_cell, targets <= 0.5)
    return positive + negative


def smooth_l1(pred: TensorLike, target: np.ndarray, beta: float = SMOOTH_L1_BETA) -> Tensor:
    """Elementwise Huber-style loss, 0.5·d²/β below β and |d| − 0.5β above."""
    diff = absolute(as_tensor(pred) - np.asarray(target, dtype=np.float64))
    small = diff.data < beta
    return where(small, 0.5 * diff * diff / beta, diff - 0.5 * beta)


def residual_loss(residuals: TensorLike, targets: np.ndarray, positive: np.ndarray) -> Optional[Tensor]:
    """Smooth-L1 over the 7 residuals, summed per positive anchor and averaged over positives."""
    index = np.nonzero(positive)
    if index[0].size == 0:
        return None
    picked = getitem(as_tensor(residuals), index)
    return smooth_l1(picked, np.asarray(targets)[index]).sum(axis=-1).mean()


def flow_l2(flow: TensorLike, targets: np.ndarray, positive: np.ndarray) -> Optional[Tensor]:
    """Squared flow error summed per positive frame-0 anchor and averaged over positives."""
    index = np.nonzero(positive)
    if index[0].size == 0:
        return None
    diff = getitem(as_tensor(flow), index) - np.asarray(targets)[index]
    return (diff * diff).sum(axis=-1).sum(axis=-1).mean()


def mean_squared_error(pred: TensorLike, target: np.ndarray) -> Tensor:
    diff = as_tensor(pred) - np.asarray(target, dtype=np.float64)
    return (diff * diff).mean()
