# evaluation/metrics.py

import logging
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator

from evaluation.errors import MetricError

logger = logging.getLogger(__name__)

NORMAL_THRESHOLDS = (11.25, 22.5, 30.0)


class MetricBundle(BaseModel):
    """Named scalar metrics with their units ("ratio", "percent", "degrees")."""

    values: Dict[str, float] = Field(default_factory=dict)
    units: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_ranges(self):
        for name, value in self.values.items():
            unit = self.units.get(name, "ratio")
            if unit == "percent" and not 0.0 <= value <= 100.0:
                raise ValueError(f"percentage '{name}' out of range: {value}")
            if name.startswith("abs_rel") and value < 0:
                raise ValueError(f"abs-rel must be non-negative, got {value}")
        return self

    def add(self, name: str, value: float, unit: str = "ratio") -> "MetricBundle":
        self.values[name] = float(value)
        self.units[name] = unit
        return self

    def merge(self, other: "MetricBundle", prefix: str = "") -> "MetricBundle":
        for name, value in other.values.items():
            self.add(f"{prefix}{name}", value, other.units.get(name, "ratio"))
        return self

    def rows(self) -> List[Dict[str, object]]:
        return [{"metric": name, "value": value, "unit": self.units.get(name, "ratio")} for name, value in sorted(self.values.items())]


def _valid_mask(shape, valid: Optional[np.ndarray]) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != tuple(shape):
        raise MetricError(f"valid mask {valid.shape} does not match {tuple(shape)}")
    return valid


# --- Depth ---

def abs_rel_depth(pred, gt, valid: Optional[np.ndarray] = None, median_scaling: bool = False) -> float:
    """
    Mean of |pred − gt| / gt over valid pixels.

    ``median_scaling`` first rescales ``pred`` by median(gt)/median(pred),
    for models trained without any metric depth signal.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"depth shapes differ: {pred.shape} vs {gt.shape}")
    mask = _valid_mask(gt.shape, valid) & (gt > 0)
    if not mask.any():
        raise MetricError("abs-rel needs at least one valid pixel")
    p, g = pred[mask], gt[mask]
    if median_scaling:
        p = p * (np.median(g) / np.median(p))
    return float(np.mean(np.abs(p - g) / g))


# --- Segmentation ---

def miou(pred, gt_labels, classes: Optional[Iterable[int]] = None, valid: Optional[np.ndarray] = None) -> float:
    """
    Mean intersection-over-union over ``classes`` (every class seen when None).
    ``pred`` may be labels or logits with a trailing class axis. Classes absent
    from both prediction and ground truth are excluded.
    """
    gt_labels = np.asarray(gt_labels)
    pred = np.asarray(pred)
    labels = pred.argmax(axis=-1) if pred.ndim == gt_labels.ndim + 1 else pred.astype(np.int64)
    if labels.shape != gt_labels.shape:
        raise MetricError(f"segmentation shapes differ: {labels.shape} vs {gt_labels.shape}")
    mask = _valid_mask(gt_labels.shape, valid)
    labels, gt_labels = labels[mask], gt_labels[mask]

    if classes is None:
        classes = np.union1d(np.unique(labels), np.unique(gt_labels))
    ious = []
    for c in classes:
        p, g = labels == c, gt_labels == c
        union = np.count_nonzero(p | g)
        if union == 0:
            continue
        ious.append(np.count_nonzero(p & g) / union)
    if not ious:
        raise MetricError("no evaluable class for MIOU")
    return float(np.mean(ious))


# --- Normals ---

def angular_errors(pred, gt, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Angles in degrees between unit normals at valid pixels."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise MetricError(f"normal maps must share a (..., 3) shape, got {pred.shape} and {gt.shape}")
    mask = _valid_mask(gt.shape[:-1], valid)
    if not mask.any():
        raise MetricError("normal accuracy needs at least one valid pixel")
    cosine = np.clip(np.sum(pred[mask] * gt[mask], axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(cosine))


def normal_accuracy(pred, gt, thresholds: Sequence[float] = NORMAL_THRESHOLDS, valid: Optional[np.ndarray] = None) -> Dict[float, float]:
    """Percent of valid pixels whose angular error is below each threshold (degrees)."""
    errors = angular_errors(pred, gt, valid)
    return {float(t): float(100.0 * np.mean(errors < t)) for t in thresholds}


def normal_error_stats(pred, gt, valid: Optional[np.ndarray] = None) -> Dict[str, float]:
    errors = angular_errors(pred, gt, valid)
    return {"mean_angle": float(np.mean(errors)), "median_angle": float(np.median(errors))}
