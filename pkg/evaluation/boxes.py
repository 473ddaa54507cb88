# evaluation/boxes.py

import logging
from typing import List

import numpy as np
from shapely.geometry import Polygon

from evaluation.errors import MetricError

logger = logging.getLogger(__name__)

# 7-value box layout: centre x, y, z in metres, width, length, height, heading.
X, Y, Z, W, L, H, THETA = range(7)


def _as_boxes(boxes) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    if boxes.ndim == 1:
        boxes = boxes[None, :]
    if boxes.ndim != 2 or boxes.shape[1] != 7:
        raise MetricError(f"boxes must have shape (N, 7), got {boxes.shape}")
    return boxes


def box_corners(box) -> np.ndarray:
    """BEV corners (4, 2) of one box; the length runs along the heading."""
    x, y, _, w, l, _, theta = np.asarray(box, dtype=np.float64)
    local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]]) * 0.5
    c, s = np.cos(theta), np.sin(theta)
    rotation = np.array([[c, -s], [s, c]])
    return local @ rotation.T + np.array([x, y])


def box_polygon(box) -> Polygon:
    return Polygon(box_corners(box))


def bev_intersection(a, b) -> float:
    return float(box_polygon(a).intersection(box_polygon(b)).area)


def vertical_overlap(a, b) -> float:
    top = min(a[Z] + 0.5 * a[H], b[Z] + 0.5 * b[H])
    bottom = max(a[Z] - 0.5 * a[H], b[Z] - 0.5 * b[H])
    return max(0.0, top - bottom)


def bev_iou(a, b) -> float:
    """Rotated-rectangle IoU in the ground plane."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    inter = bev_intersection(a, b)
    union = a[W] * a[L] + b[W] * b[L] - inter
    return inter / union if union > 0 else 0.0


def iou_3d(a, b) -> float:
    """BEV intersection area times vertical overlap over the union volume."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    inter = bev_intersection(a, b) * vertical_overlap(a, b)
    union = a[W] * a[L] * a[H] + b[W] * b[L] * b[H] - inter
    return inter / union if union > 0 else 0.0


IOU_MODES = {"bev": bev_iou, "3d": iou_3d}


def iou_matrix(boxes_a, boxes_b, mode: str = "bev") -> np.ndarray:
    if mode not in IOU_MODES:
        raise MetricError(f"unknown IoU mode '{mode}' (expected one of {sorted(IOU_MODES)})")
    boxes_a, boxes_b = _as_boxes(boxes_a), _as_boxes(boxes_b)
    fn = IOU_MODES[mode]
    overlaps = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            overlaps[i, j] = fn(a, b)
    return overlaps


def rotated_nms(boxes, scores, iou_threshold: float = 0.5) -> List[int]:
    """Greedy non-maximum suppression with rotated BEV IoU; returns kept indices by descending score."""
    boxes = _as_boxes(boxes) if len(boxes) else np.zeros((0, 7))
    scores = np.asarray(scores, dtype=np.float64)
    order = list(np.argsort(-scores, kind="stable"))
    keep: List[int] = []
    while order:
        current = order.pop(0)
        keep.append(int(current))
        order = [i for i in order if bev_iou(boxes[current], boxes[i]) < iou_threshold]
    return keep
