# evaluation/detection.py

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from evaluation.boxes import THETA, iou_matrix
from evaluation.errors import MetricError

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.5

# One sample's detections: (boxes (D, 7), scores (D,)).
Detections = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class DetectionScores:
    map: float
    maph: float
    n_ground_truth: int
    n_detections: int


def heading_error(a, b) -> np.ndarray:
    """Absolute heading difference folded to [0, π]."""
    diff = np.mod(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64), 2 * np.pi)
    return np.minimum(diff, 2 * np.pi - diff)


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolated area under the precision-recall curve."""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))

    # precision envelope
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])

    changes = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))


def match_detections(
    detections: Sequence[Detections],
    ground_truth: Sequence[np.ndarray],
    mode: str = "bev",
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """
    Greedy matching in descending score order over all samples.

    Returns (scores, true-positive flags, heading weights, ground-truth count)
    with one entry per detection in ranked order.
    """
    if len(detections) != len(ground_truth):
        raise MetricError(f"{len(detections)} detection sets for {len(ground_truth)} ground-truth sets")

    ranked = []
    for sample, (boxes, scores) in enumerate(detections):
        for index, score in enumerate(np.asarray(scores, dtype=np.float64)):
            ranked.append((-score, sample, index))
    ranked.sort()

    overlaps = [
        iou_matrix(boxes, gt, mode) if len(boxes) and len(gt) else np.zeros((len(boxes), len(gt)))
        for (boxes, _), gt in zip(detections, ground_truth)
    ]
    claimed = [np.zeros(len(gt), dtype=bool) for gt in ground_truth]
    n_gt = int(sum(len(gt) for gt in ground_truth))

    scores = np.zeros(len(ranked))
    tp = np.zeros(len(ranked))
    weights = np.zeros(len(ranked))
    for rank, (neg_score, sample, index) in enumerate(ranked):
        scores[rank] = -neg_score
        row = np.where(claimed[sample], -1.0, overlaps[sample][index]) if len(ground_truth[sample]) else np.zeros(0)
        if row.size == 0:
            continue
        best = int(np.argmax(row))
        if row[best] >= iou_threshold:
            claimed[sample][best] = True
            tp[rank] = 1.0
            err = heading_error(detections[sample][0][index][THETA], ground_truth[sample][best][THETA])
            weights[rank] = 1.0 - err / np.pi
    return scores, tp, weights, n_gt


def map_maph(
    detections: Sequence[Detections],
    ground_truth: Sequence[np.ndarray],
    mode: str = "bev",
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> Optional[DetectionScores]:
    """
    Average precision and its heading-weighted variant, as percentages.

    Heading weighting scales each true positive's precision contribution by
    1 − err_θ/π; recall counts true positives unweighted. Returns None when
    there is no ground truth.
    """
    detections = [(np.asarray(b, dtype=np.float64).reshape(-1, 7), np.asarray(s, dtype=np.float64)) for b, s in detections]
    ground_truth = [np.asarray(gt, dtype=np.float64).reshape(-1, 7) for gt in ground_truth]
    _, tp, weights, n_gt = match_detections(detections, ground_truth, mode, iou_threshold)
    if n_gt == 0:
        logger.info("No ground-truth boxes; mAP is undefined")
        return None

    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    cum_weighted = np.cumsum(weights)
    recall = cum_tp / n_gt
    denom = np.maximum(cum_tp + cum_fp, np.finfo(np.float64).eps)
    ap = average_precision(recall, cum_tp / denom)
    aph = average_precision(recall, cum_weighted / denom)
    return DetectionScores(100.0 * ap, 100.0 * aph, n_gt, len(tp))


def evaluate_sequences(
    detections: Sequence[Detections],
    ground_truth: Sequence[np.ndarray],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> List[Tuple[str, Optional[DetectionScores]]]:
    """BEV and 3D scores for the same detections."""
    return [(mode, map_maph(detections, ground_truth, mode, iou_threshold)) for mode in ("bev", "3d")]
