# training/evaluation.py

import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from autodiff.tensor import Tensor
from evaluation.detection import evaluate_sequences
from evaluation.errors import MetricError
from evaluation.metrics import MetricBundle, abs_rel_depth, miou, normal_accuracy, normal_error_stats
from synth.datasets import DatasetHandle
from synth.scenes import MOVABLE_CLASSES
from tasks.interface import TaskModel
from tasks.motion import MOTION_FIELDS
from tasks.parameters import ModelParameters
from training.errors import TrainingError

logger = logging.getLogger(__name__)

Evaluated = Mapping[str, Tuple[TaskModel, ModelParameters]]


def _predict(model: TaskModel, params: ModelParameters, dataset: DatasetHandle) -> List[Tuple[Dict[str, Tensor], Mapping[str, np.ndarray]]]:
    """(forward outputs, full ground-truth sample) for every sample of the set."""
    return [(model(params, model.select_inputs(dataset.raw(i))), dataset.raw(i)) for i in range(len(dataset))]


def _depth_metrics(pairs, median_scaling: bool) -> MetricBundle:
    pred = np.concatenate([out["depth1"].data.ravel() for out, _ in pairs])
    gt = np.concatenate([s["gt_depth1"].ravel() for _, s in pairs])
    bundle = MetricBundle().add("abs_rel", abs_rel_depth(pred, gt))
    if median_scaling:
        bundle.add("abs_rel_median_scaled", abs_rel_depth(pred, gt, median_scaling=True))
    return bundle


def _segmentation_metrics(pairs, classes: Optional[Sequence[int]]) -> MetricBundle:
    pred = np.concatenate([out["logits1"].data.reshape(-1, out["logits1"].shape[-1]) for out, _ in pairs])
    gt = np.concatenate([s["gt_seg1"].ravel() for _, s in pairs]).astype(np.int64)
    bundle = MetricBundle().add("miou", miou(pred, gt))
    try:
        bundle.add("miou_movable", miou(pred, gt, classes=classes or MOVABLE_CLASSES))
    except MetricError:
        logger.warning("No movable-class pixels in the evaluation set; skipping miou_movable")
    return bundle


def _normals_metrics(pairs) -> MetricBundle:
    pred = np.concatenate([out["normals1"].data.reshape(-1, 3) for out, _ in pairs])
    gt = np.concatenate([s["gt_normals1"].reshape(-1, 3) for _, s in pairs])
    valid = np.linalg.norm(gt, axis=-1) > 0.5
    bundle = MetricBundle()
    for threshold, percent in normal_accuracy(pred, gt, valid=valid).items():
        bundle.add(f"normals_lt_{threshold:g}", percent, "percent")
    for name, degrees in normal_error_stats(pred, gt, valid=valid).items():
        bundle.add(name, degrees, "degrees")
    return bundle


def _motion_metrics(pairs) -> MetricBundle:
    errors = []
    for out, sample in pairs:
        predicted = np.concatenate([out[name].data for name in MOTION_FIELDS])
        errors.append(np.abs(predicted - sample["gt_motion"]))
    errors = np.stack(errors)
    return (
        MetricBundle()
        .add("rotation_l1", float(np.mean(errors[:, [0, 1, 2, 6, 7, 8]])))
        .add("translation_l1", float(np.mean(errors[:, [3, 4, 5, 9, 10, 11]])))
    )


def _detector_metrics(model, pairs, iou_threshold: float) -> MetricBundle:
    detections, ground_truth = [], []
    for out, sample in pairs:
        detections.append(model.detect(out))
        ground_truth.append(np.asarray(sample["gt_boxes"])[0])
    bundle = MetricBundle()
    for mode, scores in evaluate_sequences(detections, ground_truth, iou_threshold):
        if scores is None:
            continue
        bundle.add(f"{mode}_map", scores.map, "percent").add(f"{mode}_maph", scores.maph, "percent")
    return bundle


def _linear_metrics(pairs) -> MetricBundle:
    pred = np.concatenate([out["output"].data for out, _ in pairs])
    gt = np.concatenate([s["gt_y"] for _, s in pairs])
    return MetricBundle().add("mse", float(np.mean((pred - gt) ** 2)))


def evaluate(
    tasks: Evaluated,
    dataset: DatasetHandle,
    median_scaling: bool = False,
    iou_threshold: float = 0.5,
    movable_classes: Optional[Sequence[int]] = None,
) -> Dict[str, MetricBundle]:
    """
    Metric bundle per task on every sample of ``dataset`` (ground truth read
    from the raw samples). Pixels are pooled over the whole set.
    """
    if len(dataset) == 0:
        raise TrainingError(f"evaluation dataset '{dataset.name}' is empty")

    bundles: Dict[str, MetricBundle] = {}
    for task_id, (model, params) in tasks.items():
        missing = set(model.interface().inputs) - set(dataset.raw(0))
        if missing:
            logger.info(f"Skipping '{task_id}' on '{dataset.name}': samples lack inputs {sorted(missing)}")
            continue
        pairs = _predict(model, params, dataset)
        if model.kind == "depth":
            bundle = _depth_metrics(pairs, median_scaling)
        elif model.kind == "segmentation":
            bundle = _segmentation_metrics(pairs, movable_classes)
        elif model.kind == "normals":
            bundle = _normals_metrics(pairs)
        elif model.kind == "motion":
            bundle = _motion_metrics(pairs)
        elif model.kind == "detector":
            bundle = _detector_metrics(model, pairs, iou_threshold)
        elif model.kind == "linear":
            bundle = _linear_metrics(pairs)
        else:
            logger.warning(f"No metrics defined for task kind '{model.kind}'")
            continue
        bundles[task_id] = bundle
        logger.info(f"Evaluated '{task_id}' on '{dataset.name}': {bundle.values}")
    return bundles
