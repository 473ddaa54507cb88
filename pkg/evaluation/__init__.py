from evaluation.boxes import bev_iou, iou_3d, rotated_nms
from evaluation.detection import map_maph
from evaluation.errors import MetricError
from evaluation.metrics import MetricBundle, abs_rel_depth, miou, normal_accuracy

__all__ = ["MetricBundle", "MetricError", "abs_rel_depth", "bev_iou", "iou_3d", "map_maph", "miou", "normal_accuracy", "rotated_nms"]
