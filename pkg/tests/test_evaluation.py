# tests/test_evaluation.py

import numpy as np
import pytest

from evaluation import MetricBundle, MetricError, abs_rel_depth, bev_iou, iou_3d, map_maph, miou, normal_accuracy, rotated_nms
from evaluation.boxes import box_corners, iou_matrix
from evaluation.detection import average_precision, heading_error


def random_boxes(rng, n, square=False):
    boxes = np.zeros((n, 7))
    boxes[:, 0:2] = rng.uniform(0.0, 30.0, (n, 2))
    boxes[:, 2] = 0.8
    boxes[:, 3] = rng.uniform(1.5, 2.2, n)
    boxes[:, 4] = boxes[:, 3] if square else rng.uniform(3.5, 5.0, n)
    boxes[:, 5] = 1.6
    boxes[:, 6] = rng.uniform(-np.pi, np.pi, n)
    return boxes


def clip_polygon(subject, clipper):
    """Sutherland-Hodgman clipping of a polygon against a convex counter-clockwise polygon."""
    def inside(p, a, b):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0

    def crossing(p, q, a, b):
        d1, d2 = q - p, b - a
        t = ((a[0] - p[0]) * d2[1] - (a[1] - p[1]) * d2[0]) / (d1[0] * d2[1] - d1[1] * d2[0])
        return p + t * d1

    output = list(subject)
    for i in range(len(clipper)):
        a, b = clipper[i], clipper[(i + 1) % len(clipper)]
        points, output = output, []
        for j in range(len(points)):
            p, q = points[j - 1], points[j]
            if inside(q, a, b):
                if not inside(p, a, b):
                    output.append(crossing(p, q, a, b))
                output.append(q)
            elif inside(p, a, b):
                output.append(crossing(p, q, a, b))
        if not output:
            break
    return output


def polygon_area(points):
    if len(points) < 3:
        return 0.0
    xs, ys = np.array(points).T
    return 0.5 * abs(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1)))


# --- Box overlap ---

def test_bev_iou_matches_polygon_clipping(rng):
    for _ in range(50):
        a, b = random_boxes(rng, 2)
        b[:2] = a[:2] + rng.normal(scale=1.5, size=2)
        inter = polygon_area(clip_polygon(box_corners(a), box_corners(b)))
        expected = inter / (a[3] * a[4] + b[3] * b[4] - inter)
        assert bev_iou(a, b) == pytest.approx(expected, abs=1e-9)


def test_iou_of_a_box_with_itself_is_one(rng):
    (box,) = random_boxes(rng, 1)
    assert bev_iou(box, box) == pytest.approx(1.0, abs=1e-12)
    assert iou_3d(box, box) == pytest.approx(1.0, abs=1e-12)


def test_vertical_offset_only_lowers_3d_iou():
    a = np.array([0.0, 0.0, 0.8, 2.0, 4.0, 1.6, 0.3])
    b = a.copy()
    b[2] += 0.8  # half the height
    assert bev_iou(a, b) == pytest.approx(1.0)
    assert iou_3d(a, b) == pytest.approx(1.0 / 3.0)


def test_disjoint_boxes_have_zero_iou():
    a = np.array([0.0, 0.0, 0.8, 2.0, 4.0, 1.6, 0.0])
    b = a.copy()
    b[0] = 10.0
    assert bev_iou(a, b) == 0.0


def test_iou_matrix_rejects_bad_shapes_and_modes():
    with pytest.raises(MetricError):
        iou_matrix(np.zeros((2, 6)), np.zeros((1, 7)))
    with pytest.raises(MetricError):
        iou_matrix(np.zeros((1, 7)), np.zeros((1, 7)), mode="volume")


def test_rotated_nms_suppresses_overlapping_duplicates():
    box = np.array([5.0, 5.0, 0.8, 2.0, 4.0, 1.6, 0.4])
    shifted = box.copy()
    shifted[0] += 0.1
    far = box.copy()
    far[0] += 20.0
    assert rotated_nms(np.stack([shifted, box, far]), np.array([0.8, 0.9, 0.5])) == [1, 2]


# --- Detection scores ---

def test_heading_error_folds_to_half_turn():
    np.testing.assert_allclose(heading_error([0.1, 3.0, -3.0], [-0.1, -3.0, 3.0]), [0.2, 2 * np.pi - 6.0, 2 * np.pi - 6.0])


def test_perfect_detections_score_one_hundred(rng):
    truth = [random_boxes(rng, 3), random_boxes(rng, 2)]
    detections = [(boxes, np.linspace(0.9, 0.5, len(boxes))) for boxes in truth]
    for mode in ("bev", "3d"):
        scores = map_maph(detections, truth, mode=mode)
        assert scores.map == pytest.approx(100.0)
        assert scores.maph == pytest.approx(100.0)


def test_quarter_turn_heading_error_halves_maph(rng):
    # Square footprints are unchanged by a quarter turn, so only the heading is wrong.
    truth = [random_boxes(rng, 4, square=True)]
    turned = truth[0].copy()
    turned[:, 6] += np.pi / 2
    scores = map_maph([(turned, np.ones(4))], truth)
    assert scores.map == pytest.approx(100.0)
    assert scores.maph == pytest.approx(50.0)


def test_false_positive_ranked_first_lowers_ap(rng):
    truth = [random_boxes(rng, 1)]
    miss = truth[0].copy()
    miss[0, 0] += 50.0
    boxes = np.concatenate([miss, truth[0]])
    scores = map_maph([(boxes, np.array([0.9, 0.5]))], truth)
    # precision 1/2 at full recall
    assert scores.map == pytest.approx(50.0)
    assert scores.n_detections == 2


def test_no_ground_truth_gives_none():
    assert map_maph([(np.zeros((0, 7)), np.zeros(0))], [np.zeros((0, 7))]) is None


def test_average_precision_uses_the_precision_envelope():
    recall = np.array([0.5, 0.5, 1.0])
    precision = np.array([1.0, 0.5, 0.66])
    assert average_precision(recall, precision) == pytest.approx(0.5 * 1.0 + 0.5 * 0.66)


# --- Dense metrics ---

def test_abs_rel_is_zero_at_ground_truth(rng):
    depth = rng.uniform(1.0, 10.0, (6, 6))
    assert abs_rel_depth(depth, depth) == 0.0
    assert abs_rel_depth(2.0 * depth, depth) == pytest.approx(1.0)
    assert abs_rel_depth(2.0 * depth, depth, median_scaling=True) == pytest.approx(0.0, abs=1e-12)


def test_abs_rel_needs_valid_pixels():
    with pytest.raises(MetricError):
        abs_rel_depth(np.ones((2, 2)), np.ones((2, 2)), valid=np.zeros((2, 2)))


def test_miou_from_labels_and_logits():
    gt = np.array([[0, 0, 1, 1]])
    pred = np.array([[0, 1, 1, 1]])
    # class 0: 1/2, class 1: 2/3
    assert miou(pred, gt) == pytest.approx((0.5 + 2.0 / 3.0) / 2)
    logits = np.eye(3)[gt]
    assert miou(logits, gt) == pytest.approx(1.0)
    assert miou(pred, gt, classes=[1]) == pytest.approx(2.0 / 3.0)


def test_normal_accuracy_thresholds():
    gt = np.tile([0.0, 0.0, 1.0], (1, 4, 1))
    angles = np.radians([5.0, 15.0, 25.0, 40.0])
    pred = np.stack([np.sin(angles), np.zeros(4), np.cos(angles)], axis=-1)[None]
    accuracy = normal_accuracy(pred, gt)
    assert accuracy == pytest.approx({11.25: 25.0, 22.5: 50.0, 30.0: 75.0})


def test_metric_bundle_rejects_bad_percentages():
    with pytest.raises(ValueError):
        MetricBundle(values={"map": 120.0}, units={"map": "percent"})
    bundle = MetricBundle().add("abs_rel", 0.1)
    assert bundle.rows() == [{"metric": "abs_rel", "value": 0.1, "unit": "ratio"}]
