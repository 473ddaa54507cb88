# tests/test_synth.py

import numpy as np
import pytest

from geometry import GridSpec
from synth import (
    DatasetRole,
    SceneConfig,
    SceneConfigError,
    SequenceConfig,
    build_linear_dataset,
    build_point_cloud_dataset,
    build_scene_dataset,
    generate_point_cloud_sequence,
    generate_scene_pair,
    load_dataset,
    save_dataset,
    strip_labels,
    voxelize,
)
from synth.point_clouds import BoxTrack
from synth.scenes import MOVABLE_CLASSES, N_CLASSES
from utils.errors import RecordFormatError
from utils.records import decode_records, encode_records

from tests.conftest import SMALL_SCENE


# --- Scenes ---

def test_scene_pairs_are_deterministic_per_seed():
    first = generate_scene_pair(9, SMALL_SCENE).sample()
    second = generate_scene_pair(9, SMALL_SCENE).sample()
    other = generate_scene_pair(10, SMALL_SCENE).sample()
    assert first.keys() == second.keys()
    for key in first:
        np.testing.assert_array_equal(first[key], second[key])
    assert not np.array_equal(first["rgb1"], other["rgb1"])


def test_rendered_ground_truth_is_well_formed(scene_pairs):
    sample = scene_pairs.raw(0)
    h, w = SMALL_SCENE.height, SMALL_SCENE.width
    assert sample["rgb1"].shape == (h, w, 3)
    assert ((sample["rgb1"] >= 0) & (sample["rgb1"] <= 1)).all()
    for frame in ("1", "2"):
        assert (sample[f"gt_depth{frame}"] > 0).all() and np.isfinite(sample[f"gt_depth{frame}"]).all()
        np.testing.assert_allclose(np.linalg.norm(sample[f"gt_normals{frame}"], axis=-1), 1.0, atol=1e-12)
        assert set(np.unique(sample[f"gt_seg{frame}"])) <= set(range(N_CLASSES))
    assert sample["gt_motion"].shape == (12,)
    assert set(np.unique(sample["covis12"])) <= {0.0, 1.0}


def test_object_motion_is_zero_off_movable_pixels(scene_pairs):
    sample = scene_pairs.raw(1)
    static = ~np.isin(sample["gt_seg1"], MOVABLE_CLASSES)
    assert np.abs(sample["gt_delta_t12"][static]).max() == 0.0


def test_static_camera_and_objects_give_zero_motion():
    config = SMALL_SCENE.model_copy(update={"static_camera": True, "static_objects": True})
    sample = generate_scene_pair(2, config).sample()
    np.testing.assert_allclose(sample["gt_motion"], 0.0, atol=1e-12)
    assert not sample["gt_delta_t12"].any()
    np.testing.assert_array_equal(sample["rgb1"], sample["rgb2"])


def test_real_style_differs_from_sim_style():
    sim = generate_scene_pair(4, SMALL_SCENE).sample()
    real = generate_scene_pair(4, SMALL_SCENE.model_copy(update={"style": "real"})).sample()
    np.testing.assert_array_equal(sim["gt_depth1"], real["gt_depth1"])
    assert not np.array_equal(sim["rgb1"], real["rgb1"])


def test_camera_below_its_own_motion_range_is_rejected():
    with pytest.raises(SceneConfigError):
        generate_scene_pair(0, SceneConfig(height=8, width=8, camera_height=0.2))


# --- Point clouds ---

def test_point_cloud_sequence_shapes():
    config = SequenceConfig(n_x=16, n_y=16, n_vehicles=1, points_per_box=20, ground_points=20)
    sample = generate_point_cloud_sequence(1, config).sample()
    assert sample["pillars"].shape == (3, 16, 16, 3)
    assert sample["gt_boxes"].shape == (3, 1, 7)
    assert sample["gt_flow"].shape == (1, 2, 3)


def test_static_sequence_has_zero_flow():
    config = SequenceConfig(n_x=16, n_y=16, n_vehicles=1, points_per_box=10, ground_points=10, static=True)
    sequence = generate_point_cloud_sequence(3, config)
    np.testing.assert_allclose(sequence.gt_flow, 0.0, atol=1e-12)


@pytest.mark.parametrize("dx, flow_x", [(1.6, 5.0), (-0.64, -2.0), (0.0, 0.0)])
def test_track_flow_is_in_grid_units(dx, flow_x):
    grid = GridSpec(n_x=32, n_y=32, cell_size=0.32)
    boxes = np.tile([4.0, 3.0, 0.8, 1.8, 4.5, 1.6, 0.0], (3, 1))
    boxes[1, 0] += dx
    boxes[2, 0] += 2 * dx
    flow = BoxTrack(boxes, grid).flow()
    np.testing.assert_allclose(flow[:, 0], [flow_x, 2 * flow_x], atol=1e-12)
    np.testing.assert_allclose(flow[:, 1:], 0.0, atol=1e-12)


def test_voxelize_counts_and_heights():
    grid = GridSpec(n_x=4, n_y=4, cell_size=1.0)
    points = np.array([
        [1.0, 1.0, 0.5],
        [1.2, 0.9, 1.5],
        [3.4, 0.0, 2.0],
        [9.0, 9.0, 1.0],  # outside
    ])
    pillars = voxelize(points, grid)
    np.testing.assert_allclose(pillars[1, 1], [2.0, 1.0, 1.5])
    np.testing.assert_allclose(pillars[3, 0], [1.0, 2.0, 2.0])
    assert pillars[..., 0].sum() == 3.0


# --- Datasets ---

def test_mediator_samples_expose_no_labels(scene_pairs):
    assert scene_pairs.role == DatasetRole.MEDIATOR
    assert scene_pairs.n_labeled == 0
    for position in range(len(scene_pairs)):
        sample = scene_pairs.sample_at(position)
        assert not [key for key in sample if key.startswith("gt_") or key.startswith("covis")]
        assert {"rgb1", "rgb2", "intrinsics"} <= set(sample)


def test_dedicated_samples_expose_only_declared_fields():
    dataset = build_scene_dataset(
        "depth_only", 2, seed=3, config=SMALL_SCENE, role=DatasetRole.DEDICATED, labeled_fields=["depth"]
    )
    sample = dataset.sample_at(0)
    assert {"gt_depth1", "gt_depth2"} <= set(sample)
    assert "gt_seg1" not in sample and "gt_motion" not in sample


def test_unknown_label_field_rejected():
    with pytest.raises(ValueError):
        build_scene_dataset("bad", 1, seed=0, config=SMALL_SCENE, labeled_fields=["albedo"])


@pytest.mark.parametrize("fraction, expected", [(0.0, 0), (0.3, 3), (0.25, 2), (1.0, 10)])
def test_strip_labels_keeps_the_rounded_fraction(fraction, expected):
    dataset = build_linear_dataset("lin", 10, seed=0, weights=[1.0])
    stripped = strip_labels(dataset, fraction, seed=4)
    assert stripped.n_labeled == expected
    assert len(stripped) == 10
    unlabeled = [i for i in range(10) if i not in stripped.labeled_indices()]
    assert all("gt_y" not in stripped.exposed(i) for i in unlabeled)
    assert all("gt_y" in stripped.raw(i) for i in unlabeled)


def test_strip_labels_rejects_fraction_outside_unit_interval():
    dataset = build_linear_dataset("lin", 2, seed=0, weights=[1.0])
    with pytest.raises(ValueError):
        strip_labels(dataset, 1.5, seed=0)


def test_sample_order_is_a_seeded_shuffle_per_epoch():
    dataset = build_linear_dataset("lin", 6, seed=5, weights=[1.0])
    first_epoch = [dataset.index_at(p) for p in range(6)]
    second_epoch = [dataset.index_at(p) for p in range(6, 12)]
    assert sorted(first_epoch) == list(range(6))
    assert sorted(second_epoch) == list(range(6))
    again = build_linear_dataset("lin", 6, seed=5, weights=[1.0])
    assert [again.index_at(p) for p in range(12)] == first_epoch + second_epoch


def test_point_cloud_dataset_is_dedicated_to_boxes_and_flow():
    config = SequenceConfig(n_x=16, n_y=16, n_vehicles=1, points_per_box=10, ground_points=10)
    dataset = build_point_cloud_dataset("tracks", 2, seed=0, config=config)
    assert set(dataset.sample_at(0)) == {"pillars", "gt_boxes", "gt_flow"}


# --- Persistence ---

def test_saved_datasets_are_byte_identical(tmp_path, scene_pairs):
    # 1. Save the same dataset twice
    save_dataset(scene_pairs, tmp_path / "a")
    save_dataset(scene_pairs, tmp_path / "b")

    # 2. Every file matches byte for byte
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_restores_samples_and_label_flags(tmp_path):
    dataset = strip_labels(build_linear_dataset("lin", 5, seed=2, weights=[1.0, 2.0]), 0.4, seed=1)
    loaded = load_dataset(save_dataset(dataset, tmp_path / "lin"))
    assert loaded.manifest == dataset.manifest
    for index in range(5):
        exposed = loaded.exposed(index)
        assert exposed.keys() == dataset.exposed(index).keys()
        np.testing.assert_array_equal(exposed["x"], dataset.exposed(index)["x"])


def test_load_without_manifest_fails(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_truncated_records_are_rejected():
    buffer = encode_records({"x": np.arange(6.0).reshape(2, 3)})
    with pytest.raises(RecordFormatError):
        decode_records(buffer[:-4])
