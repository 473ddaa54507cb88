# tests/test_geometry.py

import numpy as np
import pytest

from autodiff import Tensor
from autodiff.gradcheck import gradcheck
from geometry import (
    CameraIntrinsics,
    GeometryError,
    GridSpec,
    RigidMotion,
    backproject,
    bilinear_sample,
    homogeneous,
    pixel_grid,
    rotation_from_params,
    warp,
    warp_points,
)
from geometry.grid import nearest_anchor, round_half_down, wrap_angle

K = CameraIntrinsics(fx=20.0, fy=22.0, x0=7.5, y0=5.5)


def random_depth(rng, h=8, w=10):
    return rng.uniform(2.0, 5.0, size=(h, w))


# --- Rotations ---

@pytest.mark.parametrize("axis_angle", [[0.1, -0.2, 0.3], [1e-6, 0.0, -2e-6], [0.0, 0.0, 0.0], [1.2, 0.4, -0.9]])
def test_rotation_is_orthonormal(axis_angle):
    motion = RigidMotion.from_params(axis_angle, [0.0, 0.0, 0.0])
    assert motion.is_orthonormal()


def test_rotation_about_z_matches_closed_form():
    theta = 0.4
    r = rotation_from_params([0.0, 0.0, theta]).data
    expected = np.array([[np.cos(theta), -np.sin(theta), 0.0], [np.sin(theta), np.cos(theta), 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(r, expected, atol=1e-12)


def test_rotation_gradient_matches_central_differences(rng):
    v = rng.normal(size=3) * 0.5
    result = gradcheck(lambda a: (rotation_from_params(a) * Tensor(np.arange(9.0).reshape(3, 3))).sum(), [v])
    assert result.passed, result.failures


def test_axis_angle_shape_checked():
    with pytest.raises(GeometryError):
        rotation_from_params([0.1, 0.2])


# --- Warping oracles ---

def test_identity_motion_warps_every_pixel_onto_itself(rng):
    z = random_depth(rng)
    result = warp(z, RigidMotion.identity(), K)
    np.testing.assert_allclose(result.coords.data, pixel_grid(*z.shape)[..., :2], rtol=0, atol=1e-12)
    np.testing.assert_allclose(result.depth.data, z, rtol=0, atol=1e-12)
    assert result.valid.all()


def test_warp_then_inverse_warp_returns_to_the_source_pixel(rng):
    z = random_depth(rng)
    motion = RigidMotion.from_params([0.02, -0.03, 0.01], [0.1, -0.05, 0.2])
    forward = warp(z, motion, K)
    back = warp_points(forward.depth, homogeneous(forward.coords), motion.inverse(), K)
    np.testing.assert_allclose(back.coords.data, pixel_grid(*z.shape)[..., :2], rtol=0, atol=1e-8)
    np.testing.assert_allclose(back.depth.data, z, rtol=0, atol=1e-8)


def test_object_motion_only_moves_movable_pixels(rng):
    z = random_depth(rng, 4, 4)
    delta = np.zeros((4, 4, 3))
    delta[..., 0] = 0.5
    movable = np.zeros((4, 4))
    movable[0, 0] = 1.0
    moved = warp(z, RigidMotion.identity(), K, delta_t=delta, movable=movable).coords.data
    static = pixel_grid(4, 4)[..., :2]
    assert moved[0, 0, 0] == pytest.approx(static[0, 0, 0] + K.fx * 0.5 / z[0, 0])
    np.testing.assert_allclose(moved[1:], static[1:], atol=1e-12)


def test_points_behind_the_camera_are_invalid():
    z = np.full((3, 3), 1.0)
    motion = RigidMotion.from_params([0.0, 0.0, 0.0], [0.0, 0.0, -2.0])
    result = warp(z, motion, K)
    assert not result.valid.any()
    assert np.isfinite(result.coords.data).all()


def test_backproject_matches_linear_solve(rng):
    z = random_depth(rng, 5, 6)
    points = backproject(z, K).data
    p = pixel_grid(5, 6)
    expected = np.linalg.solve(K.matrix(), (p * z[..., None]).reshape(-1, 3).T).T.reshape(5, 6, 3)
    np.testing.assert_allclose(points, expected, rtol=0, atol=1e-10)


# --- Bilinear sampling ---

def test_bilinear_midpoint_is_four_pixel_mean(rng):
    image = rng.normal(size=(4, 5, 3))
    value, inside = bilinear_sample(image, np.array([[[1.5, 2.5]]]))
    assert inside.all()
    np.testing.assert_allclose(value.data[0, 0], image[2:4, 1:3].mean(axis=(0, 1)), rtol=0, atol=1e-12)


def test_bilinear_samples_last_row_and_column_exactly(rng):
    image = rng.normal(size=(4, 5, 2))
    coords = np.array([[[4.0, 3.0], [4.0, 0.0], [0.0, 3.0]]])
    value, inside = bilinear_sample(image, coords)
    assert inside.all()
    np.testing.assert_allclose(value.data[0], [image[3, 4], image[0, 4], image[3, 0]], atol=1e-12)


def test_out_of_bounds_samples_are_masked_zero(rng):
    image = rng.normal(size=(4, 4, 1)) + 5.0
    value, inside = bilinear_sample(image, np.array([[[-0.5, 1.0], [1.0, 3.5], [np.nan, 1.0]]]))
    assert not inside.any()
    np.testing.assert_array_equal(np.nan_to_num(value.data), 0.0)


def test_bilinear_sampling_needs_two_by_two():
    with pytest.raises(GeometryError):
        bilinear_sample(np.ones((1, 4, 1)), np.zeros((1, 1, 2)))


# --- Detection grid ---

def test_grid_validation_and_anchors():
    grid = GridSpec(n_x=8, n_y=8, n_anchors=2)
    np.testing.assert_allclose(grid.anchor_orientations(), [0.0, np.pi / 2])
    with pytest.raises(GeometryError):
        GridSpec(n_x=1)
    with pytest.raises(GeometryError):
        GridSpec(n_frames=1)


def test_rounding_ties_go_down():
    np.testing.assert_array_equal(round_half_down([0.5, -0.5, 1.5, 1.49, 1.51]), [0, -1, 1, 1, 2])


def test_wrap_angle_range():
    wrapped = wrap_angle([np.pi / 2, -np.pi / 2, 3 * np.pi / 4, np.pi])
    np.testing.assert_allclose(wrapped, [np.pi / 2, np.pi / 2, -np.pi / 4, 0.0], atol=1e-12)


def test_nearest_anchor_is_modulo_pi():
    grid = GridSpec(n_anchors=2)
    np.testing.assert_array_equal(nearest_anchor([0.1, np.pi / 2 - 0.1, np.pi + 0.05, -np.pi / 2], grid), [0, 1, 0, 1])
