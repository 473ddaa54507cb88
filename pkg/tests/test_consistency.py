# tests/test_consistency.py

import numpy as np
import pytest

from autodiff import Tensor, stop_gradient
from consistency import (
    ConsistencyError,
    ConsistencyOptions,
    DetectionGrid,
    PhotometricConfig,
    combined_2d_loss,
    combined_pc_loss,
    detection_class_consistency,
    detection_residual_consistency,
    get_term,
    movable_mask,
    normals_consistency_loss,
    normals_from_depth,
    photometric_loss,
    registered_terms,
    seg_consistency_loss,
    ssim,
)
from consistency.detection import anchor_snap
from consistency.gradcheck_suite import SUITE, run_gradcheck_suite
from consistency.terms import frame_pair_warps
from geometry import CameraIntrinsics, GridSpec, RigidMotion, pixel_grid, rotation_from_params, warp
from synth.point_clouds import SequenceConfig, exact_track_grid, generate_point_cloud_sequence
from synth.scenes import MOVABLE_CLASSES, SceneConfig, generate_scene_pair, one_hot_logits
from tasks.anchors import AnchorSet

K = CameraIntrinsics.centered(16, 16)


# --- Photometric and segmentation ---

def test_ssim_of_identical_images_is_one(rng):
    image = rng.uniform(size=(8, 8, 3))
    np.testing.assert_allclose(ssim(image, image).data, 1.0, atol=1e-12)


def naive_ssim(a, b, n=3, c1=0.01 ** 2, c2=0.03 ** 2):
    """Window-by-window SSIM over reflect-padded images."""
    r = n // 2
    pa = np.pad(a, ((r, r), (r, r), (0, 0)), mode="reflect")
    pb = np.pad(b, ((r, r), (r, r), (0, 0)), mode="reflect")
    out = np.empty(a.shape)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            for c in range(a.shape[2]):
                wa, wb = pa[i:i + n, j:j + n, c], pb[i:i + n, j:j + n, c]
                mu_a, mu_b = wa.mean(), wb.mean()
                var_a, var_b = ((wa - mu_a) ** 2).mean(), ((wb - mu_b) ** 2).mean()
                cov = ((wa - mu_a) * (wb - mu_b)).mean()
                out[i, j, c] = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return out


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_window_by_window_evaluation(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    np.testing.assert_allclose(ssim(a, b).data, naive_ssim(a, b), rtol=0, atol=1e-10)


def test_photometric_config_rejects_even_window_and_zero_weights():
    with pytest.raises(ValueError):
        PhotometricConfig(ssim_window=4)
    with pytest.raises(ValueError):
        PhotometricConfig(w_l1=0.0, w_ssim=0.0)


def test_identity_warp_of_identical_frames_costs_nothing(rng):
    image = rng.uniform(size=(10, 12, 3))
    identity = warp(np.full((10, 12), 3.0), RigidMotion.identity(), K)
    assert photometric_loss(image, image, identity, identity).item() == pytest.approx(0.0, abs=1e-12)
    logits = rng.normal(size=(10, 12, 4))
    assert seg_consistency_loss(logits, logits, identity, identity).item() == pytest.approx(0.0, abs=1e-12)


def test_constant_offset_costs_twice_the_offset_without_ssim(rng):
    image = rng.uniform(0.0, 0.5, size=(8, 8, 3))
    identity = warp(np.full((8, 8), 2.0), RigidMotion.identity(), K)
    config = PhotometricConfig(w_l1=1.0, w_ssim=0.0)
    loss = photometric_loss(image, image + 0.1, identity, identity, config)
    assert loss.item() == pytest.approx(0.2, abs=1e-10)


@pytest.mark.parametrize("d", [0.3, -1.5])
def test_logit_offset_in_one_class_costs_two_d_squared(rng, d):
    logits = rng.normal(size=(6, 6, 4))
    shifted = logits.copy()
    shifted[..., 2] += d
    identity = warp(np.full((6, 6), 2.0), RigidMotion.identity(), K)
    assert seg_consistency_loss(logits, shifted, identity, identity).item() == pytest.approx(2 * d * d, abs=1e-10)


def _moving_pair(rng, h=10, w=12):
    z1, z2 = rng.uniform(2.0, 4.0, size=(h, w)), rng.uniform(2.0, 4.0, size=(h, w))
    motion = RigidMotion.from_params([0.01, -0.02, 0.015], [0.05, 0.02, -0.1])
    return warp(z1, motion, K), warp(z2, motion.inverse(), K)


@pytest.mark.parametrize("seed", range(3))
def test_pair_losses_do_not_depend_on_frame_order(seed):
    rng = np.random.default_rng(seed)
    warp12, warp21 = _moving_pair(rng)
    image1, image2 = rng.uniform(size=(10, 12, 3)), rng.uniform(size=(10, 12, 3))
    logits1, logits2 = rng.normal(size=(10, 12, 4)), rng.normal(size=(10, 12, 4))

    forward = photometric_loss(image1, image2, warp12, warp21).item()
    swapped = photometric_loss(image2, image1, warp21, warp12).item()
    assert forward > 0
    assert swapped == pytest.approx(forward, rel=1e-14)

    forward = seg_consistency_loss(logits1, logits2, warp12, warp21).item()
    swapped = seg_consistency_loss(logits2, logits1, warp21, warp12).item()
    assert swapped == pytest.approx(forward, rel=1e-14)


def test_no_valid_pixels_warns_and_returns_zero(rng):
    image = rng.uniform(size=(6, 6, 3))
    behind = warp(np.ones((6, 6)), RigidMotion.from_params([0.0, 0.0, 0.0], [0.0, 0.0, -5.0]), K)
    with pytest.warns(RuntimeWarning):
        loss = photometric_loss(image, image, behind, behind)
    assert loss.item() == 0.0


def test_movable_mask_follows_argmax():
    logits = one_hot_logits(np.array([[0, 1], [2, 3]]))
    np.testing.assert_array_equal(movable_mask(logits, MOVABLE_CLASSES), [[0.0, 0.0], [1.0, 1.0]])


def test_segmentation_loss_checks_class_counts(rng):
    identity = warp(np.ones((4, 4)), RigidMotion.identity(), K)
    with pytest.raises(ConsistencyError):
        seg_consistency_loss(rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4, 4)), identity, identity)


def _ground_truth_outputs(sample):
    motion = sample["gt_motion"]
    return {
        "depth1": Tensor(sample["gt_depth1"]),
        "depth2": Tensor(sample["gt_depth2"]),
        "rotation12": rotation_from_params(motion[0:3]),
        "translation12": Tensor(motion[3:6]),
        "rotation21": rotation_from_params(motion[6:9]),
        "translation21": Tensor(motion[9:12]),
        "logits1": Tensor(one_hot_logits(sample["gt_seg1"])),
        "logits2": Tensor(one_hot_logits(sample["gt_seg2"])),
        "delta_t12": Tensor(sample["gt_delta_t12"]),
        "delta_t21": Tensor(sample["gt_delta_t21"]),
    }


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_scene_losses_vanish_at_ground_truth(seed):
    sample = generate_scene_pair(seed, SceneConfig(height=24, width=24, sensor_noise=0.0)).sample()
    outputs = _ground_truth_outputs(sample)
    warp12, warp21 = frame_pair_warps(outputs, sample, MOVABLE_CLASSES)
    masks = sample["covis12"].astype(bool), sample["covis21"].astype(bool)

    photometric = photometric_loss(sample["rgb1"], sample["rgb2"], warp12, warp21, PhotometricConfig(), *masks)
    segmentation = seg_consistency_loss(outputs["logits1"], outputs["logits2"], warp12, warp21, *masks)
    assert photometric.item() <= 1e-3
    assert segmentation.item() <= 1e-3
    combined = combined_2d_loss(sample["rgb1"], sample["rgb2"], outputs["logits1"], outputs["logits2"], warp12, warp21, PhotometricConfig(), *masks)
    assert combined.item() == pytest.approx(photometric.item() + segmentation.item(), abs=1e-12)


# --- Normals ---

def test_fronto_parallel_plane_has_unit_z_normals():
    normals, valid = normals_from_depth(np.full((12, 12), 4.0), K)
    assert valid[1:-1, 1:-1].all()
    assert not valid[0].any() and not valid[:, -1].any()
    np.testing.assert_allclose(normals.data[valid], np.tile([0.0, 0.0, 1.0], (valid.sum(), 1)), atol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_slanted_plane_normals_match_analytic_normal(seed):
    rng = np.random.default_rng(seed)
    h = w = 32
    camera = CameraIntrinsics.centered(h, w)
    n = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 1.0])
    n /= np.linalg.norm(n)
    rays = pixel_grid(h, w) @ camera.inverse_matrix().T
    depth = 3.0 / (rays @ n)

    normals, valid = normals_from_depth(depth, camera)
    assert valid.sum() > 0.5 * h * w
    cosines = np.clip(normals.data[valid] @ n, -1.0, 1.0)
    assert np.degrees(np.arccos(cosines)).max() <= 0.5


@pytest.mark.parametrize("scale", [0.5, 3.0])
def test_normals_do_not_depend_on_depth_scale(rng, scale):
    camera = CameraIntrinsics.centered(16, 16)
    n = np.array([0.3, -0.2, 1.0]) / np.linalg.norm([0.3, -0.2, 1.0])
    depth = 3.0 / ((pixel_grid(16, 16) @ camera.inverse_matrix().T) @ n)
    predicted = rng.normal(size=(16, 16, 3))
    predicted /= np.linalg.norm(predicted, axis=-1, keepdims=True)

    normals, valid = normals_from_depth(depth, camera)
    scaled, scaled_valid = normals_from_depth(scale * depth, camera)

    np.testing.assert_array_equal(scaled_valid, valid)
    np.testing.assert_allclose(scaled.data, normals.data, rtol=0, atol=1e-9)
    assert normals_consistency_loss(scaled, predicted, scaled_valid).item() == pytest.approx(
        normals_consistency_loss(normals, predicted, valid).item(), abs=1e-9
    )


def test_depth_discontinuities_are_invalid():
    depth = np.full((10, 10), 2.0)
    depth[:, 5:] = 6.0
    _, valid = normals_from_depth(depth, K, beta=0.05)
    assert not valid[:, 4:6].any()
    assert valid[2:-2, 1:3].all()


def test_normals_consistency_is_cosine_distance():
    up = np.tile([0.0, 0.0, 1.0], (4, 4, 1))
    side = np.tile([1.0, 0.0, 0.0], (4, 4, 1))
    valid = np.ones((4, 4), dtype=bool)
    assert normals_consistency_loss(up, up, valid).item() == pytest.approx(0.0)
    assert normals_consistency_loss(up, side, valid).item() == pytest.approx(1.0)
    assert normals_consistency_loss(up, -up, valid).item() == pytest.approx(2.0)


def test_normals_options_validated():
    with pytest.raises(ConsistencyError):
        normals_from_depth(np.ones((5, 5)), K, beta=0.0)
    with pytest.raises(ConsistencyError):
        normals_from_depth(np.ones((5, 5)), K, window=2)


# --- Detection in time ---

def _empty_grid(n=4, n_a=2, n_f=2):
    return (
        np.full((n, n, n_a, n_f), -1.0),
        np.zeros((n, n, n_a, n_f, 7)),
        np.zeros((n, n, n_a, n_f - 1, 3)),
    )


def test_snapping_ties_round_toward_negative():
    grid = GridSpec(n_x=8, n_y=8)
    snapped = anchor_snap([3, 3], [3, 3], [0, 0], [0.5, -0.5], [0.0, 0.0], [0.0, 0.0], grid)
    np.testing.assert_array_equal(snapped.x, [3, 2])
    np.testing.assert_allclose(snapped.remainder([[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]]), [[0.5, 0.0, 0.0], [0.5, 0.0, 0.0]])


@pytest.mark.parametrize(
    "x, flow_x, x_new, remainder",
    [(3, 1.4, 4, 0.4), (3, -1.4, 2, -0.4), (5, 0.2, 5, 0.2)],
)
def test_snapping_remainder_is_what_rounding_discarded(x, flow_x, x_new, remainder):
    grid = GridSpec(n_x=8, n_y=8)
    snapped = anchor_snap([x], [2], [0], [flow_x], [0.0], [0.0], grid)
    assert snapped.x[0] == x_new
    assert snapped.remainder([[flow_x, 0.0, 0.0]])[0, 0] == pytest.approx(remainder, abs=1e-12)


def test_remainder_enters_the_position_residual():
    logits, residuals, flow = _empty_grid(n=8)
    logits[3, 3, 0, 0] = 1.0
    flow[3, 3, 0, 0] = [1.4, 0.0, 0.0]  # snaps to x = 4
    grid = DetectionGrid.from_arrays(logits, residuals, flow)
    assert detection_residual_consistency(grid, 1).item() == pytest.approx(0.16)


def test_hand_built_flow_pair():
    logits, residuals, flow = _empty_grid()
    logits[1, 1, 0, 0] = 2.0
    flow[1, 1, 0, 0] = [1.3, 0.0, 0.0]
    logits[2, 1, 0, 1] = 0.5
    residuals[2, 1, 0, 1, 0] = 0.3
    grid = DetectionGrid.from_arrays(logits, residuals, flow)
    assert detection_class_consistency(grid, 1).item() == pytest.approx(2.25)
    assert detection_residual_consistency(grid, 1).item() == pytest.approx(0.0, abs=1e-12)


def test_residual_mismatch_in_constant_axes_is_penalized():
    logits, residuals, flow = _empty_grid()
    logits[1, 1, 1, 0] = 1.0
    residuals[1, 2, 1, 1, 5] = 0.2  # only the box height residual differs
    residuals[1, 1, 1, 0, 5] = 0.0
    flow[1, 1, 1, 0] = [0.0, 1.0, 0.0]
    grid = DetectionGrid.from_arrays(logits, residuals, flow)
    assert detection_residual_consistency(grid, 1).item() == pytest.approx(0.04)


def test_no_participating_cells_gives_zero():
    grid = DetectionGrid.from_arrays(*_empty_grid())
    assert combined_pc_loss(grid, 1).item() == 0.0


def test_detection_grid_shapes_checked():
    logits, residuals, flow = _empty_grid()
    with pytest.raises(ConsistencyError):
        DetectionGrid.from_arrays(logits, residuals[..., :6], flow)


@pytest.mark.parametrize("seed", range(5))
def test_exact_tracks_satisfy_point_cloud_consistency(seed):
    config = SequenceConfig(n_x=32, n_y=32, n_vehicles=2, points_per_box=20, ground_points=20)
    sequence = generate_point_cloud_sequence(seed, config)
    arrays = exact_track_grid(sequence.gt_boxes, sequence.gt_flow, AnchorSet(config.grid))
    grid = DetectionGrid.from_arrays(*arrays)
    for k in range(1, config.n_frames):
        assert combined_pc_loss(grid, k).item() <= 1e-10


# --- Registry ---

def test_registry_lists_every_term_once():
    assert registered_terms() == ["equality", "normals", "pc_in_time", "photometric", "scene_2d"]
    assert get_term("scene_2d").required_outputs >= {"depth1", "logits1", "rotation12"}
    with pytest.raises(ConsistencyError):
        get_term("telepathy")


def test_equality_term_needs_matching_shapes():
    term = get_term("equality")
    predictions = {"a": {"output": Tensor(np.ones((3, 1)))}, "b": {"output": Tensor(np.zeros((3, 1)))}}
    assert term.fn(predictions, ["a", "b"], {}, ConsistencyOptions()).item() == pytest.approx(1.0)
    predictions["b"]["output"] = Tensor(np.zeros((2, 1)))
    with pytest.raises(ConsistencyError):
        term.fn(predictions, ["a", "b"], {}, ConsistencyOptions())


# --- Gradient suite ---

@pytest.mark.slow
def test_every_registered_loss_passes_finite_differences():
    results = run_gradcheck_suite(configurations=20, seed=0)
    assert [r.name for r in results] == list(SUITE)
    failing = {r.name: r.failures[:1] for r in results if not r.passed}
    assert not failing


def test_suite_reports_a_flipped_gradient():
    def flipped(rng):
        x = rng.normal(size=4) + 2.0
        # Detaching one factor of t² halves its analytic gradient.
        return (lambda t: (t * stop_gradient(t)).sum()), [x], None

    results = run_gradcheck_suite(configurations=2, seed=0, cases={"flipped": flipped, "equality": SUITE["equality"]})
    assert [r.name for r in results] == ["flipped", "equality"]
    assert not results[0].passed
    assert results[1].passed
