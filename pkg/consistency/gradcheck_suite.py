# consistency/gradcheck_suite.py

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from autodiff.gradcheck import gradcheck
from autodiff.tensor import Tensor
from consistency.detection import (
    DetectionGrid,
    combined_pc_loss,
    detection_class_consistency,
    detection_residual_consistency,
    pc_in_time_loss,
)
from consistency.normals import DEFAULT_BETA, normals_consistency_loss, normals_from_depth
from consistency.photometric import PhotometricConfig, photometric_loss, ssim
from consistency.segmentation import combined_2d_loss, seg_consistency_loss
from consistency.terms import frame_pair_warps
from geometry.camera import CameraIntrinsics, WarpResult, bilinear_sample, rotation_from_params
from geometry.grid import GridSpec

logger = logging.getLogger(__name__)

MAX_TRIES = 2000
COORD_MARGIN = 0.02
KINK_MARGIN = 1e-3

# A case draws one random configuration: (scalar loss of the inputs, inputs, input indices to check).
Draw = Tuple[Callable[..., Tensor], List[np.ndarray], Optional[Sequence[int]]]
Case = Callable[[np.random.Generator], Draw]


@dataclass
class SuiteResult:
    name: str
    passed: bool
    configurations: int
    max_error: float = 0.0
    failures: List[str] = field(default_factory=list)


class RejectedDraw(Exception):
    """A random draw landed too close to a non-differentiable point."""


def _retry(draw: Case) -> Case:
    def case(rng: np.random.Generator) -> Draw:
        for _ in range(MAX_TRIES):
            try:
                return draw(rng)
            except RejectedDraw:
                continue
        raise RuntimeError(f"could not draw a differentiable configuration for {draw.__name__}")
    case.__name__ = draw.__name__
    return case


def _frac_clear(values: np.ndarray, margin: float = COORD_MARGIN) -> bool:
    frac = values - np.floor(values)
    return bool(np.all((frac > margin) & (frac < 1 - margin)))


def _clear_of_zero(values: np.ndarray, margin: float = KINK_MARGIN):
    if np.any(np.abs(values) < margin):
        raise RejectedDraw()


def _coords(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """In-bounds sample coordinates that avoid pixel lines."""
    x = rng.integers(0, w - 1, (h, w)) + rng.uniform(COORD_MARGIN, 1 - COORD_MARGIN, (h, w))
    y = rng.integers(0, h - 1, (h, w)) + rng.uniform(COORD_MARGIN, 1 - COORD_MARGIN, (h, w))
    return np.stack([x, y], axis=-1)


def _warp_result(coords: Tensor) -> WarpResult:
    h, w = coords.shape[:2]
    return WarpResult(coords, Tensor(np.ones((h, w))), np.ones((h, w), dtype=bool))


# --- Image losses ---

def ssim_case(rng):
    a, b = rng.uniform(0, 1, (5, 6, 1)), rng.uniform(0, 1, (5, 6, 1))
    return (lambda x, y: ssim(x, y).sum()), [a, b], None


@_retry
def photometric_case(rng):
    h, w = 4, 5
    i1, i2 = rng.uniform(0, 1, (h, w, 3)), rng.uniform(0, 1, (h, w, 3))
    c12, c21 = _coords(rng, h, w), _coords(rng, h, w)
    _clear_of_zero(bilinear_sample(Tensor(i2), Tensor(c12))[0].data - i1)
    _clear_of_zero(bilinear_sample(Tensor(i1), Tensor(c21))[0].data - i2)

    def fn(a, b, p, q):
        return photometric_loss(a, b, _warp_result(p), _warp_result(q), PhotometricConfig())

    return fn, [i1, i2, c12, c21], None


def segmentation_case(rng):
    h, w = 4, 5
    l1, l2 = rng.normal(size=(h, w, 3)), rng.normal(size=(h, w, 3))
    c12, c21 = _coords(rng, h, w), _coords(rng, h, w)

    def fn(a, b, p, q):
        return seg_consistency_loss(a, b, _warp_result(p), _warp_result(q))

    return fn, [l1, l2, c12, c21], None


@_retry
def combined_2d_case(rng):
    """Full chain from depth, ego-motion and object motion through both frame-pair terms."""
    h, w = 4, 4
    K = CameraIntrinsics.centered(h, w)
    sample = {
        "intrinsics": K.as_array(),
        "rgb1": rng.uniform(0, 1, (h, w, 3)),
        "rgb2": rng.uniform(0, 1, (h, w, 3)),
    }
    z1, z2 = rng.uniform(2.0, 3.0, (h, w)), rng.uniform(2.0, 3.0, (h, w))
    aa12 = rng.normal(scale=0.02, size=3)
    t12 = rng.uniform(0.1, 0.3, 3) * rng.choice([-1.0, 1.0], 3)
    t12[2] *= 0.3
    dt12, dt21 = rng.normal(scale=0.05, size=(h, w, 3)), rng.normal(scale=0.05, size=(h, w, 3))
    l1, l2 = rng.normal(size=(h, w, 2)), rng.normal(size=(h, w, 2))
    aa21 = -aa12
    t21 = -rotation_from_params(aa12).data.T @ t12
    movable = [1]

    # Argmax decisions (movable mask) must not flip under perturbation.
    _clear_of_zero(l1[..., 1] - l1[..., 0], 1e-2)
    if not (l1[..., 1] > l1[..., 0]).any():
        raise RejectedDraw()

    def outputs_for(depth1, axis_angle, translation, delta, logits1):
        return {
            "depth1": depth1, "depth2": Tensor(z2),
            "rotation12": rotation_from_params(axis_angle), "translation12": translation,
            "rotation21": rotation_from_params(Tensor(aa21)), "translation21": Tensor(t21),
            "delta_t12": delta, "delta_t21": Tensor(dt21),
            "logits1": logits1, "logits2": Tensor(l2),
        }

    def fn(depth1, axis_angle, translation, delta, logits1):
        outputs = outputs_for(depth1, axis_angle, translation, delta, logits1)
        warp12, warp21 = frame_pair_warps(outputs, sample, movable)
        return combined_2d_loss(sample["rgb1"], sample["rgb2"], logits1, outputs["logits2"], warp12, warp21)

    # Warped coordinates must stay clear of pixel lines, image bounds and the L1 kink.
    outputs = outputs_for(*(Tensor(v) for v in (z1, aa12, t12, dt12, l1)))
    pairs = zip(frame_pair_warps(outputs, sample, movable), ("rgb2", "rgb1"), ("rgb1", "rgb2"))
    for result, source, target in pairs:
        coords = result.coords.data
        if not _frac_clear(coords):
            raise RejectedDraw()
        sampled, inside = bilinear_sample(Tensor(sample[source]), result.coords)
        if inside.sum() < 2:
            raise RejectedDraw()
        _clear_of_zero((sampled.data - sample[target])[inside])

    return fn, [z1, aa12, t12, dt12, l1], None


# --- Normals ---

@_retry
def normals_case(rng):
    h, w = 6, 6
    K = CameraIntrinsics.centered(h, w)
    z = 3.0 + 0.03 * rng.normal(size=(h, w)) + np.linspace(0.0, 0.2, w)[None, :]
    n_p = rng.normal(size=(h, w, 3))
    n_p /= np.linalg.norm(n_p, axis=-1, keepdims=True)

    # Validity decisions must not flip under perturbation.
    threshold = z[1:-1, 1:-1] * DEFAULT_BETA
    for d in (z[1:-1, 2:] - z[1:-1, :-2], z[2:, 1:-1] - z[:-2, 1:-1]):
        if np.any(np.abs(np.abs(d) - threshold) < 0.1 * threshold):
            raise RejectedDraw()

    def fn(depth, predicted):
        n_d, valid = normals_from_depth(depth, K)
        return normals_consistency_loss(n_d, predicted, valid)

    return fn, [z, n_p], None


# --- Detection ---

def _clear_offsets(rng, shape, step: float = 1.0) -> np.ndarray:
    """Offsets whose snapped value is stable: integer steps plus a fraction clear of ±0.5."""
    whole = rng.integers(-1, 2, shape)
    frac = rng.uniform(-0.5 + 0.08, 0.5 - 0.08, shape)
    return step * (whole + frac)


def _random_grid(rng) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    spec = GridSpec(n_x=4, n_y=4, n_anchors=2, n_frames=3)
    shape = (spec.n_x, spec.n_y, spec.n_anchors, spec.n_frames)
    logits = rng.uniform(0.5, 2.0, shape) * rng.choice([-1.0, 1.0], shape)
    residuals = rng.uniform(-0.3, 0.3, shape + (7,))
    flow_shape = shape[:3] + (spec.n_frames - 1,)
    flow = np.stack([
        _clear_offsets(rng, flow_shape),
        _clear_offsets(rng, flow_shape),
        _clear_offsets(rng, flow_shape, spec.anchor_step),
    ], axis=-1)
    return logits, residuals, flow


def _detection_case(loss: Callable[[DetectionGrid], Tensor]) -> Case:
    def draw(rng):
        logits, residuals, flow = _random_grid(rng)
        return (lambda c, r, f: loss(DetectionGrid(c, r, f))), [logits, residuals, flow], None
    return draw


def equality_case(rng):
    a, b = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    return (lambda x, y: ((x - y) * (x - y)).mean()), [a, b], None


SUITE: Dict[str, Case] = {
    "ssim": ssim_case,
    "photometric": photometric_case,
    "segmentation": segmentation_case,
    "combined_2d": combined_2d_case,
    "normals": normals_case,
    "detection_class": _detection_case(lambda g: detection_class_consistency(g, 1)),
    "detection_residual": _detection_case(lambda g: detection_residual_consistency(g, 1)),
    "combined_pc": _detection_case(lambda g: combined_pc_loss(g, 2)),
    "pc_in_time": _detection_case(pc_in_time_loss),
    "equality": equality_case,
}


def run_gradcheck_suite(configurations: int = 20, seed: int = 0, cases: Optional[Dict[str, Case]] = None) -> List[SuiteResult]:
    """
    Finite-difference check of every registered loss over ``configurations``
    random draws each. Returns one result per loss, in registration order.
    """
    cases = SUITE if cases is None else cases
    results = []
    for index, (name, case) in enumerate(cases.items()):
        rng = np.random.default_rng([seed, index])
        result = SuiteResult(name=name, passed=True, configurations=configurations)
        for _ in range(configurations):
            fn, inputs, wrt = case(rng)
            check = gradcheck(fn, inputs, wrt=wrt, name=name)
            result.max_error = max(result.max_error, check.max_error)
            if not check.passed:
                result.passed = False
                result.failures.extend(check.failures)
        logger.info(f"Gradcheck {name}: {'PASS' if result.passed else 'FAIL'} (max error {result.max_error:.2e})")
        results.append(result)
    return results
