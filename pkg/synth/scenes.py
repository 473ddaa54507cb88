# synth/scenes.py

import logging
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from autodiff.tensor import Tensor
from geometry.camera import CameraIntrinsics, RigidMotion, pixel_grid, rotation_from_params, warp
from synth.errors import SceneConfigError

logger = logging.getLogger(__name__)

CLASS_GROUND, CLASS_WALL, CLASS_VEHICLE, CLASS_PEDESTRIAN = range(4)
N_CLASSES = 4
MOVABLE_CLASSES = (CLASS_VEHICLE, CLASS_PEDESTRIAN)

HIT_EPS = 1e-9
FACES_PER_OBJECT = 6
PLACEMENT_TRIES = 200

# Half extents (x, y, z) in the object frame; y points down, z along the heading.
OBJECT_HALF_EXTENTS = {
    CLASS_VEHICLE: np.array([0.8, 0.6, 1.6]),
    CLASS_PEDESTRIAN: np.array([0.3, 0.9, 0.3]),
}


class SceneConfig(BaseModel):
    """
    Room-sized scene around the frame-1 camera, which sits at the origin
    looking down +z with y pointing at the ground. Distances in metres,
    angles in radians.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    height: int = Field(default=64, ge=2)
    width: int = Field(default=64, ge=2)
    camera_height: float = 1.5
    ceiling_height: float = 3.0
    half_width: float = 6.0
    room_depth: float = 12.0
    rear_depth: float = 3.0
    n_vehicles: int = Field(default=2, ge=0)
    n_pedestrians: int = Field(default=1, ge=0)
    max_translation: float = Field(default=0.3, ge=0)
    max_rotation: float = Field(default=0.02, ge=0)
    max_object_speed: float = Field(default=0.3, ge=0)
    max_object_turn: float = Field(default=0.05, ge=0)
    static_camera: bool = False
    static_objects: bool = False
    style: Literal["sim", "real"] = "sim"
    sensor_noise: float = Field(default=0.02, ge=0)
    texture_jitter: float = Field(default=0.15, ge=0)

    def check(self):
        """Reject layouts that put a camera inside or outside the room geometry."""
        reach = self.max_translation
        if self.camera_height <= reach:
            raise SceneConfigError(f"camera height {self.camera_height} puts a camera at or below the ground")
        if self.ceiling_height <= reach:
            raise SceneConfigError(f"ceiling height {self.ceiling_height} puts a camera in the ceiling")
        if self.half_width <= reach or self.rear_depth <= reach:
            raise SceneConfigError("side or rear wall intersects the camera path")
        if self.room_depth <= 4.0:
            raise SceneConfigError(f"room depth {self.room_depth} leaves no space for objects")
        for class_id in MOVABLE_CLASSES:
            if 2 * OBJECT_HALF_EXTENTS[class_id][1] >= self.camera_height + self.ceiling_height:
                raise SceneConfigError("objects taller than the room")


# --- Scene content ---

@dataclass(frozen=True)
class Texture:
    """Smooth procedural colour field: base colour plus a few long-wavelength sinusoids per channel."""

    base: np.ndarray        # (3,)
    amplitude: float
    waves: np.ndarray       # (n, 3) wave vectors
    phases: np.ndarray      # (n, 3) phase per wave and channel

    @classmethod
    def random(cls, rng: np.random.Generator, n_waves: int = 3, amplitude: float = 0.12) -> "Texture":
        directions = rng.normal(size=(n_waves, 3))
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        wavelengths = rng.uniform(6.0, 12.0, n_waves)
        return cls(
            base=rng.uniform(0.2, 0.8, 3),
            amplitude=amplitude,
            waves=directions * (2 * np.pi / wavelengths)[:, None],
            phases=rng.uniform(0, 2 * np.pi, (n_waves, 3)),
        )

    def perturbed(self, rng: np.random.Generator, jitter: float) -> "Texture":
        gain = 1.0 + rng.uniform(-jitter, jitter, 3)
        return Texture(np.clip(self.base * gain, 0.0, 1.0 - self.amplitude), self.amplitude, self.waves, self.phases)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        angles = points @ self.waves.T                          # (..., n)
        waves = np.sin(angles[..., None] + self.phases)         # (..., n, 3)
        return self.base + self.amplitude * waves.mean(axis=-2)


@dataclass(frozen=True)
class Plane:
    """Room surface {X : X[axis] = offset}."""

    axis: int
    offset: float
    class_id: int
    texture: Texture


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about the vertical (y) axis."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    half_extents: np.ndarray
    centers: Tuple[np.ndarray, np.ndarray]
    yaws: Tuple[float, float]
    texture: Texture

    def pose(self, frame: int) -> Tuple[np.ndarray, np.ndarray]:
        return yaw_matrix(self.yaws[frame]), self.centers[frame]

    def motion(self) -> Tuple[np.ndarray, np.ndarray]:
        """(A, b) with X₂ = A·X₁ + b for every point of the object."""
        a = yaw_matrix(self.yaws[1] - self.yaws[0])
        return a, self.centers[1] - a @ self.centers[0]

    def contains(self, point: np.ndarray, frame: int, margin: float = 0.0) -> bool:
        rotation, center = self.pose(frame)
        local = rotation.T @ (point - center)
        return bool(np.all(np.abs(local) <= self.half_extents + margin))


@dataclass(frozen=True)
class SyntheticScene:
    config: SceneConfig
    intrinsics: CameraIntrinsics
    planes: List[Plane]
    objects: List[SceneObject]
    rotations: Tuple[np.ndarray, np.ndarray]   # camera-from-world per frame
    centers: Tuple[np.ndarray, np.ndarray]     # camera centres in world coordinates
    axis_angle12: np.ndarray

    @property
    def motion12(self) -> RigidMotion:
        rotation = self.rotations[1]
        return RigidMotion(Tensor(rotation), Tensor(-rotation @ self.centers[1]))

    @property
    def motion21(self) -> RigidMotion:
        return self.motion12.inverse()


@dataclass
class View:
    rgb: np.ndarray         # (H, W, 3)
    depth: np.ndarray       # (H, W)
    normals: np.ndarray     # (H, W, 3) unit, pointing away from the camera
    surface: np.ndarray     # (H, W) surface id
    classes: np.ndarray     # (H, W) class id
    points: np.ndarray      # (H, W, 3) world coordinates of the visible surface


# --- Layout ---

def _room(config: SceneConfig, rng: np.random.Generator) -> List[Plane]:
    layout = [
        (1, config.camera_height, CLASS_GROUND),
        (1, -config.ceiling_height, CLASS_WALL),
        (0, -config.half_width, CLASS_WALL),
        (0, config.half_width, CLASS_WALL),
        (2, config.room_depth, CLASS_WALL),
        (2, -config.rear_depth, CLASS_WALL),
    ]
    return [Plane(axis, offset, class_id, Texture.random(rng)) for axis, offset, class_id in layout]


def _place_objects(config: SceneConfig, rng: np.random.Generator) -> List[SceneObject]:
    kinds = [CLASS_VEHICLE] * config.n_vehicles + [CLASS_PEDESTRIAN] * config.n_pedestrians
    objects: List[SceneObject] = []
    for class_id in kinds:
        half = OBJECT_HALF_EXTENTS[class_id]
        radius = float(np.hypot(half[0], half[2]))
        for _ in range(PLACEMENT_TRIES):
            x = rng.uniform(-config.half_width + radius + 1.0, config.half_width - radius - 1.0)
            z = rng.uniform(3.0 + radius, config.room_depth - radius - 1.0)
            if all(np.hypot(x - o.centers[0][0], z - o.centers[0][2]) > radius + np.hypot(o.half_extents[0], o.half_extents[2]) + 2 * config.max_object_speed
                   for o in objects):
                break
        else:
            raise SceneConfigError(f"could not place {len(kinds)} objects without overlap")

        center1 = np.array([x, config.camera_height - half[1], z])
        yaw1 = rng.uniform(-np.pi, np.pi)
        if config.static_objects:
            center2, yaw2 = center1.copy(), yaw1
        else:
            step = rng.uniform(-config.max_object_speed, config.max_object_speed, 2)
            center2 = center1 + np.array([step[0], 0.0, step[1]])
            yaw2 = yaw1 + rng.uniform(-config.max_object_turn, config.max_object_turn)
        objects.append(SceneObject(class_id, half, (center1, center2), (yaw1, yaw2), Texture.random(rng)))
    return objects


def build_scene(seed: int, config: Optional[SceneConfig] = None) -> SyntheticScene:
    config = config or SceneConfig()
    config.check()
    rng = np.random.default_rng(seed)

    planes = _room(config, rng)
    objects = _place_objects(config, rng)
    if config.style == "real":
        planes = [Plane(p.axis, p.offset, p.class_id, p.texture.perturbed(rng, config.texture_jitter)) for p in planes]
        objects = [
            SceneObject(o.class_id, o.half_extents, o.centers, o.yaws, o.texture.perturbed(rng, config.texture_jitter))
            for o in objects
        ]

    if config.static_camera:
        axis_angle, center2 = np.zeros(3), np.zeros(3)
    else:
        axis_angle = rng.uniform(-config.max_rotation, config.max_rotation, 3)
        center2 = rng.uniform(-config.max_translation, config.max_translation, 3)
    rotation2 = rotation_from_params(axis_angle).data

    for index, camera in enumerate((np.zeros(3), center2)):
        for obj in objects:
            if obj.contains(camera, index, margin=0.1):
                raise SceneConfigError(f"camera {index + 1} is inside a {obj.class_id} object")

    return SyntheticScene(
        config=config,
        intrinsics=CameraIntrinsics.centered(config.height, config.width),
        planes=planes,
        objects=objects,
        rotations=(np.eye(3), rotation2),
        centers=(np.zeros(3), center2),
        axis_angle12=axis_angle,
    )


# --- Ray casting ---

def _ray_directions(scene: SyntheticScene, frame: int) -> Tuple[np.ndarray, np.ndarray]:
    """Camera-space rays with unit z, and the same rays in world coordinates."""
    config = scene.config
    rays = pixel_grid(config.height, config.width) @ scene.intrinsics.inverse_matrix().T
    return rays, rays @ scene.rotations[frame]


def render_view(scene: SyntheticScene, frame: int, rng: Optional[np.random.Generator] = None) -> View:
    """
    Ray-cast one frame. Along a unit-z camera ray the hit distance parameter
    equals the camera depth of the hit point.
    """
    config = scene.config
    shape = (config.height, config.width)
    rays, dirs = _ray_directions(scene, frame)
    origin = scene.centers[frame]

    depth = np.full(shape, np.inf)
    surface = np.full(shape, -1, dtype=np.int64)
    normals_world = np.zeros(shape + (3,))

    with np.errstate(divide="ignore", invalid="ignore"):
        for index, plane in enumerate(scene.planes):
            component = dirs[..., plane.axis]
            t = (plane.offset - origin[plane.axis]) / component
            hit = (component != 0) & (t > HIT_EPS) & (t < depth)
            depth[hit] = t[hit]
            surface[hit] = index
            facing = np.zeros(3)
            facing[plane.axis] = 1.0
            normals_world[hit] = -np.sign(component[hit])[:, None] * facing

        for number, obj in enumerate(scene.objects):
            rotation, center = obj.pose(frame)
            local_origin = rotation.T @ (origin - center)
            local_dirs = dirs @ rotation
            inverse = 1.0 / local_dirs
            t1 = (-obj.half_extents - local_origin) * inverse
            t2 = (obj.half_extents - local_origin) * inverse
            near_axes = np.minimum(t1, t2)
            near = near_axes.max(axis=-1)
            far = np.maximum(t1, t2).min(axis=-1)
            hit = (near < far) & (near > HIT_EPS) & (near < depth)
            axis = near_axes.argmax(axis=-1)
            entering = np.take_along_axis(local_dirs, axis[..., None], axis=-1)[..., 0]
            face = 2 * axis + (entering > 0)
            local_normal = np.zeros(shape + (3,))
            np.put_along_axis(local_normal, axis[..., None], -np.sign(entering)[..., None], axis=-1)
            depth[hit] = near[hit]
            surface[hit] = len(scene.planes) + FACES_PER_OBJECT * number + face[hit]
            normals_world[hit] = local_normal[hit] @ rotation.T

    if np.any(surface < 0):
        raise SceneConfigError("some camera rays leave the room")

    points = origin + depth[..., None] * dirs
    classes = np.zeros(shape, dtype=np.int64)
    rgb = np.zeros(shape + (3,))
    for index, plane in enumerate(scene.planes):
        mask = surface == index
        classes[mask] = plane.class_id
        rgb[mask] = plane.texture(points[mask])
    for number, obj in enumerate(scene.objects):
        first = len(scene.planes) + FACES_PER_OBJECT * number
        mask = (surface >= first) & (surface < first + FACES_PER_OBJECT)
        rotation, center = obj.pose(frame)
        classes[mask] = obj.class_id
        rgb[mask] = obj.texture((points[mask] - center) @ rotation)

    if config.style == "real":
        noise_rng = rng or np.random.default_rng()
        rgb = np.clip(rgb + noise_rng.normal(scale=config.sensor_noise, size=rgb.shape), 0.0, 1.0)

    # Camera-space normals flipped to point away from the camera.
    normals = -(normals_world @ scene.rotations[frame].T)
    return View(rgb, depth, normals, surface, classes, points)


# --- Object motion fields ---

def object_motion_fields(scene: SyntheticScene, view1: View, view2: View) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-pixel residual translations δt₁₂ (frame-1 pixels) and δt₂₁ (frame-2
    pixels) for points on moving objects; zero elsewhere. World coordinates
    are frame-1 camera coordinates.
    """
    rotation12 = scene.rotations[1]
    delta12 = np.zeros(view1.points.shape)
    delta21 = np.zeros(view2.points.shape)
    for number, obj in enumerate(scene.objects):
        first = len(scene.planes) + FACES_PER_OBJECT * number
        a, b = obj.motion()
        a_inv = a.T
        mask1 = (view1.surface >= first) & (view1.surface < first + FACES_PER_OBJECT)
        mask2 = (view2.surface >= first) & (view2.surface < first + FACES_PER_OBJECT)
        x1 = view1.points[mask1]
        delta12[mask1] = ((x1 @ (a - np.eye(3)).T) + b) @ rotation12.T
        x2 = view2.points[mask2]
        delta21[mask2] = x2 @ (a_inv - np.eye(3)).T - a_inv @ b
    return delta12, delta21


def _bilinear_neighbors(coords: np.ndarray, height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Top-left neighbour indices with the same clamping the sampler uses."""
    x0 = np.clip(np.floor(coords[..., 0]), 0, width - 2).astype(np.int64)
    y0 = np.clip(np.floor(coords[..., 1]), 0, height - 2).astype(np.int64)
    return x0, y0


def covisibility(
    scene: SyntheticScene,
    source: View,
    target: View,
    motion: RigidMotion,
    delta: np.ndarray,
) -> np.ndarray:
    """
    Pixels of ``source`` whose ground-truth warp lands inside ``target`` on
    the same surface face at all four bilinear neighbours.
    """
    config = scene.config
    movable = np.isin(source.classes, MOVABLE_CLASSES).astype(np.float64)
    result = warp(Tensor(source.depth), motion, scene.intrinsics, Tensor(delta), movable)
    coords = result.coords.data
    h, w = config.height, config.width
    inside = (
        result.valid
        & (coords[..., 0] >= 0) & (coords[..., 0] <= w - 1)
        & (coords[..., 1] >= 0) & (coords[..., 1] <= h - 1)
    )
    safe = np.where(inside[..., None], coords, 0.0)
    x0, y0 = _bilinear_neighbors(safe, h, w)
    same = np.ones((h, w), dtype=bool)
    for dy in (0, 1):
        for dx in (0, 1):
            same &= target.surface[y0 + dy, x0 + dx] == source.surface
    return inside & same


@dataclass
class ScenePair:
    scene: SyntheticScene
    views: Tuple[View, View]
    delta_t12: np.ndarray
    delta_t21: np.ndarray
    covis12: np.ndarray
    covis21: np.ndarray

    def motion_vector(self) -> np.ndarray:
        """(axis-angle₁₂, T₁₂, axis-angle₂₁, T₂₁) as one 12-vector."""
        m12, m21 = self.scene.motion12, self.scene.motion21
        aa12 = self.scene.axis_angle12
        return np.concatenate([aa12, m12.translation.data, -aa12, m21.translation.data])

    def sample(self) -> Dict[str, np.ndarray]:
        """Inputs and every ground-truth field as a flat record dict."""
        v1, v2 = self.views
        return {
            "rgb1": v1.rgb,
            "rgb2": v2.rgb,
            "intrinsics": self.scene.intrinsics.as_array(),
            "gt_depth1": v1.depth,
            "gt_depth2": v2.depth,
            "gt_normals1": v1.normals,
            "gt_normals2": v2.normals,
            "gt_seg1": v1.classes.astype(np.float64),
            "gt_seg2": v2.classes.astype(np.float64),
            "gt_motion": self.motion_vector(),
            "gt_delta_t12": self.delta_t12,
            "gt_delta_t21": self.delta_t21,
            "covis12": self.covis12.astype(np.float64),
            "covis21": self.covis21.astype(np.float64),
        }


def generate_scene_pair(seed: int, config: Optional[SceneConfig] = None) -> ScenePair:
    """Render a frame pair with exact depth, normals, segmentation, ego-motion and object motion."""
    scene = build_scene(seed, config)
    noise_rng = np.random.default_rng([seed, 1])
    view1 = render_view(scene, 0, noise_rng)
    view2 = render_view(scene, 1, noise_rng)
    delta12, delta21 = object_motion_fields(scene, view1, view2)
    covis12 = covisibility(scene, view1, view2, scene.motion12, delta12)
    covis21 = covisibility(scene, view2, view1, scene.motion21, delta21)
    logger.debug(f"Scene {seed}: {covis12.mean():.0%} / {covis21.mean():.0%} co-visible")
    return ScenePair(scene, (view1, view2), delta12, delta21, covis12, covis21)


def one_hot_logits(labels: np.ndarray, n_classes: int = N_CLASSES, scale: float = 10.0) -> np.ndarray:
    """Ground-truth labels as logits whose argmax is the label."""
    return scale * np.eye(n_classes)[np.asarray(labels, dtype=np.int64)]
