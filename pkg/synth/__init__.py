from synth.datasets import (
    DatasetHandle,
    DatasetManifest,
    DatasetRole,
    build_linear_dataset,
    build_point_cloud_dataset,
    build_scene_dataset,
    load_dataset,
    save_dataset,
    strip_labels,
)
from synth.errors import SceneConfigError
from synth.point_clouds import SequenceConfig, exact_track_grid, generate_point_cloud_sequence, voxelize
from synth.scenes import SceneConfig, generate_scene_pair

__all__ = [
    "DatasetHandle",
    "DatasetManifest",
    "DatasetRole",
    "SceneConfig",
    "SceneConfigError",
    "SequenceConfig",
    "build_linear_dataset",
    "build_point_cloud_dataset",
    "build_scene_dataset",
    "exact_track_grid",
    "generate_point_cloud_sequence",
    "generate_scene_pair",
    "load_dataset",
    "save_dataset",
    "strip_labels",
    "voxelize",
]
