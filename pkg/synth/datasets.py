# synth/datasets.py

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from synth.point_clouds import SequenceConfig, generate_point_cloud_sequence
from synth.scenes import SceneConfig, generate_scene_pair
from utils.records import decode_records, encode_records

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

# Label field -> sample keys carrying it.
LABEL_KEYS: Dict[str, tuple] = {
    "depth": ("gt_depth1", "gt_depth2"),
    "normals": ("gt_normals1", "gt_normals2"),
    "seg": ("gt_seg1", "gt_seg2"),
    "motion": ("gt_motion", "gt_delta_t12", "gt_delta_t21"),
    "covis": ("covis12", "covis21"),
    "boxes": ("gt_boxes",),
    "flow": ("gt_flow",),
    "y": ("gt_y",),
}
ALL_LABEL_KEYS = frozenset(key for keys in LABEL_KEYS.values() for key in keys)

SINGLE_FRAME_KEYS = ("rgb1", "intrinsics", "gt_depth1", "gt_normals1", "gt_seg1")


class DatasetRole(str, Enum):
    DEDICATED = "dedicated"
    MEDIATOR = "mediator"


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    kind: str
    role: DatasetRole
    task_id: Optional[str] = None
    labeled_fields: List[str] = Field(default_factory=list)
    labeled: List[bool] = Field(default_factory=list)
    seed: int = 0
    n_samples: int = 0
    generator: Dict[str, Any] = Field(default_factory=dict)


def label_keys(fields: Sequence[str]) -> List[str]:
    unknown = [f for f in fields if f not in LABEL_KEYS]
    if unknown:
        raise ValueError(f"unknown label fields {unknown} (known: {sorted(LABEL_KEYS)})")
    return [key for f in fields for key in LABEL_KEYS[f]]


class DatasetHandle:
    """
    In-memory dataset with a role and per-sample label flags.

    ``sample_at`` iterates an endless deterministic shuffle: position p reads
    sample perm_e[p mod n] where perm_e is seeded by (seed, e = p div n).
    Mediator datasets never expose label keys; dedicated datasets expose only
    their declared label fields, and only on labeled samples.
    """

    def __init__(self, samples: List[Dict[str, np.ndarray]], manifest: DatasetManifest):
        if manifest.labeled and len(manifest.labeled) != len(samples):
            raise ValueError(f"{len(manifest.labeled)} label flags for {len(samples)} samples")
        if not manifest.labeled:
            manifest = manifest.model_copy(update={"labeled": [manifest.role == DatasetRole.DEDICATED] * len(samples)})
        self.samples = samples
        self.manifest = manifest.model_copy(update={"n_samples": len(samples)})
        self._permutations: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.samples)

    def __repr__(self):
        return f"<DatasetHandle(name='{self.name}', role='{self.role.value}', n={len(self)}, labeled={self.n_labeled})>"

    @property
    def name(self) -> str:
        return self.manifest.name

    @property
    def role(self) -> DatasetRole:
        return self.manifest.role

    @property
    def labeled_fields(self) -> List[str]:
        return list(self.manifest.labeled_fields) if self.role == DatasetRole.DEDICATED else []

    @property
    def n_labeled(self) -> int:
        return int(sum(self.manifest.labeled)) if self.role == DatasetRole.DEDICATED else 0

    def labeled_indices(self) -> List[int]:
        return [i for i, flag in enumerate(self.manifest.labeled) if flag and self.role == DatasetRole.DEDICATED]

    def exposed(self, index: int) -> Dict[str, np.ndarray]:
        """Sample ``index`` with every label the role and flags do not allow removed."""
        raw = self.samples[index]
        allowed = set(label_keys(self.labeled_fields)) if self.manifest.labeled[index] else set()
        return {key: value for key, value in raw.items() if key not in ALL_LABEL_KEYS or key in allowed}

    def raw(self, index: int) -> Dict[str, np.ndarray]:
        """Sample with every ground-truth field, for evaluation."""
        return self.samples[index]

    def permutation(self, epoch: int) -> np.ndarray:
        if epoch not in self._permutations:
            self._permutations[epoch] = np.random.default_rng([self.manifest.seed, epoch]).permutation(len(self))
        return self._permutations[epoch]

    def index_at(self, position: int) -> int:
        if not self.samples:
            raise IndexError(f"dataset '{self.name}' is empty")
        epoch, offset = divmod(int(position), len(self))
        return int(self.permutation(epoch)[offset])

    def sample_at(self, position: int) -> Dict[str, np.ndarray]:
        return self.exposed(self.index_at(position))

    def with_role(self, role: DatasetRole, task_id: Optional[str] = None) -> "DatasetHandle":
        manifest = self.manifest.model_copy(update={"role": role, "task_id": task_id, "labeled": []})
        return DatasetHandle(self.samples, manifest)


def strip_labels(dataset: DatasetHandle, keep_fraction: float, seed: int) -> DatasetHandle:
    """
    Keep labels on round(keep_fraction · n) samples chosen by ``seed``; the
    rest become unlabeled. The sample content itself is untouched.
    """
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must lie in [0, 1], got {keep_fraction}")
    n = len(dataset)
    n_keep = int(np.floor(keep_fraction * n + 0.5))
    chosen = set(np.random.default_rng(seed).permutation(n)[:n_keep].tolist())
    flags = [flag and i in chosen for i, flag in enumerate(dataset.manifest.labeled)]
    manifest = dataset.manifest.model_copy(update={"labeled": flags})
    logger.info(f"Dataset '{dataset.name}': kept labels on {sum(flags)}/{n} samples (fraction {keep_fraction})")
    return DatasetHandle(dataset.samples, manifest)


# --- Builders ---

def _single_frame(sample: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {key: sample[key] for key in SINGLE_FRAME_KEYS}


def build_scene_dataset(
    name: str,
    n_samples: int,
    seed: int,
    config: Optional[SceneConfig] = None,
    role: DatasetRole = DatasetRole.MEDIATOR,
    task_id: Optional[str] = None,
    labeled_fields: Sequence[str] = (),
    single_frame: bool = False,
) -> DatasetHandle:
    """Frame pairs (or single frames) of procedurally rendered scenes; sample i uses seed (seed, i)."""
    config = config or SceneConfig()
    label_keys(labeled_fields)
    samples = []
    for index in range(n_samples):
        sample = generate_scene_pair(_sample_seed(seed, index), config).sample()
        samples.append(_single_frame(sample) if single_frame else sample)
    manifest = DatasetManifest(
        name=name,
        kind="scene_frame" if single_frame else "scene_pair",
        role=role,
        task_id=task_id,
        labeled_fields=list(labeled_fields),
        seed=seed,
        generator=config.model_dump(),
    )
    logger.info(f"Generated {n_samples} {manifest.kind} samples for '{name}' ({config.style} style)")
    return DatasetHandle(samples, manifest)


def build_point_cloud_dataset(
    name: str,
    n_samples: int,
    seed: int,
    config: Optional[SequenceConfig] = None,
    role: DatasetRole = DatasetRole.DEDICATED,
    task_id: Optional[str] = None,
    labeled_fields: Sequence[str] = ("boxes", "flow"),
) -> DatasetHandle:
    config = config or SequenceConfig()
    label_keys(labeled_fields)
    samples = [generate_point_cloud_sequence(_sample_seed(seed, i), config).sample() for i in range(n_samples)]
    manifest = DatasetManifest(
        name=name,
        kind="point_cloud",
        role=role,
        task_id=task_id,
        labeled_fields=list(labeled_fields),
        seed=seed,
        generator=config.model_dump(),
    )
    logger.info(f"Generated {n_samples} point-cloud sequences for '{name}'")
    return DatasetHandle(samples, manifest)


def build_linear_dataset(
    name: str,
    n_samples: int,
    seed: int,
    weights: Sequence[float],
    bias: float = 0.0,
    rows: int = 16,
    noise: float = 0.0,
    role: DatasetRole = DatasetRole.DEDICATED,
    task_id: Optional[str] = None,
) -> DatasetHandle:
    """Batches of x with targets y = x·w + b (+ noise) for the least-squares toy."""
    weights = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    samples = []
    for index in range(n_samples):
        rng = np.random.default_rng(_sample_seed(seed, index))
        x = rng.normal(size=(rows, len(weights)))
        y = x @ weights + bias + noise * rng.normal(size=(rows, 1))
        samples.append({"x": x, "gt_y": y})
    manifest = DatasetManifest(
        name=name,
        kind="linear",
        role=role,
        task_id=task_id,
        labeled_fields=["y"],
        seed=seed,
        generator={"weights": weights.ravel().tolist(), "bias": bias, "rows": rows, "noise": noise},
    )
    return DatasetHandle(samples, manifest)


def _sample_seed(seed: int, index: int) -> int:
    return int(np.random.default_rng([seed, index]).integers(0, 2**31 - 1))


# --- Persistence ---

def save_dataset(dataset: DatasetHandle, directory: Union[str, Path]) -> Path:
    """One binary record file per sample plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for index, sample in enumerate(dataset.samples):
        (directory / f"sample_{index:05d}.bin").write_bytes(encode_records(sample))
    manifest = json.dumps(dataset.manifest.model_dump(mode="json"), indent=2, sort_keys=True)
    (directory / MANIFEST_NAME).write_text(manifest + "\n")
    logger.info(f"Saved dataset '{dataset.name}' ({len(dataset)} samples) to {directory}")
    return directory


def load_dataset(directory: Union[str, Path]) -> DatasetHandle:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    manifest = DatasetManifest.model_validate_json(manifest_path.read_text())
    samples = []
    for index in range(manifest.n_samples):
        arrays, _ = decode_records((directory / f"sample_{index:05d}.bin").read_bytes())
        samples.append(arrays)
    return DatasetHandle(samples, manifest)
