# training/experiments.py

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from pydantic import ValidationError

from consistency.photometric import PhotometricConfig
from consistency.terms import ConsistencyOptions, get_term
from evaluation.metrics import MetricBundle
from synth.datasets import (
    DatasetHandle,
    DatasetRole,
    build_linear_dataset,
    build_point_cloud_dataset,
    build_scene_dataset,
    strip_labels,
)
from synth.point_clouds import SequenceConfig
from synth.scenes import SceneConfig
from tasks.registry import build_model
from training.checkpoints import STATE_NAME, load_checkpoint, load_task_params, save_checkpoint
from training.history import MetricsHistory
from training.specs import ConsistencySpec, OptimizerSettings, TaskSpec
from training.trainer import CollectiveTrainer
from utils.config import ExperimentConfig, TaskSection
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

METRICS_CSV = "metrics.csv"
FINAL_CSV = "final_metrics.csv"
CHECKPOINT_DIR = "checkpoints"


def coerce_value(value: Any) -> Any:
    """INI values arrive as strings; turn numbers and booleans into Python values."""
    if not isinstance(value, str):
        return value
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value.strip()


def _floats(value: Any) -> List[float]:
    if isinstance(value, str):
        return [float(v) for v in value.split(",") if v.strip()]
    return [float(v) for v in value]


# --- Builders ---

def build_datasets(config: ExperimentConfig) -> Dict[str, DatasetHandle]:
    datasets: Dict[str, DatasetHandle] = {}
    base_seed = config.experiment.seed
    for name, section in config.datasets.items():
        seed = section.seed + base_seed
        role = DatasetRole(section.role)
        try:
            if section.kind in ("scene_pair", "scene_frame"):
                scene = SceneConfig(**section.generator)
                handle = build_scene_dataset(
                    name, section.n_samples, seed, scene, role,
                    labeled_fields=section.labeled_fields, single_frame=section.kind == "scene_frame",
                )
            elif section.kind == "point_cloud":
                handle = build_point_cloud_dataset(
                    name, section.n_samples, seed, SequenceConfig(**section.generator), role,
                    labeled_fields=section.labeled_fields or ("boxes", "flow"),
                )
            else:
                options = dict(section.generator)
                handle = build_linear_dataset(
                    name, section.n_samples, seed,
                    weights=_floats(options.pop("weights", "1.0")),
                    bias=float(options.pop("bias", 0.0)),
                    rows=int(options.pop("rows", 16)),
                    noise=float(options.pop("noise", 0.0)),
                    role=role,
                )
                if options:
                    raise ConfigError(f"dataset '{name}': unknown linear generator options {sorted(options)}")
        except ValidationError as e:
            raise ConfigError(f"dataset '{name}': {e}") from e
        if role == DatasetRole.DEDICATED and section.keep_fraction < 1.0:
            handle = strip_labels(handle, section.keep_fraction, seed)
        datasets[name] = handle
    return datasets


def _model_options(task_id: str, section: TaskSection, config: ExperimentConfig) -> Dict[str, Any]:
    """Model constructor options, with image and grid sizes taken from the task's dataset when unset."""
    options = {key: coerce_value(value) for key, value in section.model.items()}
    dataset = config.datasets.get(section.dataset) if section.dataset else None
    if dataset is None:
        # Consistency-only tasks size themselves from a mediator set they join.
        for spec in config.consistency.values():
            if task_id in spec.tasks and spec.dataset:
                dataset = config.datasets[spec.dataset]
                break
    if dataset is None:
        return options
    if dataset.kind == "point_cloud" and section.kind == "detector" and "grid" not in options:
        options["grid"] = SequenceConfig(**dataset.generator).grid
    elif dataset.kind in ("scene_pair", "scene_frame") and section.kind in ("depth", "motion", "segmentation", "normals"):
        scene = SceneConfig(**dataset.generator)
        options.setdefault("height", scene.height)
        options.setdefault("width", scene.width)
    elif dataset.kind == "linear" and section.kind == "linear":
        options.setdefault("n_samples", int(dataset.generator.get("rows", 16)))
        options.setdefault("in_features", len(_floats(dataset.generator.get("weights", "1.0"))))
    return options


def build_task_specs(config: ExperimentConfig, datasets: Mapping[str, DatasetHandle]) -> List[TaskSpec]:
    specs = []
    for task_id, section in config.tasks.items():
        try:
            model = build_model(section.kind, task_id, **_model_options(task_id, section, config))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"task '{task_id}': {e}") from e
        initial = load_task_params(section.init_checkpoint, task_id) if section.init_checkpoint else None
        specs.append(TaskSpec(
            task_id=task_id,
            model=model,
            optimizer=OptimizerSettings(section.optimizer, section.learning_rate, section.schedule, section.decay_rate, section.decay_every),
            dataset=datasets[section.dataset] if section.dataset else None,
            sup_weight=section.sup_weight,
            frozen=section.frozen,
            seed=section.seed + config.experiment.seed,
            initial_params=initial,
        ))
    return specs


def build_consistency_specs(config: ExperimentConfig, datasets: Mapping[str, DatasetHandle]) -> List[ConsistencySpec]:
    specs = []
    for name, section in config.consistency.items():
        overrides: Dict[str, Any] = {}
        if section.movable_classes is not None:
            overrides["movable_classes"] = section.movable_classes
        if section.beta is not None:
            overrides["beta"] = section.beta
        if section.window is not None:
            overrides["window"] = section.window
        try:
            if section.photometric:
                overrides["photometric"] = PhotometricConfig(**section.photometric)
            options = ConsistencyOptions(**overrides)
            term = get_term(section.term)
        except (ValidationError, ValueError) as e:
            raise ConfigError(f"consistency '{name}': {e}") from e
        dataset = datasets[section.dataset] if section.dataset else None
        if dataset is not None and dataset.role != DatasetRole.MEDIATOR:
            dataset = dataset.with_role(DatasetRole.MEDIATOR)
        specs.append(ConsistencySpec(name, term, list(section.tasks), section.weight, dataset, options))
    return specs


def build_trainer(config: ExperimentConfig, datasets: Optional[Mapping[str, DatasetHandle]] = None) -> CollectiveTrainer:
    datasets = datasets if datasets is not None else build_datasets(config)
    return CollectiveTrainer(
        build_task_specs(config, datasets),
        build_consistency_specs(config, datasets),
        batch_size=config.experiment.batch_size,
        dedicated_ratio=config.experiment.dedicated_ratio,
        log_every=config.experiment.log_every,
    )


def eval_options(config: ExperimentConfig) -> Dict[str, Any]:
    return {
        "median_scaling": config.eval.median_scaling,
        "iou_threshold": config.eval.iou_threshold,
        "movable_classes": config.eval.movable_classes,
    }


# --- Runs ---

@dataclass
class ExperimentResult:
    name: str
    history: MetricsHistory
    final: Dict[str, MetricBundle] = field(default_factory=dict)
    output_dir: Optional[Path] = None
    trainer: Optional[CollectiveTrainer] = None


def final_frame_rows(step: int, final: Mapping[str, MetricBundle]) -> MetricsHistory:
    rows = MetricsHistory()
    for task_id, bundle in sorted(final.items()):
        rows.record_bundle(step, task_id, bundle)
    return rows


def run_experiment(config: ExperimentConfig, ledger=None, resume: bool = False) -> ExperimentResult:
    """
    Build and train one experiment, writing ``metrics.csv``,
    ``final_metrics.csv`` and a checkpoint under the output directory.
    With ``resume`` the run continues from the checkpoint found there.
    """
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    datasets = build_datasets(config)
    trainer = build_trainer(config, datasets)
    checkpoint_dir = out / CHECKPOINT_DIR

    if resume:
        if not (checkpoint_dir / STATE_NAME).exists():
            raise ConfigError(f"nothing to resume: no checkpoint under {checkpoint_dir}")
        load_checkpoint(trainer, checkpoint_dir)
        if (out / METRICS_CSV).exists():
            trainer.history = MetricsHistory.from_csv(out / METRICS_CSV)

    eval_dataset = datasets.get(config.eval.dataset) if config.eval.dataset else None
    logger.info(f"Running experiment '{config.experiment.name}' for {config.experiment.steps} steps")
    history = trainer.run(
        config.experiment.steps,
        eval_dataset=eval_dataset,
        eval_every=config.experiment.eval_every,
        eval_options=eval_options(config),
        checkpoint_dir=checkpoint_dir,
        checkpoint_every=config.experiment.checkpoint_every,
    )
    save_checkpoint(trainer, checkpoint_dir)

    final = trainer.evaluate(eval_dataset, **eval_options(config)) if eval_dataset is not None else {}
    history.to_csv(out / METRICS_CSV)
    final_frame_rows(trainer.step, final).to_csv(out / FINAL_CSV)
    if ledger is not None:
        ledger.record_history(config.experiment.name, history)
    logger.info(f"Experiment '{config.experiment.name}' finished at step {trainer.step}")
    return ExperimentResult(config.experiment.name, history, final, out, trainer)
