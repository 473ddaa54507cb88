# utils/config.py

import configparser
import logging
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, model_validator

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

# Experiment files are INI: flat key = value pairs under [section] headers.
# Repeatable sections carry a name after a dot: [dataset.<name>],
# [task.<id>], [consistency.<name>]. Keys written as "<group>.<key>" are
# collected into option dicts (generator options, model options, photometric
# options) and validated by the component that consumes them.


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


Names = Annotated[List[str], BeforeValidator(_split_list)]
Integers = Annotated[List[int], BeforeValidator(_split_list)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentSection(_Section):
    name: str = "experiment"
    seed: int = 0
    steps: int = Field(default=100, ge=0)
    eval_every: int = Field(default=0, ge=0)
    checkpoint_every: int = Field(default=0, ge=0)
    batch_size: int = Field(default=1, ge=1)
    dedicated_ratio: int = Field(default=1, ge=1)
    log_every: int = Field(default=10, ge=1)
    output_dir: str = "runs/experiment"
    deterministic: bool = True


class DatasetSection(_Section):
    kind: Literal["scene_pair", "scene_frame", "point_cloud", "linear"]
    n_samples: int = Field(default=8, ge=0)
    seed: int = 0
    role: Literal["dedicated", "mediator"] = "mediator"
    labeled_fields: Names = Field(default_factory=list)
    keep_fraction: float = Field(default=1.0, ge=0.0, le=1.0)
    generator: Dict[str, Any] = Field(default_factory=dict)


class TaskSection(_Section):
    kind: str
    optimizer: Literal["sgd", "adam"] = "adam"
    learning_rate: float = Field(default=1e-3, gt=0)
    schedule: Literal["constant", "step"] = "constant"
    decay_rate: float = Field(default=0.5, gt=0)
    decay_every: int = Field(default=1000, ge=1)
    dataset: Optional[str] = None
    sup_weight: float = Field(default=1.0, ge=0)
    frozen: bool = False
    seed: int = 0
    init_checkpoint: Optional[str] = None
    model: Dict[str, Any] = Field(default_factory=dict)


class ConsistencySection(_Section):
    term: str
    tasks: Names
    weight: float = Field(default=1.0, ge=0)
    dataset: Optional[str] = None
    movable_classes: Optional[Integers] = None
    beta: Optional[float] = None
    window: Optional[int] = None
    photometric: Dict[str, Any] = Field(default_factory=dict)


class EvalSection(_Section):
    dataset: Optional[str] = None
    median_scaling: bool = False
    iou_threshold: float = Field(default=0.5, gt=0, le=1)
    movable_classes: Optional[Integers] = None


class DistributedSection(_Section):
    transport: Literal["inprocess", "http"] = "inprocess"
    scheduler: Literal["lockstep", "threaded"] = "lockstep"
    refresh_interval: int = Field(default=1, ge=0)
    refresh_seconds: float = Field(default=0.0, ge=0)
    staleness_steps: Integers = Field(default_factory=list)
    report_task: Optional[str] = None
    report_metric: str = "abs_rel"
    report_threshold: Optional[float] = None
    host: Optional[str] = None
    base_port: Optional[int] = None


class ExperimentConfig(_Section):
    """A whole experiment file, validated; unknown sections and keys are rejected."""

    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    datasets: Dict[str, DatasetSection] = Field(default_factory=dict)
    tasks: Dict[str, TaskSection] = Field(default_factory=dict)
    consistency: Dict[str, ConsistencySection] = Field(default_factory=dict)
    eval: EvalSection = Field(default_factory=EvalSection)
    distributed: DistributedSection = Field(default_factory=DistributedSection)

    @model_validator(mode="after")
    def _check_references(self):
        if not self.tasks:
            raise ValueError("an experiment needs at least one [task.<id>] section")
        for task_id, task in self.tasks.items():
            if task.dataset is not None and task.dataset not in self.datasets:
                raise ValueError(f"task '{task_id}' names unknown dataset '{task.dataset}'")
        for name, spec in self.consistency.items():
            unknown = [t for t in spec.tasks if t not in self.tasks]
            if unknown:
                raise ValueError(f"consistency '{name}' names unknown tasks {unknown}")
            if spec.dataset is not None and spec.dataset not in self.datasets:
                raise ValueError(f"consistency '{name}' names unknown dataset '{spec.dataset}'")
        if self.eval.dataset is not None and self.eval.dataset not in self.datasets:
            raise ValueError(f"[eval] names unknown dataset '{self.eval.dataset}'")
        return self

    @property
    def output_dir(self) -> Path:
        return Path(self.experiment.output_dir)


# --- Parsing ---

_GROUPED_KEYS = {"dataset": "generator", "task": "model", "consistency": "photometric"}
_REPEATED = {"dataset": "datasets", "task": "tasks", "consistency": "consistency"}
_SINGLE = ("experiment", "eval", "distributed")


def _section_dict(kind: str, items: Dict[str, str]) -> Dict[str, Any]:
    group = _GROUPED_KEYS.get(kind)
    result: Dict[str, Any] = {}
    for key, value in items.items():
        if group and key.startswith(f"{group}."):
            result.setdefault(group, {})[key[len(group) + 1:]] = value
        else:
            result[key] = value
    return result


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e

    raw: Dict[str, Any] = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        kind, _, name = section.partition(".")
        if kind in _SINGLE and not name:
            raw[kind] = items
        elif kind in _REPEATED and name:
            raw.setdefault(_REPEATED[kind], {})[name] = _section_dict(kind, items)
        else:
            raise ConfigError(f"{source}: unknown section [{section}]")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{source}: {e}") from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config = parse_config(path.read_text(), source=str(path))
    logger.info(f"Loaded experiment '{config.experiment.name}' from {path}")
    return config


def apply_overrides(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
    label_fraction: Optional[float] = None,
    deterministic: Optional[bool] = None,
) -> ExperimentConfig:
    """Command-line overrides; a label fraction applies to every dedicated dataset."""
    experiment = config.experiment.model_copy()
    if seed is not None:
        experiment.seed = seed
    if output_dir is not None:
        experiment.output_dir = output_dir
    if deterministic is not None:
        experiment.deterministic = deterministic

    datasets = dict(config.datasets)
    if label_fraction is not None:
        if not 0.0 <= label_fraction <= 1.0:
            raise ConfigError(f"label fraction must lie in [0, 1], got {label_fraction}")
        datasets = {
            name: d.model_copy(update={"keep_fraction": label_fraction}) if d.role == "dedicated" else d
            for name, d in datasets.items()
        }
    return config.model_copy(update={"experiment": experiment, "datasets": datasets})
