# training/specs.py

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from autodiff.optim import LearningRateSchedule, Optimizer, build_optimizer
from consistency.terms import ConsistencyOptions, ConsistencyTerm, get_term
from synth.datasets import DatasetHandle
from tasks.interface import TaskModel
from tasks.parameters import ModelParameters
from training.errors import TrainingError

logger = logging.getLogger(__name__)


@dataclass
class OptimizerSettings:
    kind: str = "adam"
    learning_rate: float = 1e-3
    schedule: str = "constant"
    decay_rate: float = 0.5
    decay_every: int = 1000

    def build(self) -> Optimizer:
        schedule = LearningRateSchedule(self.learning_rate, self.schedule, self.decay_rate, self.decay_every)
        return build_optimizer(self.kind, schedule)


@dataclass
class TaskSpec:
    """
    One task of the collective: its model, optimizer settings and dedicated
    dataset. A missing or empty dedicated dataset means the task learns only
    through consistency terms.
    """

    task_id: str
    model: TaskModel
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    dataset: Optional[DatasetHandle] = None
    sup_weight: float = 1.0
    frozen: bool = False
    seed: int = 0
    # Starting parameters (e.g. a pretrained snapshot); drawn from `seed` when None.
    initial_params: Optional[ModelParameters] = None

    def initial(self) -> ModelParameters:
        params = self.initial_params if self.initial_params is not None else self.model.init_params(self.seed)
        return params.frozen() if self.frozen else ModelParameters.from_arrays(params.arrays(), params.version)

    @property
    def has_dedicated_data(self) -> bool:
        return self.dataset is not None and len(self.dataset) > 0


@dataclass
class ConsistencySpec:
    name: str
    term: ConsistencyTerm
    participants: List[str]
    weight: float = 1.0
    dataset: Optional[DatasetHandle] = None
    options: ConsistencyOptions = field(default_factory=ConsistencyOptions)

    @classmethod
    def from_registry(
        cls,
        name: str,
        term: str,
        participants: Sequence[str],
        weight: float = 1.0,
        dataset: Optional[DatasetHandle] = None,
        options: Optional[ConsistencyOptions] = None,
    ) -> "ConsistencySpec":
        return cls(name, get_term(term), list(participants), weight, dataset, options or ConsistencyOptions())

    @property
    def active(self) -> bool:
        return self.weight != 0.0


def validate_specs(tasks: Sequence[TaskSpec], consistencies: Sequence[ConsistencySpec]) -> Dict[str, TaskSpec]:
    """Check ids, participants, declared outputs and mediator datasets; returns tasks by id."""
    by_id: Dict[str, TaskSpec] = {}
    for spec in tasks:
        if spec.task_id in by_id:
            raise TrainingError(f"duplicate task id '{spec.task_id}'")
        if spec.model.task_id != spec.task_id:
            raise TrainingError(f"task '{spec.task_id}' wraps a model registered as '{spec.model.task_id}'")
        if spec.sup_weight < 0:
            raise TrainingError(f"task '{spec.task_id}' has a negative supervised weight")
        by_id[spec.task_id] = spec

    for spec in consistencies:
        missing = [t for t in spec.participants if t not in by_id]
        if missing:
            raise TrainingError(f"consistency '{spec.name}' names unknown tasks {missing}")
        if len(spec.participants) < spec.term.min_participants:
            raise TrainingError(f"consistency '{spec.name}' needs at least {spec.term.min_participants} participants")
        if spec.weight < 0:
            raise TrainingError(f"consistency '{spec.name}' has a negative weight")
        available = set()
        for task_id in spec.participants:
            available.update(by_id[task_id].model.interface().outputs)
        absent = sorted(spec.term.required_outputs - available)
        if absent:
            raise TrainingError(f"consistency '{spec.name}' needs outputs {absent} that no participant declares")
        if spec.active and (spec.dataset is None or len(spec.dataset) == 0):
            raise TrainingError(f"consistency '{spec.name}' has no mediator dataset")
    return by_id
