from training.errors import NonFiniteLossError, TrainingError
from training.evaluation import evaluate
from training.experiments import ExperimentResult, build_trainer, run_experiment
from training.history import MetricsHistory
from training.specs import ConsistencySpec, OptimizerSettings, TaskSpec, validate_specs
from training.trainer import CollectiveTrainer, StepResult

__all__ = [
    "CollectiveTrainer",
    "ConsistencySpec",
    "ExperimentResult",
    "MetricsHistory",
    "NonFiniteLossError",
    "OptimizerSettings",
    "StepResult",
    "TaskSpec",
    "TrainingError",
    "build_trainer",
    "evaluate",
    "run_experiment",
    "validate_specs",
]
