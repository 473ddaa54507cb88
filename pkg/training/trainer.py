# training/trainer.py

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from autodiff.tensor import GradientTape, Tensor, backward
from evaluation.metrics import MetricBundle
from synth.datasets import DatasetHandle, label_keys
from tasks.parameters import ModelParameters
from training.checkpoints import save_checkpoint
from training.errors import NonFiniteLossError, TrainingError
from training.evaluation import evaluate
from training.history import MetricsHistory
from training.specs import ConsistencySpec, TaskSpec, validate_specs

logger = logging.getLogger(__name__)

DEDICATED = "dedicated"
MEDIATOR = "mediator"


@dataclass
class StepResult:
    """
    Loss terms of one step. ``losses`` holds unweighted values keyed
    "sup/<task_id>" or "con/<name>", ``weights`` their λ, and ``total`` the
    weighted sum that was differentiated.
    """

    step: int
    phase: str
    losses: Dict[str, float] = field(default_factory=dict)
    weights: Dict[str, float] = field(default_factory=dict)
    total: float = 0.0
    grad_norms: Dict[str, float] = field(default_factory=dict)
    updated: List[str] = field(default_factory=list)

    def weighted_sum(self) -> float:
        return float(sum(self.weights[key] * value for key, value in self.losses.items()))


class CollectiveTrainer:
    """
    Single-process collective training loop.

    Dedicated steps draw a batch from each task's dedicated dataset and apply
    supervised losses; mediator steps draw a batch from each mediator dataset,
    run every participant and apply the weighted consistency terms. One tape
    records the whole step; each task's optimizer then updates only that
    task's parameters. Tasks that received no loss on a step are not stepped.
    """

    def __init__(
        self,
        tasks: Sequence[TaskSpec],
        consistencies: Sequence[ConsistencySpec] = (),
        batch_size: int = 1,
        dedicated_ratio: int = 1,
        history: Optional[MetricsHistory] = None,
        log_every: int = 10,
    ):
        if batch_size < 1:
            raise TrainingError(f"batch_size must be at least 1, got {batch_size}")
        if dedicated_ratio < 1:
            raise TrainingError(f"dedicated_ratio must be at least 1, got {dedicated_ratio}")
        self.tasks = validate_specs(tasks, consistencies)
        self.consistencies = list(consistencies)
        self.batch_size = batch_size
        self.dedicated_ratio = dedicated_ratio
        self.history = history if history is not None else MetricsHistory()
        self.log_every = max(1, log_every)

        self.params: Dict[str, ModelParameters] = {tid: spec.initial() for tid, spec in self.tasks.items()}
        self.optimizers = {tid: spec.optimizer.build() for tid, spec in self.tasks.items()}
        self.step = 0
        # Read cursors into the endless per-dataset shuffles.
        self.positions: Dict[str, int] = {}
        logger.info(
            f"Collective trainer: tasks {sorted(self.tasks)}, "
            f"consistency terms {[c.name for c in self.active_consistencies]}"
        )

    @property
    def active_consistencies(self) -> List[ConsistencySpec]:
        return [c for c in self.consistencies if c.active]

    def phase(self, step: int) -> str:
        """Every step is dedicated when no consistency term is active."""
        if not self.active_consistencies:
            return DEDICATED
        return DEDICATED if step % (self.dedicated_ratio + 1) < self.dedicated_ratio else MEDIATOR

    def _draw(self, cursor: str, dataset: DatasetHandle) -> List[Mapping[str, np.ndarray]]:
        start = self.positions.get(cursor, 0)
        self.positions[cursor] = start + self.batch_size
        return [dataset.sample_at(p) for p in range(start, start + self.batch_size)]

    # --- Loss assembly ---

    def _supervised_terms(self) -> Dict[str, Tuple[Tensor, float, Sequence[str]]]:
        terms = {}
        for task_id, spec in self.tasks.items():
            if spec.frozen or not spec.has_dedicated_data or spec.sup_weight == 0:
                continue
            wanted = label_keys(spec.model.label_fields)
            losses = []
            for sample in self._draw(f"sup/{task_id}", spec.dataset):
                if not any(key in sample for key in wanted):
                    continue
                outputs = spec.model(self.params[task_id], spec.model.select_inputs(sample))
                loss = spec.model.supervised_loss(outputs, sample)
                if loss is not None:
                    losses.append(loss)
            if losses:
                terms[f"sup/{task_id}"] = (sum(losses[1:], losses[0]) / len(losses), spec.sup_weight, [task_id])
        return terms

    def _consistency_terms(self) -> Dict[str, Tuple[Tensor, float, Sequence[str]]]:
        by_dataset: Dict[str, List[ConsistencySpec]] = {}
        for spec in self.active_consistencies:
            by_dataset.setdefault(spec.dataset.name, []).append(spec)

        terms = {}
        for name, specs in by_dataset.items():
            involved = sorted({t for spec in specs for t in spec.participants})
            values: Dict[str, List[Tensor]] = {spec.name: [] for spec in specs}
            for sample in self._draw(f"mediator/{name}", specs[0].dataset):
                predictions = self.predictions(involved, sample)
                for spec in specs:
                    values[spec.name].append(spec.term(predictions, spec.participants, sample, spec.options))
            for spec in specs:
                losses = values[spec.name]
                terms[f"con/{spec.name}"] = (sum(losses[1:], losses[0]) / len(losses), spec.weight, spec.participants)
        return terms

    def predictions(self, task_ids: Sequence[str], sample: Mapping[str, np.ndarray]) -> Dict[str, Dict[str, Tensor]]:
        """Forward passes of ``task_ids`` on one mediator sample."""
        return {t: self.tasks[t].model(self.params[t], self.tasks[t].model.select_inputs(sample)) for t in task_ids}

    # --- Steps ---

    def train_step(self) -> StepResult:
        step = self.step
        phase = self.phase(step)
        result = StepResult(step, phase)

        with GradientTape() as tape:
            terms = self._supervised_terms() if phase == DEDICATED else self._consistency_terms()
            total: Optional[Tensor] = None
            for key, (value, weight, _) in terms.items():
                loss = float(value.item())
                if not math.isfinite(loss):
                    logger.error(f"Aborting at step {step}: loss term '{key}' is {loss}")
                    raise NonFiniteLossError(key, loss, step)
                result.losses[key] = loss
                result.weights[key] = weight
                weighted = value * weight
                total = weighted if total is None else total + weighted

        touched = {t for _, _, participants in terms.values() for t in participants if not self.tasks[t].frozen}
        if total is not None:
            result.total = float(total.item())
            grads = backward(total, tape)
            for task_id in sorted(touched):
                params = self.params[task_id]
                own = {name: grads[tensor] for name, tensor in params.tensors.items() if tensor in grads}
                if not own:
                    continue
                result.grad_norms[task_id] = params.gradient_norm(own)
                self.params[task_id] = params.with_tensors(self.optimizers[task_id].step(params.tensors, own))
                result.updated.append(task_id)

        self.step += 1
        if step % self.log_every == 0:
            for key, value in result.losses.items():
                kind, owner = key.split("/", 1)
                self.history.record(step, owner, "sup_loss" if kind == "sup" else "consistency_loss", value)
            logger.debug(f"Step {step} ({phase}): {result.losses}")
        return result

    def evaluate(self, dataset: DatasetHandle, **options) -> Dict[str, MetricBundle]:
        return evaluate({t: (spec.model, self.params[t]) for t, spec in self.tasks.items()}, dataset, **options)

    def run(
        self,
        steps: int,
        eval_dataset: Optional[DatasetHandle] = None,
        eval_every: int = 0,
        eval_options: Optional[dict] = None,
        checkpoint_dir=None,
        checkpoint_every: int = 0,
    ) -> MetricsHistory:
        """Train until ``self.step`` reaches ``steps``, evaluating and checkpointing on their intervals."""
        eval_options = eval_options or {}
        while self.step < steps:
            self.train_step()
            if eval_dataset is not None and eval_every and (self.step % eval_every == 0 or self.step == steps):
                for task_id, bundle in self.evaluate(eval_dataset, **eval_options).items():
                    self.history.record_bundle(self.step, task_id, bundle)
            if checkpoint_dir is not None and checkpoint_every and self.step % checkpoint_every == 0:
                save_checkpoint(self, checkpoint_dir)
        return self.history
