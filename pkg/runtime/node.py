# runtime/node.py

import dataclasses
import logging
import time
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from autodiff.tensor import Tensor
from runtime.errors import ProtocolError
from runtime.transport import PeerClient
from runtime.wire import Message, MessageKind
from tasks.interface import TaskInterfaceError
from training.evaluation import evaluate
from training.specs import ConsistencySpec, TaskSpec
from training.trainer import CollectiveTrainer, StepResult

logger = logging.getLogger(__name__)


class NodeTrainer(CollectiveTrainer):
    """
    Trainer of a single task on its own node.

    Peer predictions come from the peers' prediction servers and enter the
    local tape as constants, so consistency gradients reach only this
    node's parameters. The node republishes its own snapshot every
    ``refresh_interval`` steps (or every ``refresh_seconds`` of wall clock
    when that is set).
    """

    def __init__(
        self,
        own: TaskSpec,
        peers: Sequence[TaskSpec],
        consistencies: Sequence[ConsistencySpec],
        client: PeerClient,
        refresh_interval: int = 1,
        refresh_seconds: float = 0.0,
        **trainer_options,
    ):
        relevant = [c for c in consistencies if own.task_id in c.participants]
        needed = {t for c in relevant for t in c.participants} - {own.task_id}
        peer_specs = [dataclasses.replace(p, frozen=True, dataset=None) for p in peers if p.task_id in needed]
        super().__init__([own] + peer_specs, relevant, **trainer_options)
        self.task_id = own.task_id
        self.client = client
        self.refresh_interval = max(1, refresh_interval)
        self.refresh_seconds = refresh_seconds
        self.published_version = 0
        self._last_publish = 0.0
        self._last_tick = 0.0
        self.longest_step_seconds = 0.0
        self.last_step_at = 0.0  # wall clock, comparable with snapshot times
        self.peer_versions: List[Dict[str, int]] = []

    def __repr__(self):
        return f"<NodeTrainer(task='{self.task_id}', step={self.step}, version={self.published_version})>"

    @property
    def peers(self) -> List[str]:
        return sorted(t for t in self.tasks if t != self.task_id)

    def predictions(self, task_ids: Sequence[str], sample: Mapping[str, np.ndarray]) -> Dict[str, Dict[str, Tensor]]:
        result: Dict[str, Dict[str, Tensor]] = {}
        versions: Dict[str, int] = {}
        for task_id in task_ids:
            model = self.tasks[task_id].model
            if task_id == self.task_id:
                result[task_id] = model(self.params[task_id], model.select_inputs(sample))
                continue
            arrays, response = self.client.predict(task_id, model.select_inputs(sample), self.step)
            outputs = {key: Tensor(value) for key, value in arrays.items()}
            try:
                model.interface().check_outputs(outputs)
            except TaskInterfaceError as e:
                raise ProtocolError(f"peer '{task_id}' returned unexpected outputs: {e}") from e
            result[task_id] = outputs
            versions[task_id] = response.version
        if versions:
            self.peer_versions.append(versions)
        return result

    # --- Snapshots ---

    def publish(self, now: Optional[float] = None) -> int:
        started = time.monotonic() if now is None else now
        version = self.published_version + 1
        params = self.params[self.task_id]
        message = Message(MessageKind.PUBLISH, self.task_id, self.task_id, version, 0, self.step, params.arrays())
        self.client.publish(message)
        self.published_version = version
        self._last_publish = started
        if not self._last_tick:
            self._last_tick = started
        return version

    def refresh_due(self, now: Optional[float] = None) -> bool:
        if self.refresh_seconds > 0:
            now = time.monotonic() if now is None else now
            return now - self._last_publish >= self.refresh_seconds
        return self.step % self.refresh_interval == 0

    def train_step(self) -> StepResult:
        result = super().train_step()
        now = time.monotonic()
        if self.refresh_due(now):
            self.publish(now)
        # gap from the previous refresh check to the end of this step's publication
        self.longest_step_seconds = max(self.longest_step_seconds, time.monotonic() - self._last_tick)
        self._last_tick = now
        self.last_step_at = time.time()
        return result

    def own_params(self):
        return self.params[self.task_id]

    def evaluate_own(self, dataset, **options):
        spec = self.tasks[self.task_id]
        return evaluate({self.task_id: (spec.model, self.own_params())}, dataset, **options)
