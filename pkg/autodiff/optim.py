# autodiff/optim.py

import logging
from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from autodiff.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LearningRateSchedule:
    """Constant rate, or step decay: lr · decay_rate^(step // decay_every)."""

    base_lr: float
    kind: str = "constant"
    decay_rate: float = 0.5
    decay_every: int = 1000

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.base_lr}")
        if self.kind not in ("constant", "step"):
            raise ValueError(f"unknown schedule '{self.kind}'")
        if self.kind == "step" and self.decay_every < 1:
            raise ValueError("decay_every must be at least 1")

    def rate(self, step: int) -> float:
        if self.kind == "constant":
            return self.base_lr
        return self.base_lr * self.decay_rate ** (step // self.decay_every)


class Optimizer:
    """
    Functional optimizer: ``step`` returns fresh parameter tensors and never
    mutates the ones it was given.
    """

    kind = "base"

    def __init__(self, schedule: LearningRateSchedule):
        self.schedule = schedule
        self.steps = 0

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        lr = self.schedule.rate(self.steps)
        self.steps += 1
        updated = {}
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                updated[name] = param
                continue
            updated[name] = Tensor(self._update(name, param.data, np.asarray(grad), lr), requires_grad=True, name=name)
        return updated

    def _update(self, name: str, value: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        raise NotImplementedError

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {"steps": np.array([self.steps], dtype=np.float64)}

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        self.steps = int(state["steps"][0])


class SGD(Optimizer):
    kind = "sgd"

    def _update(self, name, value, grad, lr):
        return value - lr * grad


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, schedule: LearningRateSchedule, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(schedule)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def _update(self, name, value, grad, lr):
        m = self.beta1 * self.m.get(name, np.zeros_like(value)) + (1 - self.beta1) * grad
        v = self.beta2 * self.v.get(name, np.zeros_like(value)) + (1 - self.beta2) * grad * grad
        self.m[name], self.v[name] = m, v
        # self.steps was already advanced for this update
        m_hat = m / (1 - self.beta1 ** self.steps)
        v_hat = v / (1 - self.beta2 ** self.steps)
        return value - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = super().state_dict()
        state.update({f"m/{k}": v for k, v in self.m.items()})
        state.update({f"v/{k}": v for k, v in self.v.items()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        super().load_state_dict(state)
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m/")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v/")}


def build_optimizer(kind: str, schedule: LearningRateSchedule) -> Optimizer:
    if kind == "sgd":
        return SGD(schedule)
    if kind == "adam":
        return Adam(schedule)
    raise ValueError(f"unknown optimizer '{kind}'")
