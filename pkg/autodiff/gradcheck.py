# autodiff/gradcheck.py

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from autodiff.tensor import GradientTape, Tensor, backward

logger = logging.getLogger(__name__)

RTOL = 1e-4
STEP_SCALE = 1e-4


@dataclass
class GradcheckResult:
    passed: bool
    max_error: float = 0.0
    checked: int = 0
    failures: List[str] = field(default_factory=list)


def numeric_gradient(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], index: int) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. ``inputs[index]`` with h = 1e-4·max(1, |x|)."""
    base = [np.array(x, dtype=np.float64) for x in inputs]
    target = base[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = target[idx]
        h = STEP_SCALE * max(1.0, abs(original))
        target[idx] = original + h
        plus = fn(*[Tensor(x) for x in base]).item()
        target[idx] = original - h
        minus = fn(*[Tensor(x) for x in base]).item()
        target[idx] = original
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


def analytic_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray]) -> List[np.ndarray]:
    leaves = [Tensor(x, requires_grad=True) for x in inputs]
    with GradientTape() as tape:
        loss = fn(*leaves)
    grads = backward(loss, tape)
    return [np.array(grads[leaf]) if leaf in grads else np.zeros(leaf.shape) for leaf in leaves]


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    wrt: Optional[Sequence[int]] = None,
    rtol: float = RTOL,
    name: str = "fn",
) -> GradcheckResult:
    """
    Compare reverse-mode gradients of a scalar ``fn`` against central
    differences. An element passes when |analytic − numeric| ≤ rtol·(1 + |numeric|).
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    wrt = range(len(inputs)) if wrt is None else wrt
    analytic = analytic_gradients(fn, inputs)
    result = GradcheckResult(passed=True)

    for i in wrt:
        numeric = numeric_gradient(fn, inputs, i)
        error = np.abs(analytic[i] - numeric)
        bound = rtol * (1.0 + np.abs(numeric))
        result.checked += numeric.size
        if error.size:
            result.max_error = max(result.max_error, float(error.max()))
        bad = np.argwhere(error > bound)
        if bad.size:
            result.passed = False
            first = tuple(int(v) for v in bad[0])
            result.failures.append(
                f"{name}: input {i} at {first}: analytic {analytic[i][first]:.8g} vs numeric {numeric[first]:.8g}"
            )

    if not result.passed:
        logger.warning(f"Gradcheck failed for {name}: {result.failures[0]}")
    return result
