from autodiff.errors import AxisError, DomainError, ShapeMismatchError, TapeError, TensorError
from autodiff.tensor import GradientTape, Tensor, as_tensor, backward, stop_gradient

__all__ = [
    "AxisError",
    "DomainError",
    "GradientTape",
    "ShapeMismatchError",
    "TapeError",
    "Tensor",
    "TensorError",
    "as_tensor",
    "backward",
    "stop_gradient",
]
