# autodiff/errors.py


class TensorError(Exception):
    """Base class for tensor and tape failures."""


class ShapeMismatchError(TensorError, ValueError):
    pass


class AxisError(TensorError, IndexError):
    pass


class DomainError(TensorError, ArithmeticError):
    """An operation was evaluated outside its documented input domain."""


class TapeError(TensorError, RuntimeError):
    pass
