# training/errors.py


class TrainingError(RuntimeError):
    """A training run cannot continue."""


class NonFiniteLossError(TrainingError):
    """A loss term evaluated to NaN or infinity."""

    def __init__(self, term: str, value: float, step: int):
        self.term = term
        self.value = value
        self.step = step
        super().__init__(f"loss term '{term}' is {value} at step {step}")
