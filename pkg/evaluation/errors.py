# evaluation/errors.py


class MetricError(ValueError):
    """A metric is undefined for the given inputs (for example no valid pixels)."""
