# consistency/errors.py

class ConsistencyError(ValueError):
    """Predictions handed to a consistency loss are incompatible."""


class ConsistencyWarning(RuntimeWarning):
    """A consistency loss had no valid pixels or cells and evaluated to 0."""
