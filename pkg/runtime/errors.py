# runtime/errors.py


class RuntimeProtocolError(RuntimeError):
    """Base class for failures of the prediction-serving protocol."""


class NotReadyError(RuntimeProtocolError):
    """The server has no published snapshot yet; the request may be retried."""


class ProtocolError(RuntimeProtocolError):
    """A message could not be decoded or does not fit the receiving server."""


class UnknownTaskError(ProtocolError):
    """No prediction server is registered for the requested task."""


class PeerUnreachableError(RuntimeProtocolError):
    """A peer did not answer within the retry budget."""

    def __init__(self, task_id: str, attempts: int, last_error: Exception):
        self.task_id = task_id
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"peer '{task_id}' unreachable after {attempts} attempts: {type(last_error).__name__}: {last_error}")
