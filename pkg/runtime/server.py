# runtime/server.py

import logging
import threading
import time
from dataclasses import dataclass
from typing import List, Optional

from runtime.errors import NotReadyError, ProtocolError
from runtime.wire import Message, MessageKind, as_arrays, decode_message, encode_message
from tasks.interface import TaskInterfaceError, TaskModel
from tasks.parameters import ModelParameters

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionSnapshot:
    """Immutable published copy of one task's parameters."""

    task_id: str
    params: ModelParameters
    version: int
    publisher_step: int
    published_at: float

    def to_message(self) -> Message:
        return Message(MessageKind.PUBLISH, self.task_id, self.task_id, self.version, 0, self.publisher_step, self.params.arrays())

    @classmethod
    def from_message(cls, message: Message) -> "PredictionSnapshot":
        params = ModelParameters.from_arrays(message.arrays, message.version, trainable=False)
        return cls(message.task_id, params, message.version, message.step, time.time())


@dataclass(frozen=True)
class ServedRecord:
    requester: str
    request_id: int
    snapshot_version: int
    snapshot_step: int
    requester_step: int
    served_at: float = 0.0
    snapshot_published_at: float = 0.0

    @property
    def age(self) -> int:
        return self.requester_step - self.snapshot_step

    @property
    def age_seconds(self) -> float:
        return self.served_at - self.snapshot_published_at


class PredictionServer:
    """
    Serves forward passes of one task against its current snapshot.

    Publishing replaces the snapshot reference under a lock; each request
    reads the reference once, so a request always sees a single version
    even when a refresh lands while it runs.
    """

    def __init__(self, model: TaskModel, ledger=None, store_payloads: bool = True):
        self.model = model
        self.ledger = ledger
        self.store_payloads = store_payloads
        self._snapshot: Optional[PredictionSnapshot] = None
        self._lock = threading.Lock()
        self.served: List[ServedRecord] = []

    @property
    def task_id(self) -> str:
        return self.model.task_id

    def __repr__(self):
        version = self._snapshot.version if self._snapshot else None
        return f"<PredictionServer(task='{self.task_id}', version={version})>"

    @property
    def snapshot(self) -> PredictionSnapshot:
        snapshot = self._snapshot
        if snapshot is None:
            raise NotReadyError(f"server '{self.task_id}' has not published a snapshot yet")
        return snapshot

    @property
    def ready(self) -> bool:
        return self._snapshot is not None

    # --- Publication ---

    def publish(self, params: ModelParameters, publisher_step: int) -> PredictionSnapshot:
        """Install a fresh copy of ``params`` as the next version (1, 2, 3, ...)."""
        with self._lock:
            version = self._snapshot.version + 1 if self._snapshot else 1
            snapshot = PredictionSnapshot(
                self.task_id,
                ModelParameters.from_arrays(params.arrays(), version, trainable=False),
                version,
                publisher_step,
                time.time(),
            )
            self._snapshot = snapshot
        self._log_publication(snapshot)
        return snapshot

    def install(self, snapshot: PredictionSnapshot) -> PredictionSnapshot:
        """Accept a snapshot published elsewhere; its version must follow the current one."""
        if snapshot.task_id != self.task_id:
            raise ProtocolError(f"server '{self.task_id}' cannot install a snapshot of '{snapshot.task_id}'")
        with self._lock:
            expected = self._snapshot.version + 1 if self._snapshot else 1
            if snapshot.version != expected:
                raise ProtocolError(f"server '{self.task_id}' expected version {expected}, got {snapshot.version}")
            self._snapshot = snapshot
        self._log_publication(snapshot)
        return snapshot

    def _log_publication(self, snapshot: PredictionSnapshot):
        logger.info(f"Server '{self.task_id}': published version {snapshot.version} at step {snapshot.publisher_step}")
        if self.ledger is not None:
            payload = snapshot.params.to_blob(self.task_id) if self.store_payloads else None
            self.ledger.record_publication(self.task_id, snapshot.version, snapshot.publisher_step, payload)

    def restore(self, ledger=None) -> bool:
        """Reload the last snapshot recorded in the ledger, e.g. after a restart."""
        ledger = ledger or self.ledger
        if ledger is None:
            return False
        stored = ledger.latest_publication(self.task_id)
        if stored is None or stored.payload is None:
            return False
        _, params = ModelParameters.from_blob(stored.payload)
        with self._lock:
            self._snapshot = PredictionSnapshot(self.task_id, params, stored.version, stored.publisher_step, time.time())
        logger.info(f"Server '{self.task_id}': restored version {stored.version} from the ledger")
        return True

    # --- Requests ---

    def serve_forward(self, request: Message) -> Message:
        if request.kind != MessageKind.REQUEST:
            raise ProtocolError(f"expected a request, got {request.kind.name}")
        if request.task_id != self.task_id:
            raise ProtocolError(f"request for '{request.task_id}' reached server '{self.task_id}'")
        snapshot = self.snapshot
        try:
            outputs = self.model(snapshot.params, self.model.select_inputs(request.arrays))
        except (TaskInterfaceError, KeyError) as e:
            raise ProtocolError(f"request {request.request_id} from '{request.peer_id}' does not fit '{self.task_id}': {e}") from e

        record = ServedRecord(
            request.peer_id, request.request_id, snapshot.version, snapshot.publisher_step, request.step,
            time.time(), snapshot.published_at,
        )
        with self._lock:
            self.served.append(record)
        if self.ledger is not None:
            self.ledger.record_served(self.task_id, request.peer_id, request.request_id, snapshot.version, snapshot.publisher_step, request.step)
        return Message(
            MessageKind.RESPONSE,
            self.task_id,
            request.peer_id,
            snapshot.version,
            request.request_id,
            snapshot.publisher_step,
            as_arrays(outputs),
        )

    def handle_bytes(self, frame: bytes) -> bytes:
        """Wire entry point: a request yields the response, a publication yields an empty acknowledgement."""
        message = decode_message(frame)
        if message.kind == MessageKind.REQUEST:
            return encode_message(self.serve_forward(message))
        if message.kind == MessageKind.PUBLISH:
            snapshot = self.install(PredictionSnapshot.from_message(message))
            return encode_message(Message(MessageKind.RESPONSE, self.task_id, message.peer_id, snapshot.version, 0, snapshot.publisher_step))
        raise ProtocolError(f"server '{self.task_id}' does not accept {message.kind.name} messages")
