# runtime/transport.py

import itertools
import logging
import time
from abc import ABC, abstractmethod
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np
import requests

from runtime.errors import NotReadyError, PeerUnreachableError, ProtocolError, UnknownTaskError
from runtime.server import PredictionServer
from runtime.wire import Message, MessageKind, decode_message, encode_message
from utils.settings import get_settings

logger = logging.getLogger(__name__)

PREDICT_ROUTE = "predict"
SNAPSHOT_ROUTE = "snapshots"


class TransportError(ConnectionError):
    """The message could not be delivered (connection refused, timeout, server failure)."""


class Transport(ABC):
    """Delivers one encoded frame to the server of ``task_id`` and returns its encoded reply."""

    @abstractmethod
    def send(self, task_id: str, route: str, frame: bytes) -> bytes:
        ...


class InProcessTransport(Transport):
    """Calls the servers directly; every message still goes through the wire codec."""

    def __init__(self, servers: Optional[Mapping[str, PredictionServer]] = None):
        self.servers: Dict[str, PredictionServer] = dict(servers or {})

    def register(self, server: PredictionServer):
        self.servers[server.task_id] = server

    def send(self, task_id: str, route: str, frame: bytes) -> bytes:
        server = self.servers.get(task_id)
        if server is None:
            raise UnknownTaskError(f"no prediction server for task '{task_id}'")
        return server.handle_bytes(frame)


class HttpTransport(Transport):
    """POSTs frames to ``{base_url}/api/{route}/{task_id}`` of the serving backend."""

    def __init__(self, endpoints: Mapping[str, str], timeout: Optional[float] = None, session: Optional[requests.Session] = None):
        self.endpoints = {task_id: url.rstrip("/") for task_id, url in endpoints.items()}
        self.timeout = timeout if timeout is not None else get_settings().request_timeout
        self.session = session or requests.Session()

    def send(self, task_id: str, route: str, frame: bytes) -> bytes:
        base = self.endpoints.get(task_id)
        if base is None:
            raise UnknownTaskError(f"no endpoint for task '{task_id}'")
        url = f"{base}/api/{route}/{task_id}"
        try:
            response = self.session.post(
                url, data=frame, headers={"Content-Type": "application/octet-stream"}, timeout=self.timeout
            )
        except requests.exceptions.RequestException as e:
            raise TransportError(f"POST {url} failed: {e}") from e
        if response.status_code == 503:
            raise NotReadyError(response.text)
        if response.status_code == 404:
            raise UnknownTaskError(response.text)
        if response.status_code == 400:
            raise ProtocolError(response.text)
        if response.status_code != 200:
            raise TransportError(f"POST {url} returned {response.status_code}: {response.text}")
        return response.content


class PeerClient:
    """
    One trainer's view of its peers: forward requests and snapshot
    publications with a bounded retry budget. "Not ready" replies and
    delivery failures are retried with doubling backoff; protocol errors are
    not.
    """

    def __init__(
        self,
        transport: Transport,
        requester: str,
        retry_budget: Optional[int] = None,
        backoff: Optional[float] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        settings = get_settings()
        self.transport = transport
        self.requester = requester
        self.retry_budget = settings.retry_budget if retry_budget is None else retry_budget
        self.backoff = settings.retry_backoff if backoff is None else backoff
        self.sleep = sleep
        self._request_ids = itertools.count(1)

    def _deliver(self, task_id: str, route: str, frame: bytes) -> Message:
        attempts = self.retry_budget + 1
        last_error: Exception = RuntimeError("no attempt made")
        for attempt in range(attempts):
            try:
                return decode_message(self.transport.send(task_id, route, frame))
            except (NotReadyError, TransportError) as e:
                last_error = e
                if attempt + 1 < attempts:
                    delay = self.backoff * 2 ** attempt
                    logger.warning(f"'{self.requester}' -> '{task_id}': {e}; retrying in {delay:.3f}s")
                    self.sleep(delay)
        logger.error(f"'{self.requester}': peer '{task_id}' unreachable after {attempts} attempts")
        raise PeerUnreachableError(task_id, attempts, last_error)

    def predict(self, task_id: str, inputs: Mapping[str, np.ndarray], step: int) -> Tuple[Dict[str, np.ndarray], Message]:
        request = Message(MessageKind.REQUEST, task_id, self.requester, 0, next(self._request_ids), step, dict(inputs))
        response = self._deliver(task_id, PREDICT_ROUTE, encode_message(request))
        if response.kind != MessageKind.RESPONSE or response.request_id != request.request_id:
            raise ProtocolError(f"'{task_id}' answered request {request.request_id} with {response.kind.name} {response.request_id}")
        return dict(response.arrays), response

    def publish(self, message: Message) -> Message:
        if message.kind != MessageKind.PUBLISH:
            raise ProtocolError(f"expected a publication, got {message.kind.name}")
        return self._deliver(message.task_id, SNAPSHOT_ROUTE, encode_message(message))
