# backend/main.py

import logging
import socket
import threading
import time
from contextlib import asynccontextmanager
from typing import Mapping, Optional

import uvicorn
from fastapi import FastAPI

from backend.routes import predictions, snapshots
from backend.schemas import ServiceStatus
from runtime.server import PredictionServer
from utils.settings import get_settings

logger = logging.getLogger(__name__)

SERVICE_VERSION = "1.0.0"


def create_app(servers: Mapping[str, PredictionServer], ledger=None) -> FastAPI:
    """FastAPI app exposing the given prediction servers over HTTP."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        # Code to run on startup
        logger.info(f"Starting prediction service for tasks {sorted(servers)}")
        if ledger is not None:
            for server in servers.values():
                if not server.ready and server.restore(ledger):
                    logger.info(f"Resumed '{server.task_id}' from its last published snapshot")
        yield
        # Code to run on shutdown
        logger.info("Shutting down prediction service...")

    app = FastAPI(
        title="Collective Training Prediction Service",
        description="Forward-pass servers hosting periodically refreshed task snapshots.",
        version=SERVICE_VERSION,
        lifespan=lifespan,
    )
    app.state.servers = dict(servers)

    # --- Include API Routers ---
    app.include_router(predictions.router)
    app.include_router(snapshots.router)

    # --- Root Endpoint ---
    @app.get("/", tags=["Root"], response_model=ServiceStatus)
    async def read_root():
        """
        Root endpoint listing the served tasks.
        """
        return ServiceStatus(
            message="Collective training prediction service",
            status="active",
            version=SERVICE_VERSION,
            tasks=sorted(app.state.servers),
        )

    return app


class BackgroundServer:
    """uvicorn running one app on a daemon thread, bound to an already open socket."""

    def __init__(self, app: FastAPI, host: Optional[str] = None, port: Optional[int] = None):
        settings = get_settings()
        self.host = host or settings.server_host
        self._socket = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._socket.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._socket.bind((self.host, settings.base_port if port is None else port))
        self.port = self._socket.getsockname()[1]
        self.server = uvicorn.Server(uvicorn.Config(app, log_level=settings.log_level.lower(), lifespan="on"))
        self._thread = threading.Thread(target=self.server.run, kwargs={"sockets": [self._socket]}, daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self, timeout: float = 10.0) -> "BackgroundServer":
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if time.monotonic() > deadline or not self._thread.is_alive():
                raise RuntimeError(f"prediction service on {self.url} did not start")
            time.sleep(0.01)
        logger.info(f"Prediction service listening on {self.url}")
        return self

    def stop(self, timeout: float = 10.0):
        self.server.should_exit = True
        self._thread.join(timeout)
        self._socket.close()


def serve_in_background(servers: Mapping[str, PredictionServer], host: Optional[str] = None, port: Optional[int] = None, ledger=None) -> BackgroundServer:
    return BackgroundServer(create_app(servers, ledger), host, port).start()
