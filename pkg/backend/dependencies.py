# backend/dependencies.py

from fastapi import HTTPException, Request

from runtime.server import PredictionServer


def get_server(task_id: str, request: Request) -> PredictionServer:
    """The prediction server registered for ``task_id`` on this app."""
    server = request.app.state.servers.get(task_id)
    if server is None:
        raise HTTPException(status_code=404, detail=f"No prediction server for task '{task_id}'.")
    return server
