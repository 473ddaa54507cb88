# backend/routes/snapshots.py

import logging
from datetime import datetime, timezone
from typing import List

from fastapi import APIRouter, Depends, HTTPException, Request, Response

from backend.dependencies import get_server
from backend.schemas import ServedRequestSchema, SnapshotStatus
from runtime.errors import ProtocolError
from runtime.server import PredictionServer

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/api/snapshots",
    tags=["Snapshots"],
    responses={404: {"description": "Unknown task"}},
)


@router.post("/{task_id}",
             summary="Publish a Fresh Snapshot",
             response_class=Response)
async def publish_snapshot(request: Request, server: PredictionServer = Depends(get_server)):
    """
    Installs a binary publication frame as the next snapshot version. The
    reply is an empty response frame stamped with the installed version.
    """
    frame = await request.body()
    try:
        reply = server.handle_bytes(frame)
    except ProtocolError as e:
        logger.warning(f"Rejected publication for '{server.task_id}': {e}")
        raise HTTPException(status_code=400, detail=str(e))
    return Response(content=reply, media_type="application/octet-stream")


@router.get("/{task_id}",
            response_model=SnapshotStatus,
            summary="Current Snapshot Status")
def snapshot_status(server: PredictionServer = Depends(get_server)):
    if not server.ready:
        return SnapshotStatus(task_id=server.task_id, ready=False, served_requests=len(server.served))
    snapshot = server.snapshot
    return SnapshotStatus(
        task_id=server.task_id,
        ready=True,
        version=snapshot.version,
        publisher_step=snapshot.publisher_step,
        published_at=datetime.fromtimestamp(snapshot.published_at, tz=timezone.utc),
        served_requests=len(server.served),
    )


@router.get("/{task_id}/served",
            response_model=List[ServedRequestSchema],
            summary="Served Request Log")
def served_requests(skip: int = 0, limit: int = 100, server: PredictionServer = Depends(get_server)):
    """
    Version log of requests answered by this server, with pagination.
    """
    if limit < 1:
        raise HTTPException(status_code=400, detail="limit must be positive")
    return server.served[skip:skip + limit]
