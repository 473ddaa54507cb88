# backend/routes/predictions.py

import logging

from fastapi import APIRouter, Depends, HTTPException, Request, Response
from starlette.concurrency import run_in_threadpool

from backend.dependencies import get_server
from runtime.errors import NotReadyError, ProtocolError
from runtime.server import PredictionServer

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/api/predict",
    tags=["Predictions"],
    responses={404: {"description": "Unknown task"}},
)

OCTET_STREAM = "application/octet-stream"


@router.post("/{task_id}",
             summary="Forward Pass Against the Current Snapshot",
             response_class=Response)
async def predict(request: Request, server: PredictionServer = Depends(get_server)):
    """
    Accepts one binary request frame and answers with the response frame
    carrying the outputs and the snapshot version that produced them.

    - **400**: malformed frame or inputs that do not fit the task.
    - **503**: no snapshot has been published yet; retry later.
    """
    frame = await request.body()
    try:
        reply = await run_in_threadpool(server.handle_bytes, frame)
    except NotReadyError as e:
        raise HTTPException(status_code=503, detail=str(e))
    except ProtocolError as e:
        logger.warning(f"Rejected request for '{server.task_id}': {e}")
        raise HTTPException(status_code=400, detail=str(e))
    return Response(content=reply, media_type=OCTET_STREAM)
