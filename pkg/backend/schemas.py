# backend/schemas.py

# --- Pydantic Schemas for API responses ---

from datetime import datetime
from typing import List, Optional

from pydantic import BaseModel, ConfigDict


class SnapshotStatus(BaseModel):
    task_id: str
    ready: bool
    version: Optional[int] = None
    publisher_step: Optional[int] = None
    published_at: Optional[datetime] = None
    served_requests: int = 0


class ServedRequestSchema(BaseModel):
    requester: str
    request_id: int
    snapshot_version: int
    snapshot_step: int
    requester_step: int

    model_config = ConfigDict(from_attributes=True)


class ServiceStatus(BaseModel):
    message: str
    status: str
    version: str
    tasks: List[str]
    documentation: str = "/docs"
