# database/models.py

import logging

from sqlalchemy import (
    create_engine,
    Column,
    Integer,
    Float,
    String,
    DateTime,
    LargeBinary,
)
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base
from sqlalchemy.pool import StaticPool
from sqlalchemy.sql import func

logger = logging.getLogger(__name__)


def make_engine(url: str) -> Engine:
    """Engine for a ledger URL; in-memory SQLite shares one connection across threads."""
    if url.startswith("sqlite"):
        options = {"connect_args": {"check_same_thread": False}}
        if url in ("sqlite://", "sqlite:///:memory:"):
            options["poolclass"] = StaticPool
        return create_engine(url, **options)
    return create_engine(url, pool_pre_ping=True)


Base = declarative_base()

# --- SQLAlchemy ORM Models ---

class SnapshotPublication(Base):
    __tablename__ = "snapshot_publications"
    id = Column(Integer, primary_key=True, index=True)
    task_id = Column(String(100), nullable=False, index=True)
    version = Column(Integer, nullable=False)
    publisher_step = Column(Integer, nullable=False)
    payload = Column(LargeBinary, nullable=True)
    published_at = Column(DateTime(timezone=True), server_default=func.now())

    def __repr__(self):
        return f"<SnapshotPublication(task='{self.task_id}', version={self.version}, step={self.publisher_step})>"


class ServedRequest(Base):
    __tablename__ = "served_requests"

    id = Column(Integer, primary_key=True, index=True)
    server_task = Column(String(100), nullable=False, index=True)
    requester = Column(String(100), nullable=False)
    request_id = Column(Integer, nullable=False)
    snapshot_version = Column(Integer, nullable=False)
    snapshot_step = Column(Integer, nullable=False)
    requester_step = Column(Integer, nullable=False)
    served_at = Column(DateTime(timezone=True), server_default=func.now())

    def __repr__(self):
        return f"<ServedRequest(server='{self.server_task}', requester='{self.requester}', version={self.snapshot_version})>"


class MetricRow(Base):
    __tablename__ = "metric_rows"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String(200), nullable=False, index=True)
    step = Column(Integer, nullable=False)
    task_id = Column(String(100), nullable=False)
    metric_name = Column(String(100), nullable=False)
    value = Column(Float, nullable=False)
    staleness = Column(Integer, nullable=True)

    def __repr__(self):
        return f"<MetricRow(run='{self.run_id}', step={self.step}, {self.task_id}/{self.metric_name}={self.value})>"


# Function to create all tables
def create_db_and_tables(bind: Engine):
    Base.metadata.create_all(bind=bind)
    logger.info(f"Ledger tables ready on {bind.url}")
