# database/ledger.py

import logging
import threading
from dataclasses import dataclass
from typing import Mapping, Optional

import pandas as pd
from sqlalchemy import select
from sqlalchemy.orm import sessionmaker

from database.models import MetricRow, ServedRequest, SnapshotPublication, create_db_and_tables, make_engine
from utils.settings import get_settings

logger = logging.getLogger(__name__)

IN_MEMORY_URL = "sqlite://"


@dataclass(frozen=True)
class PublishedSnapshot:
    task_id: str
    version: int
    publisher_step: int
    payload: Optional[bytes]


class RunLedger:
    """
    Persistent log of one or more runs: snapshot publications, served
    prediction requests and metric rows. Reads come back as pandas frames.
    """

    def __init__(self, url: Optional[str] = None):
        self.url = url or get_settings().ledger_url or IN_MEMORY_URL
        self.engine = make_engine(self.url)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
        self._lock = threading.Lock()
        create_db_and_tables(self.engine)

    def __repr__(self):
        return f"<RunLedger(url='{self.url}')>"

    def _add(self, *rows):
        with self._lock, self.SessionLocal() as db:
            db.add_all(rows)
            db.commit()

    # --- Writes ---

    def record_publication(self, task_id: str, version: int, publisher_step: int, payload: Optional[bytes] = None):
        self._add(SnapshotPublication(task_id=task_id, version=version, publisher_step=publisher_step, payload=payload))

    def record_served(self, server_task: str, requester: str, request_id: int, snapshot_version: int, snapshot_step: int, requester_step: int):
        self._add(ServedRequest(
            server_task=server_task,
            requester=requester,
            request_id=request_id,
            snapshot_version=snapshot_version,
            snapshot_step=snapshot_step,
            requester_step=requester_step,
        ))

    def record_history(self, run_id: str, history, staleness: Optional[int] = None):
        rows = [
            MetricRow(run_id=run_id, step=r.step, task_id=r.task_id, metric_name=r.metric_name, value=r.value, staleness=staleness)
            for r in history.records
        ]
        if rows:
            self._add(*rows)
        logger.info(f"Ledger: stored {len(rows)} metric rows for run '{run_id}'")

    # --- Reads ---

    def latest_publication(self, task_id: str) -> Optional[PublishedSnapshot]:
        with self.SessionLocal() as db:
            row = db.execute(
                select(SnapshotPublication)
                .where(SnapshotPublication.task_id == task_id)
                .order_by(SnapshotPublication.id.desc())
                .limit(1)
            ).scalar_one_or_none()
            if row is None:
                return None
            return PublishedSnapshot(row.task_id, row.version, row.publisher_step, row.payload)

    def publications_frame(self) -> pd.DataFrame:
        query = select(
            SnapshotPublication.task_id, SnapshotPublication.version, SnapshotPublication.publisher_step
        ).order_by(SnapshotPublication.id)
        with self.engine.connect() as conn:
            return pd.read_sql(query, conn)

    def served_frame(self) -> pd.DataFrame:
        query = select(
            ServedRequest.server_task,
            ServedRequest.requester,
            ServedRequest.request_id,
            ServedRequest.snapshot_version,
            ServedRequest.snapshot_step,
            ServedRequest.requester_step,
        ).order_by(ServedRequest.id)
        with self.engine.connect() as conn:
            return pd.read_sql(query, conn)

    def metrics_frame(self, run_id: Optional[str] = None) -> pd.DataFrame:
        query = select(
            MetricRow.run_id, MetricRow.staleness, MetricRow.step, MetricRow.task_id, MetricRow.metric_name, MetricRow.value
        ).order_by(MetricRow.id)
        if run_id is not None:
            query = query.where(MetricRow.run_id == run_id)
        with self.engine.connect() as conn:
            return pd.read_sql(query, conn)

    def staleness_audit(self, intervals: Mapping[str, int]) -> pd.DataFrame:
        """
        Served requests with the snapshot age in publisher steps and whether
        it stayed within the server task's refresh interval.
        """
        served = self.served_frame()
        served["age"] = served.requester_step - served.snapshot_step
        served["interval"] = served.server_task.map(lambda t: intervals.get(t, 0))
        served["within_interval"] = served.age <= served.interval
        violations = int((~served.within_interval).sum())
        if violations:
            logger.warning(f"Staleness audit: {violations} requests exceeded their refresh interval")
        return served
