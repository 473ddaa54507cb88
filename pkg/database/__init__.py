from database.ledger import PublishedSnapshot, RunLedger
from database.models import Base, MetricRow, ServedRequest, SnapshotPublication, create_db_and_tables, make_engine

__all__ = [
    "Base",
    "MetricRow",
    "PublishedSnapshot",
    "RunLedger",
    "ServedRequest",
    "SnapshotPublication",
    "create_db_and_tables",
    "make_engine",
]
