# training/history.py

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Union

import pandas as pd

from evaluation.metrics import MetricBundle

logger = logging.getLogger(__name__)

COLUMNS = ["step", "task_id", "metric_name", "value"]


@dataclass(frozen=True)
class MetricRecord:
    step: int
    task_id: str
    metric_name: str
    value: float


class MetricsHistory:
    """Append-only (step, task_id, metric_name, value) rows of one run."""

    def __init__(self, records: Optional[Iterable[MetricRecord]] = None):
        self.records: List[MetricRecord] = list(records or [])

    def __len__(self) -> int:
        return len(self.records)

    def record(self, step: int, task_id: str, metric_name: str, value: float):
        self.records.append(MetricRecord(int(step), task_id, metric_name, float(value)))

    def record_bundle(self, step: int, task_id: str, bundle: MetricBundle):
        for name, value in sorted(bundle.values.items()):
            self.record(step, task_id, name, value)

    def since(self, start: int) -> List[MetricRecord]:
        return self.records[start:]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(r) for r in self.records], columns=COLUMNS)

    def series(self, task_id: str, metric_name: str) -> pd.Series:
        frame = self.to_frame()
        rows = frame[(frame.task_id == task_id) & (frame.metric_name == metric_name)]
        return pd.Series(rows.value.to_numpy(), index=rows.step.to_numpy(), name=f"{task_id}/{metric_name}")

    def final(self, task_id: str, metric_name: str) -> Optional[float]:
        for r in reversed(self.records):
            if r.task_id == task_id and r.metric_name == metric_name:
                return r.value
        return None

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.10g")
        logger.info(f"Wrote {len(self.records)} metric rows to {path}")
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "MetricsHistory":
        frame = pd.read_csv(path)
        missing = set(COLUMNS) - set(frame.columns)
        if missing:
            raise ValueError(f"{path} is missing columns {sorted(missing)}")
        return cls(MetricRecord(int(r.step), str(r.task_id), str(r.metric_name), float(r.value)) for r in frame.itertuples())
