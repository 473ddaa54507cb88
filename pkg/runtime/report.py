# runtime/report.py

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from utils.settings import get_settings

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["staleness", "staleness_minutes", "steps_to_threshold", "final_metric"]
# Final metric within this fraction of the reference run counts as reaching it.
DEFAULT_TOLERANCE = 0.05


@dataclass
class StalenessReport:
    steps_per_minute: float
    metric: str
    threshold: Optional[float]
    series: pd.DataFrame    # step + one column per staleness value
    summary: pd.DataFrame   # SUMMARY_COLUMNS

    @property
    def header(self) -> str:
        threshold = "" if self.threshold is None else f" threshold={self.threshold:.10g}"
        return f"# steps_per_minute={self.steps_per_minute:g} metric={self.metric}{threshold}\n"

    def write(self, directory: Union[str, Path]) -> Tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = directory / "staleness_series.csv", directory / "staleness_summary.csv"
        for path, frame in zip(paths, (self.series, self.summary)):
            with open(path, "w") as handle:
                handle.write(self.header)
                frame.to_csv(handle, index=False, float_format="%.10g")
        logger.info(f"Staleness report written to {directory}")
        return paths


def staleness_report(
    runs: pd.DataFrame,
    task_id: Optional[str] = None,
    metric: str = "abs_rel",
    threshold: Optional[float] = None,
    higher_is_better: bool = False,
    steps_per_minute: Optional[float] = None,
) -> StalenessReport:
    """
    Metric-versus-step series (one per staleness value) and a summary of
    steps to threshold and final metric per staleness.

    ``runs`` has columns (staleness, step, task_id, metric_name, value).
    Without an explicit threshold the target is the final metric of the
    lowest-staleness run, relaxed by 5%.
    """
    steps_per_minute = steps_per_minute or get_settings().steps_per_minute
    rows = runs[runs.metric_name == metric] if len(runs) else runs
    if task_id is not None and len(rows):
        rows = rows[rows.task_id == task_id]
    if not len(rows):
        return StalenessReport(steps_per_minute, metric, threshold, pd.DataFrame(columns=["step"]), pd.DataFrame(columns=SUMMARY_COLUMNS))

    series = rows.pivot_table(index="step", columns="staleness", values="value", aggfunc="last").sort_index()
    series.columns = [f"staleness_{int(s)}" for s in series.columns]
    series = series.reset_index()

    finals = rows.sort_values("step").groupby("staleness").value.last()
    if threshold is None:
        reference = float(finals.loc[finals.index.min()])
        threshold = reference * (1 - DEFAULT_TOLERANCE if higher_is_better else 1 + DEFAULT_TOLERANCE)

    summary = []
    for staleness, group in rows.sort_values("step").groupby("staleness"):
        reached = group.value >= threshold if higher_is_better else group.value <= threshold
        first = int(group.step[reached].iloc[0]) if reached.any() else np.nan
        summary.append({
            "staleness": int(staleness),
            "staleness_minutes": staleness / steps_per_minute,
            "steps_to_threshold": first,
            "final_metric": float(finals.loc[staleness]),
        })
    return StalenessReport(steps_per_minute, metric, threshold, series, pd.DataFrame(summary, columns=SUMMARY_COLUMNS))
