# runtime/distributed.py

import logging
from contextlib import ExitStack
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from backend.main import serve_in_background
from runtime.node import NodeTrainer
from runtime.scheduler import run_lockstep, run_threaded
from runtime.server import PredictionServer
from runtime.transport import HttpTransport, InProcessTransport, PeerClient, Transport
from training.errors import TrainingError
from training.experiments import build_consistency_specs, build_datasets, build_task_specs, eval_options
from training.history import MetricsHistory
from utils.config import ExperimentConfig

logger = logging.getLogger(__name__)

SWEEP_CSV = "sweep.csv"


@dataclass
class DistributedRun:
    staleness: int
    nodes: Dict[str, NodeTrainer]
    servers: Dict[str, PredictionServer]
    histories: Dict[str, MetricsHistory] = field(default_factory=dict)

    def audit(self) -> pd.DataFrame:
        """
        Served requests checked against the refresh policy of the serving node;
        ``within_interval`` must hold everywhere.

        Step refresh bounds ``age`` (requester step minus publisher step) by the
        refresh interval. Wall-clock refresh bounds the snapshot's age in
        seconds by ``refresh_seconds`` plus the node's longest step; a snapshot
        served after its publisher stopped training is aged up to that stop.
        """
        rows = []
        for task_id, server in self.servers.items():
            node = self.nodes[task_id]
            timed = node.refresh_seconds > 0
            interval = node.refresh_seconds + node.longest_step_seconds if timed else node.refresh_interval
            for record in server.served:
                if timed:
                    lag = min(record.served_at, node.last_step_at) - record.snapshot_published_at
                else:
                    lag = record.age
                rows.append({
                    "server_task": task_id,
                    "requester": record.requester,
                    "request_id": record.request_id,
                    "snapshot_version": record.snapshot_version,
                    "snapshot_step": record.snapshot_step,
                    "requester_step": record.requester_step,
                    "age": record.age,
                    "age_seconds": record.age_seconds,
                    "policy": "seconds" if timed else "steps",
                    "interval": interval,
                    "within_interval": lag <= interval,
                })
        columns = ["server_task", "requester", "request_id", "snapshot_version", "snapshot_step",
                   "requester_step", "age", "age_seconds", "policy", "interval", "within_interval"]
        return pd.DataFrame(rows, columns=columns)

    def combined_history(self) -> MetricsHistory:
        merged = MetricsHistory()
        for task_id in sorted(self.histories):
            merged.records.extend(self.histories[task_id].records)
        merged.records.sort(key=lambda r: (r.step, r.task_id, r.metric_name))
        return merged


def refresh_interval_for(staleness: int) -> int:
    """A staleness of 0 (same machine) is a refresh after every step."""
    return max(1, int(staleness))


def distributed_train(
    config: ExperimentConfig,
    staleness: Optional[int] = None,
    steps: Optional[int] = None,
    transport: Optional[str] = None,
    ledger=None,
) -> DistributedRun:
    """
    Run every task of ``config`` as its own node with its own prediction
    server, peers exchanging only inputs and predictions.
    """
    dist = config.distributed
    staleness = dist.refresh_interval if staleness is None else staleness
    steps = config.experiment.steps if steps is None else steps
    transport = transport or dist.transport
    scheduler = dist.scheduler
    if config.experiment.deterministic and scheduler != "lockstep":
        logger.warning("Deterministic mode: using the lock-step scheduler")
        scheduler = "lockstep"
    if scheduler == "lockstep" and dist.refresh_seconds > 0:
        logger.warning("refresh_seconds is ignored by the lock-step scheduler; refreshing by steps")

    datasets = build_datasets(config)
    specs = build_task_specs(config, datasets)
    consistencies = build_consistency_specs(config, datasets)
    if len(specs) > 1 and not consistencies:
        raise TrainingError("a distributed topology needs a consistency term coupling its tasks")

    servers = {spec.task_id: PredictionServer(spec.model, ledger) for spec in specs}
    eval_dataset = datasets.get(config.eval.dataset) if config.eval.dataset else None
    every = config.experiment.eval_every

    with ExitStack() as stack:
        channel = _open_transport(transport, servers, dist.host, dist.base_port, stack)
        nodes: Dict[str, NodeTrainer] = {}
        for spec in specs:
            nodes[spec.task_id] = NodeTrainer(
                spec,
                [p for p in specs if p.task_id != spec.task_id],
                consistencies,
                PeerClient(channel, spec.task_id),
                refresh_interval=refresh_interval_for(staleness),
                refresh_seconds=dist.refresh_seconds if scheduler == "threaded" else 0.0,
                batch_size=config.experiment.batch_size,
                dedicated_ratio=config.experiment.dedicated_ratio,
                log_every=config.experiment.log_every,
            )

        def after_step(node: NodeTrainer):
            if eval_dataset is not None and every and (node.step % every == 0 or node.step == steps):
                for task_id, bundle in node.evaluate_own(eval_dataset, **eval_options(config)).items():
                    node.history.record_bundle(node.step, task_id, bundle)

        logger.info(f"Distributed run: staleness {staleness}, {transport} transport, {scheduler} scheduler, {steps} steps")
        if scheduler == "lockstep":
            run_lockstep(list(nodes.values()), steps, after_step)
        else:
            run_threaded(list(nodes.values()), steps, after_step)

    run = DistributedRun(staleness, nodes, servers, {t: n.history for t, n in nodes.items()})
    if ledger is not None:
        for task_id, history in run.histories.items():
            ledger.record_history(f"{config.experiment.name}/{task_id}", history, staleness)
    return run


def _open_transport(kind: str, servers: Dict[str, PredictionServer], host, base_port, stack: ExitStack) -> Transport:
    if kind == "inprocess":
        return InProcessTransport(servers)
    endpoints = {}
    for offset, (task_id, server) in enumerate(sorted(servers.items())):
        port = base_port + offset if base_port else None
        background = serve_in_background({task_id: server}, host, port)
        stack.callback(background.stop)
        endpoints[task_id] = background.url
    return HttpTransport(endpoints)


def staleness_sweep(
    config: ExperimentConfig,
    staleness_values: Sequence[int],
    steps: Optional[int] = None,
    transport: Optional[str] = None,
    ledger=None,
    output_dir: Optional[Path] = None,
) -> Dict[int, DistributedRun]:
    """One distributed run per staleness value, each from the same seeds; per-node CSVs under ``output_dir``."""
    runs: Dict[int, DistributedRun] = {}
    for staleness in staleness_values:
        run = distributed_train(config, staleness, steps, transport, ledger)
        runs[int(staleness)] = run
        if output_dir is not None:
            for task_id, history in run.histories.items():
                history.to_csv(Path(output_dir) / f"staleness_{staleness}" / f"{task_id}.metrics.csv")
            run.audit().to_csv(Path(output_dir) / f"staleness_{staleness}" / "version_log.csv", index=False)
    if output_dir is not None:
        sweep_frame(runs).to_csv(Path(output_dir) / SWEEP_CSV, index=False, float_format="%.10g")
    return runs


def sweep_frame(runs: Dict[int, DistributedRun]) -> pd.DataFrame:
    """(staleness, step, task_id, metric_name, value) rows of a sweep, as the report reads them."""
    frames: List[pd.DataFrame] = []
    for staleness, run in sorted(runs.items()):
        frame = run.combined_history().to_frame()
        frame.insert(0, "staleness", staleness)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["staleness", "step", "task_id", "metric_name", "value"])
    return pd.concat(frames, ignore_index=True)
