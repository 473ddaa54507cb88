# runtime/scheduler.py

import logging
import threading
from typing import Callable, List, Optional, Sequence, Tuple

from runtime.node import NodeTrainer

logger = logging.getLogger(__name__)

StepHook = Callable[[NodeTrainer], None]


def publish_initial(nodes: Sequence[NodeTrainer]):
    """Version 1 of every node at step 0, before any node trains."""
    for node in nodes:
        if node.published_version == 0:
            node.publish()


def run_lockstep(nodes: Sequence[NodeTrainer], steps: int, after_step: Optional[StepHook] = None):
    """
    Deterministic mode: one step per node per round, nodes in task-id order,
    all on the calling thread.
    """
    ordered = sorted(nodes, key=lambda n: n.task_id)
    publish_initial(ordered)
    while any(node.step < steps for node in ordered):
        for node in ordered:
            if node.step < steps:
                node.train_step()
                if after_step is not None:
                    after_step(node)
    logger.info(f"Lock-step run finished: {[(n.task_id, n.step) for n in ordered]}")


def run_threaded(nodes: Sequence[NodeTrainer], steps: int, after_step: Optional[StepHook] = None, timeout: Optional[float] = None):
    """Every node trains on its own thread at its own pace; the first node failure is re-raised."""
    publish_initial(nodes)
    failures: List[Tuple[str, BaseException]] = []

    def work(node: NodeTrainer):
        try:
            while node.step < steps:
                node.train_step()
                if after_step is not None:
                    after_step(node)
        except BaseException as e:
            logger.error(f"Node '{node.task_id}' failed at step {node.step}: {e}")
            failures.append((node.task_id, e))

    threads = [threading.Thread(target=work, args=(node,), name=f"node-{node.task_id}", daemon=True) for node in nodes]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join(timeout)
    if failures:
        raise failures[0][1]
    stuck = [t.name for t in threads if t.is_alive()]
    if stuck:
        raise TimeoutError(f"nodes still running after {timeout}s: {stuck}")
