# training/checkpoints.py

import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Union

from tasks.parameters import ModelParameters
from training.errors import TrainingError
from utils.records import decode_records, encode_records

if TYPE_CHECKING:
    from training.trainer import CollectiveTrainer

logger = logging.getLogger(__name__)

STATE_NAME = "trainer.json"


def params_path(directory: Path, task_id: str) -> Path:
    return directory / f"{task_id}.params.bin"


def save_checkpoint(trainer: "CollectiveTrainer", directory: Union[str, Path]) -> Path:
    """
    Parameters and optimizer state per task plus the step counter and dataset
    cursors, enough to continue a run bit-exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for task_id, params in trainer.params.items():
        params_path(directory, task_id).write_bytes(params.to_blob(task_id))
        (directory / f"{task_id}.optim.bin").write_bytes(encode_records(trainer.optimizers[task_id].state_dict()))
    state = {
        "step": trainer.step,
        "positions": trainer.positions,
        "fingerprints": {task_id: params.fingerprint() for task_id, params in trainer.params.items()},
    }
    (directory / STATE_NAME).write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")
    logger.info(f"Checkpoint at step {trainer.step} written to {directory}")
    return directory


def load_task_params(directory: Union[str, Path], task_id: str, trainable: bool = True) -> ModelParameters:
    path = params_path(Path(directory), task_id)
    if not path.exists():
        raise TrainingError(f"no checkpoint for task '{task_id}' at {path}")
    stored_id, params = ModelParameters.from_blob(path.read_bytes(), trainable=trainable)
    if stored_id != task_id:
        raise TrainingError(f"{path} holds parameters of task '{stored_id}', not '{task_id}'")
    return params


def load_checkpoint(trainer: "CollectiveTrainer", directory: Union[str, Path]):
    directory = Path(directory)
    state_path = directory / STATE_NAME
    if not state_path.exists():
        raise TrainingError(f"no trainer state at {state_path}")
    state = json.loads(state_path.read_text())

    for task_id, spec in trainer.tasks.items():
        params = load_task_params(directory, task_id, trainable=not spec.frozen)
        if params.fingerprint() != state["fingerprints"].get(task_id):
            raise TrainingError(f"checkpoint parameters of '{task_id}' do not match the recorded fingerprint")
        trainer.params[task_id] = params
        optim_state, _ = decode_records((directory / f"{task_id}.optim.bin").read_bytes())
        trainer.optimizers[task_id].load_state_dict(optim_state)
    trainer.step = int(state["step"])
    trainer.positions = {key: int(value) for key, value in state["positions"].items()}
    logger.info(f"Resumed from {directory} at step {trainer.step}")
