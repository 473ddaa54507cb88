# tests/test_training.py

from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from autodiff.tensor import Tensor
from synth.datasets import DatasetHandle, DatasetManifest, DatasetRole, build_linear_dataset
from tasks.interface import TaskInterface, TaskModel
from tasks.linear import LinearModel
from tasks.parameters import ModelParameters
from training import (
    CollectiveTrainer,
    ConsistencySpec,
    MetricsHistory,
    NonFiniteLossError,
    OptimizerSettings,
    TaskSpec,
    TrainingError,
    run_experiment,
    validate_specs,
)
from training.checkpoints import load_checkpoint, save_checkpoint
from training.evaluation import evaluate
from training.experiments import CHECKPOINT_DIR, METRICS_CSV
from utils.config import apply_overrides, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def arrays_equal(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


# --- Decoupling ---

def test_zero_consistency_weight_matches_isolated_training(linear_specs):
    tasks, consistency = linear_specs
    coupled = CollectiveTrainer(tasks, [replace(consistency[0], weight=0.0)])
    isolated = CollectiveTrainer(tasks)
    coupled.run(20)
    isolated.run(20)
    for task_id in ("left", "right"):
        assert arrays_equal(coupled.params[task_id].arrays(), isolated.params[task_id].arrays())


def test_steps_alternate_between_dedicated_and_mediator_batches(linear_specs):
    tasks, consistency = linear_specs
    trainer = CollectiveTrainer(tasks, consistency, dedicated_ratio=2)
    phases = [trainer.train_step().phase for _ in range(6)]
    assert phases == ["dedicated", "dedicated", "mediator"] * 2


def test_total_loss_is_the_weighted_sum_of_terms(linear_specs):
    tasks, consistency = linear_specs
    tasks = [replace(tasks[0], sup_weight=1.5), tasks[1]]
    trainer = CollectiveTrainer(tasks, [replace(consistency[0], weight=0.7)], batch_size=2)
    for _ in range(8):
        result = trainer.train_step()
        assert result.losses
        assert result.total == pytest.approx(result.weighted_sum(), abs=1e-12)
        expected = {"sup/left", "sup/right"} if result.phase == "dedicated" else {"con/agree"}
        assert set(result.losses) == expected


def test_frozen_task_parameters_never_change(linear_specs):
    tasks, consistency = linear_specs
    tasks = [replace(tasks[0], frozen=True), tasks[1]]
    trainer = CollectiveTrainer(tasks, consistency)
    before = trainer.params["left"].fingerprint()
    updated = set()
    for _ in range(10):
        updated.update(trainer.train_step().updated)
    assert trainer.params["left"].fingerprint() == before
    assert updated == {"right"}


# --- Coupled least squares ---

def test_equality_coupling_drives_both_models_to_their_average():
    # Equal and opposite gradients keep w_left + w_right fixed, so the
    # coupled models meet at the mean of their starting points.
    shared = build_linear_dataset("shared", 1, seed=3, weights=[0.0, 0.0, 0.0], rows=8, role=DatasetRole.MEDIATOR)
    tasks = [
        TaskSpec("left", LinearModel("left", n_samples=8), OptimizerSettings("sgd", 0.05), seed=21),
        TaskSpec("right", LinearModel("right", n_samples=8), OptimizerSettings("sgd", 0.05), seed=22),
    ]
    consistency = [ConsistencySpec.from_registry("agree", "equality", ["left", "right"], dataset=shared)]
    trainer = CollectiveTrainer(tasks, consistency, log_every=1)
    start = {t: trainer.params[t].arrays() for t in ("left", "right")}

    trainer.run(2000)

    for suffix in ("weight", "bias"):
        mean = 0.5 * (start["left"][f"left.{suffix}"] + start["right"][f"right.{suffix}"])
        np.testing.assert_allclose(trainer.params["left"][f"left.{suffix}"].data, mean, atol=1e-6)
        np.testing.assert_allclose(trainer.params["right"][f"right.{suffix}"].data, mean, atol=1e-6)

    losses = trainer.history.series("agree", "consistency_loss").to_numpy()
    assert len(losses) == 1000
    assert np.all(np.diff(losses) <= 1e-15)
    assert losses[-1] < 1e-10


def test_non_finite_loss_aborts_the_run():
    manifest = DatasetManifest(name="bad", kind="linear", role=DatasetRole.DEDICATED, labeled_fields=["y"])
    bad = DatasetHandle([{"x": np.full((4, 3), np.nan), "gt_y": np.zeros((4, 1))}], manifest)
    trainer = CollectiveTrainer([TaskSpec("lin", LinearModel("lin", n_samples=4), dataset=bad)])
    with pytest.raises(NonFiniteLossError) as info:
        trainer.train_step()
    assert info.value.term == "sup/lin"
    assert info.value.step == 0


# --- Validation ---

def test_validate_specs_rejects_inconsistent_setups(linear_specs):
    tasks, consistency = linear_specs
    agree = consistency[0]

    with pytest.raises(TrainingError):
        validate_specs([tasks[0], tasks[0]], [])
    with pytest.raises(TrainingError):
        validate_specs(tasks, [replace(agree, participants=["left", "ghost"])])
    with pytest.raises(TrainingError):
        validate_specs(tasks, [replace(agree, participants=["left"])])
    with pytest.raises(TrainingError):
        validate_specs(tasks, [replace(agree, dataset=None)])
    with pytest.raises(TrainingError):
        validate_specs(tasks, [ConsistencySpec.from_registry("normals", "normals", ["left", "right"], dataset=agree.dataset)])
    with pytest.raises(TrainingError):
        validate_specs([replace(tasks[0], task_id="other")], [])


def test_inactive_term_needs_no_mediator(linear_specs):
    tasks, consistency = linear_specs
    assert set(validate_specs(tasks, [replace(consistency[0], weight=0.0, dataset=None)])) == {"left", "right"}


def test_trainer_rejects_bad_batch_settings(linear_specs):
    tasks, _ = linear_specs
    with pytest.raises(TrainingError):
        CollectiveTrainer(tasks, batch_size=0)
    with pytest.raises(TrainingError):
        CollectiveTrainer(tasks, dedicated_ratio=0)


# --- Checkpoints and history ---

def test_resumed_run_is_bit_identical(tmp_path, linear_specs):
    tasks, consistency = linear_specs
    tasks = [replace(spec, optimizer=OptimizerSettings("adam", 0.01)) for spec in tasks]

    # 1. Uninterrupted reference run
    straight = CollectiveTrainer(tasks, consistency)
    straight.run(12)

    # 2. Same run stopped half-way and checkpointed
    first = CollectiveTrainer(tasks, consistency)
    first.run(6)
    save_checkpoint(first, tmp_path)

    # 3. A fresh trainer continues from the checkpoint
    resumed = CollectiveTrainer(tasks, consistency)
    load_checkpoint(resumed, tmp_path)
    assert resumed.step == 6
    resumed.run(12)

    for task_id in ("left", "right"):
        assert arrays_equal(resumed.params[task_id].arrays(), straight.params[task_id].arrays())


def test_load_checkpoint_without_state_fails(tmp_path, linear_specs):
    tasks, _ = linear_specs
    with pytest.raises(TrainingError):
        load_checkpoint(CollectiveTrainer(tasks), tmp_path)


def test_history_csv_round_trip(tmp_path, linear_specs):
    tasks, consistency = linear_specs
    trainer = CollectiveTrainer(tasks, consistency, log_every=1)
    history = trainer.run(6)
    path = history.to_csv(tmp_path / "metrics.csv")

    frame = pd.read_csv(path)
    assert list(frame.columns) == ["step", "task_id", "metric_name", "value"]
    assert set(frame.metric_name) == {"sup_loss", "consistency_loss"}
    restored = MetricsHistory.from_csv(path)
    pd.testing.assert_frame_equal(restored.to_frame(), history.to_frame())
    assert restored.final("agree", "consistency_loss") == history.final("agree", "consistency_loss")


def test_history_csv_missing_columns_rejected(tmp_path):
    path = tmp_path / "broken.csv"
    pd.DataFrame({"step": [0], "value": [1.0]}).to_csv(path, index=False)
    with pytest.raises(ValueError):
        MetricsHistory.from_csv(path)


# --- Experiments ---

def _linear_toy(tmp_path, steps):
    config = apply_overrides(load_config(CONFIGS / "linear_toy.ini"), output_dir=str(tmp_path))
    return config.model_copy(update={"experiment": config.experiment.model_copy(update={"steps": steps})})


def test_linear_toy_experiment_writes_outputs(tmp_path, ledger):
    result = run_experiment(_linear_toy(tmp_path, 10), ledger=ledger)
    assert (tmp_path / METRICS_CSV).exists()
    assert (tmp_path / CHECKPOINT_DIR / "left.params.bin").exists()
    assert result.trainer.step == 10
    assert len(ledger.metrics_frame("linear_toy")) == len(result.history)


def test_experiment_resume_continues_where_it_stopped(tmp_path):
    straight = run_experiment(_linear_toy(tmp_path / "straight", 20))
    run_experiment(_linear_toy(tmp_path / "split", 10))
    resumed = run_experiment(_linear_toy(tmp_path / "split", 20), resume=True)
    for task_id in ("left", "right"):
        assert arrays_equal(resumed.trainer.params[task_id].arrays(), straight.trainer.params[task_id].arrays())


# --- Substitutability and evaluation ---

class ScaleModel(TaskModel):
    """Stand-in with the linear interface: output = scale * first feature."""

    kind = "scale"

    def __init__(self, task_id, n_samples=8, in_features=3):
        super().__init__(task_id)
        self.n_samples = n_samples
        self.in_features = in_features

    def interface(self):
        return TaskInterface(self.task_id, inputs={"x": (self.n_samples, self.in_features)}, outputs={"output": (self.n_samples, 1)})

    def init_params(self, seed):
        return ModelParameters.from_arrays({f"{self.task_id}.scale": np.ones(1)})

    def forward(self, params, inputs):
        return {"output": Tensor(inputs["x"])[:, :1] * params[f"{self.task_id}.scale"]}


def test_any_model_with_the_interface_can_join(linear_specs):
    tasks, consistency = linear_specs
    stub = TaskSpec("right", ScaleModel("right"), OptimizerSettings("sgd", 0.05))
    trainer = CollectiveTrainer([tasks[0], stub], consistency, log_every=1)
    before = trainer.params["right"].fingerprint()

    trainer.run(6)

    assert trainer.params["right"].fingerprint() != before
    assert np.isfinite(trainer.history.final("agree", "consistency_loss"))


def test_evaluate_rejects_an_empty_dataset():
    manifest = DatasetManifest(name="empty", kind="linear", role=DatasetRole.DEDICATED, labeled_fields=["y"])
    model = LinearModel("lin", n_samples=4)
    with pytest.raises(TrainingError):
        evaluate({"lin": (model, model.init_params(0))}, DatasetHandle([], manifest))


def test_evaluate_is_deterministic():
    dataset = build_linear_dataset("lin", 3, seed=0, weights=[1.0, 2.0, 3.0], rows=4)
    model = LinearModel("lin", n_samples=4)
    tasks = {"lin": (model, model.init_params(0))}

    first = evaluate(tasks, dataset)
    second = evaluate(tasks, dataset)

    assert first["lin"].values == second["lin"].values
    assert first["lin"].values["mse"] >= 0.0
