# tests/test_config.py

from pathlib import Path

import pytest

from training.experiments import build_consistency_specs, build_datasets, build_task_specs, coerce_value
from utils.config import apply_overrides, load_config, parse_config
from utils.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """
[experiment]
name = tiny
steps = 4

[dataset.shared]
kind = linear
n_samples = 2
generator.weights = 1.0, 2.0
generator.rows = 4

[dataset.own]
kind = linear
role = dedicated
n_samples = 4
generator.weights = 1.0, 2.0
generator.rows = 4

[task.a]
kind = linear
dataset = own

[task.b]
kind = linear
learning_rate = 0.5

[consistency.agree]
term = equality
tasks = a, b
dataset = shared
"""


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    config = load_config(path)
    assert config.tasks
    assert config.experiment.output_dir


def test_minimal_config_fields():
    config = parse_config(MINIMAL)
    assert config.experiment.name == "tiny"
    assert config.datasets["shared"].role == "mediator"
    assert config.datasets["own"].generator == {"weights": "1.0, 2.0", "rows": "4"}
    assert config.tasks["b"].learning_rate == 0.5
    assert config.consistency["agree"].tasks == ["a", "b"]
    assert config.distributed.scheduler == "lockstep"


def test_models_size_themselves_from_their_datasets():
    config = parse_config(MINIMAL)
    datasets = build_datasets(config)
    specs = {spec.task_id: spec for spec in build_task_specs(config, datasets)}
    # b has no dedicated set and takes its shape from the mediator it joins
    assert specs["b"].model.interface().inputs == {"x": (4, 2)}
    assert specs["b"].dataset is None
    (agree,) = build_consistency_specs(config, datasets)
    assert agree.dataset.role.value == "mediator"


@pytest.mark.parametrize(
    "text",
    [
        MINIMAL + "\n[telemetry]\nenabled = true\n",
        MINIMAL + "\n[task.c]\nkind = linear\ncolour = blue\n",
        MINIMAL.replace("dataset = own", "dataset = missing"),
        MINIMAL.replace("tasks = a, b", "tasks = a, ghost"),
        MINIMAL.replace("steps = 4", "steps = -1"),
        "[experiment]\nname = empty\n",
        "this is not ini",
    ],
    ids=["unknown-section", "unknown-key", "unknown-dataset", "unknown-task", "negative-steps", "no-tasks", "garbage"],
)
def test_invalid_configs_raise_config_error(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_unknown_term_is_a_config_error():
    config = parse_config(MINIMAL.replace("term = equality", "term = telepathy"))
    with pytest.raises(ConfigError):
        build_consistency_specs(config, build_datasets(config))


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_overrides_apply_to_a_copy():
    config = parse_config(MINIMAL)
    changed = apply_overrides(config, seed=7, output_dir="elsewhere", label_fraction=0.5, deterministic=False)
    assert changed.experiment.seed == 7
    assert str(changed.output_dir) == "elsewhere"
    assert changed.experiment.deterministic is False
    assert changed.datasets["own"].keep_fraction == 0.5
    assert changed.datasets["shared"].keep_fraction == 1.0
    assert config.experiment.seed == 0


def test_label_fraction_strips_dedicated_labels():
    config = apply_overrides(parse_config(MINIMAL), label_fraction=0.5)
    assert build_datasets(config)["own"].n_labeled == 2


@pytest.mark.parametrize("fraction", [-0.1, 1.5])
def test_label_fraction_must_lie_in_unit_interval(fraction):
    with pytest.raises(ConfigError):
        apply_overrides(parse_config(MINIMAL), label_fraction=fraction)


def test_ini_values_are_coerced():
    assert coerce_value("3") == 3
    assert coerce_value("0.25") == 0.25
    assert coerce_value("yes") is True
    assert coerce_value(" name ") == "name"
