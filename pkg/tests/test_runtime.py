# tests/test_runtime.py

from pathlib import Path
from unittest.mock import MagicMock

import numpy as np
import pandas as pd
import pytest

from runtime import (
    InProcessTransport,
    Message,
    MessageKind,
    PeerClient,
    PredictionServer,
    decode_message,
    encode_message,
    staleness_report,
)
from runtime.distributed import SWEEP_CSV, distributed_train, refresh_interval_for, staleness_sweep
from runtime.errors import NotReadyError, PeerUnreachableError, ProtocolError, UnknownTaskError
from runtime.transport import TransportError
from tasks.linear import LinearModel
from utils.config import apply_overrides, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def model():
    return LinearModel("lin", n_samples=4, in_features=3)


@pytest.fixture
def server(model):
    """A linear-model server with nothing published yet."""
    return PredictionServer(model)


def request(step=5, request_id=1, x=None):
    x = np.arange(12.0).reshape(4, 3) if x is None else x
    return Message(MessageKind.REQUEST, "lin", "peer", 0, request_id, step, {"x": x})


def linear_toy(tmp_path, **experiment):
    config = apply_overrides(load_config(CONFIGS / "linear_toy.ini"), output_dir=str(tmp_path))
    return config.model_copy(update={"experiment": config.experiment.model_copy(update=experiment)})


# --- Wire format ---

def test_message_survives_the_wire():
    message = Message(MessageKind.RESPONSE, "depth", "motion", 3, 17, 40, {"depth1": np.full((2, 2), 1.5)})
    decoded = decode_message(encode_message(message))
    assert (decoded.kind, decoded.task_id, decoded.peer_id) == (MessageKind.RESPONSE, "depth", "motion")
    assert (decoded.version, decoded.request_id, decoded.step) == (3, 17, 40)
    np.testing.assert_array_equal(decoded.arrays["depth1"], message.arrays["depth1"])


@pytest.mark.parametrize(
    "mangle",
    [
        lambda f: f[:-3],
        lambda f: f + b"\x00",
        lambda f: f[:4] + b"XXXX" + f[8:],
        lambda f: f[:10] + bytes([9]) + f[11:],
        lambda f: f[:8] + b"\x07\x00" + f[10:],
    ],
    ids=["truncated", "trailing", "magic", "kind", "protocol"],
)
def test_malformed_frames_are_protocol_errors(mangle):
    frame = encode_message(request())
    with pytest.raises(ProtocolError):
        decode_message(mangle(frame))


# --- Prediction server ---

def test_unpublished_server_is_not_ready(server):
    assert not server.ready
    with pytest.raises(NotReadyError):
        server.serve_forward(request())


def test_publish_numbers_versions_and_copies_parameters(server, model):
    params = model.init_params(0)
    first = server.publish(params, publisher_step=0)
    second = server.publish(params, publisher_step=4)
    assert (first.version, second.version) == (1, 2)
    assert server.snapshot.publisher_step == 4
    assert server.snapshot.params.fingerprint() == params.fingerprint()
    assert not any(t.requires_grad for t in server.snapshot.params.tensors.values())


def test_served_outputs_match_the_snapshot(server, model):
    params = model.init_params(1)
    server.publish(params, publisher_step=2)
    response = server.serve_forward(request(step=5, request_id=9))
    expected = model(params, {"x": request().arrays["x"]})["output"].data
    np.testing.assert_array_equal(response.arrays["output"], expected)
    assert (response.version, response.request_id, response.step) == (1, 9, 2)
    assert server.served[-1].age == 3


def test_requests_that_do_not_fit_are_rejected(server, model):
    server.publish(model.init_params(0), 0)
    with pytest.raises(ProtocolError):
        server.serve_forward(request(x=np.zeros((4, 5))))
    with pytest.raises(ProtocolError):
        server.serve_forward(Message(MessageKind.REQUEST, "other", "peer", arrays={"x": np.zeros((4, 3))}))
    with pytest.raises(ProtocolError):
        server.handle_bytes(b"\x00\x01")


def test_install_requires_the_next_version(server, model):
    publisher = PredictionServer(model)
    snapshot = publisher.publish(model.init_params(0), 0)
    server.install(snapshot)
    with pytest.raises(ProtocolError):
        server.install(snapshot)
    stranger = PredictionServer(LinearModel("else", n_samples=4)).publish(LinearModel("else", n_samples=4).init_params(0), 0)
    with pytest.raises(ProtocolError):
        server.install(stranger)


def test_restart_restores_the_last_snapshot_from_the_ledger(model, ledger):
    params = model.init_params(3)
    first = PredictionServer(model, ledger)
    first.publish(model.init_params(2), 0)
    first.publish(params, 10)

    restarted = PredictionServer(model, ledger)
    assert restarted.restore()
    assert restarted.snapshot.version == 2
    assert restarted.snapshot.publisher_step == 10
    assert restarted.snapshot.params.fingerprint() == params.fingerprint()
    assert not PredictionServer(LinearModel("nobody", n_samples=4), ledger).restore()


# --- Peer client ---

def test_client_retries_not_ready_with_doubling_backoff(server, model):
    server.publish(model.init_params(0), 0)
    reply = server.handle_bytes(encode_message(request(request_id=1)))
    transport = MagicMock()
    transport.send.side_effect = [NotReadyError("warming up"), TransportError("refused"), reply]
    sleep = MagicMock()

    client = PeerClient(transport, "peer", retry_budget=3, backoff=0.1, sleep=sleep)
    outputs, response = client.predict("lin", {"x": np.arange(12.0).reshape(4, 3)}, step=5)

    assert transport.send.call_count == 3
    assert [c.args[0] for c in sleep.call_args_list] == [0.1, 0.2]
    assert response.version == 1
    assert outputs["output"].shape == (4, 1)


def test_client_gives_up_after_the_retry_budget():
    transport = MagicMock()
    transport.send.side_effect = TransportError("refused")
    client = PeerClient(transport, "peer", retry_budget=2, backoff=0.0, sleep=MagicMock())
    with pytest.raises(PeerUnreachableError) as info:
        client.predict("lin", {"x": np.zeros((4, 3))}, step=0)
    assert info.value.attempts == 3
    assert transport.send.call_count == 3


def test_client_does_not_retry_protocol_errors():
    transport = MagicMock()
    transport.send.side_effect = ProtocolError("bad inputs")
    client = PeerClient(transport, "peer", retry_budget=5, sleep=MagicMock())
    with pytest.raises(ProtocolError):
        client.predict("lin", {"x": np.zeros((4, 3))}, step=0)
    assert transport.send.call_count == 1


def test_in_process_transport_rejects_unknown_tasks():
    with pytest.raises(UnknownTaskError):
        InProcessTransport().send("ghost", "predict", b"")


# --- Distributed runs ---

def test_staleness_zero_refreshes_every_step():
    assert refresh_interval_for(0) == 1
    assert refresh_interval_for(100) == 100


def test_lockstep_run_respects_the_refresh_interval(tmp_path, ledger):
    config = linear_toy(tmp_path, steps=12)
    run = distributed_train(config, staleness=3, ledger=ledger)

    # 1. Every node trained to the end and published v1 plus one version per interval
    assert {t: n.step for t, n in run.nodes.items()} == {"left": 12, "right": 12}
    assert {t: s.snapshot.version for t, s in run.servers.items()} == {"left": 5, "right": 5}

    # 2. No served prediction was older than the interval
    audit = run.audit()
    assert len(audit) > 0
    assert audit.within_interval.all()
    assert (audit.age <= 3).all()
    assert ledger.staleness_audit({"left": 3, "right": 3}).within_interval.all()

    # 3. Peers are constants on each node: the local copy of a peer never moves
    left = run.nodes["left"]
    assert left.params["right"].fingerprint() == left.tasks["right"].initial().fingerprint()


def test_lockstep_runs_are_reproducible(tmp_path):
    config = linear_toy(tmp_path, steps=8)
    first = distributed_train(config, staleness=2)
    second = distributed_train(config, staleness=2)
    for task_id in ("left", "right"):
        assert first.nodes[task_id].own_params().fingerprint() == second.nodes[task_id].own_params().fingerprint()


def test_threaded_scheduler_runs_every_node_to_the_end(tmp_path):
    config = apply_overrides(linear_toy(tmp_path, steps=10), deterministic=False)
    config = config.model_copy(update={"distributed": config.distributed.model_copy(update={"scheduler": "threaded"})})
    run = distributed_train(config, staleness=2)
    assert {t: n.step for t, n in run.nodes.items()} == {"left": 10, "right": 10}
    # step-based refresh: v1 at step 0, then steps 2, 4, ..., 10
    assert {t: s.snapshot.version for t, s in run.servers.items()} == {"left": 6, "right": 6}


def test_wall_clock_refresh_is_audited_in_seconds(tmp_path):
    config = apply_overrides(linear_toy(tmp_path, steps=12), deterministic=False)
    timed = config.distributed.model_copy(update={"scheduler": "threaded", "refresh_seconds": 0.01})
    run = distributed_train(config.model_copy(update={"distributed": timed}), staleness=1)

    audit = run.audit()
    assert len(audit) > 0
    assert set(audit.policy) == {"seconds"}
    assert (audit.interval >= 0.01).all()
    assert audit.within_interval.all()
    for task_id, node in run.nodes.items():
        assert node.longest_step_seconds > 0
        assert (audit[audit.server_task == task_id].interval == 0.01 + node.longest_step_seconds).all()


def test_step_refresh_audit_flags_snapshots_older_than_the_interval(tmp_path):
    run = distributed_train(linear_toy(tmp_path, steps=6), staleness=3)
    audit = run.audit()
    assert set(audit.policy) == {"steps"}
    assert audit.within_interval.all()
    # left asks right on mediator steps 1, 3, 5; right refreshes at 3 and 6
    assert audit[audit.server_task == "right"].age.max() == 2

    run.nodes["right"].refresh_interval = 1
    audit = run.audit()
    assert not audit[audit.server_task == "right"].within_interval.all()
    assert audit[audit.server_task == "left"].within_interval.all()


@pytest.mark.slow
def test_http_transport_matches_in_process_bit_for_bit(tmp_path):
    config = linear_toy(tmp_path, steps=6)
    local = distributed_train(config, staleness=2, transport="inprocess")
    remote = distributed_train(config, staleness=2, transport="http")
    for task_id in ("left", "right"):
        a, b = local.nodes[task_id].own_params().arrays(), remote.nodes[task_id].own_params().arrays()
        assert all(np.array_equal(a[name], b[name]) for name in a)
    pd.testing.assert_frame_equal(
        local.audit().drop(columns=["request_id", "age_seconds"]), remote.audit().drop(columns=["request_id", "age_seconds"])
    )


def test_sweep_writes_per_run_logs_and_a_sweep_table(tmp_path):
    config = linear_toy(tmp_path, steps=6, log_every=1)
    runs = staleness_sweep(config, [0, 3], output_dir=tmp_path)
    assert sorted(runs) == [0, 3]
    assert (tmp_path / "staleness_3" / "version_log.csv").exists()
    sweep = pd.read_csv(tmp_path / SWEEP_CSV)
    assert set(sweep.staleness) == {0, 3}
    assert {"step", "task_id", "metric_name", "value"} <= set(sweep.columns)


# --- Staleness report ---

@pytest.fixture
def sweep_rows():
    rows = []
    for staleness, values in ((0, [1.0, 0.5, 0.3, 0.2]), (10, [1.0, 0.8, 0.6, 0.25])):
        for step, value in enumerate(values):
            rows.append({"staleness": staleness, "step": step * 10, "task_id": "depth", "metric_name": "abs_rel", "value": value})
    rows.append({"staleness": 0, "step": 0, "task_id": "motion", "metric_name": "abs_rel", "value": 9.0})
    return pd.DataFrame(rows)


def test_report_defaults_to_within_five_percent_of_the_freshest_run(sweep_rows):
    report = staleness_report(sweep_rows, task_id="depth", steps_per_minute=100.0)
    assert report.threshold == pytest.approx(0.21)
    assert list(report.series.columns) == ["step", "staleness_0", "staleness_10"]
    summary = report.summary.set_index("staleness")
    assert summary.loc[0, "steps_to_threshold"] == 30
    assert np.isnan(summary.loc[10, "steps_to_threshold"])
    assert summary.loc[10, "staleness_minutes"] == pytest.approx(0.1)
    assert summary.loc[10, "final_metric"] == pytest.approx(0.25)


def test_report_with_explicit_threshold_and_files(tmp_path, sweep_rows):
    report = staleness_report(sweep_rows, task_id="depth", threshold=0.6, steps_per_minute=50.0)
    assert report.summary.set_index("staleness").steps_to_threshold.tolist() == [10, 20]
    series_path, summary_path = report.write(tmp_path)
    assert series_path.read_text().startswith("# steps_per_minute=50 metric=abs_rel threshold=0.6")
    assert len(pd.read_csv(summary_path, comment="#")) == 2


def test_report_of_an_unknown_metric_is_empty(sweep_rows):
    report = staleness_report(sweep_rows, metric="miou")
    assert report.series.empty and report.summary.empty
