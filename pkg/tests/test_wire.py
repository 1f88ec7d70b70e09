from __future__ import annotations

import socket
import threading

import pytest

from guitestlab.agents.scripted import scripted_backends
from guitestlab.agents.wire import (
    WIRE_SCHEMA,
    EndpointHandler,
    EndpointServer,
    LoopbackTransport,
    ProtocolError,
    RemoteAdapter,
    RetryableError,
    SocketTransport,
    check_digests,
    decode,
    echo_handler,
    encode,
    parse_endpoint,
    parse_response,
    remote_backends,
    scripted_handler,
)
from guitestlab.orchestrator import MonitorVerdict, OrchestrationError, run_task
from guitestlab.screen import Action


def test_encode_is_one_line():
    data = encode({"schema": WIRE_SCHEMA, "text": "a\nb"})
    assert data.endswith(b"\n") and data.count(b"\n") == 1
    assert decode(data)["text"] == "a\nb"


def test_handshake_reports_endpoint_settings():
    adapter = RemoteAdapter(LoopbackTransport(echo_handler(reentrant=True)))
    assert adapter.handshake["type"] == "handshake"
    assert adapter.reentrant is True


def test_loopback_echo_round_trip():
    adapter = RemoteAdapter(LoopbackTransport(echo_handler()))
    payload = {"verdict": "DONE", "note": "fine", "nested": {"xs": [1, 2]}}
    assert adapter.exchange("monitor", payload) == payload
    assert adapter.remote_call("monitor", payload) == MonitorVerdict("DONE", "fine")


def test_missing_verdict_is_protocol_error():
    adapter = RemoteAdapter(LoopbackTransport(echo_handler()))
    with pytest.raises(ProtocolError) as info:
        adapter.remote_call("monitor", {"note": "no verdict"})
    assert info.value.raw == {"note": "no verdict"}
    assert adapter.log and "verdict" in adapter.log[-1]["error"]


def test_bad_digest_rejected():
    with pytest.raises(ProtocolError):
        check_digests({"state_digest": "ABC"})
    check_digests({"state_digest": "a" * 64})


@pytest.mark.parametrize(
    "role, body",
    [
        ("executor", {"action": {"action": "click"}}),
        ("executor", {"action": {"action": "click", "point": [1.5, 2]}}),
        ("reflector", {"attribution": "MAYBE"}),
        ("planner", {"subtasks": "nope"}),
        ("judge", {"verdict": "GUI_BUG", "checklist": {"precondition_ok": True}}),
        ("judge", {"verdict": "GUI_BUG", "checklist": {"precondition_ok": True, "trigger_ok": False, "result_ok": True}}),
    ],
)
def test_malformed_bodies_rejected(role, body):
    with pytest.raises(ProtocolError):
        parse_response(role, body)


def test_executor_body_parses_to_action():
    assert parse_response("executor", {"action": {"action": "click", "point": [3, 4]}}) == Action.click(3, 4)


def test_parse_endpoint():
    assert parse_endpoint("localhost:9000") == ("localhost", 9000)
    with pytest.raises(ValueError):
        parse_endpoint("localhost")


def test_socket_timeout_retries_then_fails():
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(8)
    accepted = []

    def accept_and_ignore():
        while True:
            try:
                conn, _ = listener.accept()
            except OSError:
                return
            accepted.append(conn)

    threading.Thread(target=accept_and_ignore, daemon=True).start()
    host, port = listener.getsockname()
    transport = SocketTransport(host, port, timeout=0.1)
    with pytest.raises(RetryableError):
        transport.roundtrip(b"{}\n")
    with pytest.raises(OrchestrationError):
        RemoteAdapter(SocketTransport(host, port, timeout=0.1), retries=2)
    listener.close()
    for c in accepted:
        c.close()


def test_endpoint_error_reply_aborts():
    handler = EndpointHandler({"monitor": lambda p: {"verdict": "DONE"}})
    adapter = RemoteAdapter(LoopbackTransport(handler))
    with pytest.raises(OrchestrationError):
        adapter.exchange("planner", {})


def test_remote_scripted_run_matches_local(demo):
    task = demo.task("files-save-D")
    model = demo.task_model(task)
    local = run_task(task, model, scripted_backends(model), seed=3)
    server = EndpointServer(scripted_handler(model.base)).start()
    try:
        host, port = parse_endpoint(server.address)
        adapter = RemoteAdapter(SocketTransport(host, port))
        remote = run_task(task, model, remote_backends(adapter, "r1"), seed=3)
        adapter.close()
    finally:
        server.shutdown()
        server.server_close()
    assert remote.to_jsonl() == local.to_jsonl()
