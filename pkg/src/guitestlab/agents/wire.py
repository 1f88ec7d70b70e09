"""Newline-delimited JSON wire contract for remotely hosted role backends.

Every document carries ``"schema": "agent_wire_v1"``. After connecting, the
client sends ``{"type": "hello"}`` and the endpoint answers with its
handshake record::

    {"schema", "type": "handshake", "role", "reentrant", "temperature"}

Requests and responses::

    {"schema", "type": "request", "id", "role", "temperature", "payload"}
    {"schema", "type": "response", "id", "role", "response"}

Role response bodies:

* planner   ``{"subtasks": [subtask, ...]}``
* executor  ``{"action": {"action", "point"?, "text"?, "direction"?}}``
* monitor   ``{"verdict": "DONE"|"FAIL"|"CONTINUE", "note"?}``
* reflector ``{"attribution": "AGENT_ERROR"|"GUI_BUG", "suggestion"?, "evidence": [...]}``
* judge     ``{"verdict": "GUI_BUG"|"EXECUTOR_ERROR", "checklist": {...}, "rationale"}``

Coordinates are integral pixels; any ``*digest`` field is 64 lowercase hex chars.
"""

from __future__ import annotations

import itertools
import json
import re
import socket
import socketserver
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

from ..orchestrator import (
    Attribution,
    MonitorVerdict,
    OrchestrationError,
    StepRecord,
    Subtask,
    VERDICTS,
    ATTRIBUTIONS,
)
from ..screen import Action, Observation
from ..tasks import TaskSpec

WIRE_SCHEMA = "agent_wire_v1"
ROLES = ("planner", "executor", "monitor", "reflector", "judge")
DEFAULT_TEMPERATURE = 0.1
DIGEST_RE = re.compile(r"^[0-9a-f]{64}$")


class ProtocolError(ValueError):
    """A peer sent a document that violates the wire contract."""

    def __init__(self, message: str, raw: Any = None):
        super().__init__(message)
        self.raw = raw


class RetryableError(RuntimeError):
    pass


def encode(doc: Dict[str, Any]) -> bytes:
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes) -> Dict[str, Any]:
    try:
        doc = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable document: {exc}", raw=line) from exc
    if not isinstance(doc, dict):
        raise ProtocolError("document is not an object", raw=line)
    return doc


def check_digests(doc: Any, raw: Any = None) -> None:
    if isinstance(doc, dict):
        for key, value in doc.items():
            if key.endswith("digest") and value is not None:
                if not isinstance(value, str) or not DIGEST_RE.match(value):
                    raise ProtocolError(f"field {key!r} is not a lowercase hex digest", raw=raw)
            check_digests(value, raw)
    elif isinstance(doc, list):
        for item in doc:
            check_digests(item, raw)


# -- response validation ------------------------------------------------------


def _require(body: Dict[str, Any], key: str, raw: Any):
    if key not in body:
        raise ProtocolError(f"response missing {key!r}", raw=raw)
    return body[key]


def parse_response(role: str, body: Any, raw: Any = None):
    """Validate a role response body and convert it to its typed form."""
    if not isinstance(body, dict):
        raise ProtocolError("response body is not an object", raw=raw)
    check_digests(body, raw)
    try:
        if role == "planner":
            items = _require(body, "subtasks", raw)
            if not isinstance(items, list):
                raise ProtocolError("subtasks must be a list", raw=raw)
            return [Subtask.from_dict(s) for s in items]
        if role == "executor":
            action = _require(body, "action", raw)
            if not isinstance(action, dict):
                raise ProtocolError("action must be an object", raw=raw)
            return Action.from_dict(action)
        if role == "monitor":
            verdict = _require(body, "verdict", raw)
            if verdict not in VERDICTS:
                raise ProtocolError(f"unknown verdict {verdict!r}", raw=raw)
            return MonitorVerdict(verdict, str(body.get("note", "")))
        if role == "reflector":
            value = _require(body, "attribution", raw)
            if value not in ATTRIBUTIONS:
                raise ProtocolError(f"unknown attribution {value!r}", raw=raw)
            evidence = body.get("evidence", [])
            if not isinstance(evidence, list) or not all(isinstance(e, dict) for e in evidence):
                raise ProtocolError("evidence must be a list of objects", raw=raw)
            return Attribution(value, body.get("suggestion"), tuple(evidence))
        if role == "judge":
            from ..evaluation import JudgeVerdict

            value = _require(body, "verdict", raw)
            checklist = _require(body, "checklist", raw)
            keys = ("precondition_ok", "trigger_ok", "result_ok")
            if not isinstance(checklist, dict) or any(not isinstance(checklist.get(k), bool) for k in keys):
                raise ProtocolError("checklist needs boolean precondition_ok/trigger_ok/result_ok", raw=raw)
            return JudgeVerdict(value, *(checklist[k] for k in keys), rationale=str(body.get("rationale", "")))
    except ProtocolError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"invalid {role} response: {exc}", raw=raw) from exc
    raise ProtocolError(f"unknown role {role!r}", raw=raw)


# -- transports -----------------------------------------------------------------


class LoopbackTransport:
    """In-process transport: every document is serialized and parsed on the way through."""

    def __init__(self, handler: "EndpointHandler"):
        self.handler = handler

    def roundtrip(self, data: bytes) -> bytes:
        return encode(self.handler.handle(decode(data)))

    def close(self) -> None:
        pass


class SocketTransport:
    """TCP byte stream framed by newlines."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.address = (host, port)
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._buf = b""

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection(self.address, timeout=self.timeout)
            except socket.timeout as exc:
                raise RetryableError(f"connect to {self.address} timed out") from exc
            except OSError as exc:
                raise RetryableError(f"connect to {self.address} failed: {exc}") from exc
            self._buf = b""
        return self._sock

    def roundtrip(self, data: bytes) -> bytes:
        sock = self._connect()
        try:
            sock.sendall(data)
            while b"\n" not in self._buf:
                chunk = sock.recv(65536)
                if not chunk:
                    raise OSError("connection closed by endpoint")
                self._buf += chunk
        except socket.timeout as exc:
            self.close()
            raise RetryableError("endpoint timed out") from exc
        except OSError as exc:
            self.close()
            raise RetryableError(str(exc)) from exc
        line, self._buf = self._buf.split(b"\n", 1)
        return line + b"\n"

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


def parse_endpoint(text: str):
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


# -- client -----------------------------------------------------------------------


class RemoteAdapter:
    def __init__(self, transport, temperature: float = DEFAULT_TEMPERATURE, retries: int = 3):
        if retries < 1:
            raise ValueError("retries must be at least 1")
        self.transport = transport
        self.temperature = temperature
        self.retries = retries
        self.log: List[Dict[str, Any]] = []
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self.handshake = self._send({"schema": WIRE_SCHEMA, "type": "hello"})
        if self.handshake.get("type") != "handshake" or self.handshake.get("schema") != WIRE_SCHEMA:
            raise ProtocolError("endpoint did not answer with an agent_wire_v1 handshake", raw=self.handshake)
        self.reentrant = bool(self.handshake.get("reentrant", False))

    def _send(self, doc: Dict[str, Any]) -> Dict[str, Any]:
        data = encode(doc)
        last: Optional[Exception] = None
        for _ in range(self.retries):
            try:
                raw = self.transport.roundtrip(data)
            except RetryableError as exc:
                last = exc
                continue
            reply = decode(raw)
            if reply.get("schema") != WIRE_SCHEMA:
                self.log.append({"error": "schema", "raw": raw.decode("utf-8", "replace")})
                raise ProtocolError(f"unsupported wire schema {reply.get('schema')!r}", raw=raw)
            return reply
        raise OrchestrationError(f"endpoint unavailable after {self.retries} attempts: {last}")

    def exchange(self, role: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        """Send one request and return the raw response body."""
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        check_digests(payload)
        request = {
            "schema": WIRE_SCHEMA,
            "type": "request",
            "id": next(self._ids),
            "role": role,
            "temperature": self.temperature,
            "payload": payload,
        }
        if self.reentrant:
            reply = self._send(request)
        else:
            with self._lock:
                reply = self._send(request)
        if reply.get("type") == "error":
            raise OrchestrationError(f"endpoint error: {reply.get('message')}")
        if reply.get("type") != "response" or reply.get("id") != request["id"] or reply.get("role") != role:
            raise ProtocolError("response does not answer the request", raw=reply)
        return reply.get("response")

    def remote_call(self, role: str, payload: Dict[str, Any]):
        body = self.exchange(role, payload)
        try:
            return parse_response(role, body, raw=body)
        except ProtocolError as exc:
            self.log.append({"error": str(exc), "raw": exc.raw})
            raise

    def close(self) -> None:
        self.transport.close()


# -- request payloads ------------------------------------------------------------------


def _history_doc(history) -> List[Dict[str, Any]]:
    return [{"subtask": s.to_dict(), "outcome": outcome} for s, outcome in history]


class RemotePlanner:
    def __init__(self, adapter: RemoteAdapter, run_id: str = ""):
        self.adapter = adapter
        self.run_id = run_id

    def plan(self, goal: TaskSpec, observation: Observation, history, reflection) -> List[Subtask]:
        payload = {
            "run_id": self.run_id,
            "goal": goal.to_dict(),
            "observation": observation.to_dict(),
            "history": _history_doc(history),
            "reflection": reflection.to_dict() if reflection is not None else None,
        }
        return self.adapter.remote_call("planner", payload)


class RemoteExecutor:
    def __init__(self, adapter: RemoteAdapter, run_id: str = ""):
        self.adapter = adapter
        self.run_id = run_id
        self.slip_log: list = []

    def act(self, subtask: Subtask, observation: Observation, tau: Sequence[StepRecord]) -> Action:
        payload = {
            "run_id": self.run_id,
            "subtask": subtask.to_dict(),
            "observation": observation.to_dict(),
            "trajectory": [r.to_dict() for r in tau],
        }
        return self.adapter.remote_call("executor", payload)


class RemoteMonitor:
    def __init__(self, adapter: RemoteAdapter, run_id: str = ""):
        self.adapter = adapter
        self.run_id = run_id

    def check(self, subtask: Subtask, pre: Observation, action: Action, post: Observation) -> MonitorVerdict:
        payload = {
            "run_id": self.run_id,
            "subtask": subtask.to_dict(),
            "pre_digest": pre.state_digest,
            "action": action.to_dict(),
            "post_digest": post.state_digest,
            "pre": pre.to_dict(),
            "post": post.to_dict(),
        }
        return self.adapter.remote_call("monitor", payload)


class RemoteReflector:
    def __init__(self, adapter: RemoteAdapter, run_id: str = ""):
        self.adapter = adapter
        self.run_id = run_id

    def reflect(self, subtask: Subtask, tau: Sequence[StepRecord], observation: Observation) -> Attribution:
        payload = {
            "run_id": self.run_id,
            "subtask": subtask.to_dict(),
            "trajectory": [r.to_dict() for r in tau],
            "observation": observation.to_dict(),
        }
        return self.adapter.remote_call("reflector", payload)


class RemoteJudge:
    def __init__(self, adapter: RemoteAdapter):
        self.adapter = adapter

    def judge(self, run, defect):
        payload = {
            "defect": defect.to_dict(),
            "steps": [r.to_dict() for r in run.steps],
        }
        return self.adapter.remote_call("judge", payload)


def remote_backends(adapter: RemoteAdapter, run_id: str = ""):
    from ..orchestrator import BackendSet

    return BackendSet(
        planner=RemotePlanner(adapter, run_id),
        executor=RemoteExecutor(adapter, run_id),
        monitor=RemoteMonitor(adapter, run_id),
        reflector=RemoteReflector(adapter, run_id),
        mode="orchestrated",
    )


# -- endpoint side ------------------------------------------------------------------------


@dataclass
class EndpointHandler:
    """Serves role requests by dispatching to local callables.

    ``routes`` maps a role to ``fn(payload) -> response body``.
    """

    routes: Dict[str, Callable[[Dict[str, Any]], Dict[str, Any]]]
    role: str = "any"
    reentrant: bool = False
    temperature: float = DEFAULT_TEMPERATURE

    def handle(self, doc: Dict[str, Any]) -> Dict[str, Any]:
        if doc.get("schema") != WIRE_SCHEMA:
            return {"schema": WIRE_SCHEMA, "type": "error", "message": f"unsupported schema {doc.get('schema')!r}"}
        if doc.get("type") == "hello":
            return {
                "schema": WIRE_SCHEMA,
                "type": "handshake",
                "role": self.role,
                "reentrant": self.reentrant,
                "temperature": self.temperature,
            }
        role = doc.get("role")
        fn = self.routes.get(role)
        if doc.get("type") != "request" or fn is None:
            return {"schema": WIRE_SCHEMA, "type": "error", "message": f"cannot serve role {role!r}"}
        return {"schema": WIRE_SCHEMA, "type": "response", "id": doc.get("id"), "role": role, "response": fn(doc.get("payload", {}))}


def echo_handler(reentrant: bool = False) -> EndpointHandler:
    """Answers every role by echoing its payload back (for transport tests)."""
    return EndpointHandler({role: (lambda payload: payload) for role in ROLES}, role="echo", reentrant=reentrant)


def scripted_handler(model, profile=None, intents: bool = True) -> EndpointHandler:
    """Hosts the scripted backends behind the wire; one planner per ``run_id``."""
    from .scripted import RuleMonitor, RuleReflector, ScriptedExecutor, ScriptedPlanner

    planners: Dict[str, ScriptedPlanner] = {}
    executor = ScriptedExecutor(model, profile)
    monitor = RuleMonitor(model)
    reflector = RuleReflector(model)

    def plan(payload):
        run_id = payload.get("run_id", "")
        planner = planners.setdefault(run_id, ScriptedPlanner(model, intents=intents))
        history = [(Subtask.from_dict(h["subtask"]), h["outcome"]) for h in payload.get("history", [])]
        reflection = payload.get("reflection")
        subtasks = planner.plan(
            TaskSpec.from_dict(payload["goal"]),
            Observation.from_dict(payload["observation"]),
            history,
            Attribution.from_dict(reflection) if reflection else None,
        )
        return {"subtasks": [s.to_dict() for s in subtasks]}

    def act(payload):
        action = executor.act(
            Subtask.from_dict(payload["subtask"]),
            Observation.from_dict(payload["observation"]),
            [StepRecord.from_dict(r) for r in payload.get("trajectory", [])],
        )
        return {"action": action.to_dict()}

    def check(payload):
        verdict = monitor.check(
            Subtask.from_dict(payload["subtask"]),
            Observation.from_dict(payload["pre"]),
            Action.from_dict(payload["action"]),
            Observation.from_dict(payload["post"]),
        )
        return verdict.to_dict()

    def reflect(payload):
        attribution = reflector.reflect(
            Subtask.from_dict(payload["subtask"]),
            [StepRecord.from_dict(r) for r in payload["trajectory"]],
            Observation.from_dict(payload["observation"]),
        )
        return attribution.to_dict()

    return EndpointHandler({"planner": plan, "executor": act, "monitor": check, "reflector": reflect}, role="scripted")


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            try:
                reply = self.server.endpoint.handle(decode(line))
            except Exception as exc:  # keep serving; report the failure to the client
                reply = {"schema": WIRE_SCHEMA, "type": "error", "message": str(exc)}
            self.wfile.write(encode(reply))
            self.wfile.flush()


class EndpointServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, endpoint: EndpointHandler, host: str = "127.0.0.1", port: int = 0):
        self.endpoint = endpoint
        super().__init__((host, port), _LineHandler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "EndpointServer":
        threading.Thread(target=self.serve_forever, daemon=True).start()
        return self
