"""Planner / Executor / Monitor / Reflector coordination.

``step`` runs one pass of the flag-driven control loop and returns the next
environment action or ``NOOP``. ``run_task`` drives it against an
environment until the plan is exhausted or the global budget runs out.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .screen import (
    Action,
    ActionPattern,
    Environment,
    Marker,
    NoiseConfig,
    Observation,
    annotate_action,
)
from .tasks import TaskSpec

TRAJECTORY_SCHEMA = "trajectory_v1"
SUBTASK_KINDS = ("navigation", "test_intent")
INTENT_PATTERNS = ("alternative_paths", "boundary_conditions", "state_validation")
GOAL_KINDS = ("screen", "element", "variable", "effect")
VERDICTS = ("DONE", "FAIL", "CONTINUE")
ATTRIBUTIONS = ("AGENT_ERROR", "GUI_BUG")

DEFAULT_MAX_STEPS = 6
DEFAULT_BUDGET = 60


class OrchestrationError(RuntimeError):
    pass


class InternalInvariantError(AssertionError):
    pass


class PreconditionError(ValueError):
    pass


class _Noop:
    def __repr__(self):
        return "NOOP"

    def __bool__(self):
        return False


NOOP = _Noop()


@dataclass(frozen=True)
class GoalPredicate:
    """Structured subtask goal.

    ``effect`` goals are met when the subtask's ``via`` action was performed
    and its declared effect observed; the others are predicates over one
    observation.
    """

    kind: str
    screen_id: Optional[str] = None
    element_id: Optional[str] = None
    variable: Optional[str] = None
    value: Any = None

    def __post_init__(self):
        if self.kind not in GOAL_KINDS:
            raise ValueError(f"unknown goal kind {self.kind!r}")

    def holds(self, obs: Observation) -> bool:
        if obs.loading:
            return False
        if self.kind == "screen":
            return obs.screen_id == self.screen_id
        if self.kind == "element":
            return obs.screen_id == self.screen_id and obs.element(self.element_id) is not None
        if self.kind == "variable":
            return obs.variables.get(self.variable) == self.value
        return False

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind}
        for key, value in (("screen", self.screen_id), ("element", self.element_id), ("variable", self.variable)):
            if value is not None:
                data[key] = value
        if self.kind == "variable":
            data["value"] = self.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GoalPredicate":
        return cls(data["kind"], data.get("screen"), data.get("element"), data.get("variable"), data.get("value"))


@dataclass(frozen=True)
class Subtask:
    id: str
    kind: str
    instruction: str
    goal: GoalPredicate
    intent_pattern: Optional[str] = None
    via: Optional[ActionPattern] = None
    text: Optional[str] = None
    direction: Optional[str] = None
    avoid: Tuple[ActionPattern, ...] = ()
    step_ref: Optional[int] = None

    def __post_init__(self):
        if self.kind not in SUBTASK_KINDS:
            raise ValueError(f"unknown subtask kind {self.kind!r}")
        if (self.kind == "test_intent") != (self.intent_pattern is not None):
            raise ValueError("test_intent subtasks (and only those) carry an intent_pattern")
        if self.intent_pattern is not None and self.intent_pattern not in INTENT_PATTERNS:
            raise ValueError(f"unknown intent pattern {self.intent_pattern!r}")
        if self.goal.kind == "effect" and self.via is None:
            raise ValueError("effect goals require a via action")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind,
            "instruction": self.instruction,
            "goal": self.goal.to_dict(),
            "intent_pattern": self.intent_pattern,
            "via": self.via.to_dict() if self.via else None,
            "text": self.text,
            "direction": self.direction,
            "avoid": [a.to_dict() for a in self.avoid],
            "step_ref": self.step_ref,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Subtask":
        via = data.get("via")
        return cls(
            id=str(data["id"]),
            kind=data["kind"],
            instruction=data.get("instruction", ""),
            goal=GoalPredicate.from_dict(data["goal"]),
            intent_pattern=data.get("intent_pattern"),
            via=ActionPattern.from_dict(via) if via else None,
            text=data.get("text"),
            direction=data.get("direction"),
            avoid=tuple(ActionPattern.from_dict(a) for a in data.get("avoid", [])),
            step_ref=data.get("step_ref"),
        )


@dataclass(frozen=True)
class MonitorVerdict:
    value: str
    note: str = ""

    def __post_init__(self):
        if self.value not in VERDICTS:
            raise ValueError(f"unknown verdict {self.value!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {"verdict": self.value, "note": self.note}


@dataclass(frozen=True)
class Attribution:
    value: str
    suggestion: Optional[str] = None
    evidence: Tuple[Dict[str, Any], ...] = ()

    def __post_init__(self):
        if self.value not in ATTRIBUTIONS:
            raise ValueError(f"unknown attribution {self.value!r}")

    @property
    def site(self) -> Optional[ActionPattern]:
        for item in self.evidence:
            if item.get("site"):
                return ActionPattern.from_dict(item["site"])
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {"attribution": self.value, "suggestion": self.suggestion, "evidence": list(self.evidence)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Attribution":
        return cls(data["attribution"], data.get("suggestion"), tuple(data.get("evidence", [])))


@dataclass
class StepRecord:
    index: int
    subtask_id: Optional[str]
    pre: Observation
    action: Action
    marker: Marker
    post: Optional[Observation] = None
    verdict: Optional[MonitorVerdict] = None
    attribution: Optional[Attribution] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.index,
            "subtask": self.subtask_id,
            "pre": self.pre.to_dict(),
            "action": self.action.to_dict(),
            "marker": self.marker.to_dict(),
            "post": self.post.to_dict() if self.post is not None else None,
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "attribution": self.attribution.to_dict() if self.attribution else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StepRecord":
        verdict = data.get("verdict")
        attribution = data.get("attribution")
        return cls(
            index=int(data["step"]),
            subtask_id=data.get("subtask"),
            pre=Observation.from_dict(data["pre"]),
            action=Action.from_dict(data["action"]),
            marker=Marker.from_dict(data["marker"]),
            post=Observation.from_dict(data["post"]) if data.get("post") else None,
            verdict=MonitorVerdict(verdict["verdict"], verdict.get("note", "")) if verdict else None,
            attribution=Attribution.from_dict(attribution) if attribution else None,
        )


Trajectory = List[StepRecord]


@dataclass(frozen=True)
class Declaration:
    step: int
    source: str  # "attribution" or "answer"
    subtask_id: Optional[str] = None
    site: Optional[ActionPattern] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "source": self.source,
            "subtask": self.subtask_id,
            "site": self.site.to_dict() if self.site else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Declaration":
        site = data.get("site")
        return cls(int(data["step"]), data["source"], data.get("subtask"), ActionPattern.from_dict(site) if site else None)


class Plan:
    """An ordered subtask list with a fetch cursor (``GetLatestSubtask``)."""

    def __init__(self, subtasks: Sequence[Subtask]):
        self.subtasks = list(subtasks)
        self.cursor = 0

    def next_subtask(self) -> Optional[Subtask]:
        if self.cursor >= len(self.subtasks):
            return None
        s = self.subtasks[self.cursor]
        self.cursor += 1
        return s

    def remaining(self) -> List[Subtask]:
        return self.subtasks[self.cursor :]

    def __len__(self):
        return len(self.subtasks)


@dataclass
class BackendSet:
    planner: Any
    executor: Any
    monitor: Any
    reflector: Any
    mode: str = "orchestrated"

    def __post_init__(self):
        if self.mode not in ("orchestrated", "baseline"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class LoopState:
    task: TaskSpec
    max_steps: int = DEFAULT_MAX_STEPS
    replan: bool = True
    next_subtask: bool = False
    check_status: bool = False
    reflect: bool = False
    send_action: bool = False
    plan: Optional[Plan] = None
    current_subtask: Optional[Subtask] = None
    tau: List[StepRecord] = field(default_factory=list)
    history: List[Tuple[Subtask, str]] = field(default_factory=list)
    reflection: Optional[Attribution] = None
    observation: Optional[Observation] = None
    log: List[StepRecord] = field(default_factory=list)
    declarations: List[Declaration] = field(default_factory=list)
    plans: List[Plan] = field(default_factory=list)

    def driver_flags(self) -> Dict[str, bool]:
        return {
            "replan": self.replan,
            "next_subtask": self.next_subtask,
            "check_status": self.check_status,
            "reflect": self.reflect,
        }


def sync_state(state: LoopState, observation: Observation) -> LoopState:
    """Share the current observation with every agent context."""
    state.observation = observation
    if state.log and state.log[-1].post is None and state.log[-1].index < observation.step_index:
        state.log[-1].post = observation
    return state


def _backend_call(fn: Callable, *args):
    try:
        return fn(*args)
    except (OrchestrationError, InternalInvariantError):
        raise
    except Exception as exc:  # backend failure aborts the run
        raise OrchestrationError(f"{getattr(fn, '__qualname__', fn)} failed: {exc}") from exc


def plan(goal: TaskSpec, observation: Observation, history, reflection: Optional[Attribution], backend) -> List[Subtask]:
    subtasks = _backend_call(backend.plan, goal, observation, history, reflection)
    return list(subtasks)


def monitor_check(subtask: Subtask, pre: Observation, action: Action, post: Observation, backend) -> MonitorVerdict:
    verdict = _backend_call(backend.check, subtask, pre, action, post)
    if not isinstance(verdict, MonitorVerdict):
        raise OrchestrationError(f"monitor returned {verdict!r}")
    return verdict


def reflect(subtask: Subtask, tau: Sequence[StepRecord], observation: Observation, backend) -> Attribution:
    if not tau:
        raise PreconditionError("reflect() requires a non-empty trajectory")
    attribution = _backend_call(backend.reflect, subtask, list(tau), observation)
    if not isinstance(attribution, Attribution):
        raise OrchestrationError(f"reflector returned {attribution!r}")
    if attribution.value == "AGENT_ERROR" and subtask.kind == "navigation" and not attribution.suggestion:
        raise OrchestrationError("AGENT_ERROR on a navigation subtask must carry a suggestion")
    return attribution


def causal_record(tau: Sequence[StepRecord]) -> StepRecord:
    """The latest step taken outside a loading delay.

    Actions issued while the device is loading are ignored by it, so the
    observation that ends a delay is the outcome of this earlier step.
    """
    for rec in reversed(tau):
        if not rec.pre.loading:
            return rec
    return tau[-1]


def step(state: LoopState, backends: BackendSet, trace: Optional[List[Tuple[str, Dict[str, bool]]]] = None):
    """One pass of the control loop. Returns an Action, or NOOP when all subtasks are done."""
    if state.observation is None:
        raise PreconditionError("sync_state() must run before step()")
    state.send_action = False
    o_t = state.observation

    while not state.send_action:
        flags = state.driver_flags()
        if sum(flags.values()) > 1:
            raise InternalInvariantError(f"more than one driver flag set: {flags}")
        if trace is not None:
            trace.append(("iteration", dict(flags)))

        if state.replan:
            subtasks = plan(state.task, o_t, list(state.history), state.reflection, backends.planner)
            state.plan = Plan(subtasks)
            state.plans.append(state.plan)
            state.replan, state.next_subtask = False, True
            if trace is not None:
                trace.append(("replan", state.driver_flags()))

        if state.next_subtask:
            s = state.plan.next_subtask()
            if s is None:
                state.current_subtask = None
                if trace is not None:
                    trace.append(("noop", state.driver_flags()))
                return NOOP
            state.current_subtask = s
            state.next_subtask = False

        s = state.current_subtask
        if state.check_status:
            last = state.tau[-1]
            cause = causal_record(state.tau)
            c_t = monitor_check(s, cause.pre, cause.action, o_t, backends.monitor)
            last.verdict = c_t
            if trace is not None:
                trace.append(("monitor:" + c_t.value, state.driver_flags()))
            if c_t.value == "DONE":
                state.history.append((s, "DONE"))
                state.tau = []
                state.next_subtask, state.check_status = True, False
            elif c_t.value == "FAIL":
                state.history.append((s, "FAIL"))
                state.reflect, state.check_status = True, False
            else:
                state.check_status = False

        if state.reflect:
            r = reflect(s, state.tau, o_t, backends.reflector)
            state.reflection = r
            last = state.tau[-1]
            last.attribution = r
            if r.value == "GUI_BUG":
                state.declarations.append(Declaration(last.index, "attribution", s.id, r.site))
            if trace is not None:
                trace.append(("reflect:" + r.value, state.driver_flags()))
            if r.value == "AGENT_ERROR" and len(state.tau) < state.max_steps:
                state.reflect = False  # retry under the current plan
            else:
                state.tau = []
                state.replan, state.reflect = True, False

        if not (state.replan or state.next_subtask or state.check_status or state.reflect):
            if trace is not None:
                trace.append(("execute", state.driver_flags()))
            action = _backend_call(backends.executor.act, s, o_t, list(state.tau))
            if not isinstance(action, Action):
                raise OrchestrationError(f"executor returned {action!r}")
            annotated = annotate_action(o_t, action)
            record = StepRecord(o_t.step_index, s.id, o_t, action, annotated.marker)
            state.tau.append(record)
            state.log.append(record)
            state.check_status = True
            state.send_action = True
            return action


@dataclass
class RunRecord:
    task_id: str
    run_index: int
    seed: int
    mode: str
    agent: str
    status: str
    steps: List[StepRecord]
    declarations: List[Declaration]
    trigger_log: List[Tuple[str, int]]
    slip_log: List[Dict[str, Any]] = field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        return {
            "schema": TRAJECTORY_SCHEMA,
            "type": "summary",
            "task_id": self.task_id,
            "run_index": self.run_index,
            "seed": self.seed,
            "mode": self.mode,
            "agent": self.agent,
            "status": self.status,
            "n_steps": len(self.steps),
            "declarations": [d.to_dict() for d in self.declarations],
            "ground_truth": {
                "trigger_log": [[d, s] for d, s in self.trigger_log],
                "slip_log": list(self.slip_log),
            },
        }

    def to_jsonl(self) -> str:
        lines = []
        for rec in self.steps:
            lines.append({"schema": TRAJECTORY_SCHEMA, "type": "step", **rec.to_dict()})
        lines.append(self.summary())
        return "".join(json.dumps(line, sort_keys=True, separators=(",", ":")) + "\n" for line in lines)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode("utf-8")).hexdigest()

    @classmethod
    def from_jsonl(cls, text: str) -> "RunRecord":
        steps: List[StepRecord] = []
        summary = None
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            doc = json.loads(line)
            if doc.get("schema") != TRAJECTORY_SCHEMA:
                raise ValueError(f"line {n}: unsupported trajectory schema {doc.get('schema')!r}")
            if doc.get("type") == "step":
                steps.append(StepRecord.from_dict(doc))
            elif doc.get("type") == "summary":
                summary = doc
            else:
                raise ValueError(f"line {n}: unknown record type {doc.get('type')!r}")
        if summary is None:
            raise ValueError("trajectory has no summary footer")
        gt = summary.get("ground_truth", {})
        return cls(
            task_id=summary["task_id"],
            run_index=int(summary["run_index"]),
            seed=int(summary["seed"]),
            mode=summary["mode"],
            agent=summary.get("agent", ""),
            status=summary["status"],
            steps=steps,
            declarations=[Declaration.from_dict(d) for d in summary.get("declarations", [])],
            trigger_log=[(d, int(s)) for d, s in gt.get("trigger_log", [])],
            slip_log=list(gt.get("slip_log", [])),
        )


def run_task(
    task: TaskSpec,
    model,
    backends: BackendSet,
    seed: int,
    max_steps: int = DEFAULT_MAX_STEPS,
    budget: int = DEFAULT_BUDGET,
    noise: Optional[NoiseConfig] = None,
    run_index: int = 0,
    agent: str = "",
) -> RunRecord:
    env = Environment(model, noise)
    obs = env.reset(seed)
    status = "completed"
    declarations: List[Declaration] = []

    if backends.mode == "baseline":
        log: List[StepRecord] = []
        while True:
            if env.step_index >= budget:
                status = "budget_exhausted"
                break
            action = _backend_call(backends.executor.baseline_navigate, task, obs, list(log))
            record = StepRecord(obs.step_index, None, obs, action, annotate_action(obs, action).marker)
            log.append(record)
            if action.kind == "answer" and action.text == "GUI_BUG":
                site = None
                prior = [r for r in log[:-1] if r.action.kind not in ("answer", "wait")]
                if prior:
                    p = prior[-1]
                    site = ActionPattern(p.pre.screen_id, p.marker.hit, p.action.kind)
                declarations.append(Declaration(record.index, "answer", None, site))
            obs = env.apply_action(action)
            record.post = obs
            if action.kind == "finished":
                break
        steps = log
    else:
        state = LoopState(task=task, max_steps=max_steps)
        sync_state(state, obs)
        while True:
            if env.step_index >= budget:
                status = "budget_exhausted"
                break
            action = step(state, backends)
            if action is NOOP:
                break
            obs = env.apply_action(action)
            sync_state(state, obs)
        steps = state.log
        declarations = state.declarations

    trigger_log = list(env.ledger.trigger_log) if env.ledger is not None else []
    slip_log = list(getattr(backends.executor, "slip_log", []))
    return RunRecord(
        task_id=task.id,
        run_index=run_index,
        seed=seed,
        mode=backends.mode,
        agent=agent,
        status=status,
        steps=steps,
        declarations=declarations,
        trigger_log=trigger_log,
        slip_log=slip_log,
    )
