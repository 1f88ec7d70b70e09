"""Defect injection: UI/UX faults armed on top of an app model's transitions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from .screen import ActionPattern, AppModel, Effect, ModelValidationError

DEFECT_SCHEMA = "defect_v1"
CATEGORIES = ("UI", "UX")
FAULT_MODES = ("ONR", "UTR", "NLE")


class DefectConflictError(ValueError):
    pass


@dataclass(frozen=True)
class DefectSpec:
    id: str
    category: str
    fault_mode: str
    trigger: ActionPattern
    expected_effect: Effect
    actual_effect: Effect
    preconditions: Tuple[ActionPattern, ...] = ()
    description: Dict[str, str] = field(default_factory=dict, hash=False, compare=False)
    app_id: str = ""

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ModelValidationError(problems)

    def problems(self) -> List[str]:
        out = []
        if self.category not in CATEGORIES:
            out.append(f"defect {self.id}: unknown category {self.category!r}")
        if self.fault_mode not in FAULT_MODES:
            out.append(f"defect {self.id}: unknown fault mode {self.fault_mode!r}")
        if self.category == "UX" and self.fault_mode == "ONR":
            out.append(f"defect {self.id}: ONR applies only to UI defects")
        if self.expected_effect == self.actual_effect:
            out.append(f"defect {self.id}: expected and actual effects are identical")
        if self.trigger.screen_id is None or self.trigger.element_id is None:
            out.append(f"defect {self.id}: trigger must name a screen and an element")
        return out

    @property
    def single_action(self) -> bool:
        return not self.preconditions

    @property
    def cell(self) -> str:
        return f"{self.category}-{self.fault_mode}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": DEFECT_SCHEMA,
            "id": self.id,
            "app_id": self.app_id,
            "category": self.category,
            "fault_mode": self.fault_mode,
            "trigger": self.trigger.to_dict(),
            "preconditions": [p.to_dict() for p in self.preconditions],
            "expected_effect": self.expected_effect.to_dict(),
            "actual_effect": self.actual_effect.to_dict(),
            "description": dict(self.description),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DefectSpec":
        if data.get("schema") != DEFECT_SCHEMA:
            raise ModelValidationError([f"unsupported defect schema {data.get('schema')!r}"])
        return cls(
            id=data["id"],
            app_id=data.get("app_id", ""),
            category=data["category"],
            fault_mode=data["fault_mode"],
            trigger=ActionPattern.from_dict(data["trigger"]),
            preconditions=tuple(ActionPattern.from_dict(p) for p in data.get("preconditions", [])),
            expected_effect=Effect.from_dict(data["expected_effect"]),
            actual_effect=Effect.from_dict(data["actual_effect"]),
            description=dict(data.get("description", {})),
        )


class DefectLedger:
    """Ground truth for one run. Never handed to agents."""

    def __init__(self, armed: Iterable[DefectSpec]):
        self.armed: Dict[str, DefectSpec] = {d.id: d for d in armed}
        self.trigger_log: List[Tuple[str, int]] = []

    def record(self, defect_id: str, step_index: int) -> None:
        if defect_id not in self.armed:
            raise KeyError(f"defect {defect_id!r} is not armed")
        if self.trigger_log and step_index <= self.trigger_log[-1][1]:
            raise ValueError("trigger_log step indices must be strictly increasing")
        self.trigger_log.append((defect_id, step_index))


def _event_of(item: Any) -> Tuple[Optional[str], Optional[str], str]:
    """Normalise a trajectory item into a (screen, element, kind) event."""
    if isinstance(item, tuple):
        return item
    # StepRecord-like: resolved against the pre-action observation.
    return (item.pre.screen_id, item.marker.hit, item.action.kind)


def count_preconditions(events: Iterable[Any], preconditions: Sequence[ActionPattern]) -> int:
    """Greedy in-order subsequence match; greedy is optimal for subsequence length."""
    matched = 0
    if not preconditions:
        return 0
    for item in events:
        screen, element, kind = _event_of(item)
        if preconditions[matched].matches(screen, element, kind):
            matched += 1
            if matched == len(preconditions):
                break
    return matched


def precondition_progress(ledger: DefectLedger, trajectory: Iterable[Any], defect: DefectSpec) -> int:
    if defect.id not in ledger.armed:
        raise KeyError(f"defect {defect.id!r} is not armed")
    return count_preconditions(trajectory, defect.preconditions)


def ground_truth_triggered(ledger: DefectLedger, defect_id: str) -> Optional[int]:
    if defect_id not in ledger.armed:
        raise KeyError(f"unknown defect id {defect_id!r}")
    for did, step in ledger.trigger_log:
        if did == defect_id:
            return step
    return None


class InstrumentedModel:
    """An app model whose transition lookup consults armed defects first."""

    def __init__(self, base: AppModel, defects: Sequence[DefectSpec]):
        self.base = base
        self.defects = list(defects)
        self._by_trigger: Dict[ActionPattern, DefectSpec] = {d.trigger: d for d in self.defects}

    @property
    def screens(self):
        return self.base.screens

    @property
    def transitions(self):
        return self.base.transitions

    @property
    def initial_screen(self):
        return self.base.initial_screen

    @property
    def variables(self):
        return self.base.variables

    @property
    def app_id(self):
        return self.base.app_id

    def check(self) -> None:
        self.base.check()

    def new_ledger(self) -> DefectLedger:
        return DefectLedger(self.defects)

    def resolve(self, screen_id, element_id, kind, events):
        pattern = ActionPattern(screen_id, element_id, kind)
        defect = self._by_trigger.get(pattern)
        if defect is not None and count_preconditions(events, defect.preconditions) == len(defect.preconditions):
            return defect.actual_effect, defect.id
        return self.base.transitions.get(pattern), None


def inject(model: AppModel, defects: Sequence[DefectSpec]) -> InstrumentedModel:
    """Arm ``defects`` on ``model``.

    Two defects sharing a trigger always conflict: concatenating their
    precondition sequences satisfies both, so both could be live at once.
    """
    model = model.base
    problems = list(model.validate())
    seen: Dict[ActionPattern, str] = {}
    ids = set()
    for d in defects:
        if d.id in ids:
            problems.append(f"duplicate defect id {d.id!r}")
        ids.add(d.id)
        trig = d.trigger
        screen = model.screens.get(trig.screen_id)
        if screen is None:
            problems.append(f"defect {d.id}: trigger screen {trig.screen_id!r} unknown")
            continue
        el = screen.element(trig.element_id)
        if el is None:
            problems.append(f"defect {d.id}: trigger element {trig.screen_id}/{trig.element_id} unknown")
            continue
        if not el.enabled:
            problems.append(f"defect {d.id}: trigger element {trig.element_id!r} is disabled")
        declared = model.transitions.get(trig)
        if declared is None:
            problems.append(f"defect {d.id}: trigger has no declared transition")
        elif declared != d.expected_effect:
            problems.append(f"defect {d.id}: expected_effect differs from the declared transition")
        if d.actual_effect.kind == "navigate" and d.actual_effect.target not in model.screens:
            problems.append(f"defect {d.id}: actual effect navigates to missing screen {d.actual_effect.target!r}")
        for p in d.preconditions:
            ps = model.screens.get(p.screen_id) if p.screen_id is not None else None
            if p.screen_id is not None and ps is None:
                problems.append(f"defect {d.id}: precondition screen {p.screen_id!r} unknown")
            elif ps is not None and p.element_id is not None and ps.element(p.element_id) is None:
                problems.append(f"defect {d.id}: precondition element {p.screen_id}/{p.element_id} unknown")
        if trig in seen:
            raise DefectConflictError(f"defects {seen[trig]!r} and {d.id!r} share trigger {trig}")
        seen[trig] = d.id
    if problems:
        raise ModelValidationError(problems)
    return InstrumentedModel(model, defects)
