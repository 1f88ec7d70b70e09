"""Bench task records."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from .screen import ActionPattern, ModelValidationError

TASK_SCHEMA = "task_v1"
TASK_KINDS = ("defect_oriented", "exploration_oriented")
STEP_KINDS = ("goto", "act", "probe")


@dataclass(frozen=True)
class TaskStep:
    """One structured instruction step.

    ``goto`` reaches a screen, ``act`` performs an action on a named screen,
    ``probe`` performs an action only if its element is visible where the
    agent currently is (screen-less).
    """

    kind: str
    screen_id: Optional[str] = None
    pattern: Optional[ActionPattern] = None
    text: Optional[str] = None
    direction: Optional[str] = None
    description: str = ""

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ValueError(f"unknown step kind {self.kind!r}")
        if self.kind == "goto" and not self.screen_id:
            raise ValueError("goto step requires screen_id")
        if self.kind in ("act", "probe") and self.pattern is None:
            raise ValueError(f"{self.kind} step requires a pattern")

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind, "description": self.description}
        if self.screen_id is not None:
            data["screen"] = self.screen_id
        if self.pattern is not None:
            data["pattern"] = self.pattern.to_dict()
        if self.text is not None:
            data["text"] = self.text
        if self.direction is not None:
            data["direction"] = self.direction
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TaskStep":
        pattern = data.get("pattern")
        return cls(
            kind=data["kind"],
            screen_id=data.get("screen"),
            pattern=ActionPattern.from_dict(pattern) if pattern is not None else None,
            text=data.get("text"),
            direction=data.get("direction"),
            description=data.get("description", ""),
        )


@dataclass(frozen=True)
class TaskSpec:
    id: str
    app_id: str
    defect_id: str
    kind: str
    instruction: str
    steps: Tuple[TaskStep, ...] = ()
    pre_intent: Optional[str] = None
    post_intent: Optional[str] = None
    max_steps: int = 6
    validation_hash: Optional[str] = None
    meta: Dict[str, Any] = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ModelValidationError([f"task {self.id}: unknown kind {self.kind!r}"])
        if not self.defect_id or not isinstance(self.defect_id, str):
            raise ModelValidationError([f"task {self.id}: exactly one defect_id is required"])

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "schema": TASK_SCHEMA,
            "id": self.id,
            "app_id": self.app_id,
            "defect_id": self.defect_id,
            "kind": self.kind,
            "instruction": self.instruction,
            "pre_intent": self.pre_intent,
            "post_intent": self.post_intent,
            "max_steps": self.max_steps,
            "steps": [s.to_dict() for s in self.steps],
        }
        if self.validation_hash is not None:
            data["validation_hash"] = self.validation_hash
        if self.meta:
            data["meta"] = dict(self.meta)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TaskSpec":
        if data.get("schema") != TASK_SCHEMA:
            raise ModelValidationError([f"unsupported task schema {data.get('schema')!r}"])
        return cls(
            id=data["id"],
            app_id=data["app_id"],
            defect_id=data["defect_id"],
            kind=data["kind"],
            instruction=data.get("instruction", ""),
            steps=tuple(TaskStep.from_dict(s) for s in data.get("steps", [])),
            pre_intent=data.get("pre_intent"),
            post_intent=data.get("post_intent"),
            max_steps=int(data.get("max_steps", 6)),
            validation_hash=data.get("validation_hash"),
            meta=dict(data.get("meta", {})),
        )


def task_steps_text(steps: List[TaskStep]) -> str:
    return " ".join(f"{i}. {s.description}" for i, s in enumerate(steps, 1))
