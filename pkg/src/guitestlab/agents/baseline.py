"""Single-agent baseline: one executor navigates the task and declares defects inline.

The agent is a pure function of (task, observation, history). It follows the
task's steps in order and answers ``GUI_BUG`` once per site when the same
action has been repeated twice with no state change.
"""

from __future__ import annotations

from typing import Optional, Sequence, Set, Tuple

from ..orchestrator import GoalPredicate, StepRecord, Subtask
from ..policy import Navigator
from ..screen import Action, ActionPattern, AppModel, Observation
from ..tasks import TaskSpec, TaskStep
from .scripted import ScriptedProfile

STALL_LIMIT = 6
BUG_ANSWER = "GUI_BUG"


def _site(rec: StepRecord) -> ActionPattern:
    return ActionPattern(rec.pre.screen_id, rec.marker.hit, rec.action.kind)


def _completes(step: TaskStep, rec: StepRecord) -> bool:
    if rec.post is None or rec.post.loading:
        return False
    if step.kind == "goto":
        return rec.post.screen_id == step.screen_id
    p = step.pattern
    return (
        rec.marker.hit == p.element_id
        and rec.action.kind == p.kind
        and (p.screen_id is None or rec.pre.screen_id == p.screen_id)
        and rec.post.state_digest != rec.pre.state_digest
    )


class BaselineAgent:
    def __init__(self, model: AppModel, profile: Optional[ScriptedProfile] = None):
        self.nav = Navigator(model)
        self.profile = profile or ScriptedProfile()
        self.slip_log: list = []

    def _settled(self, task: TaskSpec, cursor: int, obs: Observation, declared: Set[ActionPattern]) -> int:
        """Advance past steps that need no action from ``obs``."""
        steps = task.steps
        while cursor < len(steps) and not obs.loading:
            st = steps[cursor]
            if st.kind == "goto" and obs.screen_id == st.screen_id:
                cursor += 1
            elif st.kind == "probe" and obs.element(st.pattern.element_id) is None:
                cursor += 1
            elif st.kind in ("act", "probe") and any(
                d.element_id == st.pattern.element_id and d.kind == st.pattern.kind for d in declared
            ):
                cursor += 1
            else:
                break
        return cursor

    def _replay(self, task: TaskSpec, history: Sequence[StepRecord], obs: Observation) -> Tuple[int, Set[ActionPattern]]:
        cursor, stall = 0, 0
        declared: Set[ActionPattern] = set()
        acted = []
        for rec in history:
            if rec.action.kind == "answer":
                if acted:
                    declared.add(_site(acted[-1]))
                continue
            cursor = self._settled(task, cursor, rec.pre, declared)
            if rec.action.kind != "wait":
                acted.append(rec)
            if cursor >= len(task.steps) or rec.pre.loading:
                continue
            if _completes(task.steps[cursor], rec):
                cursor, stall = cursor + 1, 0
            else:
                stall += 1
                if stall >= STALL_LIMIT:
                    cursor, stall = cursor + 1, 0
        return self._settled(task, cursor, obs, declared), declared

    def _anomaly(self, history: Sequence[StepRecord], declared: Set[ActionPattern]) -> bool:
        acted = [r for r in history if r.action.kind not in ("answer", "wait")]
        if len(acted) < 2:
            return False
        a, b = acted[-2], acted[-1]
        if a.action != b.action or b.post is None or a.post is None:
            return False
        if a.pre.loading or b.pre.loading or b.marker.hit is None:
            return False
        if a.pre.state_digest != a.post.state_digest or b.pre.state_digest != b.post.state_digest:
            return False
        if history and history[-1].action.kind == "answer":
            return False
        return _site(b) not in declared

    def navigate(self, task: TaskSpec, observation: Observation, history: Sequence[StepRecord]) -> Action:
        if observation.loading:
            return Action("wait")
        cursor, declared = self._replay(task, history, observation)
        if self.profile.kind != "blind_navigator" and self._anomaly(history, declared):
            return Action.answer(BUG_ANSWER)
        if cursor >= len(task.steps):
            return Action("finished")
        st = task.steps[cursor]
        if st.kind == "goto":
            sub = Subtask("b", "navigation", st.description, GoalPredicate("screen", screen_id=st.screen_id))
        else:
            sub = Subtask("b", "navigation", st.description, GoalPredicate("effect"), via=st.pattern, text=st.text)
        return self.nav.next_move(sub, observation)

    # run_task calls the baseline through this name
    baseline_navigate = navigate
