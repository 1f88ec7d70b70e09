"""Scriptable role backends for driving the control loop directly."""

from __future__ import annotations

from typing import Callable, List, Optional

from guitestlab.orchestrator import Attribution, BackendSet, GoalPredicate, MonitorVerdict, Subtask
from guitestlab.screen import Action
from guitestlab.tasks import TaskSpec, TaskStep


def stub_task() -> TaskSpec:
    return TaskSpec(
        id="stub", app_id="mini", defect_id="none", kind="defect_oriented", instruction="stub",
        steps=(TaskStep("goto", screen_id="detail"),),
    )


def nav_subtask(i: int) -> Subtask:
    return Subtask(f"s{i}", "navigation", f"subtask {i}", GoalPredicate("screen", screen_id="detail"))


class StubPlanner:
    def __init__(self, n: int = 3):
        self.n = n
        self.calls = 0

    def plan(self, goal, observation, history, reflection) -> List[Subtask]:
        self.calls += 1
        return [nav_subtask(10 * self.calls + i) for i in range(self.n)]


class StubExecutor:
    def act(self, subtask, observation, tau) -> Action:
        return Action("wait")


class ChoiceMonitor:
    def __init__(self, choose: Callable[[str, tuple], str]):
        self.choose = choose

    def check(self, subtask, pre, action, post) -> MonitorVerdict:
        return MonitorVerdict(self.choose("monitor", ("DONE", "FAIL", "CONTINUE")))


class ChoiceReflector:
    def __init__(self, choose: Callable[[str, tuple], str]):
        self.choose = choose

    def reflect(self, subtask, tau, observation) -> Attribution:
        value = self.choose("reflector", ("AGENT_ERROR", "GUI_BUG"))
        return Attribution(value, "retry" if value == "AGENT_ERROR" else None)


def queue_choice(script: List[str]) -> Callable[[str, tuple], str]:
    items = list(script)

    def choose(role, options):
        value = items.pop(0)
        assert value in options, (role, value)
        return value

    return choose


def stub_backends(choose, planner: Optional[StubPlanner] = None) -> BackendSet:
    return BackendSet(planner or StubPlanner(), StubExecutor(), ChoiceMonitor(choose), ChoiceReflector(choose))
