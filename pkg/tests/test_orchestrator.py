from __future__ import annotations

import pytest

from guitestlab.agents.scripted import scripted_backends
from guitestlab.orchestrator import (
    NOOP,
    Attribution,
    BackendSet,
    GoalPredicate,
    InternalInvariantError,
    LoopState,
    OrchestrationError,
    PreconditionError,
    RunRecord,
    StepRecord,
    Subtask,
    causal_record,
    reflect,
    run_task,
    step,
    sync_state,
)
from guitestlab.screen import Action, Environment, NoiseConfig, annotate_action, reset

from stubs import StubExecutor, StubPlanner, nav_subtask, queue_choice, stub_backends, stub_task


def fresh_state(mini_model, max_steps=2):
    _, obs = reset(mini_model)
    return sync_state(LoopState(task=stub_task(), max_steps=max_steps), obs)


def test_step_requires_observation():
    with pytest.raises(PreconditionError):
        step(LoopState(task=stub_task()), stub_backends(queue_choice([])))


def test_empty_plan_returns_noop(mini_model):
    state = fresh_state(mini_model)
    assert step(state, stub_backends(queue_choice([]), StubPlanner(0))) is NOOP


def test_done_walks_the_plan_then_noop(mini_model):
    state = fresh_state(mini_model)
    backends = stub_backends(queue_choice(["DONE"] * 3))
    for _ in range(3):
        assert isinstance(step(state, backends), Action)
    assert step(state, backends) is NOOP
    assert [outcome for _, outcome in state.history] == ["DONE"] * 3
    assert backends.planner.calls == 1


def test_agent_error_below_max_steps_keeps_plan(mini_model):
    state = fresh_state(mini_model, max_steps=2)
    backends = stub_backends(queue_choice(["FAIL", "AGENT_ERROR"]))
    step(state, backends)
    plan_before = state.plan
    current = state.current_subtask
    step(state, backends)
    assert state.plan is plan_before and state.current_subtask is current
    assert backends.planner.calls == 1
    assert len(state.tau) == 2


def test_agent_error_at_max_steps_replans(mini_model):
    state = fresh_state(mini_model, max_steps=1)
    backends = stub_backends(queue_choice(["FAIL", "AGENT_ERROR"]))
    step(state, backends)
    first = state.plan
    step(state, backends)
    assert backends.planner.calls == 2 and state.plan is not first
    assert len(state.tau) == 1


def test_gui_bug_declares_and_replans(mini_model):
    state = fresh_state(mini_model)
    backends = stub_backends(queue_choice(["FAIL", "GUI_BUG"]))
    step(state, backends)
    step(state, backends)
    assert len(state.declarations) == 1
    assert state.declarations[0].subtask_id == "s10"
    assert state.log[0].attribution.value == "GUI_BUG"
    assert backends.planner.calls == 2


def test_continue_keeps_same_subtask(mini_model):
    state = fresh_state(mini_model)
    backends = stub_backends(queue_choice(["CONTINUE", "CONTINUE"]))
    step(state, backends)
    step(state, backends)
    step(state, backends)
    assert {r.subtask_id for r in state.log} == {"s10"}


def test_two_driver_flags_violate_guard(mini_model):
    state = fresh_state(mini_model)
    state.replan = state.reflect = True
    with pytest.raises(InternalInvariantError):
        step(state, stub_backends(queue_choice([])))


def test_reflect_needs_trajectory(mini_model):
    _, obs = reset(mini_model)
    with pytest.raises(PreconditionError):
        reflect(nav_subtask(1), [], obs, object())


def test_navigation_agent_error_needs_suggestion(mini_model):
    _, obs = reset(mini_model)
    rec = StepRecord(0, "s1", obs, Action("wait"), annotate_action(obs, Action("wait")).marker)

    class Mute:
        def reflect(self, subtask, tau, observation):
            return Attribution("AGENT_ERROR")

    with pytest.raises(OrchestrationError):
        reflect(nav_subtask(1), [rec], obs, Mute())


def test_backend_exception_becomes_orchestration_error(mini_model):
    class Broken:
        def plan(self, *args):
            raise RuntimeError("down")

    state = fresh_state(mini_model)
    with pytest.raises(OrchestrationError):
        step(state, BackendSet(Broken(), StubExecutor(), None, None))


def test_executor_must_return_action(mini_model):
    class Bad:
        def act(self, *args):
            return "click"

    state = fresh_state(mini_model)
    with pytest.raises(OrchestrationError):
        step(state, BackendSet(StubPlanner(), Bad(), None, None))


def test_causal_record_skips_loading_steps(mini_model):
    env = Environment(mini_model, NoiseConfig(1.0, 2))
    obs = env.reset(0)
    a = Action.click(300, 375)
    first = StepRecord(0, "s1", obs, a, annotate_action(obs, a).marker)
    loading = env.apply_action(a)
    w = Action("wait")
    second = StepRecord(1, "s1", loading, w, annotate_action(loading, w).marker)
    assert causal_record([first, second]) is first


def test_run_record_jsonl_round_trip(demo):
    task = demo.tasks[0]
    model = demo.task_model(task)
    run = run_task(task, model, scripted_backends(model), seed=4)
    text = run.to_jsonl()
    assert text.endswith("\n") and not text.endswith("\n\n")
    again = RunRecord.from_jsonl(text)
    assert again.to_jsonl() == text
    assert again.content_hash() == run.content_hash()


def test_run_record_rejects_missing_footer(demo):
    task = demo.tasks[0]
    model = demo.task_model(task)
    text = run_task(task, model, scripted_backends(model), seed=4).to_jsonl()
    body = "".join(text.splitlines(keepends=True)[:-1])
    with pytest.raises(ValueError):
        RunRecord.from_jsonl(body)


def test_budget_truncates_run(demo):
    task = demo.task("gallery-report-D")
    model = demo.task_model(task)
    run = run_task(task, model, scripted_backends(model), seed=0, budget=2)
    assert run.status == "budget_exhausted" and len(run.steps) == 2


def test_subtask_validation():
    with pytest.raises(ValueError):
        Subtask("x", "test_intent", "probe", GoalPredicate("screen", screen_id="a"))
    with pytest.raises(ValueError):
        Subtask("x", "navigation", "act", GoalPredicate("effect"))
    s = nav_subtask(3)
    assert Subtask.from_dict(s.to_dict()) == s
