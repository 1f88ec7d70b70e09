from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from guitestlab.agents.scripted import ScriptedProfile, scripted_backends
from guitestlab.defects import DefectSpec
from guitestlab.evaluation import (
    CELLS,
    EvalReport,
    EvaluationError,
    JudgeVerdict,
    Metrics,
    RuleJudge,
    TaskResult,
    aggregate,
    evaluate_run,
    f1_score,
    judge_multi_action,
    render_table,
    verify_single_action,
)
from guitestlab.orchestrator import Declaration, RunRecord, run_task

from oracles import random_results, set_count


def _close(a, b):
    if a is None or b is None:
        return a is None and b is None
    return abs(a - float(b)) <= 1e-12


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 12), st.sampled_from(["pass1", "pass3"]))
def test_aggregate_matches_set_counting(seed, n_tasks, pass_k):
    results = random_results(random.Random(seed), n_tasks, 3)
    report = aggregate(results, pass_k)
    for cell in CELLS + ("Overall",):
        ref = set_count(results, pass_k, cell)
        got = report.cells[cell]
        assert got.total == ref["total"]
        for key in ("recall", "precision", "f1"):
            assert _close(getattr(got, key), ref[key]), (cell, key)


def test_precision_absent_when_nothing_declared():
    rs = [TaskResult("a", 0, True, False, False, cell="UI-ONR")]
    m = aggregate(rs).overall
    assert m.recall == 0.0 and m.precision is None and m.f1 is None


def test_f1_formula():
    assert f1_score(0.5, 0.25) == pytest.approx(2 * 0.5 * 0.25 / 0.75, abs=1e-15)
    assert f1_score(0.0, 0.0) is None
    assert f1_score(None, 0.3) is None


def test_pass3_needs_three_runs():
    rs = [TaskResult("a", k, False, False, False, cell="UI-ONR") for k in range(2)]
    with pytest.raises(EvaluationError):
        aggregate(rs, "pass3")


def test_duplicate_results_rejected():
    r = TaskResult("a", 0, False, False, False, cell="UI-ONR")
    with pytest.raises(EvaluationError):
        aggregate([r, r])


def test_detected_implies_declared_and_triggered():
    with pytest.raises(ValueError):
        TaskResult("a", 0, triggered=False, declared=True, detected=True)


def test_judge_verdict_checklist_invariant():
    with pytest.raises(ValueError):
        JudgeVerdict("GUI_BUG", True, False, True)
    with pytest.raises(ValueError):
        JudgeVerdict("EXECUTOR_ERROR", True, True, True)


def test_report_round_trip_and_table():
    report = aggregate(random_results(random.Random(5), 10, 3), "pass3")
    doc = report.to_dict()
    again = EvalReport.from_dict(doc)
    assert again.to_dict()["cells"] == doc["cells"]
    table = render_table(report)
    assert "Overall" in table and table.endswith("\n")


def test_single_and_multi_verification_are_exclusive(demo):
    single, multi = demo.defects["tasks-clear"], demo.defects["files-save"]
    task = demo.task("tasks-clear-D")
    run = run_task(task, demo.task_model(task), scripted_backends(demo.task_model(task)), seed=0)
    assert verify_single_action(run, single)
    with pytest.raises(EvaluationError):
        verify_single_action(run, multi)
    with pytest.raises(EvaluationError):
        judge_multi_action(run, single)


def test_declaration_outside_window_is_not_detected(demo):
    task = demo.task("tasks-clear-D")
    model = demo.task_model(task)
    run = run_task(task, model, scripted_backends(model), seed=0)
    assert run.trigger_log and run.trigger_log[0][1] == 0
    late = RunRecord(run.task_id, 0, 0, run.mode, "", run.status, run.steps,
                     [Declaration(-5, "attribution", None, None)], run.trigger_log)
    res = evaluate_run(late, demo.defects[task.defect_id], task)
    assert res.declared and res.triggered and not res.detected


def test_rule_judge_on_multi_action_run(demo):
    task = demo.task("gallery-report-D")
    model = demo.task_model(task)
    run = run_task(task, model, scripted_backends(model), seed=0)
    verdict = RuleJudge().judge(run, demo.defects["gallery-report"])
    assert verdict.value == "GUI_BUG"
    short = run_task(task, model, scripted_backends(model), seed=0, budget=2)
    assert RuleJudge().judge(short, demo.defects["gallery-report"]).value == "EXECUTOR_ERROR"


def test_judge_failure_is_flagged(demo):
    class Broken:
        def judge(self, run, defect):
            raise RuntimeError("offline")

    task = demo.task("gallery-report-D")
    model = demo.task_model(task)
    run = run_task(task, model, scripted_backends(model), seed=0)
    res = evaluate_run(run, demo.defects[task.defect_id], task, Broken())
    assert not res.detected and res.flags and "judge_error" in res.flags[0]


def test_metrics_from_counts():
    m = Metrics.from_counts(4, 1.0, 2.0)
    assert (m.recall, m.precision) == (0.25, 0.5)
    assert m.to_dict()["f1"] == round(2 * 0.25 * 0.5 / 0.75, 4)
