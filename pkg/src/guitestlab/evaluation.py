"""Verification, per-task scoring and recall/precision/F1 aggregation."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence

from .defects import DefectSpec, count_preconditions
from .orchestrator import RunRecord, StepRecord
from .screen import resolve_value

REPORT_SCHEMA = "report_v1"
DETECTION_WINDOW = 3
CELLS = ("UI-ONR", "UI-UTR", "UI-NLE", "UX-UTR", "UX-NLE")
GROUPS = ("Defect-Ori", "Explore-Ori", "Single-Act", "Multi-Act")
PASS_KS = ("pass1", "pass3")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class JudgeVerdict:
    value: str
    precondition_ok: bool
    trigger_ok: bool
    result_ok: bool
    rationale: str = ""

    def __post_init__(self):
        if self.value not in ("GUI_BUG", "EXECUTOR_ERROR"):
            raise ValueError(f"unknown judge verdict {self.value!r}")
        if (self.value == "GUI_BUG") != (self.precondition_ok and self.trigger_ok and self.result_ok):
            raise ValueError("GUI_BUG requires, and is implied by, all three checklist items")

    @property
    def checklist(self) -> Dict[str, bool]:
        return {"precondition_ok": self.precondition_ok, "trigger_ok": self.trigger_ok, "result_ok": self.result_ok}

    def to_dict(self) -> Dict[str, Any]:
        return {"verdict": self.value, "checklist": self.checklist, "rationale": self.rationale}


def _matches_trigger(rec: StepRecord, defect: DefectSpec) -> bool:
    return defect.trigger.matches(rec.pre.screen_id, rec.marker.hit, rec.action.kind)


def trigger_step_index(run: RunRecord, defect: DefectSpec) -> Optional[int]:
    """Position in ``run.steps`` of the first trigger-matching action after all preconditions."""
    need = len(defect.preconditions)
    for i, rec in enumerate(run.steps):
        if _matches_trigger(rec, defect) and count_preconditions(run.steps[:i], defect.preconditions) == need:
            return i
    return None


def verify_single_action(run: RunRecord, defect: DefectSpec) -> bool:
    """State matching (pre-screen is the trigger screen) plus action matching."""
    if not defect.single_action:
        raise EvaluationError(f"defect {defect.id} is multi-action; use judge_multi_action")
    return any(_matches_trigger(rec, defect) for rec in run.steps)


def _effect_observed(run: RunRecord, i: int, defect: DefectSpec) -> bool:
    rec = run.steps[i]
    post = None
    for later in run.steps[i:]:
        if later.post is not None and not later.post.loading:
            post = later.post
            break
    if post is None:
        return False
    eff = defect.actual_effect
    if eff.kind == "navigate":
        return post.screen_id == eff.target
    if eff.kind == "mutate":
        expected = resolve_value(eff.value, rec.pre.variables.get(eff.variable), rec.action, rec.pre.variables)
        return post.variables.get(eff.variable) == expected
    return post.screen_id == rec.pre.screen_id and post.variables == rec.pre.variables


class RuleJudge:
    """Checklist judge: preconditions, trigger action, then the observed result."""

    def judge(self, run: RunRecord, defect: DefectSpec) -> JudgeVerdict:
        need = len(defect.preconditions)
        pre_ok = count_preconditions(run.steps, defect.preconditions) == need
        i = trigger_step_index(run, defect)
        trig_ok = i is not None
        result_ok = trig_ok and _effect_observed(run, i, defect)
        if not pre_ok:
            why = "preconditions not completed"
        elif not trig_ok:
            why = "preconditions met but the trigger action is missing"
        elif not result_ok:
            why = "trigger performed but the defective result was not observed"
        else:
            why = f"defect reproduced at step {run.steps[i].index}"
        value = "GUI_BUG" if pre_ok and trig_ok and result_ok else "EXECUTOR_ERROR"
        return JudgeVerdict(value, pre_ok, trig_ok, result_ok, why)


def judge_multi_action(run: RunRecord, defect: DefectSpec, judge=None) -> JudgeVerdict:
    if defect.single_action:
        raise EvaluationError(f"defect {defect.id} is single-action; use verify_single_action")
    judge = judge or RuleJudge()
    try:
        verdict = judge.judge(run, defect)
    except Exception as exc:
        raise EvaluationError(f"judge failed on {run.task_id}/{run.run_index}: {exc}") from exc
    if not isinstance(verdict, JudgeVerdict):
        raise EvaluationError(f"judge returned {verdict!r}")
    return verdict


@dataclass
class TaskResult:
    task_id: str
    run_index: int
    triggered: bool
    declared: bool
    detected: bool
    declaration_steps: List[int] = field(default_factory=list)
    trigger_step: Optional[int] = None
    cell: str = ""
    task_kind: str = ""
    single_action: bool = True
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.detected and not (self.declared and self.triggered):
            raise ValueError("detected requires declared and triggered")


def evaluate_run(run: RunRecord, defect: DefectSpec, task=None, judge=None, window: int = DETECTION_WINDOW) -> TaskResult:
    trigger_step = None
    for did, step in run.trigger_log:
        if did == defect.id:
            trigger_step = step
            break
    decl_steps = [d.step for d in run.declarations]
    triggered = trigger_step is not None
    declared = bool(decl_steps)
    flags: List[str] = []
    if defect.single_action:
        verified = verify_single_action(run, defect)
    else:
        try:
            verified = judge_multi_action(run, defect, judge).value == "GUI_BUG"
        except EvaluationError as exc:
            verified = False
            flags.append(f"judge_error: {exc}")
    detected = declared and triggered and verified and trigger_step <= max(decl_steps) + window
    return TaskResult(
        task_id=run.task_id,
        run_index=run.run_index,
        triggered=triggered,
        declared=declared,
        detected=bool(detected),
        declaration_steps=decl_steps,
        trigger_step=trigger_step,
        cell=defect.cell,
        task_kind=task.kind if task is not None else "",
        single_action=defect.single_action,
        flags=flags,
    )


@dataclass(frozen=True)
class PassScore:
    task_id: str
    runs: int
    pass1_detected: float
    pass1_declared: float
    pass3_detected: bool
    pass3_declared: bool


def score_task(results: Sequence[TaskResult]) -> PassScore:
    if not results:
        raise EvaluationError("score_task needs at least one run")
    ids = {r.task_id for r in results}
    if len(ids) != 1:
        raise EvaluationError(f"results span several tasks: {sorted(ids)}")
    n = len(results)
    return PassScore(
        task_id=results[0].task_id,
        runs=n,
        pass1_detected=sum(r.detected for r in results) / n,
        pass1_declared=sum(r.declared for r in results) / n,
        pass3_detected=any(r.detected for r in results),
        pass3_declared=any(r.declared for r in results),
    )


def f1_score(precision: Optional[float], recall: Optional[float]) -> Optional[float]:
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class Metrics:
    total: int
    detected: float
    declared: float
    recall: Optional[float]
    precision: Optional[float]
    f1: Optional[float]

    @classmethod
    def from_counts(cls, total: int, detected, declared) -> "Metrics":
        """Exact rational arithmetic; each ratio is rounded to float once."""
        det, dec = Fraction(detected), Fraction(declared)
        recall = det / total if total else None
        precision = det / dec if dec else None
        f1 = None
        if recall is not None and precision is not None and recall + precision:
            f1 = float(2 * precision * recall / (precision + recall))
        return cls(
            total, float(det), float(dec),
            None if recall is None else float(recall),
            None if precision is None else float(precision),
            f1,
        )

    def to_dict(self, digits: int = 4) -> Dict[str, Any]:
        def r(v):
            return None if v is None else round(v, digits)

        return {
            "total": self.total,
            "detected": r(self.detected),
            "declared": r(self.declared),
            "recall": r(self.recall),
            "precision": r(self.precision),
            "f1": r(self.f1),
        }


@dataclass
class EvalReport:
    pass_k: str
    cells: Dict[str, Metrics]
    tasks: Dict[str, PassScore]
    provenance: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "EvalReport":
        cells = {
            k: Metrics(m["total"], m["detected"], m["declared"], m["recall"], m["precision"], m["f1"])
            for k, m in doc["cells"].items()
        }
        return cls(doc["pass_k"], cells, {}, dict(doc.get("provenance", {})))

    @property
    def overall(self) -> Metrics:
        return self.cells["Overall"]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": REPORT_SCHEMA,
            "pass_k": self.pass_k,
            "counts": {
                "total": self.overall.total,
                "detected": round(self.overall.detected, 4),
                "declared": round(self.overall.declared, 4),
            },
            "cells": {k: m.to_dict() for k, m in self.cells.items()},
            "provenance": self.provenance,
        }


def aggregate(results: Iterable[TaskResult], pass_k: str = "pass1", min_runs: Optional[int] = None) -> EvalReport:
    """Score each task over its runs, then count detected/declared per cell.

    Pass@1 contributes fractional counts (the per-task run mean); Pass@3
    contributes 0/1 indicators.
    """
    if pass_k not in PASS_KS:
        raise EvaluationError(f"pass_k must be one of {PASS_KS}")
    by_task: Dict[str, List[TaskResult]] = defaultdict(list)
    seen = set()
    for r in results:
        key = (r.task_id, r.run_index)
        if key in seen:
            raise EvaluationError(f"duplicate result for task {r.task_id!r} run {r.run_index}")
        seen.add(key)
        by_task[r.task_id].append(r)
    need = min_runs if min_runs is not None else (3 if pass_k == "pass3" else 1)
    for tid, rs in by_task.items():
        if len(rs) < need:
            raise EvaluationError(f"task {tid!r} has {len(rs)} runs; {pass_k} needs {need}")
    scores = {tid: score_task(sorted(rs, key=lambda r: r.run_index)) for tid, rs in sorted(by_task.items())}

    buckets: Dict[str, List[str]] = defaultdict(list)
    for tid, rs in by_task.items():
        first = rs[0]
        keys = ["Overall"]
        if first.cell:
            keys.append(first.cell)
        if first.task_kind == "defect_oriented":
            keys.append("Defect-Ori")
        elif first.task_kind == "exploration_oriented":
            keys.append("Explore-Ori")
        keys.append("Single-Act" if first.single_action else "Multi-Act")
        for k in keys:
            buckets[k].append(tid)

    cells: Dict[str, Metrics] = {}
    for key in CELLS + ("Overall",) + GROUPS:
        tids = buckets.get(key, [])
        if pass_k == "pass1":
            det = sum((Fraction(sum(r.detected for r in by_task[t]), len(by_task[t])) for t in tids), Fraction(0))
            dec = sum((Fraction(sum(r.declared for r in by_task[t]), len(by_task[t])) for t in tids), Fraction(0))
        else:
            det = sum(1 for t in tids if scores[t].pass3_detected)
            dec = sum(1 for t in tids if scores[t].pass3_declared)
        cells[key] = Metrics.from_counts(len(tids), det, dec)
    return EvalReport(pass_k, cells, scores)


def _pct(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{100.0 * v:.2f}"


def render_table(report: EvalReport) -> str:
    """Plain-text table: one column group per defect cell plus Overall."""
    cols = CELLS + ("Overall",)
    head1 = f"{report.pass_k:<10}" + "".join(f"{c:^24}" for c in cols)
    head2 = " " * 10 + "".join(f"{'R':>8}{'P':>8}{'F1':>8}" for _ in cols)
    row = f"{'scores':<10}" + "".join(
        f"{_pct(report.cells[c].recall):>8}{_pct(report.cells[c].precision):>8}{_pct(report.cells[c].f1):>8}"
        for c in cols
    )
    counts = "  ".join(
        f"{c}: {report.cells[c].total} tasks" for c in cols if report.cells[c].total
    )
    groups = "  ".join(
        f"{g} R={_pct(report.cells[g].recall)}" for g in GROUPS if report.cells[g].total
    )
    return "\n".join([head1, head2, row, counts, groups]) + "\n"
