"""Bench task synthesis from reproduction trajectories.

Defect-oriented tasks restate the reproduction path step by step.
Exploration-oriented tasks combine a pre-defect intent (reach some screen
near the defect), probes for the defect's own actions and a post-defect
intent; candidates are kept only if a validation run reaches the trigger
screen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import networkx as nx

from .defects import DefectSpec, InstrumentedModel, count_preconditions
from .orchestrator import BackendSet, RunRecord, run_task
from .screen import Action, ActionPattern, AppModel, Environment, ModelValidationError
from .seeds import derive_seed
from .tasks import TaskSpec, TaskStep, task_steps_text

REPRO_SCHEMA = "repro_v1"
ELEMENT_ACTIONS = ("click", "long_press", "type")


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class ReproductionTrajectory:
    defect_id: str
    actions: Tuple[Action, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {"schema": REPRO_SCHEMA, "defect_id": self.defect_id, "actions": [a.to_dict() for a in self.actions]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ReproductionTrajectory":
        if data.get("schema") != REPRO_SCHEMA:
            raise ModelValidationError([f"unsupported repro schema {data.get('schema')!r}"])
        return cls(data["defect_id"], tuple(Action.from_dict(a) for a in data.get("actions", [])))


@dataclass(frozen=True)
class ReplayedStep:
    screen_id: str
    element_id: Optional[str]
    action: Action


def _defect(model: InstrumentedModel, defect_id: str) -> DefectSpec:
    for d in getattr(model, "defects", []):
        if d.id == defect_id:
            return d
    raise SynthesisError(f"defect {defect_id!r} is not armed on the model")


def replay(repro: ReproductionTrajectory, model: InstrumentedModel) -> List[ReplayedStep]:
    """Replay on a noise-free device and check the defect fires at the final action."""
    if not repro.actions:
        raise SynthesisError(f"reproduction for {repro.defect_id} is empty")
    _defect(model, repro.defect_id)
    env = Environment(model)
    obs = env.reset(0)
    out = []
    for action in repro.actions:
        hit = None
        if action.point is not None and action.kind in ELEMENT_ACTIONS:
            el = next((e for e in obs.elements if e.bounds.contains(action.point)), None)
            hit = el.id if el is not None else None
        out.append(ReplayedStep(obs.screen_id, hit, action))
        obs = env.apply_action(action)
    last = len(repro.actions) - 1
    if (repro.defect_id, last) not in env.ledger.trigger_log:
        raise SynthesisError(f"reproduction for {repro.defect_id} does not trigger it at its final action")
    return out


class IntentGenerator:
    """Chooses target screens for pre- and post-defect intents."""

    def pre_targets(self, model: AppModel, anchor: str, n: int) -> List[str]:
        raise NotImplementedError

    def post_targets(self, model: AppModel, anchor: str, n: int) -> List[str]:
        raise NotImplementedError

    def describe(self, model: AppModel, screen_id: str, phase: str) -> str:
        raise NotImplementedError


def screen_graph(model: AppModel) -> nx.DiGraph:
    """Directed screen graph of declared navigate transitions."""
    g = nx.DiGraph()
    g.add_nodes_from(model.base.screens)
    for p, e in model.base.transitions.items():
        if e.kind == "navigate":
            g.add_edge(p.screen_id, e.target)
    return g


class TemplateIntentGenerator(IntentGenerator):
    """Targets ordered by undirected hop distance from an anchor screen; template phrasing."""

    def _ranked(self, model: AppModel, anchor: str, include_anchor: bool) -> List[str]:
        dist = nx.single_source_shortest_path_length(screen_graph(model).to_undirected(), anchor)
        ranked = sorted(dist, key=lambda s: (dist[s], s))
        return [s for s in ranked if include_anchor or s != anchor]

    def _take(self, ranked: List[str], n: int, phase: str) -> List[str]:
        if n < 1:
            raise SynthesisError(f"{phase} intent count must be at least 1")
        if len(ranked) < n:
            raise SynthesisError(f"generator yields {len(ranked)} distinct {phase} intents, {n} requested (shortfall {n - len(ranked)})")
        return ranked[:n]

    def pre_targets(self, model: AppModel, anchor: str, n: int) -> List[str]:
        return self._take(self._ranked(model, anchor, True), n, "pre-defect")

    def post_targets(self, model: AppModel, anchor: str, n: int) -> List[str]:
        return self._take(self._ranked(model, anchor, False), n, "post-defect")

    def describe(self, model: AppModel, screen_id: str, phase: str) -> str:
        name = model.base.screens[screen_id].name
        if phase == "pre":
            return f"Open {name} and explore each item under {name}."
        return f"Afterwards, continue to {name} and check that it works."


def _step_description(model: AppModel, step: ReplayedStep) -> str:
    screen = model.base.screens[step.screen_id]
    el = screen.element(step.element_id)
    label = el.label or el.id
    if step.action.kind == "type":
        return f"On {screen.name}, type {step.action.text!r} into '{label}'."
    verb = "Long-press" if step.action.kind == "long_press" else "Click"
    return f"On {screen.name}, {verb.lower()} '{label}'."


def _act_steps(model: AppModel, replayed: Sequence[ReplayedStep], defect_id: str) -> List[TaskStep]:
    steps = []
    for n, st in enumerate(replayed):
        if st.action.kind not in ELEMENT_ACTIONS or st.element_id is None:
            raise SynthesisError(f"reproduction step {n} of {defect_id} does not act on an element")
        steps.append(
            TaskStep(
                "act",
                screen_id=st.screen_id,
                pattern=ActionPattern(st.screen_id, st.element_id, st.action.kind),
                text=st.action.text if st.action.kind == "type" else None,
                description=_step_description(model, st),
            )
        )
    return steps


def synthesize_defect_oriented(
    repro: ReproductionTrajectory, model: InstrumentedModel, generator: Optional[IntentGenerator] = None
) -> TaskSpec:
    defect = _defect(model, repro.defect_id)
    replayed = replay(repro, model)
    steps = _act_steps(model, replayed, defect.id)
    return TaskSpec(
        id=f"{defect.id}-D",
        app_id=model.app_id,
        defect_id=defect.id,
        kind="defect_oriented",
        instruction=task_steps_text(steps),
        steps=tuple(steps),
    )


def defect_segment(replayed: Sequence[ReplayedStep], defect: DefectSpec) -> List[ReplayedStep]:
    """The reproduction's actions from the first matched precondition through the trigger."""
    events = [(s.screen_id, s.element_id, s.action.kind) for s in replayed]
    start = len(replayed) - 1
    if defect.preconditions:
        for i in range(len(events)):
            if count_preconditions(events[i:-1], defect.preconditions) == len(defect.preconditions):
                start = i
            else:
                break
    return list(replayed[start:])


def synthesize_exploration_candidates(
    repro: ReproductionTrajectory,
    model: InstrumentedModel,
    generator: Optional[IntentGenerator] = None,
    n_pre: int = 5,
    n_post: int = 3,
) -> List[TaskSpec]:
    if n_pre < 1 or n_post < 1:
        raise SynthesisError("n_pre and n_post must both be at least 1")
    generator = generator or TemplateIntentGenerator()
    defect = _defect(model, repro.defect_id)
    replayed = replay(repro, model)
    segment = defect_segment(replayed, defect)
    probes = [
        TaskStep("probe", pattern=ActionPattern(None, p.pattern.element_id, p.pattern.kind), text=p.text,
                 description=p.description)
        for p in _act_steps(model, segment, defect.id)
    ]
    pre = generator.pre_targets(model, segment[0].screen_id, n_pre)
    post = generator.post_targets(model, defect.trigger.screen_id, n_post)
    out = []
    for i, x in enumerate(pre):
        for j, y in enumerate(post):
            pre_text = generator.describe(model, x, "pre")
            post_text = generator.describe(model, y, "post")
            steps = (TaskStep("goto", screen_id=x, description=pre_text), *probes,
                     TaskStep("goto", screen_id=y, description=post_text))
            out.append(
                TaskSpec(
                    id=f"{defect.id}-E{i}{j}",
                    app_id=model.app_id,
                    defect_id=defect.id,
                    kind="exploration_oriented",
                    instruction=f"{pre_text} {post_text}",
                    steps=steps,
                    pre_intent=pre_text,
                    post_intent=post_text,
                    meta={"pre_target": x, "post_target": y},
                )
            )
    return out


def oracle_validator(model: InstrumentedModel) -> BackendSet:
    from .agents.scripted import scripted_backends

    return scripted_backends(model, intents=False)


@dataclass
class FilterOutcome:
    retained: List[TaskSpec]
    runs: Dict[str, RunRecord] = field(default_factory=dict)


def reaches_trigger_screen(run: RunRecord, defect: DefectSpec) -> bool:
    return any(rec.pre.screen_id == defect.trigger.screen_id for rec in run.steps)


def filter_candidates(
    candidates: Sequence[TaskSpec],
    model: InstrumentedModel,
    validator: Optional[Callable[[InstrumentedModel], BackendSet]] = None,
    seed: int = 0,
) -> FilterOutcome:
    """Keep candidates whose validation run steps on the defect's trigger screen.

    ``validator`` builds a fresh backend set per validation run.
    """
    validator = validator or oracle_validator
    retained, runs = [], {}
    for cand in candidates:
        defect = _defect(model, cand.defect_id)
        run = run_task(cand, model, validator(model), seed=derive_seed(seed, "validate", cand.id), agent="validator")
        runs[cand.id] = run
        if reaches_trigger_screen(run, defect):
            retained.append(
                TaskSpec(
                    id=cand.id, app_id=cand.app_id, defect_id=cand.defect_id, kind=cand.kind,
                    instruction=cand.instruction, steps=cand.steps, pre_intent=cand.pre_intent,
                    post_intent=cand.post_intent, max_steps=cand.max_steps,
                    validation_hash=run.content_hash(), meta=dict(cand.meta),
                )
            )
    return FilterOutcome(retained, runs)


@dataclass
class SynthLogEntry:
    defect_id: str
    candidates: int
    retained: int
    defect_oriented: int = 1
    warning: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        d = {
            "defect_id": self.defect_id,
            "defect_oriented": self.defect_oriented,
            "candidates": self.candidates,
            "retained": self.retained,
            "message": f"{self.candidates} candidates, {self.retained} retained",
        }
        if self.warning:
            d["warning"] = self.warning
        return d


def synthesize_tasks(
    repros: Sequence[ReproductionTrajectory],
    models: Dict[str, InstrumentedModel],
    n_pre: int,
    n_post: int,
    seed: int = 0,
    generator: Optional[IntentGenerator] = None,
    validator=None,
) -> Tuple[List[TaskSpec], List[SynthLogEntry]]:
    """Run both strategies per reproduction. ``models`` maps defect id to its instrumented model."""
    tasks: List[TaskSpec] = []
    log: List[SynthLogEntry] = []
    for repro in repros:
        model = models[repro.defect_id]
        tasks.append(synthesize_defect_oriented(repro, model, generator))
        cands = synthesize_exploration_candidates(repro, model, generator, n_pre, n_post)
        outcome = filter_candidates(cands, model, validator, seed)
        tasks.extend(outcome.retained)
        warning = None if outcome.retained else "no exploration candidate reached the trigger screen"
        log.append(SynthLogEntry(repro.defect_id, len(cands), len(outcome.retained), warning=warning))
    return tasks, log


def distribution_report(tasks: Sequence[TaskSpec], defects: Dict[str, DefectSpec], targets: Optional[Dict[str, float]] = None) -> Dict[str, Any]:
    """Achieved bench proportions next to optional targets; never pads to meet them."""
    used = {t.defect_id for t in tasks}
    single = sum(1 for t in tasks if defects[t.defect_id].single_action)
    achieved = {
        "defects": len(used),
        "apps": len({t.app_id for t in tasks}),
        "tasks": len(tasks),
        "single_action_fraction": round(single / len(tasks), 4) if tasks else None,
    }
    report: Dict[str, Any] = {"achieved": achieved}
    if targets:
        report["targets"] = dict(targets)
        report["gaps"] = {
            k: (None if achieved.get(k) is None else round(achieved[k] - v, 4)) for k, v in targets.items() if k in achieved
        }
    return report
