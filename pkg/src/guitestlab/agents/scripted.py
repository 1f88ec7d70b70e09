"""Deterministic rule-based backends for the four orchestrated roles.

They consult the app model's declared transitions through ``Navigator`` and
never see armed defects or the defect ledger.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

from ..orchestrator import (
    Attribution,
    BackendSet,
    GoalPredicate,
    INTENT_PATTERNS,
    MonitorVerdict,
    StepRecord,
    Subtask,
    causal_record,
)
from ..policy import Navigator, Node
from ..screen import (
    SCREEN_WIDTH,
    SCREEN_HEIGHT,
    Action,
    ActionPattern,
    AppModel,
    Observation,
    annotate_action,
    hit_test_elements,
)
from ..seeds import derive_seed
from ..tasks import TaskSpec

PROFILE_KINDS = ("oracle_perfect", "blind_navigator", "flaky_executor")
BOUNDARY_TEXT = "@#$%"
JITTER_SCALE = 1.5


@dataclass(frozen=True)
class ScriptedProfile:
    kind: str = "oracle_perfect"
    jitter_probability: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if not 0.0 <= self.jitter_probability <= 1.0:
            raise ValueError("jitter_probability must lie in [0, 1]")
        if self.kind != "flaky_executor" and self.jitter_probability:
            raise ValueError("jitter applies to the flaky_executor profile only")


class ScriptedPlanner:
    """Expands task steps into per-hop navigation subtasks with interleaved test intents.

    One instance per run: it remembers which steps are complete, which sites
    were reported defective and how often a step has been replanned.
    """

    def __init__(self, model: AppModel, intents: bool = True, max_attempts: int = 3):
        self.nav = Navigator(model)
        self.intents = intents
        self.max_attempts = max_attempts
        self.cursor = 0
        self.defective: Set[ActionPattern] = set()
        self.probed: Set[ActionPattern] = set()
        self.attempts: Dict[int, int] = {}
        self.final_ids: Dict[str, int] = {}
        self.last_plan: List[Subtask] = []
        self._seen = 0
        self._counter = 0
        self._rr = 0

    def _new_id(self) -> str:
        self._counter += 1
        return f"s{self._counter}"

    def plan(self, goal: TaskSpec, observation: Observation, history, reflection: Optional[Attribution]) -> List[Subtask]:
        fresh = list(history[self._seen :])
        self._seen = len(history)
        for s, outcome in fresh:
            if outcome == "DONE" and s.id in self.final_ids:
                self.cursor = max(self.cursor, self.final_ids[s.id] + 1)
        if fresh and fresh[-1][1] == "FAIL":
            failed = fresh[-1][0]
            if reflection is not None and reflection.value == "GUI_BUG":
                site = reflection.site or failed.via
                if site is not None:
                    self.defective.add(site)
                if failed.id in self.final_ids:
                    self.cursor = max(self.cursor, self.final_ids[failed.id] + 1)
            if failed.kind == "test_intent":
                # contain the intent: drop it, keep every other subtask as-is
                ids = [s.id for s in self.last_plan]
                if failed.id in ids:
                    if failed.step_ref is not None:
                        self.cursor = max(self.cursor, failed.step_ref + 1)
                    self.last_plan = self.last_plan[ids.index(failed.id) + 1 :]
                    return list(self.last_plan)
            elif reflection is None or reflection.value == "AGENT_ERROR":
                ref = failed.step_ref if failed.step_ref is not None else self.cursor
                self.attempts[ref] = self.attempts.get(ref, 0) + 1
                if self.attempts[ref] >= self.max_attempts:
                    self.cursor = max(self.cursor, ref + 1)
        self.last_plan = self._build(goal, observation)
        return list(self.last_plan)

    # construction ---------------------------------------------------------

    def _build(self, task: TaskSpec, obs: Observation) -> List[Subtask]:
        if obs.loading:
            loc: Node = (self.nav.model.initial_screen, False)
        else:
            loc = (obs.screen_id, obs.scrolled)
        avoid = tuple(sorted(self.defective, key=lambda p: (p.screen_id or "", p.element_id or "", p.kind)))
        task_sites = {(st.pattern.element_id, st.pattern.kind) for st in task.steps if st.pattern is not None}
        out: List[Subtask] = []
        for i in range(self.cursor, len(task.steps)):
            st = task.steps[i]
            if st.kind == "probe":
                pattern = "boundary_conditions" if st.pattern.kind == "type" else "state_validation"
                # anchor the probe to the screen the previous step ends on, so
                # an interleaved intent that wandered off is undone first
                here = self.nav.model.screens.get(loc[0])
                anchor = loc[0] if here is not None and here.element(st.pattern.element_id) is not None else None
                s = Subtask(
                    self._new_id(), "test_intent", st.description or f"probe {st.pattern.element_id}",
                    GoalPredicate("effect"), intent_pattern=pattern,
                    via=ActionPattern(anchor, st.pattern.element_id, st.pattern.kind),
                    text=st.text, direction=st.direction, avoid=avoid, step_ref=i,
                )
                self.final_ids[s.id] = i
                out.append(s)
                continue
            if st.kind == "goto":
                path = self.nav.screen_route(loc, st.screen_id, avoid)
            else:
                path = self.nav.route(loc, self.nav.element_goal(st.screen_id, st.pattern.element_id), avoid)
            if path is None and i == self.cursor:
                return []  # no route around the reported defect
            hops = [e for e in (path or []) if e.pattern.kind != "scroll"]
            last_hop = None
            for e in hops:
                target = e.target[0]
                last_hop = Subtask(
                    self._new_id(), "navigation", f"go to {self.nav.model.screens[target].name}",
                    GoalPredicate("screen", screen_id=target), via=e.pattern, avoid=avoid, step_ref=i,
                )
                out.append(last_hop)
                if self.intents:
                    intent = self._intent(target, task_sites)
                    if intent is not None:
                        out.append(intent)
            if path:
                loc = path[-1].target
            if st.kind == "goto":
                if last_hop is not None and last_hop.goal.screen_id == st.screen_id:
                    self.final_ids[last_hop.id] = i
                else:
                    s = Subtask(
                        self._new_id(), "navigation", st.description or f"reach {st.screen_id}",
                        GoalPredicate("screen", screen_id=st.screen_id), avoid=avoid, step_ref=i,
                    )
                    self.final_ids[s.id] = i
                    out.append(s)
                loc = (st.screen_id, False)
            else:
                s = Subtask(
                    self._new_id(), "navigation", st.description or f"{st.pattern.kind} {st.pattern.element_id}",
                    GoalPredicate("effect"), via=st.pattern, text=st.text, direction=st.direction,
                    avoid=avoid, step_ref=i,
                )
                self.final_ids[s.id] = i
                out.append(s)
                effect = self.nav.model.transitions.get(st.pattern)
                if effect is not None and effect.kind == "navigate":
                    loc = (effect.target, False)
        return out

    def _intent(self, screen_id: str, task_sites) -> Optional[Subtask]:
        for k in range(len(INTENT_PATTERNS)):
            pattern = INTENT_PATTERNS[(self._rr + k) % len(INTENT_PATTERNS)]
            site = self._intent_site(pattern, screen_id, task_sites)
            if site is None:
                continue
            self._rr = (self._rr + k + 1) % len(INTENT_PATTERNS)
            self.probed.add(site)
            el = self.nav.model.screens[screen_id].element(site.element_id)
            return Subtask(
                self._new_id(), "test_intent", f"{pattern.replace('_', ' ')}: {el.label or el.id}",
                GoalPredicate("effect"), intent_pattern=pattern, via=site,
                text=BOUNDARY_TEXT if site.kind == "type" else None,
            )
        return None

    def _intent_site(self, pattern: str, screen_id: str, task_sites) -> Optional[ActionPattern]:
        model = self.nav.model
        screen = model.screens[screen_id]
        for el in screen.all_elements():
            if not el.enabled:
                continue
            if pattern == "boundary_conditions":
                if el.kind != "text_field":
                    continue
                site = ActionPattern(screen_id, el.id, "type")
            else:
                site = ActionPattern(screen_id, el.id, "click")
                effect = model.transitions.get(site)
                wanted = "navigate" if pattern == "alternative_paths" else "mutate"
                if effect is None or effect.kind != wanted:
                    continue
            if (el.id, site.kind) in task_sites or site in self.defective or site in self.probed:
                continue
            return site
        return None


class ScriptedExecutor:
    """Center-of-bounds executor; the flaky profile jitters clicks off target and logs each slip."""

    def __init__(self, model: AppModel, profile: Optional[ScriptedProfile] = None):
        self.nav = Navigator(model)
        self.profile = profile or ScriptedProfile()
        self.slip_log: List[Dict[str, Any]] = []

    def act(self, subtask: Subtask, observation: Observation, tau: Sequence[StepRecord]) -> Action:
        action = self.nav.next_move(subtask, observation)
        p = self.profile.jitter_probability
        if action.kind != "click" or p <= 0.0:
            return action
        rng = random.Random(derive_seed(self.profile.rng_seed, "exec", observation.step_index))
        if rng.random() >= p:
            return action
        el = hit_test_elements(observation.elements, action.point)
        point = jitter_point(el.bounds, rng)
        entry = {"step": observation.step_index, "element": el.id, "point": list(point)}
        if entry not in self.slip_log:
            self.slip_log.append(entry)
        return Action("click", point=point)


def jitter_point(bounds, rng: random.Random) -> Tuple[int, int]:
    """A point 1.5 half-diagonals from the element's center, inside the screen."""
    cx = bounds.x + bounds.width / 2.0
    cy = bounds.y + bounds.height / 2.0
    radius = JITTER_SCALE * bounds.half_diagonal
    for _ in range(64):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        x = int(round(cx + radius * math.cos(angle)))
        y = int(round(cy + radius * math.sin(angle)))
        if 0 <= x < SCREEN_WIDTH and 0 <= y < SCREEN_HEIGHT and not bounds.contains((x, y)):
            return (x, y)
    # degenerate element covering most of the screen: fall back to a corner
    for corner in ((0, 0), (SCREEN_WIDTH - 1, 0), (0, SCREEN_HEIGHT - 1), (SCREEN_WIDTH - 1, SCREEN_HEIGHT - 1)):
        if not bounds.contains(corner):
            return corner
    raise ValueError("element covers the whole screen; cannot miss it")


class RuleMonitor:
    """Judges one step against the subtask's expectation without attributing a cause."""

    def __init__(self, model: AppModel):
        self.nav = Navigator(model)

    def check(self, subtask: Subtask, pre: Observation, action: Action, post: Observation) -> MonitorVerdict:
        goal = subtask.goal
        if post.loading:
            return MonitorVerdict("CONTINUE", "loading")
        if pre.loading:
            if goal.kind != "effect" and goal.holds(post):
                return MonitorVerdict("DONE", "goal reached after loading")
            return MonitorVerdict("CONTINUE", "loading resolved")
        prediction = self.nav.predict(pre, action)
        if goal.kind == "effect":
            via = subtask.via
            hit = annotate_action(pre, action).marker.hit
            on_screen = via.screen_id is None or via.screen_id == pre.screen_id
            if action.kind == via.kind and hit == via.element_id and on_screen:
                if prediction is not None and prediction.matches(post):
                    return MonitorVerdict("DONE", "expected effect observed")
                return MonitorVerdict("FAIL", "effect differs from expectation")
        elif goal.holds(post):
            return MonitorVerdict("DONE", "goal holds")
        if action.kind == "finished":
            if subtask.kind == "test_intent" and goal.kind == "effect" and post.element(subtask.via.element_id) is None:
                return MonitorVerdict("DONE", "probe target absent here")
            return MonitorVerdict("FAIL", "finished before the goal held")
        if prediction is not None and not prediction.matches(post):
            return MonitorVerdict("FAIL", "unexpected state transition")
        before = self.nav.distance(pre, subtask)
        after = self.nav.distance(post, subtask)
        if before is not None and after is not None and after < before:
            return MonitorVerdict("CONTINUE", f"progress {before}->{after}")
        return MonitorVerdict("FAIL", "no progress toward the goal")


class RuleReflector:
    """Marker check first (did the action land where intended?), then effect check."""

    def __init__(self, model: AppModel):
        self.nav = Navigator(model)

    def reflect(self, subtask: Subtask, tau: Sequence[StepRecord], observation: Observation) -> Attribution:
        if not tau:
            raise ValueError("reflect() requires a non-empty trajectory")
        rec = causal_record(tau)
        marker = rec.marker
        if rec.action.point is not None and not rec.pre.loading:
            intended = self.nav.intended_element(subtask, rec.pre)
            if intended is not None and marker.hit != intended:
                el = rec.pre.element(intended)
                if marker.hit is None:
                    b = el.bounds
                    hint = (
                        f"click inside the element bounds of {intended!r} "
                        f"(x {b.x}..{b.x + b.width}, y {b.y}..{b.y + b.height})"
                    )
                else:
                    hint = f"wrong element {marker.hit!r}; target {intended!r}"
                return Attribution("AGENT_ERROR", hint, ({"step": rec.index, "marker": marker.to_dict()},))
        prediction = self.nav.predict(rec.pre, rec.action)
        if prediction is not None and not prediction.matches(observation) and marker.hit is not None:
            site = ActionPattern(rec.pre.screen_id, marker.hit, rec.action.kind)
            evidence = {"step": rec.index, "marker": marker.to_dict(), "site": site.to_dict()}
            return Attribution("GUI_BUG", None, (evidence,))
        return Attribution(
            "AGENT_ERROR",
            "re-plan the route from the current screen",
            ({"step": rec.index, "marker": marker.to_dict()},),
        )


class BlindReflector:
    """Attributes every failure to the agent; never declares a defect."""

    def reflect(self, subtask: Subtask, tau: Sequence[StepRecord], observation: Observation) -> Attribution:
        if not tau:
            raise ValueError("reflect() requires a non-empty trajectory")
        rec = tau[-1]
        return Attribution("AGENT_ERROR", "retry the action", ({"step": rec.index, "marker": rec.marker.to_dict()},))


def scripted_backends(model: AppModel, profile: Optional[ScriptedProfile] = None, intents: bool = True) -> BackendSet:
    """A fresh orchestrated backend set for one run."""
    profile = profile or ScriptedProfile()
    base = model.base
    reflector = BlindReflector() if profile.kind == "blind_navigator" else RuleReflector(base)
    return BackendSet(
        planner=ScriptedPlanner(base, intents=intents),
        executor=ScriptedExecutor(base, profile),
        monitor=RuleMonitor(base),
        reflector=reflector,
        mode="orchestrated",
    )
