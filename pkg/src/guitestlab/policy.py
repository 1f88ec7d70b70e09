"""Route finding and effect prediction over an app model's declared transitions.

Everything here reads the declared model only; armed defects are invisible.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Tuple

from .screen import (
    Action,
    ActionPattern,
    AppModel,
    Element,
    Observation,
    hit_test_elements,
    resolve_value,
)

Node = Tuple[str, bool]  # (screen id, scrolled)


@dataclass(frozen=True)
class Edge:
    source: Node
    target: Node
    pattern: ActionPattern  # element-free for scroll / press_home
    direction: Optional[str] = None


@dataclass(frozen=True)
class Prediction:
    screen_id: str
    scrolled: bool
    variables: Dict[str, Any]

    def matches(self, obs: Observation) -> bool:
        return (
            not obs.loading
            and obs.screen_id == self.screen_id
            and obs.scrolled == self.scrolled
            and obs.variables == self.variables
        )


def action_for(element: Element, kind: str, text: Optional[str] = None) -> Action:
    """A center-of-bounds action on ``element``."""
    x, y = element.bounds.center
    if kind == "type":
        return Action("type", point=(x, y), text=text if text is not None else "")
    return Action(kind, point=(x, y))


class Navigator:
    def __init__(self, model: AppModel):
        self.model = model.base

    # graph -----------------------------------------------------------------

    def edges_from(self, node: Node, avoid: FrozenSet[ActionPattern] = frozenset()) -> List[Edge]:
        screen_id, scrolled = node
        screen = self.model.screens[screen_id]
        out: List[Edge] = []
        for el in screen.visible(scrolled):
            if not el.enabled:
                continue
            for kind in ("click", "long_press"):
                pattern = ActionPattern(screen_id, el.id, kind)
                effect = self.model.transitions.get(pattern)
                if effect is not None and effect.kind == "navigate" and pattern not in avoid:
                    out.append(Edge(node, (effect.target, False), pattern))
        if screen.scroll_elements:
            direction = "up" if scrolled else "down"
            out.append(Edge(node, (screen_id, not scrolled), ActionPattern(screen_id, None, "scroll"), direction))
        if screen_id != self.model.initial_screen or scrolled:
            out.append(Edge(node, (self.model.initial_screen, False), ActionPattern(screen_id, None, "press_home")))
        return out

    def route(self, start: Node, is_goal, avoid: Iterable[ActionPattern] = ()) -> Optional[List[Edge]]:
        """Shortest edge list from ``start`` to the first node satisfying ``is_goal`` (BFS, stable order)."""
        avoid = frozenset(avoid)
        if is_goal(start):
            return []
        parent: Dict[Node, Tuple[Node, Edge]] = {}
        seen = {start}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for edge in self.edges_from(node, avoid):
                if edge.target in seen:
                    continue
                seen.add(edge.target)
                parent[edge.target] = (node, edge)
                if is_goal(edge.target):
                    path = []
                    cur = edge.target
                    while cur != start:
                        prev, e = parent[cur]
                        path.append(e)
                        cur = prev
                    return list(reversed(path))
                queue.append(edge.target)
        return None

    def screen_route(self, start: Node, target: str, avoid: Iterable[ActionPattern] = ()) -> Optional[List[Edge]]:
        return self.route(start, lambda n: n[0] == target, avoid)

    def element_goal(self, screen_id: Optional[str], element_id: str):
        def is_goal(node: Node) -> bool:
            if screen_id is not None and node[0] != screen_id:
                return False
            return any(e.id == element_id for e in self.model.screens[node[0]].visible(node[1]))

        return is_goal

    def edge_action(self, edge: Edge) -> Action:
        if edge.pattern.kind == "scroll":
            return Action("scroll", direction=edge.direction)
        if edge.pattern.kind == "press_home":
            return Action("press_home")
        el = self.model.screens[edge.source[0]].element(edge.pattern.element_id)
        return action_for(el, edge.pattern.kind)

    # prediction ------------------------------------------------------------

    def predict(self, obs: Observation, action: Action) -> Optional[Prediction]:
        """Post-state the declared model expects; None when it cannot say (loading, press_back)."""
        if obs.loading or action.kind == "press_back":
            return None
        variables = dict(obs.variables)
        screen_id, scrolled = obs.screen_id, obs.scrolled
        screen = self.model.screens.get(screen_id)
        if screen is None:
            return None
        element = None
        if action.point is not None and action.kind in ("click", "long_press", "type"):
            try:
                element = hit_test_elements(obs.elements, action.point)
            except ValueError:
                return None
        if element is not None and element.enabled:
            effect = self.model.transitions.get(ActionPattern(screen_id, element.id, action.kind))
            if effect is not None and effect.kind == "navigate":
                return Prediction(effect.target, False, variables)
            if effect is not None and effect.kind == "mutate":
                current = variables.get(effect.variable)
                variables[effect.variable] = resolve_value(effect.value, current, action, obs.variables)
            return Prediction(screen_id, scrolled, variables)
        if action.kind == "scroll" and screen.scroll_elements:
            if action.direction == "down":
                scrolled = True
            elif action.direction == "up":
                scrolled = False
        elif action.kind in ("press_home", "open_app"):
            return Prediction(self.model.initial_screen, False, variables)
        return Prediction(screen_id, scrolled, variables)

    # subtask helpers ----------------------------------------------------------

    def target_of(self, subtask) -> Tuple[Optional[str], Optional[str]]:
        """(screen, element) the subtask ultimately acts on or reaches."""
        goal = subtask.goal
        if goal.kind == "effect":
            return subtask.via.screen_id, subtask.via.element_id
        if goal.kind == "element":
            return goal.screen_id, goal.element_id
        if goal.kind == "screen":
            return goal.screen_id, None
        return None, None

    def _goal_test(self, subtask):
        goal = subtask.goal
        if goal.kind == "effect":
            return self.element_goal(subtask.via.screen_id, subtask.via.element_id)
        if goal.kind == "element":
            return self.element_goal(goal.screen_id, goal.element_id)
        if goal.kind == "screen":
            return lambda n: n[0] == goal.screen_id
        # variable goal: reach any element whose declared mutate effect sets the value
        sites = [
            p for p, e in self.model.transitions.items()
            if e.kind == "mutate" and e.variable == goal.variable and e.value == goal.value
        ]
        return lambda n: any(self.element_goal(p.screen_id, p.element_id)(n) for p in sites)

    def distance(self, obs: Observation, subtask) -> Optional[int]:
        if obs.loading:
            return None
        if subtask.goal.kind != "effect" and subtask.goal.holds(obs):
            return 0
        path = self.route((obs.screen_id, obs.scrolled), self._goal_test(subtask), subtask.avoid)
        if path is None:
            return None
        return len(path) + (1 if subtask.goal.kind in ("effect", "variable") else 0)

    def intended_element(self, subtask, obs: Observation) -> Optional[str]:
        action = self.next_move(subtask, obs)
        if action.point is None:
            return None
        el = hit_test_elements(obs.elements, action.point)
        return el.id if el is not None else None

    def next_move(self, subtask, obs: Observation) -> Action:
        """Deterministic next action toward the subtask goal."""
        if obs.loading:
            return Action("wait")
        goal = subtask.goal
        node = (obs.screen_id, obs.scrolled)
        via = subtask.via
        if goal.kind == "effect":
            el = obs.element(via.element_id)
            if el is not None and (via.screen_id is None or via.screen_id == obs.screen_id):
                return action_for(el, via.kind, subtask.text)
            if via.screen_id is None:
                screen = self.model.screens[obs.screen_id]
                if screen.element(via.element_id) is not None and screen.scroll_elements:
                    return Action("scroll", direction="up" if obs.scrolled else "down")
                return Action("finished")
            path = self.route(node, self._goal_test(subtask), subtask.avoid)
        else:
            if goal.holds(obs):
                return Action("finished")
            if via is not None and via.screen_id == obs.screen_id:
                el = obs.element(via.element_id)
                if el is not None and el.enabled:
                    return action_for(el, via.kind, subtask.text)
            path = self.route(node, self._goal_test(subtask), subtask.avoid)
        if not path:
            return Action("press_back")
        return self.edge_action(path[0])
