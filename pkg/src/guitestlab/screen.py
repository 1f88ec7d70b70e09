"""Deterministic simulated mobile-GUI environment.

Screens hold coordinate-grounded elements inside a fixed 1080x2400 pixel
space. Actions are resolved to elements by hit-testing, matched against the
model's declared transitions and applied as effects. Observations are
structured element lists rather than rendered pixels.
"""

from __future__ import annotations

import copy
import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

SCREEN_WIDTH = 1080
SCREEN_HEIGHT = 2400

APP_MODEL_SCHEMA = "app_model_v1"

ELEMENT_KINDS = ("button", "text_field", "list_item", "toggle", "link", "label")
# UI-TARS action set, plus ``answer`` for defect declaration and ``wait`` for
# riding out loading-delay noise.
ACTION_KINDS = (
    "click",
    "long_press",
    "type",
    "scroll",
    "drag",
    "open_app",
    "press_home",
    "press_back",
    "finished",
    "answer",
    "wait",
)
POINT_KINDS = ("click", "long_press")
DIRECTIONS = ("up", "down", "left", "right")
EFFECT_KINDS = ("navigate", "mutate", "none")

LOADING_SCREEN_ID = "__loading__"


class ModelValidationError(ValueError):
    """Raised when an app model (or derived artifact) violates its invariants."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid model: " + "; ".join(self.problems))


class LifecycleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Bounds:
    x: int
    y: int
    width: int
    height: int

    def contains(self, point: Tuple[int, int]) -> bool:
        px, py = point
        return self.x <= px < self.x + self.width and self.y <= py < self.y + self.height

    def overlaps(self, other: "Bounds") -> bool:
        return not (
            self.x + self.width <= other.x
            or other.x + other.width <= self.x
            or self.y + self.height <= other.y
            or other.y + other.height <= self.y
        )

    @property
    def center(self) -> Tuple[int, int]:
        return (self.x + self.width // 2, self.y + self.height // 2)

    @property
    def half_diagonal(self) -> float:
        return ((self.width**2 + self.height**2) ** 0.5) / 2.0

    def in_space(self) -> bool:
        return (
            self.width > 0
            and self.height > 0
            and self.x >= 0
            and self.y >= 0
            and self.x + self.width <= SCREEN_WIDTH
            and self.y + self.height <= SCREEN_HEIGHT
        )

    def to_list(self) -> List[int]:
        return [self.x, self.y, self.width, self.height]


@dataclass(frozen=True)
class Element:
    id: str
    kind: str
    label: str
    bounds: Bounds
    enabled: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind,
            "label": self.label,
            "bounds": self.bounds.to_list(),
            "enabled": self.enabled,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Element":
        x, y, w, h = data["bounds"]
        return cls(
            id=str(data["id"]),
            kind=str(data["kind"]),
            label=str(data.get("label", "")),
            bounds=Bounds(int(x), int(y), int(w), int(h)),
            enabled=bool(data.get("enabled", True)),
        )


@dataclass(frozen=True)
class Screen:
    """A screen; ``scroll_elements`` is the alternate list revealed by scrolling down."""

    id: str
    name: str
    elements: Tuple[Element, ...] = ()
    scrollable: bool = False
    scroll_elements: Tuple[Element, ...] = ()

    def visible(self, scrolled: bool = False) -> Tuple[Element, ...]:
        if scrolled and self.scroll_elements:
            return self.scroll_elements
        return self.elements

    def all_elements(self) -> Tuple[Element, ...]:
        return self.elements + self.scroll_elements

    def element(self, element_id: str) -> Optional[Element]:
        for el in self.all_elements():
            if el.id == element_id:
                return el
        return None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "id": self.id,
            "name": self.name,
            "elements": [e.to_dict() for e in self.elements],
            "scrollable": self.scrollable,
        }
        if self.scroll_elements:
            data["scroll_elements"] = [e.to_dict() for e in self.scroll_elements]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Screen":
        return cls(
            id=str(data["id"]),
            name=str(data.get("name", data["id"])),
            elements=tuple(Element.from_dict(e) for e in data.get("elements", [])),
            scrollable=bool(data.get("scrollable", False)),
            scroll_elements=tuple(Element.from_dict(e) for e in data.get("scroll_elements", [])),
        )


@dataclass(frozen=True)
class Action:
    kind: str
    point: Optional[Tuple[int, int]] = None
    text: Optional[str] = None
    direction: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind: {self.kind!r}")
        if self.point is not None:
            if len(self.point) != 2 or not all(isinstance(v, int) and not isinstance(v, bool) for v in self.point):
                raise ValueError(f"action point must be two integral pixels, got {self.point!r}")
            object.__setattr__(self, "point", (self.point[0], self.point[1]))
        if self.kind in POINT_KINDS and self.point is None:
            raise ValueError(f"{self.kind} action requires a point")
        if self.kind in ("type", "answer") and self.text is None:
            raise ValueError(f"{self.kind} action requires text")
        if self.kind in ("scroll", "drag") and self.direction not in DIRECTIONS:
            raise ValueError(f"{self.kind} action requires a direction in {DIRECTIONS}")

    @classmethod
    def click(cls, x: int, y: int) -> "Action":
        return cls("click", point=(x, y))

    @classmethod
    def answer(cls, text: str = "GUI_BUG") -> "Action":
        return cls("answer", text=text)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"action": self.kind}
        if self.point is not None:
            data["point"] = [self.point[0], self.point[1]]
        if self.text is not None:
            data["text"] = self.text
        if self.direction is not None:
            data["direction"] = self.direction
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Action":
        point = data.get("point")
        return cls(
            kind=data["action"],
            point=tuple(point) if point is not None else None,
            text=data.get("text"),
            direction=data.get("direction"),
        )


@dataclass(frozen=True)
class ActionPattern:
    """(screen, element, action kind) triple used for transitions, triggers and preconditions.

    ``screen_id`` may be None for screen-less probes; ``element_id`` is None for
    element-free actions such as ``press_home``.
    """

    screen_id: Optional[str]
    element_id: Optional[str]
    kind: str

    def matches(self, screen_id: Optional[str], element_id: Optional[str], kind: str) -> bool:
        if self.kind != kind or self.element_id != element_id:
            return False
        return self.screen_id is None or self.screen_id == screen_id

    def to_dict(self) -> Dict[str, Any]:
        return {"screen": self.screen_id, "element": self.element_id, "action": self.kind}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ActionPattern":
        return cls(data.get("screen"), data.get("element"), data["action"])


@dataclass(frozen=True)
class Effect:
    kind: str
    target: Optional[str] = None
    variable: Optional[str] = None
    value: Any = None

    def __post_init__(self):
        if self.kind not in EFFECT_KINDS:
            raise ValueError(f"unknown effect kind: {self.kind!r}")
        if self.kind == "navigate" and not self.target:
            raise ValueError("navigate effect requires a target screen")
        if self.kind == "mutate" and not self.variable:
            raise ValueError("mutate effect requires a variable")

    @classmethod
    def navigate(cls, target: str) -> "Effect":
        return cls("navigate", target=target)

    @classmethod
    def mutate(cls, variable: str, value: Any) -> "Effect":
        return cls("mutate", variable=variable, value=value)

    @classmethod
    def none(cls) -> "Effect":
        return cls("none")

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "navigate":
            return {"kind": "navigate", "target": self.target}
        if self.kind == "mutate":
            return {"kind": "mutate", "variable": self.variable, "value": self.value}
        return {"kind": "none"}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Effect":
        return cls(data["kind"], target=data.get("target"), variable=data.get("variable"), value=data.get("value"))

    def __hash__(self):
        return hash((self.kind, self.target, self.variable, json.dumps(self.value, sort_keys=True)))


def resolve_value(value: Any, current: Any, action: Optional[Action], variables: Dict[str, Any]) -> Any:
    """Resolve the value sentinels a mutate effect may carry.

    ``"$input"`` is the typed text, ``"$toggle"`` negates the current value and
    ``"$ref:<name>"`` copies another variable.
    """
    if isinstance(value, str):
        if value == "$input":
            return action.text if action is not None and action.text is not None else ""
        if value == "$toggle":
            return not bool(current)
        if value.startswith("$ref:"):
            return copy.deepcopy(variables.get(value[5:]))
    return copy.deepcopy(value)


def hit_test(screen: Screen, point: Tuple[int, int], scrolled: bool = False) -> Optional[Element]:
    return hit_test_elements(screen.visible(scrolled), point)


def hit_test_elements(elements: Iterable[Element], point: Tuple[int, int]) -> Optional[Element]:
    px, py = point
    if not (0 <= px < SCREEN_WIDTH and 0 <= py < SCREEN_HEIGHT):
        raise ValueError(f"point {point} outside the {SCREEN_WIDTH}x{SCREEN_HEIGHT} coordinate space")
    for el in elements:
        if el.bounds.contains(point):
            return el
    return None


@dataclass(frozen=True)
class Observation:
    screen_id: str
    screen_name: str
    elements: Tuple[Element, ...]
    state_digest: str
    step_index: int
    variables: Dict[str, Any] = field(default_factory=dict)
    scrolled: bool = False

    @property
    def loading(self) -> bool:
        return self.screen_id == LOADING_SCREEN_ID

    def element(self, element_id: Optional[str]) -> Optional[Element]:
        for el in self.elements:
            if el.id == element_id:
                return el
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "screen_id": self.screen_id,
            "screen_name": self.screen_name,
            "elements": [e.to_dict() for e in self.elements],
            "state_digest": self.state_digest,
            "step_index": self.step_index,
            "variables": self.variables,
            "scrolled": self.scrolled,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Observation":
        return cls(
            screen_id=data["screen_id"],
            screen_name=data.get("screen_name", data["screen_id"]),
            elements=tuple(Element.from_dict(e) for e in data.get("elements", [])),
            state_digest=data["state_digest"],
            step_index=int(data["step_index"]),
            variables=dict(data.get("variables", {})),
            scrolled=bool(data.get("scrolled", False)),
        )


@dataclass(frozen=True)
class Marker:
    point: Optional[Tuple[int, int]]
    kind: str
    hit: Optional[str]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point": list(self.point) if self.point is not None else None,
            "kind": self.kind,
            "hit": self.hit,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Marker":
        point = data.get("point")
        return cls(tuple(point) if point is not None else None, data["kind"], data.get("hit"))


@dataclass(frozen=True)
class AnnotatedObservation:
    observation: Observation
    marker: Marker


def annotate_action(observation: Observation, action: Action) -> AnnotatedObservation:
    """Mark the action's interaction point on the pre-action observation."""
    hit = None
    if action.point is not None and not observation.loading:
        el = hit_test_elements(observation.elements, action.point)
        hit = el.id if el is not None else None
    return AnnotatedObservation(observation, Marker(action.point, action.kind, hit))


class AppModel:
    """The app under test: screens, declared transitions, initial screen and variables."""

    def __init__(
        self,
        screens: Iterable[Screen],
        transitions: Dict[ActionPattern, Effect],
        initial_screen: str,
        variables: Optional[Dict[str, Any]] = None,
        app_id: str = "app",
        name: str = "",
    ):
        self.screens: Dict[str, Screen] = {}
        self._duplicate_screens: List[str] = []
        for s in screens:
            if s.id in self.screens:
                self._duplicate_screens.append(s.id)
            self.screens[s.id] = s
        self.transitions = dict(transitions)
        self.initial_screen = initial_screen
        self.variables = dict(variables or {})
        self.app_id = app_id
        self.name = name or app_id

    @property
    def base(self) -> "AppModel":
        return self

    def screen(self, screen_id: str) -> Screen:
        return self.screens[screen_id]

    def validate(self) -> List[str]:
        problems: List[str] = []
        for sid in self._duplicate_screens:
            problems.append(f"duplicate screen id {sid!r}")
        if self.initial_screen not in self.screens:
            problems.append(f"initial_screen {self.initial_screen!r} does not exist")
        for screen in self.screens.values():
            seen = set()
            for el in screen.all_elements():
                if el.id in seen:
                    problems.append(f"duplicate element id {el.id!r} on screen {screen.id!r}")
                seen.add(el.id)
                if el.kind not in ELEMENT_KINDS:
                    problems.append(f"element {screen.id}/{el.id} has unknown kind {el.kind!r}")
                if not el.bounds.in_space():
                    problems.append(f"element {screen.id}/{el.id} bounds outside coordinate space")
            for group in (screen.elements, screen.scroll_elements):
                for i, a in enumerate(group):
                    for b in group[i + 1 :]:
                        if a.bounds.overlaps(b.bounds):
                            problems.append(f"elements {a.id!r} and {b.id!r} overlap on screen {screen.id!r}")
            if screen.scroll_elements and not screen.scrollable:
                problems.append(f"screen {screen.id!r} declares scroll_elements but is not scrollable")
        for pattern, effect in self.transitions.items():
            if pattern.screen_id not in self.screens:
                problems.append(f"transition source screen {pattern.screen_id!r} does not exist")
                continue
            if pattern.element_id is not None and self.screens[pattern.screen_id].element(pattern.element_id) is None:
                problems.append(f"transition element {pattern.screen_id}/{pattern.element_id} does not exist")
            if pattern.kind not in ACTION_KINDS:
                problems.append(f"transition action kind {pattern.kind!r} unknown")
            if effect.kind == "navigate" and effect.target not in self.screens:
                problems.append(f"transition {pattern.screen_id}/{pattern.element_id} navigates to missing screen {effect.target!r}")
        return problems

    def check(self) -> None:
        problems = self.validate()
        if problems:
            raise ModelValidationError(problems)

    def resolve(self, screen_id: str, element_id: str, kind: str, events: Sequence[Tuple]) -> Tuple[Optional[Effect], Optional[str]]:
        """Look up the effect for an action; returns (effect, triggered defect id)."""
        return self.transitions.get(ActionPattern(screen_id, element_id, kind)), None

    def new_ledger(self):
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": APP_MODEL_SCHEMA,
            "app_id": self.app_id,
            "name": self.name,
            "initial_screen": self.initial_screen,
            "variables": self.variables,
            "screens": [s.to_dict() for s in self.screens.values()],
            "transitions": [
                {**p.to_dict(), "effect": e.to_dict()} for p, e in self.transitions.items()
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AppModel":
        if data.get("schema") != APP_MODEL_SCHEMA:
            raise ModelValidationError([f"unsupported app model schema {data.get('schema')!r}"])
        transitions = {}
        for t in data.get("transitions", []):
            transitions[ActionPattern(t["screen"], t.get("element"), t["action"])] = Effect.from_dict(t["effect"])
        return cls(
            screens=[Screen.from_dict(s) for s in data.get("screens", [])],
            transitions=transitions,
            initial_screen=data["initial_screen"],
            variables=data.get("variables", {}),
            app_id=data.get("app_id", "app"),
            name=data.get("name", ""),
        )


@dataclass
class NoiseConfig:
    """Seeded loading-delay noise: with ``probability`` an effect is deferred 1..max_delay observations."""

    probability: float = 0.0
    max_delay: int = 2

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("noise probability must lie in [0, 1]")
        if self.max_delay < 1:
            raise ValueError("max_delay must be at least 1")


def state_digest(screen_id: str, scrolled: bool, stack: Sequence[str], variables: Dict[str, Any], loading: Any = None) -> str:
    payload = {
        "screen": screen_id,
        "scrolled": scrolled,
        "loading": loading,
        "stack": list(stack),
        "variables": variables,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Environment:
    """One simulated device. Owned by a single task run."""

    def __init__(self, model: AppModel, noise: Optional[NoiseConfig] = None):
        self.model = model
        self.noise = noise
        self.ledger = None
        self._ready = False

    def reset(self, seed: int = 0) -> Observation:
        self.model.base.check()
        base = self.model.base
        self.screen_id = base.initial_screen
        self.scrolled = False
        self.stack: List[str] = []
        self.variables = copy.deepcopy(base.variables)
        self.step_index = 0
        self.events: List[Tuple[Optional[str], Optional[str], str]] = []
        self._pending: Optional[Tuple[Effect, Action]] = None
        self._remaining = 0
        self._rng = random.Random(seed)
        self.ledger = self.model.new_ledger()
        self._ready = True
        return self.observe()

    @property
    def loading(self) -> bool:
        return self._pending is not None

    def digest(self) -> str:
        loading = None
        if self._pending is not None:
            loading = [self._remaining, self._pending[0].to_dict(), self._pending[1].to_dict()]
        return state_digest(self.screen_id, self.scrolled, self.stack, self.variables, loading)

    def observe(self) -> Observation:
        if not self._ready:
            raise LifecycleError("environment used before reset()")
        if self.loading:
            return Observation(
                screen_id=LOADING_SCREEN_ID,
                screen_name="Loading",
                elements=(),
                state_digest=self.digest(),
                step_index=self.step_index,
                variables=copy.deepcopy(self.variables),
            )
        screen = self.model.base.screens[self.screen_id]
        return Observation(
            screen_id=screen.id,
            screen_name=screen.name,
            elements=screen.visible(self.scrolled),
            state_digest=self.digest(),
            step_index=self.step_index,
            variables=copy.deepcopy(self.variables),
            scrolled=self.scrolled,
        )

    def apply_action(self, action: Action) -> Observation:
        if not self._ready:
            raise LifecycleError("apply_action() called before reset()")
        index = self.step_index
        if self.loading:
            self.events.append((LOADING_SCREEN_ID, None, action.kind))
            self._remaining -= 1
            if self._remaining <= 0:
                effect, origin = self._pending
                self._pending = None
                self._apply_effect(effect, origin)
            self.step_index += 1
            return self.observe()

        screen = self.model.base.screens[self.screen_id]
        element = None
        if action.point is not None and action.kind in ("click", "long_press", "type"):
            element = hit_test(screen, action.point, self.scrolled)

        event = (self.screen_id, element.id if element is not None else None, action.kind)
        effect: Optional[Effect] = None
        if element is not None and element.enabled:
            effect, defect_id = self.model.resolve(self.screen_id, element.id, action.kind, self.events)
            if defect_id is not None and self.ledger is not None:
                self.ledger.record(defect_id, index)
        elif action.kind == "scroll" and screen.scroll_elements:
            if action.direction == "down":
                self.scrolled = True
            elif action.direction == "up":
                self.scrolled = False
        elif action.kind == "press_back":
            if self.stack:
                self.screen_id = self.stack.pop()
                self.scrolled = False
        elif action.kind in ("press_home", "open_app"):
            self.screen_id = self.model.base.initial_screen
            self.stack = []
            self.scrolled = False

        if effect is not None and effect.kind != "none":
            if self.noise is not None and self.noise.probability > 0 and self._rng.random() < self.noise.probability:
                self._pending = (effect, action)
                self._remaining = self._rng.randint(1, self.noise.max_delay)
            else:
                self._apply_effect(effect, action)

        self.events.append(event)
        self.step_index += 1
        return self.observe()

    def _apply_effect(self, effect: Effect, action: Action) -> None:
        if effect.kind == "navigate":
            self.stack.append(self.screen_id)
            self.screen_id = effect.target
            self.scrolled = False
        elif effect.kind == "mutate":
            current = self.variables.get(effect.variable)
            self.variables[effect.variable] = resolve_value(effect.value, current, action, self.variables)


def reset(model: AppModel, seed: int = 0, noise: Optional[NoiseConfig] = None) -> Tuple[Environment, Observation]:
    env = Environment(model, noise)
    return env, env.reset(seed)
