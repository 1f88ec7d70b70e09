from __future__ import annotations

import pytest

from guitestlab.demo import demo_bench
from guitestlab.screen import ActionPattern, AppModel, Bounds, Effect, Element, Screen


def two_screen_model() -> AppModel:
    home = Screen(
        "home",
        "Home",
        (
            Element("open", "button", "Open details", Bounds(100, 300, 400, 150)),
            Element("name", "text_field", "Name", Bounds(100, 600, 600, 150)),
            Element("off", "button", "Disabled", Bounds(100, 900, 400, 150), enabled=False),
        ),
    )
    detail = Screen(
        "detail",
        "Details",
        (
            Element("back", "button", "Back", Bounds(100, 300, 400, 150)),
            Element("star", "toggle", "Star", Bounds(100, 600, 400, 150)),
        ),
    )
    transitions = {
        ActionPattern("home", "open", "click"): Effect.navigate("detail"),
        ActionPattern("home", "name", "type"): Effect.mutate("name", "$input"),
        ActionPattern("detail", "back", "click"): Effect.navigate("home"),
        ActionPattern("detail", "star", "click"): Effect.mutate("starred", "$toggle"),
    }
    return AppModel([home, detail], transitions, "home", {"name": "", "starred": False}, app_id="mini")


@pytest.fixture
def mini_model() -> AppModel:
    return two_screen_model()


@pytest.fixture(scope="session")
def demo():
    return demo_bench()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
