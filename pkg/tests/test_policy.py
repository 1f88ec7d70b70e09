from __future__ import annotations

import random

import networkx as nx
import pytest

from guitestlab.demo import demo_apps, random_app
from guitestlab.orchestrator import GoalPredicate, Subtask
from guitestlab.policy import Navigator
from guitestlab.screen import Action, ActionPattern, reset


def test_route_reaches_every_reachable_screen_when_replayed():
    # the environment itself is the oracle: replaying the route must land on the target
    for seed in range(15):
        model = random_app(random.Random(seed), f"p{seed}")
        nav = Navigator(model)
        for target in model.screens:
            path = nav.screen_route((model.initial_screen, False), target)
            if path is None:
                continue
            env, obs = reset(model)
            for edge in path:
                obs = env.apply_action(nav.edge_action(edge))
            assert obs.screen_id == target


def test_route_length_matches_networkx_shortest_path():
    for seed in range(15):
        model = random_app(random.Random(seed), f"q{seed}")
        g = nx.DiGraph()
        g.add_nodes_from(model.screens)
        for p, e in model.transitions.items():
            if e.kind == "navigate":
                g.add_edge(p.screen_id, e.target)
        nav = Navigator(model)
        start = model.initial_screen
        lengths = nx.single_source_shortest_path_length(g, start)
        for target in model.screens:
            path = nav.screen_route((start, False), target)
            if target in lengths:
                # random apps have no scroll lists, and press_home only leads back to the start
                assert path is not None and len(path) == lengths[target]
            else:
                assert path is None


def test_route_avoids_reported_sites():
    model = demo_apps()["settings"]
    nav = Navigator(model)
    backup = ActionPattern("st_main", "st_backup", "click")
    path = nav.screen_route((model.initial_screen, False), "st_backup_page")
    assert path is not None and path[-1].pattern == backup
    assert nav.screen_route((model.initial_screen, False), "st_backup_page", avoid=[backup]) is None


def test_predict_follows_declared_transition(mini_model):
    nav = Navigator(mini_model)
    _, obs = reset(mini_model)
    pred = nav.predict(obs, Action.click(300, 375))
    assert pred.screen_id == "detail"
    assert nav.predict(obs, Action("press_back")) is None


def test_next_move_finishes_when_goal_holds(mini_model):
    nav = Navigator(mini_model)
    _, obs = reset(mini_model)
    s = Subtask("s1", "navigation", "stay home", GoalPredicate("screen", screen_id="home"))
    assert nav.next_move(s, obs).kind == "finished"


def test_next_move_waits_while_loading(mini_model):
    from guitestlab.screen import Environment, NoiseConfig

    env = Environment(mini_model, NoiseConfig(1.0, 2))
    env.reset(0)
    obs = env.apply_action(Action.click(300, 375))
    s = Subtask("s1", "navigation", "go", GoalPredicate("screen", screen_id="detail"))
    assert obs.loading and Navigator(mini_model).next_move(s, obs).kind == "wait"


def test_next_move_backs_out_when_unroutable(mini_model):
    nav = Navigator(mini_model)
    _, obs = reset(mini_model)
    s = Subtask("s1", "navigation", "go", GoalPredicate("screen", screen_id="detail"),
                avoid=(ActionPattern("home", "open", "click"),))
    assert nav.next_move(s, obs).kind == "press_back"
