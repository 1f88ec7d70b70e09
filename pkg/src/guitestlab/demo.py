"""Built-in demo apps and a seeded random bench generator.

The demo bench covers every defect cell once or twice: an unresponsive
"Clear Completed" button, a mislinked "Backup and Restore" entry, a dead
dark-mode toggle, a save dialog that drops the typed file name, a waypoint
saved with swapped digits and a report dialog whose close button lands on
the wrong screen.
"""

from __future__ import annotations

import random
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .bench import Bench
from .defects import DefectSpec, inject
from .policy import Navigator
from .screen import (
    Action,
    ActionPattern,
    AppModel,
    Bounds,
    Effect,
    Element,
    Screen,
)
from .synth import (
    ReproductionTrajectory,
    synthesize_defect_oriented,
    synthesize_tasks,
)

ROW_X, ROW_W, ROW_H, ROW_Y0, ROW_STEP = 90, 900, 160, 300, 220
MAX_ROWS = 9

Item = Tuple[str, str, str]  # (element id, kind, label)


def layout(items: Sequence[Item]) -> Tuple[Element, ...]:
    """Stack items as full-width rows down the screen."""
    if len(items) > MAX_ROWS:
        raise ValueError(f"at most {MAX_ROWS} rows fit on a screen")
    return tuple(
        Element(eid, kind, label, Bounds(ROW_X, ROW_Y0 + i * ROW_STEP, ROW_W, ROW_H))
        for i, (eid, kind, label) in enumerate(items)
    )


def screen(sid: str, name: str, items: Sequence[Item], scroll_items: Sequence[Item] = ()) -> Screen:
    return Screen(sid, name, layout(items), bool(scroll_items), layout(scroll_items))


def nav(src: str, eid: str, target: str, kind: str = "click"):
    return ActionPattern(src, eid, kind), Effect.navigate(target)


def mut(src: str, eid: str, var: str, value, kind: str = "click"):
    return ActionPattern(src, eid, kind), Effect.mutate(var, value)


def _app(app_id: str, name: str, screens: Iterable[Screen], transitions, initial: str, variables=None) -> AppModel:
    model = AppModel(list(screens), dict(transitions), initial, variables or {}, app_id=app_id, name=name)
    model.check()
    return model


def tasks_app() -> AppModel:
    return _app(
        "tasks", "Tasks",
        [
            screen("tk_home", "Task List", [
                ("tk_add", "button", "Add Task"), ("tk_first", "list_item", "Buy milk"),
                ("tk_filter", "button", "Filter"), ("tk_clear", "button", "Clear Completed"),
                ("tk_settings", "button", "Settings"),
            ]),
            screen("tk_new", "New Task", [
                ("tk_title", "text_field", "Title"), ("tk_save", "button", "Save"), ("tk_cancel", "button", "Cancel"),
            ]),
            screen("tk_detail", "Task Detail", [
                ("tk_done", "toggle", "Completed"), ("tk_detail_back", "button", "Back to list"),
            ]),
            screen("tk_filters", "Filter", [
                ("tk_show_all", "button", "Show all"), ("tk_show_done", "button", "Show completed"),
                ("tk_filter_ok", "button", "Done"),
            ]),
            screen("tk_prefs", "Settings", [
                ("tk_about", "link", "About"), ("tk_prefs_home", "button", "Back"),
            ]),
            screen("tk_about_page", "About", [("tk_about_close", "button", "Close")]),
        ],
        [
            nav("tk_home", "tk_add", "tk_new"), nav("tk_home", "tk_first", "tk_detail"),
            nav("tk_home", "tk_filter", "tk_filters"), mut("tk_home", "tk_clear", "completed", 0),
            nav("tk_home", "tk_settings", "tk_prefs"),
            mut("tk_new", "tk_title", "draft_title", "$input", "type"), nav("tk_new", "tk_save", "tk_home"),
            nav("tk_new", "tk_cancel", "tk_home"),
            mut("tk_detail", "tk_done", "first_done", "$toggle"), nav("tk_detail", "tk_detail_back", "tk_home"),
            mut("tk_filters", "tk_show_all", "filter", "all"), mut("tk_filters", "tk_show_done", "filter", "done"),
            nav("tk_filters", "tk_filter_ok", "tk_home"),
            nav("tk_prefs", "tk_about", "tk_about_page"), nav("tk_prefs", "tk_prefs_home", "tk_home"),
            nav("tk_about_page", "tk_about_close", "tk_prefs"),
        ],
        "tk_home",
        {"completed": 3, "draft_title": "", "first_done": False, "filter": "all"},
    )


def settings_app() -> AppModel:
    return _app(
        "settings", "Settings",
        [
            screen("st_main", "Settings", [
                ("st_display", "list_item", "Display"), ("st_network", "list_item", "Network Settings"),
                ("st_backup", "list_item", "Backup and Restore"), ("st_account", "list_item", "Account"),
            ], scroll_items=[
                ("st_storage", "list_item", "Storage"),
            ]),
            screen("st_display_page", "Display", [
                ("st_dark", "toggle", "Dark mode"), ("st_font", "button", "Large font"),
                ("st_display_back", "button", "Back"),
            ]),
            screen("st_network_page", "Network Settings", [
                ("st_wifi", "toggle", "Wi-Fi"), ("st_network_back", "button", "Back"),
            ]),
            screen("st_backup_page", "Backup and Restore", [
                ("st_backup_now", "button", "Back up now"), ("st_backup_back", "button", "Back"),
            ]),
            screen("st_account_page", "Account", [
                ("st_sign_out", "button", "Sign out"), ("st_account_back", "button", "Back"),
            ]),
            screen("st_storage_page", "Storage", [
                ("st_clear_cache", "button", "Clear cache"), ("st_storage_back", "button", "Back"),
            ]),
        ],
        [
            nav("st_main", "st_display", "st_display_page"), nav("st_main", "st_network", "st_network_page"),
            nav("st_main", "st_backup", "st_backup_page"), nav("st_main", "st_account", "st_account_page"),
            nav("st_main", "st_storage", "st_storage_page"),
            mut("st_display_page", "st_dark", "dark_mode", "$toggle"),
            mut("st_display_page", "st_font", "font", "large"),
            nav("st_display_page", "st_display_back", "st_main"),
            mut("st_network_page", "st_wifi", "wifi", "$toggle"), nav("st_network_page", "st_network_back", "st_main"),
            mut("st_backup_page", "st_backup_now", "last_backup", "now"),
            nav("st_backup_page", "st_backup_back", "st_main"),
            mut("st_account_page", "st_sign_out", "signed_in", False),
            nav("st_account_page", "st_account_back", "st_main"),
            mut("st_storage_page", "st_clear_cache", "cache_mb", 0),
            nav("st_storage_page", "st_storage_back", "st_main"),
        ],
        "st_main",
        {"dark_mode": False, "font": "normal", "wifi": True, "last_backup": None, "signed_in": True, "cache_mb": 120},
    )


def files_app() -> AppModel:
    return _app(
        "files", "Files",
        [
            screen("fl_browser", "Files", [
                ("fl_new", "button", "New file"), ("fl_docs", "list_item", "Documents"),
                ("fl_recent", "list_item", "Recent"), ("fl_trash", "list_item", "Trash"),
                ("fl_info", "button", "Storage info"),
            ]),
            screen("fl_editor", "New File", [
                ("fl_name", "text_field", "File name"), ("fl_save", "button", "Save"),
                ("fl_cancel", "button", "Cancel"),
            ]),
            screen("fl_docs_page", "Documents", [("fl_docs_up", "button", "Up")]),
            screen("fl_recent_page", "Recent", [("fl_recent_clear", "button", "Clear history"), ("fl_recent_up", "button", "Up")]),
            screen("fl_trash_page", "Trash", [("fl_empty", "button", "Empty trash"), ("fl_trash_up", "button", "Up")]),
            screen("fl_info_page", "Storage Info", [("fl_info_close", "button", "Close")]),
        ],
        [
            nav("fl_browser", "fl_new", "fl_editor"), nav("fl_browser", "fl_docs", "fl_docs_page"),
            nav("fl_browser", "fl_recent", "fl_recent_page"), nav("fl_browser", "fl_trash", "fl_trash_page"),
            nav("fl_browser", "fl_info", "fl_info_page"),
            mut("fl_editor", "fl_name", "draft_name", "$input", "type"),
            mut("fl_editor", "fl_save", "saved_name", "$ref:draft_name"),
            nav("fl_editor", "fl_cancel", "fl_browser"),
            nav("fl_docs_page", "fl_docs_up", "fl_browser"),
            mut("fl_recent_page", "fl_recent_clear", "history", 0), nav("fl_recent_page", "fl_recent_up", "fl_browser"),
            mut("fl_trash_page", "fl_empty", "trash", 0), nav("fl_trash_page", "fl_trash_up", "fl_browser"),
            nav("fl_info_page", "fl_info_close", "fl_browser"),
        ],
        "fl_browser",
        {"draft_name": "", "saved_name": None, "history": 4, "trash": 2},
    )


def waypoints_app() -> AppModel:
    return _app(
        "waypoints", "Waypoints",
        [
            screen("wp_map", "Map", [
                ("wp_search", "button", "Search"), ("wp_saved", "button", "Saved places"),
                ("wp_route", "button", "Route"), ("wp_settings", "button", "Map settings"),
            ]),
            screen("wp_search_page", "Search", [
                ("wp_query", "text_field", "Search places"), ("wp_goto", "button", "Goto"),
                ("wp_search_back", "button", "Back"),
            ]),
            screen("wp_detail", "Waypoint Detail", [
                ("wp_save", "button", "Save waypoint"), ("wp_detail_back", "button", "Back to map"),
            ]),
            screen("wp_saved_page", "Saved Places", [("wp_saved_back", "button", "Back")]),
            screen("wp_route_page", "Route", [("wp_start", "button", "Start"), ("wp_route_back", "button", "Back")]),
            screen("wp_settings_page", "Map Settings", [
                ("wp_units", "toggle", "Metric units"), ("wp_settings_back", "button", "Back"),
            ]),
        ],
        [
            nav("wp_map", "wp_search", "wp_search_page"), nav("wp_map", "wp_saved", "wp_saved_page"),
            nav("wp_map", "wp_route", "wp_route_page"), nav("wp_map", "wp_settings", "wp_settings_page"),
            mut("wp_search_page", "wp_query", "query", "$input", "type"),
            nav("wp_search_page", "wp_goto", "wp_detail"), nav("wp_search_page", "wp_search_back", "wp_map"),
            mut("wp_detail", "wp_save", "saved_lon", "$ref:lon"), nav("wp_detail", "wp_detail_back", "wp_map"),
            nav("wp_saved_page", "wp_saved_back", "wp_map"),
            mut("wp_route_page", "wp_start", "navigating", True), nav("wp_route_page", "wp_route_back", "wp_map"),
            mut("wp_settings_page", "wp_units", "metric", "$toggle"),
            nav("wp_settings_page", "wp_settings_back", "wp_map"),
        ],
        "wp_map",
        {"query": "", "lon": "2.97749", "saved_lon": None, "navigating": False, "metric": True},
    )


def gallery_app() -> AppModel:
    return _app(
        "gallery", "Gallery",
        [
            screen("gl_grid", "Gallery", [("gl_first", "list_item", "Photo 1"), ("gl_albums", "button", "Albums")]),
            screen("gl_photo", "Photo", [
                ("gl_options", "button", "More options"), ("gl_edit", "button", "Edit"),
                ("gl_photo_back", "button", "Back"),
            ]),
            screen("gl_options_menu", "Options", [
                ("gl_report", "list_item", "Report"), ("gl_pin", "list_item", "Pin"),
                ("gl_options_close", "button", "Close"),
            ]),
            screen("gl_report_dialog", "Report", [
                ("gl_reason", "text_field", "Reason"), ("gl_report_close", "button", "Close"),
            ]),
            screen("gl_pin_page", "Pin", [("gl_pin_back", "button", "Back")]),
            screen("gl_albums_page", "Albums", [("gl_albums_back", "button", "Back")]),
            screen("gl_editor", "Editor", [("gl_rotate", "button", "Rotate"), ("gl_edit_done", "button", "Done")]),
        ],
        [
            nav("gl_grid", "gl_first", "gl_photo"), nav("gl_grid", "gl_albums", "gl_albums_page"),
            nav("gl_photo", "gl_options", "gl_options_menu"), nav("gl_photo", "gl_edit", "gl_editor"),
            nav("gl_photo", "gl_photo_back", "gl_grid"),
            nav("gl_options_menu", "gl_report", "gl_report_dialog"), nav("gl_options_menu", "gl_pin", "gl_pin_page"),
            nav("gl_options_menu", "gl_options_close", "gl_photo"),
            mut("gl_report_dialog", "gl_reason", "reason", "$input", "type"),
            nav("gl_report_dialog", "gl_report_close", "gl_options_menu"),
            nav("gl_pin_page", "gl_pin_back", "gl_photo"),
            nav("gl_albums_page", "gl_albums_back", "gl_grid"),
            mut("gl_editor", "gl_rotate", "rotation", 90), nav("gl_editor", "gl_edit_done", "gl_photo"),
        ],
        "gl_grid",
        {"reason": "", "rotation": 0},
    )


def demo_apps() -> Dict[str, AppModel]:
    return {m.app_id: m for m in (tasks_app(), settings_app(), files_app(), waypoints_app(), gallery_app())}


def _click(model: AppModel, sid: str, eid: str) -> Action:
    el = model.screens[sid].element(eid)
    return Action("click", point=el.bounds.center)


def _type(model: AppModel, sid: str, eid: str, text: str) -> Action:
    el = model.screens[sid].element(eid)
    return Action("type", point=el.bounds.center, text=text)


def demo_defects() -> List[DefectSpec]:
    def desc(text):
        return {"summary": text}

    return [
        DefectSpec(
            "tasks-clear", "UI", "ONR", ActionPattern("tk_home", "tk_clear", "click"),
            Effect.mutate("completed", 0), Effect.none(),
            description=desc("Clear Completed does nothing"), app_id="tasks",
        ),
        DefectSpec(
            "settings-backup", "UI", "NLE", ActionPattern("st_main", "st_backup", "click"),
            Effect.navigate("st_backup_page"), Effect.navigate("st_network_page"),
            description=desc("Backup and Restore opens Network Settings"), app_id="settings",
        ),
        DefectSpec(
            "settings-dark", "UI", "ONR", ActionPattern("st_display_page", "st_dark", "click"),
            Effect.mutate("dark_mode", "$toggle"), Effect.none(),
            description=desc("Dark mode toggle does not respond"), app_id="settings",
        ),
        DefectSpec(
            "files-save", "UX", "UTR", ActionPattern("fl_editor", "fl_save", "click"),
            Effect.mutate("saved_name", "$ref:draft_name"), Effect.none(),
            preconditions=(
                ActionPattern("fl_browser", "fl_new", "click"),
                ActionPattern("fl_editor", "fl_name", "type"),
            ),
            description=desc("Saving a newly named file drops it"), app_id="files",
        ),
        DefectSpec(
            "waypoints-save", "UI", "UTR", ActionPattern("wp_detail", "wp_save", "click"),
            Effect.mutate("saved_lon", "$ref:lon"), Effect.mutate("saved_lon", "2.97794"),
            description=desc("Saved waypoint longitude has swapped digits"), app_id="waypoints",
        ),
        DefectSpec(
            "gallery-report", "UX", "NLE", ActionPattern("gl_report_dialog", "gl_report_close", "click"),
            Effect.navigate("gl_options_menu"), Effect.navigate("gl_pin_page"),
            preconditions=(
                ActionPattern("gl_photo", "gl_options", "click"),
                ActionPattern("gl_options_menu", "gl_report", "click"),
            ),
            description=desc("Closing the report dialog lands on Pin"), app_id="gallery",
        ),
    ]


def demo_repros() -> List[ReproductionTrajectory]:
    apps = demo_apps()
    tk, st, fl, wp, gl = (apps[k] for k in ("tasks", "settings", "files", "waypoints", "gallery"))
    return [
        ReproductionTrajectory("tasks-clear", (_click(tk, "tk_home", "tk_clear"),)),
        ReproductionTrajectory("settings-backup", (_click(st, "st_main", "st_backup"),)),
        ReproductionTrajectory("settings-dark", (
            _click(st, "st_main", "st_display"), _click(st, "st_display_page", "st_dark"),
        )),
        ReproductionTrajectory("files-save", (
            _click(fl, "fl_browser", "fl_new"), _type(fl, "fl_editor", "fl_name", "report.txt"),
            _click(fl, "fl_editor", "fl_save"),
        )),
        ReproductionTrajectory("waypoints-save", (
            _click(wp, "wp_map", "wp_search"), _type(wp, "wp_search_page", "wp_query", "Plan travel route"),
            _click(wp, "wp_search_page", "wp_goto"), _click(wp, "wp_detail", "wp_save"),
        )),
        ReproductionTrajectory("gallery-report", (
            _click(gl, "gl_grid", "gl_first"), _click(gl, "gl_photo", "gl_options"),
            _click(gl, "gl_options_menu", "gl_report"), _click(gl, "gl_report_dialog", "gl_report_close"),
        )),
    ]


# Defects whose demo task is the first retained exploration-oriented candidate.
DEMO_EXPLORATION = ("settings-backup", "waypoints-save")


def full_demo_bench(n_pre: int = 5, n_post: int = 3, seed: int = 0) -> Bench:
    """Every synthesized task (defect-oriented and retained exploration-oriented) for the demo defects."""
    apps = demo_apps()
    defects = {d.id: d for d in demo_defects()}
    models = {d.id: inject(apps[d.app_id], [d]) for d in defects.values()}
    tasks, log = synthesize_tasks(demo_repros(), models, n_pre, n_post, seed)
    return Bench(apps, defects, tasks, [e.to_dict() for e in log])


def demo_bench(n_pre: int = 5, n_post: int = 3, seed: int = 0) -> Bench:
    """Six tasks, one per demo defect."""
    full = full_demo_bench(n_pre, n_post, seed)
    chosen = []
    for did in full.defects:
        kind = "exploration_oriented" if did in DEMO_EXPLORATION else "defect_oriented"
        pick = next((t for t in full.tasks if t.defect_id == did and t.kind == kind), None)
        if pick is None:
            pick = next(t for t in full.tasks if t.defect_id == did)
        chosen.append(pick)
    return Bench(full.apps, full.defects, chosen, full.synth_log)


# -- random benches ------------------------------------------------------------------


def random_app(rng: random.Random, app_id: str, n_screens: Optional[int] = None) -> AppModel:
    """A tree of screens with back buttons, a cross link, toggles and text fields."""
    n = n_screens or rng.randint(4, 7)
    sids = [f"{app_id}_s{i}" for i in range(n)]
    parent = {i: rng.randrange(i) for i in range(1, n)}
    children = {i: [c for c in range(1, n) if parent[c] == i] for i in range(n)}
    screens, transitions, variables = [], {}, {}
    for i, sid in enumerate(sids):
        items: List[Item] = []
        for c in children[i]:
            eid = f"{sid}_open{c}"
            items.append((eid, "button", f"Open screen {c}"))
            transitions[ActionPattern(sid, eid, "click")] = Effect.navigate(sids[c])
        if i > 0:
            eid = f"{sid}_up"
            items.append((eid, "button", "Back"))
            transitions[ActionPattern(sid, eid, "click")] = Effect.navigate(sids[parent[i]])
        if n > 2 and rng.random() < 0.4:
            others = [j for j in range(n) if j != i and j not in children[i] and j != parent.get(i)]
            if others:
                j = rng.choice(others)
                eid = f"{sid}_jump{j}"
                items.append((eid, "link", f"Jump to {j}"))
                transitions[ActionPattern(sid, eid, "click")] = Effect.navigate(sids[j])
        for k in range(rng.randint(0, 2)):
            eid, var = f"{sid}_flag{k}", f"{sid}_flag{k}"
            items.append((eid, "toggle", f"Flag {k}"))
            variables[var] = False
            transitions[ActionPattern(sid, eid, "click")] = Effect.mutate(var, "$toggle")
        if rng.random() < 0.5:
            eid, var = f"{sid}_field", f"{sid}_text"
            items.append((eid, "text_field", "Text"))
            variables[var] = ""
            transitions[ActionPattern(sid, eid, "type")] = Effect.mutate(var, "$input")
        if rng.random() < 0.3:
            items.append((f"{sid}_label", "label", "Info"))
        rng.shuffle(items)
        screens.append(screen(sid, f"Screen {i}", items[:MAX_ROWS]))
    visible = {(s.id, e.id) for s in screens for e in s.elements}
    transitions = {p: e for p, e in transitions.items() if (p.screen_id, p.element_id) in visible}
    return _app(app_id, f"App {app_id}", screens, transitions, sids[0], variables)


def _path_actions(model: AppModel, target: str, start: Optional[str] = None) -> Tuple[List[Action], List[ActionPattern]]:
    nav_ = Navigator(model)
    path = nav_.screen_route((start or model.initial_screen, False), target)
    if path is None:
        raise ValueError(f"{target} unreachable")
    return [nav_.edge_action(e) for e in path], [e.pattern for e in path]


def _random_defect(rng: random.Random, model: AppModel, did: str, multi: bool):
    """Pick a trigger and fault; returns (defect, repro) or None if the app offers no fit."""
    sites = [
        (p, e) for p, e in sorted(model.transitions.items(), key=lambda kv: (kv[0].screen_id, kv[0].element_id))
        if p.screen_id != model.initial_screen or not multi
    ]
    rng.shuffle(sites)
    for trigger, expected in sites:
        actions, hops = _path_actions(model, trigger.screen_id)
        if any(h.kind != "click" for h in hops):
            continue
        if expected.kind == "navigate":
            others = sorted(s for s in model.screens if s not in (expected.target, trigger.screen_id))
            modes = ["NLE"] + ([] if multi else ["ONR"])
            mode = rng.choice(modes)
            if mode == "NLE" and not others:
                continue
            actual = Effect.navigate(rng.choice(others)) if mode == "NLE" else Effect.none()
        else:
            mode = rng.choice(["UTR"] if multi else ["UTR", "ONR"])
            actual = Effect.mutate(expected.variable, "corrupted") if mode == "UTR" else Effect.none()
        el = model.screens[trigger.screen_id].element(trigger.element_id)
        text = f"v{rng.randrange(1000)}" if trigger.kind == "type" else None
        trig_action = Action(trigger.kind, point=el.bounds.center, text=text) if trigger.kind == "type" else Action(trigger.kind, point=el.bounds.center)
        pre: Tuple[ActionPattern, ...] = ()
        repro = list(actions)
        if multi:
            # preconditions: one hop on the way, plus a field edit on the trigger screen when available
            picks = [hops[rng.randrange(len(hops))]] if hops else []
            field = next(
                (p for p in model.transitions if p.screen_id == trigger.screen_id and p.kind == "type" and p != trigger),
                None,
            )
            if field is not None:
                fel = model.screens[field.screen_id].element(field.element_id)
                repro.append(Action("type", point=fel.bounds.center, text=f"in{rng.randrange(1000)}"))
                picks.append(field)
            if not picks:
                continue
            pre = tuple(picks)
        defect = DefectSpec(did, "UX" if multi else "UI", mode, trigger, expected, actual, pre, {"summary": f"random {mode}"}, model.app_id)
        return defect, ReproductionTrajectory(did, tuple(repro + [trig_action]))
    return None


def random_bench(seed: int, n_tasks: int = 20, multi_fraction: float = 0.0, exploration: bool = False) -> Bench:
    """A seeded bench of defect-oriented tasks, one random app and defect per task."""
    rng = random.Random(seed)
    apps, defects, tasks = {}, {}, []
    k = 0
    while len(tasks) < n_tasks:
        app = random_app(rng, f"r{seed}a{k}")
        multi = rng.random() < multi_fraction
        made = _random_defect(rng, app, f"r{seed}d{k}", multi)
        k += 1
        if made is None:
            continue
        defect, repro = made
        model = inject(app, [defect])
        task = synthesize_defect_oriented(repro, model)
        apps[app.app_id] = app
        defects[defect.id] = defect
        tasks.append(task)
    return Bench(apps, defects, tasks)
