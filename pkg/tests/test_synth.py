from __future__ import annotations

import pytest

from guitestlab.defects import inject
from guitestlab.demo import demo_apps, demo_defects, demo_repros
from guitestlab.orchestrator import run_task
from guitestlab.seeds import derive_seed
from guitestlab.synth import (
    ReproductionTrajectory,
    SynthesisError,
    TemplateIntentGenerator,
    distribution_report,
    filter_candidates,
    oracle_validator,
    replay,
    synthesize_defect_oriented,
    synthesize_exploration_candidates,
    synthesize_tasks,
)
from guitestlab.screen import Action


@pytest.fixture(scope="module")
def parts():
    apps = demo_apps()
    defects = {d.id: d for d in demo_defects()}
    models = {d.id: inject(apps[d.app_id], [d]) for d in defects.values()}
    repros = {r.defect_id: r for r in demo_repros()}
    return apps, defects, models, repros


def test_repro_round_trip(parts):
    _, _, _, repros = parts
    for r in repros.values():
        assert ReproductionTrajectory.from_dict(r.to_dict()) == r


def test_replay_requires_trigger_at_end(parts):
    _, _, models, repros = parts
    r = repros["files-save"]
    with pytest.raises(SynthesisError):
        replay(ReproductionTrajectory(r.defect_id, r.actions[:-1]), models["files-save"])
    with pytest.raises(SynthesisError):
        replay(ReproductionTrajectory(r.defect_id, ()), models["files-save"])


def test_defect_oriented_task_replays_repro(parts):
    _, _, models, repros = parts
    task = synthesize_defect_oriented(repros["gallery-report"], models["gallery-report"])
    assert task.id == "gallery-report-D" and task.kind == "defect_oriented"
    assert len(task.steps) == len(repros["gallery-report"].actions)
    assert all(s.kind == "act" for s in task.steps)


def test_fifteen_candidates_per_defect(parts):
    _, _, models, repros = parts
    for did, repro in repros.items():
        cands = synthesize_exploration_candidates(repro, models[did], n_pre=5, n_post=3)
        assert len(cands) == 15
        assert len({c.id for c in cands}) == 15
        assert len({(c.meta["pre_target"], c.meta["post_target"]) for c in cands}) == 15


def test_intent_shortfall_is_an_error(parts):
    _, _, models, repros = parts
    with pytest.raises(SynthesisError):
        synthesize_exploration_candidates(repros["tasks-clear"], models["tasks-clear"], n_pre=50, n_post=3)
    with pytest.raises(SynthesisError):
        synthesize_exploration_candidates(repros["tasks-clear"], models["tasks-clear"], n_pre=0, n_post=3)


def test_filter_keeps_exactly_the_candidates_whose_validation_visits_trigger(parts):
    _, defects, models, repros = parts
    for did in ("settings-dark", "gallery-report"):
        cands = synthesize_exploration_candidates(repros[did], models[did])
        outcome = filter_candidates(cands, models[did], seed=0)
        kept = {t.id for t in outcome.retained}
        trigger_screen = defects[did].trigger.screen_id
        for c in cands:
            rerun = run_task(c, models[did], oracle_validator(models[did]), seed=derive_seed(0, "validate", c.id), agent="validator")
            visits = any(s.pre.screen_id == trigger_screen for s in rerun.steps)
            assert visits == (c.id in kept), c.id
            if c.meta["pre_target"] == trigger_screen:
                assert c.id in kept
        for t in outcome.retained:
            assert t.validation_hash == outcome.runs[t.id].content_hash()


def test_synthesize_tasks_log(parts):
    _, defects, models, repros = parts
    tasks, log = synthesize_tasks([repros["waypoints-save"]], models, 5, 3, seed=0)
    assert tasks[0].kind == "defect_oriented"
    entry = log[0].to_dict()
    assert entry["candidates"] == 15 and entry["retained"] == len(tasks) - 1
    assert entry["message"] == f"15 candidates, {len(tasks) - 1} retained"
    report = distribution_report(tasks, defects, {"single_action_fraction": 0.9})
    assert report["achieved"]["tasks"] == len(tasks)


def test_generator_ranks_by_distance(parts):
    apps, _, _, _ = parts
    gen = TemplateIntentGenerator()
    model = apps["settings"]
    pre = gen.pre_targets(model, "st_main", 3)
    assert pre[0] == "st_main"
    assert "st_main" not in gen.post_targets(model, "st_main", 3)
