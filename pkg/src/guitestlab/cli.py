"""Command-line entry point: synth, validate, run, eval and render."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .bench import Bench, BundleError, dump_json, load_bundle, sha256_file, write_bundle
from .defects import DefectSpec, inject
from .evaluation import (
    EvalReport,
    EvaluationError,
    REPORT_SCHEMA,
    aggregate,
    evaluate_run,
    render_table,
)
from .orchestrator import TRAJECTORY_SCHEMA, BackendSet, OrchestrationError, RunRecord, run_task
from .screen import AppModel, ModelValidationError, NoiseConfig
from .seeds import run_seed

RUN_MANIFEST_SCHEMA = "run_manifest_v1"
AGENTS = ("oracle", "blind", "flaky", "baseline", "remote")
MODES = ("orchestrated", "baseline")
ENDPOINT_ENV = "GUITEST_ENDPOINT"
FLAKY_JITTER = 0.3
DEFAULT_NOISE_PROBABILITY = 0.25

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    pass


@dataclass
class RunConfig:
    bench_path: str
    agent: str = "oracle"
    mode: str = "orchestrated"
    seed: int = 0
    runs: int = 3
    max_steps: int = 6
    global_budget: int = 60
    noise_delay: Optional[int] = None
    noise_probability: Optional[float] = None
    endpoint: Optional[str] = None
    out_dir: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise InputError(f"unknown agent {self.agent!r}")
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode!r}")
        if self.runs < 1:
            raise InputError("--runs must be at least 1")
        if self.max_steps < 1 or self.global_budget < 1:
            raise InputError("--max-steps and --budget must be positive")
        if self.agent == "remote" and self.mode == "baseline":
            raise InputError("the remote agent runs in orchestrated mode only")
        if self.agent == "remote" and not self.endpoint:
            raise InputError(f"the remote agent needs --endpoint or {ENDPOINT_ENV}")

    @property
    def noise(self) -> Optional[NoiseConfig]:
        if self.noise_delay is None and self.noise_probability is None:
            return None
        prob = DEFAULT_NOISE_PROBABILITY if self.noise_probability is None else self.noise_probability
        return NoiseConfig(prob, self.noise_delay or 2)

    def echo(self) -> Dict[str, Any]:
        """Config fields that affect results (the output location does not)."""
        data = asdict(self)
        for key in ("out_dir", "workers", "bench_path"):
            data.pop(key)
        return data


def make_backends(config: RunConfig, model, seed: int, run_id: str) -> BackendSet:
    from .agents.baseline import BaselineAgent
    from .agents.scripted import ScriptedProfile, scripted_backends

    if config.agent == "remote":
        from .agents.wire import RemoteAdapter, SocketTransport, parse_endpoint, remote_backends

        host, port = parse_endpoint(config.endpoint)
        return remote_backends(RemoteAdapter(SocketTransport(host, port)), run_id)
    if config.agent == "flaky":
        profile = ScriptedProfile("flaky_executor", FLAKY_JITTER, seed)
    elif config.agent == "blind":
        profile = ScriptedProfile("blind_navigator", 0.0, seed)
    else:
        profile = ScriptedProfile("oracle_perfect", 0.0, seed)
    if config.mode == "baseline" or config.agent == "baseline":
        return BackendSet(None, BaselineAgent(model.base, profile), None, None, mode="baseline")
    return scripted_backends(model, profile)


def run_file_name(task_id: str, run_index: int) -> str:
    return f"{task_id}__run{run_index}.jsonl"


_WORKER_BENCH: Dict[str, Bench] = {}


def _worker_run(config: RunConfig, task_id: str, run_index: int) -> Dict[str, Any]:
    # each pool process loads the bundle once
    if config.bench_path not in _WORKER_BENCH:
        _WORKER_BENCH[config.bench_path] = load_bundle(Path(config.bench_path))
    return execute_run(config, task_id, run_index, _WORKER_BENCH[config.bench_path])


def execute_run(config: RunConfig, task_id: str, run_index: int, bench: Bench) -> Dict[str, Any]:
    """Run one (task, run index) pair and write its trajectory file."""
    task = bench.task(task_id)
    model = bench.task_model(task)
    seed = run_seed(config.seed, task_id, run_index)
    rel = f"trajectories/{run_file_name(task_id, run_index)}"
    entry: Dict[str, Any] = {"task_id": task_id, "run_index": run_index, "seed": seed, "path": rel}
    try:
        backends = make_backends(config, model, seed, f"{task_id}/{run_index}")
        record = run_task(
            task, model, backends, seed,
            max_steps=config.max_steps, budget=config.global_budget, noise=config.noise,
            run_index=run_index, agent=config.agent,
        )
    except OrchestrationError as exc:
        entry.update(status="aborted", error=str(exc))
        return entry
    path = Path(config.out_dir) / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(record.to_jsonl())
    entry.update(status=record.status, sha256=sha256_file(path))
    return entry


def cmd_run(config: RunConfig) -> int:
    bench = load_bundle(Path(config.bench_path))
    jobs = [(t.id, k) for t in bench.tasks for k in range(config.runs)]
    if config.workers > 1 and config.agent != "remote":
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            entries = list(pool.map(_worker_run, [config] * len(jobs), *zip(*jobs)))
    else:
        entries = [execute_run(config, tid, k, bench) for tid, k in jobs]
    manifest = {
        "schema": RUN_MANIFEST_SCHEMA,
        "bench_hash": bench.hash,
        "config": config.echo(),
        "runs": entries,
        "schemas": {"trajectory": TRAJECTORY_SCHEMA, "run_manifest": RUN_MANIFEST_SCHEMA},
    }
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(dump_json(manifest), encoding="utf-8")
    failed = [e for e in entries if e["status"] == "aborted"]
    for e in failed:
        print(f"run {e['task_id']}#{e['run_index']} aborted: {e['error']}", file=sys.stderr)
    print(f"wrote {len(entries) - len(failed)} trajectories to {out}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_eval(trajectories: Path, bench_path: Path, pass_k: str, out: Optional[Path], endpoint: Optional[str] = None) -> int:
    bench = load_bundle(bench_path)
    manifest_path = Path(trajectories) / "manifest.json"
    if not manifest_path.is_file():
        raise InputError(f"{trajectories}: no run manifest")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema") != RUN_MANIFEST_SCHEMA:
        raise InputError(f"unsupported run manifest schema {manifest.get('schema')!r}")
    if manifest.get("bench_hash") != bench.hash:
        print(
            f"bench hash mismatch: trajectories were produced against {manifest.get('bench_hash')}, "
            f"bench is {bench.hash}",
            file=sys.stderr,
        )
        return EXIT_INPUT
    judge = None
    if endpoint:
        from .agents.wire import RemoteAdapter, RemoteJudge, SocketTransport, parse_endpoint

        judge = RemoteJudge(RemoteAdapter(SocketTransport(*parse_endpoint(endpoint))))
    results = []
    for entry in manifest["runs"]:
        if entry.get("status") == "aborted":
            continue
        path = Path(trajectories) / entry["path"]
        if sha256_file(path) != entry["sha256"]:
            raise InputError(f"{entry['path']}: content hash differs from the run manifest")
        run = RunRecord.from_jsonl(path.read_text(encoding="utf-8"))
        task = bench.task(run.task_id)
        results.append(evaluate_run(run, bench.defects[task.defect_id], task, judge))
    report = aggregate(results, pass_k)
    report.provenance = {
        "bench_hash": bench.hash,
        "seed": manifest["config"].get("seed"),
        "run_seeds": {f"{e['task_id']}#{e['run_index']}": e["seed"] for e in manifest["runs"]},
        "agent": manifest["config"].get("agent"),
    }
    table = render_table(report)
    out = Path(out) if out else Path(trajectories)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"report_{pass_k}.json").write_text(dump_json(report.to_dict()), encoding="utf-8")
    (out / f"report_{pass_k}.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def _load_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _as_list(doc: Any) -> List[Any]:
    return doc if isinstance(doc, list) else [doc]


def cmd_synth(args) -> int:
    from .demo import demo_bench, full_demo_bench
    from .synth import ReproductionTrajectory, synthesize_tasks

    if args.n_pre < 1 or args.n_post < 1:
        raise InputError("--n-pre and --n-post must be at least 1")
    if args.demo:
        bench = (full_demo_bench if args.all_tasks else demo_bench)(args.n_pre, args.n_post, args.seed)
    else:
        if not (args.app and args.defects and args.repro):
            raise InputError("synth needs --demo or all of --app, --defects and --repro")
        apps = {}
        for doc in _as_list(_load_json(args.app)):
            app = AppModel.from_dict(doc)
            apps[app.app_id] = app
        defects = {}
        for doc in _as_list(_load_json(args.defects)):
            d = DefectSpec.from_dict(doc)
            if not d.app_id and len(apps) == 1:
                d = DefectSpec.from_dict({**doc, "app_id": next(iter(apps))})
            defects[d.id] = d
        repros = [ReproductionTrajectory.from_dict(doc) for doc in _as_list(_load_json(args.repro))]
        models = {}
        for r in repros:
            if r.defect_id not in defects:
                raise InputError(f"repro names unknown defect {r.defect_id!r}")
            d = defects[r.defect_id]
            models[d.id] = inject(apps[d.app_id], [d])
        tasks, log = synthesize_tasks(repros, models, args.n_pre, args.n_post, args.seed)
        bench = Bench(apps, defects, tasks, [e.to_dict() for e in log])
    h = write_bundle(bench, Path(args.out))
    for entry in bench.synth_log:
        line = f"{entry['defect_id']}: {entry['message']}"
        if entry.get("warning"):
            line += f" (warning: {entry['warning']})"
        print(line)
    print(f"bench {h} with {len(bench.tasks)} tasks written to {args.out}")
    return EXIT_OK


def cmd_validate(bench_path: Path) -> int:
    bench = load_bundle(bench_path)
    print(f"ok: {len(bench.apps)} apps, {len(bench.defects)} defects, {len(bench.tasks)} tasks, hash {bench.hash}")
    return EXIT_OK


def cmd_render(report_path: Path) -> int:
    doc = _load_json(report_path)
    if doc.get("schema") != REPORT_SCHEMA:
        raise InputError(f"unsupported report schema {doc.get('schema')!r}")
    print(render_table(EvalReport.from_dict(doc)), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guitestlab", description="Exploratory GUI defect discovery lab")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an agent over every bench task")
    r.add_argument("--bench", required=True)
    r.add_argument("--agent", choices=AGENTS, default="oracle")
    r.add_argument("--mode", choices=MODES, default=None, help="defaults to baseline for --agent baseline")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--runs", type=int, default=3)
    r.add_argument("--max-steps", type=int, default=6)
    r.add_argument("--budget", type=int, default=60)
    r.add_argument("--noise-delay", type=int, default=None, help="max loading delay in observations")
    r.add_argument("--noise-prob", type=float, default=None, help="chance an effect is delayed")
    r.add_argument("--endpoint", default=None)
    r.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    r.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score trajectories against their bench")
    e.add_argument("--trajectories", required=True)
    e.add_argument("--bench", required=True)
    e.add_argument("--pass-k", choices=("pass1", "pass3"), default="pass1")
    e.add_argument("--endpoint", default=None, help="remote judge for multi-action defects")
    e.add_argument("--out", default=None)

    s = sub.add_parser("synth", help="synthesize a bench bundle")
    s.add_argument("--demo", action="store_true")
    s.add_argument("--all-tasks", action="store_true", help="with --demo, keep every synthesized task")
    s.add_argument("--app")
    s.add_argument("--defects")
    s.add_argument("--repro")
    s.add_argument("--n-pre", type=int, default=5)
    s.add_argument("--n-post", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    v = sub.add_parser("validate", help="check a bench bundle")
    v.add_argument("--bench", required=True)

    d = sub.add_parser("render", help="print a report as a table")
    d.add_argument("--report", required=True)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            mode = args.mode or ("baseline" if args.agent == "baseline" else "orchestrated")
            config = RunConfig(
                bench_path=str(Path(args.bench)),
                agent=args.agent,
                mode=mode,
                seed=args.seed,
                runs=args.runs,
                max_steps=args.max_steps,
                global_budget=args.budget,
                noise_delay=args.noise_delay,
                noise_probability=args.noise_prob,
                endpoint=args.endpoint or os.environ.get(ENDPOINT_ENV),
                out_dir=args.out,
                workers=max(1, args.workers),
            )
            return cmd_run(config)
        if args.command == "eval":
            return cmd_eval(Path(args.trajectories), Path(args.bench), args.pass_k, args.out, args.endpoint)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "validate":
            return cmd_validate(Path(args.bench))
        if args.command == "render":
            return cmd_render(Path(args.report))
    except BundleError as exc:
        print("invalid bench bundle:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ModelValidationError, EvaluationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OrchestrationError as exc:
        print(f"execution failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
