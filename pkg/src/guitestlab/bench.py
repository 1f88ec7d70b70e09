"""Bench bundles: a directory of app models, defects and tasks plus a hashed manifest.

Layout::

    manifest.json         bench_v1: file hashes and the bench hash
    apps/<app_id>.json    app_model_v1
    defects/<id>.json     defect_v1
    tasks/<id>.json       task_v1
    synth_log.json        synth_log_v1 (optional)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .defects import DefectSpec, InstrumentedModel, inject
from .screen import AppModel, ModelValidationError
from .tasks import TaskSpec

BENCH_SCHEMA = "bench_v1"
SYNTH_LOG_SCHEMA = "synth_log_v1"


class BundleError(ModelValidationError):
    pass


def dump_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def bench_hash(files: Dict[str, str]) -> str:
    blob = "".join(f"{name}\t{digest}\n" for name, digest in sorted(files.items()))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class Bench:
    apps: Dict[str, AppModel]
    defects: Dict[str, DefectSpec]
    tasks: List[TaskSpec]
    synth_log: List[Dict[str, Any]] = field(default_factory=list)
    hash: Optional[str] = None

    def problems(self) -> List[str]:
        out = []
        for app in self.apps.values():
            out.extend(f"app {app.app_id}: {p}" for p in app.validate())
        seen = set()
        for t in self.tasks:
            if t.id in seen:
                out.append(f"duplicate task id {t.id!r}")
            seen.add(t.id)
            if t.app_id not in self.apps:
                out.append(f"task {t.id}: unknown app {t.app_id!r}")
            d = self.defects.get(t.defect_id)
            if d is None:
                out.append(f"task {t.id}: unknown defect {t.defect_id!r}")
            elif d.app_id != t.app_id:
                out.append(f"task {t.id}: defect {d.id} belongs to app {d.app_id!r}")
        for d in self.defects.values():
            if d.app_id not in self.apps:
                out.append(f"defect {d.id}: unknown app {d.app_id!r}")
                continue
            try:
                inject(self.apps[d.app_id], [d])
            except ModelValidationError as exc:
                out.extend(exc.problems)
        return out

    def task_model(self, task: TaskSpec) -> InstrumentedModel:
        """The task's app with exactly its own defect armed."""
        return inject(self.apps[task.app_id], [self.defects[task.defect_id]])

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)


def write_bundle(bench: Bench, out: Path) -> str:
    """Write ``bench`` under ``out``; returns the bench hash."""
    out = Path(out)
    files: Dict[str, str] = {}

    def put(rel: str, doc: Any) -> None:
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_json(doc), encoding="utf-8")
        files[rel] = sha256_file(path)

    for app_id, app in sorted(bench.apps.items()):
        put(f"apps/{app_id}.json", app.to_dict())
    for did, d in sorted(bench.defects.items()):
        put(f"defects/{did}.json", d.to_dict())
    for t in bench.tasks:
        put(f"tasks/{t.id}.json", t.to_dict())
    if bench.synth_log:
        put("synth_log.json", {"schema": SYNTH_LOG_SCHEMA, "entries": bench.synth_log})
    h = bench_hash(files)
    manifest = {
        "schema": BENCH_SCHEMA,
        "bench_hash": h,
        "files": files,
        "task_order": [t.id for t in bench.tasks],
    }
    (out / "manifest.json").write_text(dump_json(manifest), encoding="utf-8")
    bench.hash = h
    return h


def _read(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleError([f"{path}: {exc}"]) from exc


def load_bundle(path: Path, verify: bool = True) -> Bench:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise BundleError([f"{path}: no manifest.json"])
    manifest = _read(manifest_path)
    if manifest.get("schema") != BENCH_SCHEMA:
        raise BundleError([f"unsupported bench schema {manifest.get('schema')!r}"])
    files: Dict[str, str] = manifest.get("files", {})
    problems = []
    if verify:
        for rel, digest in sorted(files.items()):
            p = path / rel
            if not p.is_file():
                problems.append(f"missing file {rel}")
            elif sha256_file(p) != digest:
                problems.append(f"hash mismatch for {rel}")
        if bench_hash(files) != manifest.get("bench_hash"):
            problems.append("bench_hash does not match the file table")
        if problems:
            raise BundleError(problems)
    apps, defects, tasks_by_id, log = {}, {}, {}, []
    for rel in sorted(files):
        doc = _read(path / rel)
        try:
            if rel.startswith("apps/"):
                app = AppModel.from_dict(doc)
                apps[app.app_id] = app
            elif rel.startswith("defects/"):
                d = DefectSpec.from_dict(doc)
                defects[d.id] = d
            elif rel.startswith("tasks/"):
                t = TaskSpec.from_dict(doc)
                tasks_by_id[t.id] = t
            elif rel == "synth_log.json":
                if doc.get("schema") != SYNTH_LOG_SCHEMA:
                    raise ModelValidationError([f"unsupported synth log schema {doc.get('schema')!r}"])
                log = doc.get("entries", [])
        except ModelValidationError as exc:
            problems.extend(f"{rel}: {p}" for p in exc.problems)
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"{rel}: {exc}")
    if problems:
        raise BundleError(problems)
    order = manifest.get("task_order") or sorted(tasks_by_id)
    tasks = [tasks_by_id[t] for t in order if t in tasks_by_id]
    bench = Bench(apps, defects, tasks, log, manifest.get("bench_hash"))
    problems = bench.problems()
    if problems:
        raise BundleError(problems)
    return bench
