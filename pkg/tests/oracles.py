"""Independent set-counting reference for the detection metrics."""

from __future__ import annotations

import random
from fractions import Fraction
from typing import Dict, List

from guitestlab.evaluation import CELLS, TaskResult


def random_results(rng: random.Random, n_tasks: int, runs: int) -> List[TaskResult]:
    out = []
    for t in range(n_tasks):
        cell = rng.choice(CELLS)
        kind = rng.choice(["defect_oriented", "exploration_oriented"])
        p_decl, p_det = rng.random(), rng.random()
        for k in range(runs):
            declared = rng.random() < p_decl
            detected = declared and rng.random() < p_det
            out.append(TaskResult(
                task_id=f"t{t}", run_index=k, triggered=detected or rng.random() < 0.5, declared=declared,
                detected=detected, cell=cell, task_kind=kind, single_action=cell.startswith("UI"),
            ))
    return out


def set_count(results: List[TaskResult], pass_k: str, cell: str) -> Dict[str, object]:
    """Recall/precision/F1 from task sets, with exact rational arithmetic."""
    tasks: Dict[str, List[TaskResult]] = {}
    for r in results:
        if cell in ("Overall", r.cell):
            tasks.setdefault(r.task_id, []).append(r)
    total = len(tasks)
    if pass_k == "pass3":
        det = Fraction(len({t for t, rs in tasks.items() if any(r.detected for r in rs)}))
        dec = Fraction(len({t for t, rs in tasks.items() if any(r.declared for r in rs)}))
    else:
        det = sum((Fraction(sum(r.detected for r in rs), len(rs)) for rs in tasks.values()), Fraction(0))
        dec = sum((Fraction(sum(r.declared for r in rs), len(rs)) for rs in tasks.values()), Fraction(0))
    recall = det / total if total else None
    precision = det / dec if dec else None
    f1 = None
    if recall is not None and precision is not None and recall + precision:
        f1 = 2 * precision * recall / (precision + recall)
    return {"total": total, "detected": det, "declared": dec, "recall": recall, "precision": precision, "f1": f1}
