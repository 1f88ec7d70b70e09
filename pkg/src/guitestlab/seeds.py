"""Named seed derivation. All randomness flows from one root seed through here."""

from __future__ import annotations

import hashlib
import json


def derive_seed(*parts) -> int:
    blob = json.dumps([str(p) for p in parts], separators=(",", ":")).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def run_seed(seed: int, task_id: str, run_index: int) -> int:
    return derive_seed("run", seed, task_id, run_index)
