"""Deterministic lab for exploratory GUI defect discovery.

Simulated apps with injected UI/UX defects, a planner/executor/monitor/
reflector agent loop, task synthesis and recall/precision/F1 scoring.
"""

__version__ = "0.1.0"
