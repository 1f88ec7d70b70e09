"""Role backends: scripted oracles, the single-agent baseline and remote adapters."""

from ..orchestrator import BackendSet
from .baseline import BaselineAgent
from .scripted import (
    BlindReflector,
    RuleMonitor,
    RuleReflector,
    ScriptedExecutor,
    ScriptedPlanner,
    ScriptedProfile,
    scripted_backends,
)

__all__ = [
    "BackendSet",
    "BaselineAgent",
    "BlindReflector",
    "RuleMonitor",
    "RuleReflector",
    "ScriptedExecutor",
    "ScriptedPlanner",
    "ScriptedProfile",
    "scripted_backends",
]
