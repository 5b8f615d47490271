"""Tool-augmented LLM reasoning runtime: marker protocol, tool registry, engine, agents and evaluation."""

from .engine import CaseResult, Engine, EngineBudget, default_strategies
from .registry import Registry, ToolDescriptor, render_context
from .trace import Question, StrategyDescriptor, TrajectoryRecord

__all__ = [
    "CaseResult",
    "Engine",
    "EngineBudget",
    "Question",
    "Registry",
    "StrategyDescriptor",
    "ToolDescriptor",
    "TrajectoryRecord",
    "default_strategies",
    "render_context",
]
