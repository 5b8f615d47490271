"""Built-in tool agents.

An agent is any callable taking the query payload and returning result text.
Agents signal failure by raising; the engine turns that into an error block.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Mapping

from ..errors import RegistryError
from ..registry import Registry
from .external import ExternalAgent

Agent = Callable[[str], str]


class CannedAgent:
    """Fixed responses keyed by payload; useful for demos and offline benchmarks."""

    def __init__(self, responses: Mapping[str, str], default: str | None = None):
        self.responses = dict(responses)
        self.default = default

    def __call__(self, payload: str) -> str:
        if payload in self.responses:
            return self.responses[payload]
        if self.default is not None:
            return self.default.replace("{query}", payload)
        raise KeyError(f"no canned response for {payload!r}")


def resolve(registry: Registry, agents: Mapping[str, Agent]) -> dict[str, Agent]:
    """Map every registered tool name to a callable, building HTTP adapters for external tools."""
    table: dict[str, Agent] = {}
    missing = []
    for tool in registry.tools:
        if tool.is_external:
            table[tool.name] = agents.get(tool.name) or ExternalAgent(tool)
        elif tool.resolved_agent_id in agents:
            table[tool.name] = agents[tool.resolved_agent_id]
        else:
            missing.append(f"{tool.name} (agent {tool.resolved_agent_id!r})")
    if missing:
        raise RegistryError("no agent available for builtin tools: " + ", ".join(missing))
    return table


def build(config: Mapping[str, Any], backend, base_dir: str | Path = ".") -> dict[str, Agent]:
    """Construct agents from a run-config ``agents`` section.

    Each entry maps an agent id to ``{"type": ..., **options}``; relative
    paths resolve against ``base_dir``.
    """
    base = Path(base_dir)

    def path(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else base / p

    out: dict[str, Agent] = {}
    for agent_id, spec in config.items():
        kind = spec.get("type", agent_id)
        if kind == "canned":
            out[agent_id] = CannedAgent(spec.get("responses", {}), spec.get("default"))
        elif kind == "text2sql":
            from .text2sql import Text2SQLAgent

            out[agent_id] = Text2SQLAgent(
                backend, database=path(spec["database"]), row_cap=spec.get("row_cap", 50), review=spec.get("review", True)
            )
        elif kind == "retrieval":
            from .retrieval import Corpus, RetrievalAgent

            corpus = Corpus.from_directory(
                path(spec["corpus"]), chunk_size=spec.get("chunk_size", 300), overlap=spec.get("overlap", 50)
            )
            out[agent_id] = RetrievalAgent(corpus, k=spec.get("k", 5))
        elif kind == "websearch":
            from .websearch import FixturePages, FixtureProvider, WebSearchAgent, http_fetch, no_fetch

            provider = FixtureProvider(path(spec["fixture"]))
            if "pages" in spec:
                fetch = FixturePages(path(spec["pages"]))
            else:
                fetch = http_fetch if spec.get("fetch", False) else no_fetch
            out[agent_id] = WebSearchAgent(provider, fetch, k=spec.get("k", 5), window_tokens=spec.get("window_tokens", 256))
        elif kind == "codeexec":
            from .codeexec import CodeExecAgent, Limits

            out[agent_id] = CodeExecAgent(Limits(cpu_seconds=spec.get("cpu_seconds", 10.0)))
        elif kind == "longitudinal":
            from .longitudinal import LongitudinalAgent

            out[agent_id] = LongitudinalAgent(path(spec["data_dir"]) if "data_dir" in spec else None)
        elif kind == "kgraph":
            from .kgraph import KnowledgeGraph

            out[agent_id] = KnowledgeGraph(backend, top_k=spec.get("top_k", 10))
        else:
            raise RegistryError(f"unknown agent type {kind!r} for {agent_id!r}")
    return out
