"""Tool registry: descriptors loaded from JSON and rendered into the model context."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence
from urllib.parse import urlparse

from . import markers
from .errors import BadEndpoint, BadToolName, DuplicateName, SchemaViolation, UnknownTool

KIND_BUILTIN = "builtin"
KIND_EXTERNAL = "external"

DEFAULT_TIMEOUT_MS = 30_000


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    input_spec: str = ""
    output_spec: str = ""
    usage_examples: tuple[tuple[str, str], ...] = ()
    kind: str = KIND_BUILTIN
    agent_id: str | None = None
    endpoint: str | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    aliases: tuple[str, ...] = ()

    @property
    def is_external(self) -> bool:
        return self.kind == KIND_EXTERNAL

    @property
    def resolved_agent_id(self) -> str:
        return self.agent_id or self.name


@dataclass(frozen=True)
class Registry:
    tools: tuple[ToolDescriptor, ...]
    system_preamble: str = ""
    answer_instructions: str = ""
    verbosity: str = "full"
    _index: dict[str, ToolDescriptor] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        index: dict[str, ToolDescriptor] = {}
        for tool in self.tools:
            if tool.name in index:
                raise DuplicateName(f"duplicate tool name {tool.name!r}")
            index[tool.name] = tool
        for tool in self.tools:
            for alias in tool.aliases:
                if alias in index:
                    raise DuplicateName(f"alias {alias!r} of {tool.name!r} collides with an existing name or alias")
                index[alias] = tool
        self._index.update(index)

    def __len__(self) -> int:
        return len(self.tools)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tools]

    def alias_table(self) -> dict[str, str]:
        return {a: t.name for t in self.tools for a in t.aliases}


def _is_absolute_url(value: Any) -> bool:
    if not isinstance(value, str):
        return False
    parsed = urlparse(value)
    return parsed.scheme in ("http", "https") and bool(parsed.netloc)


def _expect(obj: dict, key: str, typ: type | tuple[type, ...], where: str, default: Any = ...) -> Any:
    if key not in obj:
        if default is ...:
            raise SchemaViolation(f"{where}: missing field {key!r}")
        return default
    value = obj[key]
    if not isinstance(value, typ):
        raise SchemaViolation(f"{where}: field {key!r} must be {getattr(typ, '__name__', typ)}")
    return value


def _descriptor(raw: Any, position: int) -> ToolDescriptor:
    where = f"tools[{position}]"
    if not isinstance(raw, dict):
        raise SchemaViolation(f"{where}: expected an object")
    name = _expect(raw, "name", str, where)
    try:
        markers.check_tool_name(name)
    except BadToolName as exc:
        raise SchemaViolation(f"{where}: {exc}") from exc
    examples = []
    for i, ex in enumerate(_expect(raw, "usage_examples", list, where, [])):
        if not isinstance(ex, dict) or not isinstance(ex.get("query"), str) or not isinstance(ex.get("result"), str):
            raise SchemaViolation(f"{where}.usage_examples[{i}]: expected {{query, result}} strings")
        examples.append((ex["query"], ex["result"]))
    kind = _expect(raw, "kind", str, where, KIND_BUILTIN)
    if kind not in (KIND_BUILTIN, KIND_EXTERNAL):
        raise SchemaViolation(f"{where}: kind must be 'builtin' or 'external', got {kind!r}")
    endpoint = raw.get("endpoint")
    if kind == KIND_EXTERNAL and not _is_absolute_url(endpoint):
        raise BadEndpoint(f"{where} ({name}): endpoint {endpoint!r} is not an absolute http(s) URL")
    timeout_ms = _expect(raw, "timeout_ms", int, where, DEFAULT_TIMEOUT_MS)
    if timeout_ms <= 0:
        raise SchemaViolation(f"{where}: timeout_ms must be positive")
    aliases = _expect(raw, "aliases", list, where, [])
    if not all(isinstance(a, str) and a for a in aliases):
        raise SchemaViolation(f"{where}: aliases must be non-empty strings")
    agent_id = raw.get("agent_id")
    if agent_id is not None and not isinstance(agent_id, str):
        raise SchemaViolation(f"{where}: agent_id must be a string")
    return ToolDescriptor(
        name=name,
        description=_expect(raw, "description", str, where),
        input_spec=_expect(raw, "input_spec", str, where, ""),
        output_spec=_expect(raw, "output_spec", str, where, ""),
        usage_examples=tuple(examples),
        kind=kind,
        agent_id=agent_id,
        endpoint=endpoint,
        timeout_ms=timeout_ms,
        aliases=tuple(aliases),
    )


def load(document: str | dict) -> Registry:
    """Validate a registry config (JSON text or parsed object)."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc.msg} at line {exc.lineno}") from exc
    if not isinstance(document, dict):
        raise SchemaViolation("registry config must be a JSON object")
    raw_tools = _expect(document, "tools", list, "registry")
    if not raw_tools and not document.get("allow_empty", False):
        raise SchemaViolation("registry has no tools; set allow_empty to accept an empty registry")
    verbosity = _expect(document, "verbosity", str, "registry", "full")
    if verbosity not in ("full", "summary"):
        raise SchemaViolation("verbosity must be 'full' or 'summary'")
    tools = tuple(_descriptor(raw, i) for i, raw in enumerate(raw_tools))
    return Registry(
        tools=tools,
        system_preamble=_expect(document, "system_preamble", str, "registry", ""),
        answer_instructions=_expect(document, "answer_instructions", str, "registry", ""),
        verbosity=verbosity,
    )


def load_file(path: str | Path) -> Registry:
    return load(Path(path).read_text(encoding="utf-8"))


def lookup(registry: Registry, name: str) -> ToolDescriptor:
    try:
        return registry._index[name]
    except KeyError:
        raise UnknownTool(f"no tool registered as {name!r}") from None


def ordered_tools(registry: Registry, priority: Sequence[str] | None = None) -> list[ToolDescriptor]:
    """Declaration order, with any tools named in ``priority`` moved to the front."""
    if not priority:
        return list(registry.tools)
    front = [lookup(registry, n) for n in priority if n in registry._index]
    seen = set()
    head = []
    for t in front:
        if t.name not in seen:
            seen.add(t.name)
            head.append(t)
    return head + [t for t in registry.tools if t.name not in seen]


def _tool_section(tool: ToolDescriptor, verbosity: str) -> str:
    lines = [
        f"### Tool: {tool.name}",
        f"Invoke with:\n{markers.render_query(tool.name, '<your request>')}",
        f"Description: {tool.description}",
    ]
    if tool.input_spec:
        lines.append(f"Input: {tool.input_spec}")
    if tool.output_spec:
        lines.append(f"Output: {tool.output_spec}")
    if tool.aliases:
        lines.append("Also known as: " + ", ".join(tool.aliases))
    if verbosity == "full":
        for i, (query, result) in enumerate(tool.usage_examples, start=1):
            lines.append(f"Example {i} query: {query}")
            lines.append(f"Example {i} result: {result}")
    return "\n".join(lines)


def render_context(
    registry: Registry,
    strategy_preamble: str = "",
    priority: Sequence[str] | None = None,
) -> str:
    """Deterministic system context: preamble, strategy addendum, tools, answer instructions."""
    parts: list[str] = []
    if registry.system_preamble:
        parts.append(registry.system_preamble)
    if strategy_preamble:
        parts.append(strategy_preamble)
    parts.extend(_tool_section(t, registry.verbosity) for t in ordered_tools(registry, priority))
    if registry.answer_instructions:
        parts.append(registry.answer_instructions)
    return "\n\n".join(parts)


def descriptor_to_dict(tool: ToolDescriptor) -> dict[str, Any]:
    out: dict[str, Any] = {
        "name": tool.name,
        "description": tool.description,
        "input_spec": tool.input_spec,
        "output_spec": tool.output_spec,
        "usage_examples": [{"query": q, "result": r} for q, r in tool.usage_examples],
        "kind": tool.kind,
        "aliases": list(tool.aliases),
    }
    if tool.agent_id is not None:
        out["agent_id"] = tool.agent_id
    if tool.is_external:
        out["endpoint"] = tool.endpoint
        out["timeout_ms"] = tool.timeout_ms
    return out


def dump(registry: Registry) -> dict[str, Any]:
    return {
        "system_preamble": registry.system_preamble,
        "answer_instructions": registry.answer_instructions,
        "verbosity": registry.verbosity,
        "allow_empty": not registry.tools,
        "tools": [descriptor_to_dict(t) for t in registry.tools],
    }


def external_tools(registry: Registry) -> Iterable[ToolDescriptor]:
    return (t for t in registry.tools if t.is_external)
