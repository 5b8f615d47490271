"""Tool-call marker grammar: scanning generated text and rendering blocks.

Blocks look like::

    <|begin_sql_query|>
    SELECT 1
    <|end_sql_query|>

The scanner works on accumulated text (``str`` or raw ``bytes``) and reports
the earliest complete query or answer block.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

from .errors import BadToolName, MismatchedEnd, NestedMarker, OversizePayload

BEGIN_QUERY = "<|begin_{tool}_query|>"
END_QUERY = "<|end_{tool}_query|>"
BEGIN_RESULT = "<|begin_{tool}_result|>"
END_RESULT = "<|end_{tool}_result|>"
ANSWER_BEGIN = "<|begin_answer|>"
ANSWER_END = "<|end_answer|>"

DEFAULT_MAX_PAYLOAD = 64 * 1024

TOOL_NAME_RE = re.compile(r"[A-Za-z0-9_]+")

# Tool names may contain underscores, so the name group is greedy and the
# regex engine backtracks to the final "_query".
_MARKER_RE = re.compile(r"<\|(begin|end)_(?:([A-Za-z0-9_]+)_query|(answer))\|>")

# Legacy bracket tokens seen in prompts written for the bracket style.
DEFAULT_ALIASES: dict[str, str] = {
    "[IMAGE_QUERY]": "image",
    "[SQL_QUERY]": "sql",
    "[WEB_QUERY]": "web",
}


@dataclass(frozen=True)
class Prose:
    text: str


@dataclass(frozen=True)
class ToolQuery:
    tool: str
    payload: str
    consumed: int  # UTF-8 bytes up to and including the end marker
    prose: str = ""  # text preceding the begin marker


@dataclass(frozen=True)
class AnswerBlock:
    text: str
    consumed: int
    prose: str = ""


@dataclass(frozen=True)
class Incomplete:
    tool: str | None = None  # open query block's tool; None when the answer block is open

    @property
    def closing_marker(self) -> str:
        return end_query(self.tool) if self.tool is not None else ANSWER_END


ParseEvent = Union[Prose, ToolQuery, AnswerBlock, Incomplete]


def check_tool_name(tool: str) -> str:
    if not isinstance(tool, str) or not TOOL_NAME_RE.fullmatch(tool):
        raise BadToolName(f"invalid tool name {tool!r}")
    return tool


def begin_query(tool: str) -> str:
    return BEGIN_QUERY.format(tool=check_tool_name(tool))


def end_query(tool: str) -> str:
    return END_QUERY.format(tool=check_tool_name(tool))


def render_query(tool: str, payload: str) -> str:
    return f"{begin_query(tool)}\n{payload}\n{end_query(tool)}"


def render_result(tool: str, payload: str) -> str:
    check_tool_name(tool)
    return f"{BEGIN_RESULT.format(tool=tool)}\n{payload}\n{END_RESULT.format(tool=tool)}"


def render_answer(text: str) -> str:
    return f"{ANSWER_BEGIN}\n{text}\n{ANSWER_END}"


def stop_sequences(tools) -> list[str]:
    """Every end-of-query marker for ``tools`` plus the answer end marker."""
    return [end_query(t) for t in tools] + [ANSWER_END]


def alias_map(legacy_token: str, table: Mapping[str, str] | None = None) -> str | None:
    """Canonical tool name for a bracket token such as ``[SQL_QUERY]``, or None."""
    table = DEFAULT_ALIASES if table is None else table
    return table.get(legacy_token.strip())


def _byte_len(text: str) -> int:
    return len(text.encode("utf-8", "surrogateescape"))


def scan(buffer: str | bytes, max_payload: int = DEFAULT_MAX_PAYLOAD) -> ParseEvent:
    """Return the earliest complete tool query or answer block in ``buffer``.

    Raises NestedMarker when a begin marker appears inside an open block,
    MismatchedEnd for an end marker that does not close the open block, and
    OversizePayload when a payload (complete or still open) exceeds
    ``max_payload`` bytes.
    """
    if isinstance(buffer, bytes):
        buffer = buffer.decode("utf-8", "surrogateescape")

    open_kind: str | None = None  # tool name, or "" for the answer block
    open_begin = open_body = 0

    for m in _MARKER_RE.finditer(buffer):
        edge, tool, answer = m.group(1), m.group(2), m.group(3)
        kind = "" if answer else tool
        if edge == "begin":
            if open_kind is not None:
                raise NestedMarker(f"begin marker {m.group(0)!r} at offset {m.start()} inside an open block")
            open_kind, open_begin, open_body = kind, m.start(), m.end()
            continue
        if open_kind is None:
            raise MismatchedEnd(f"end marker {m.group(0)!r} at offset {m.start()} with no open block")
        if kind != open_kind:
            raise MismatchedEnd(f"end marker {m.group(0)!r} does not close the open block")
        body = buffer[open_body : m.start()]
        if _byte_len(body) > max_payload:
            raise OversizePayload(f"payload of {_byte_len(body)} bytes exceeds {max_payload}")
        consumed = _byte_len(buffer[: m.end()])
        prose = buffer[:open_begin]
        if kind:
            return ToolQuery(tool=kind, payload=body.strip(), consumed=consumed, prose=prose)
        return AnswerBlock(text=body.strip(), consumed=consumed, prose=prose)

    if open_kind is not None:
        if _byte_len(buffer[open_body:]) > max_payload:
            raise OversizePayload(f"open payload exceeds {max_payload} bytes")
        return Incomplete(tool=open_kind or None)
    return Prose(buffer)
