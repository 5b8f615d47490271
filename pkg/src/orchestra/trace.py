"""Trajectory data model and the append-only JSONL audit trail.

A trajectory bundles the question, the rendered knowledge context, the ordered
reasoning steps with their tool evidence, and the final answer.  Records are
immutable; :func:`append_step` and :func:`finalize` return new values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from . import markers
from .errors import AlreadyFinalized, IndexGap, MalformedRecord, PendingToolCall

STATUS_OK = "ok"
STATUS_ERROR = "error"


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    label_set: tuple[str, ...] = ()
    gold: str | None = None
    attachments: tuple[tuple[str, str], ...] = ()
    aliases: dict[str, str] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if self.gold is not None and self.gold not in self.label_set:
            raise ValueError(f"gold label {self.gold!r} not in label_set {list(self.label_set)}")

    def prompt(self) -> str:
        """User-turn text: the question followed by one line per attachment."""
        lines = [self.text]
        lines.extend(f"[attachment] {kind}: {ref}" for kind, ref in self.attachments)
        return "\n".join(lines)


@dataclass(frozen=True)
class StrategyDescriptor:
    name: str
    preamble: str = ""
    temperature: float = 0.0
    tool_priority_hint: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "preamble": self.preamble,
            "temperature": self.temperature,
            "tool_priority_hint": list(self.tool_priority_hint) if self.tool_priority_hint is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StrategyDescriptor":
        hint = data.get("tool_priority_hint")
        return cls(
            name=data["name"],
            preamble=data.get("preamble", ""),
            temperature=float(data.get("temperature", 0.0)),
            tool_priority_hint=tuple(hint) if hint is not None else None,
        )


@dataclass(frozen=True)
class ToolCallRecord:
    tool: str
    query: str
    result: str | None = None
    status: str | None = None  # None while the call is pending
    error: str | None = None
    latency_ms: float = 0.0
    # characters of `result` shown to the model; None means the full result
    shown_chars: int | None = None

    @property
    def pending(self) -> bool:
        return self.status is None


@dataclass(frozen=True)
class ReasoningStep:
    index: int
    prose: str
    tool_call: ToolCallRecord | None = None


@dataclass(frozen=True)
class TrajectoryRecord:
    question_id: str
    knowledge_context: str
    question_text: str
    strategy: StrategyDescriptor
    seed: int = 0
    steps: tuple[ReasoningStep, ...] = ()
    answer: str | None = None
    wall_time: float = 0.0
    started_at_ms: int = 0
    context_hashes: tuple[str, ...] = ()
    error: str | None = None

    @property
    def finalized(self) -> bool:
        return self.answer is not None

    @property
    def budget_used(self) -> int:
        return len(self.steps)

    @property
    def tool_calls(self) -> list[ToolCallRecord]:
        return [s.tool_call for s in self.steps if s.tool_call is not None]


def new_trajectory(
    question: Question,
    knowledge_context: str,
    strategy: StrategyDescriptor,
    seed: int = 0,
) -> TrajectoryRecord:
    return TrajectoryRecord(
        question_id=question.id,
        knowledge_context=knowledge_context,
        question_text=question.prompt(),
        strategy=strategy,
        seed=seed,
        started_at_ms=int(time.time() * 1000),
    )


def append_step(trajectory: TrajectoryRecord, step: ReasoningStep) -> TrajectoryRecord:
    if trajectory.finalized:
        raise AlreadyFinalized(f"trajectory for {trajectory.question_id} is finalized")
    if step.index != len(trajectory.steps):
        raise IndexGap(f"expected step index {len(trajectory.steps)}, got {step.index}")
    return dataclasses.replace(trajectory, steps=trajectory.steps + (step,))


def finalize(trajectory: TrajectoryRecord, answer: str) -> TrajectoryRecord:
    if trajectory.finalized:
        raise AlreadyFinalized(f"trajectory for {trajectory.question_id} is finalized")
    if trajectory.steps:
        last = trajectory.steps[-1].tool_call
        if last is not None and last.pending:
            raise PendingToolCall(f"step {trajectory.steps[-1].index} has an unanswered tool call")
    return dataclasses.replace(trajectory, answer=answer)


# --- context reconstruction ----------------------------------------------------


def evidence_text(call: ToolCallRecord) -> str:
    """The payload placed inside the result block the model sees."""
    if call.status == STATUS_ERROR:
        return f"ERROR: {call.error}"
    result = call.result or ""
    if call.shown_chars is None:
        return result
    return result[: call.shown_chars] + f"\n[truncated: showing {call.shown_chars} of {len(result)} chars]"


def build_messages(knowledge_context: str, question_text: str, steps: Iterable[ReasoningStep]) -> list[dict[str, str]]:
    """Rebuild the chat transcript submitted before the generation following ``steps``.

    Pure function of its inputs. Each tool step contributes an assistant turn
    (prose plus the canonical query block) and a user turn carrying the result
    block.
    """
    messages = [
        {"role": "system", "content": knowledge_context},
        {"role": "user", "content": question_text},
    ]
    for step in steps:
        call = step.tool_call
        if call is None:
            raise ValueError(f"step {step.index} has no tool call; only tool steps precede a generation")
        messages.append({"role": "assistant", "content": step.prose + markers.render_query(call.tool, call.query)})
        messages.append({"role": "user", "content": markers.render_result(call.tool, evidence_text(call))})
    return messages


def context_hash(messages: list[dict[str, str]]) -> str:
    blob = json.dumps(messages, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def replay_hashes(trajectory: TrajectoryRecord) -> list[str]:
    """Context hashes for every generation call, recomputed from the record alone."""
    hashes = []
    for i in range(len(trajectory.steps)):
        prior = trajectory.steps[:i]
        hashes.append(context_hash(build_messages(trajectory.knowledge_context, trajectory.question_text, prior)))
    return hashes


# --- serialization -------------------------------------------------------------


def _step_to_dict(step: ReasoningStep) -> dict[str, Any]:
    call = step.tool_call
    return {
        "t": step.index,
        "prose": step.prose,
        "tool": call.tool if call else None,
        "query": call.query if call else None,
        "result": call.result if call else None,
        "status": call.status if call else None,
        "error": call.error if call else None,
        "latency_ms": call.latency_ms if call else None,
        "shown_chars": call.shown_chars if call else None,
    }


def to_dict(trajectory: TrajectoryRecord) -> dict[str, Any]:
    return {
        "question_id": trajectory.question_id,
        "strategy": trajectory.strategy.to_dict(),
        "seed": trajectory.seed,
        "knowledge_context": trajectory.knowledge_context,
        "question_text": trajectory.question_text,
        "steps": [_step_to_dict(s) for s in trajectory.steps],
        "answer": trajectory.answer,
        "wall_time_s": trajectory.wall_time,
        "started_at_ms": trajectory.started_at_ms,
        "context_hashes": list(trajectory.context_hashes),
        "error": trajectory.error,
    }


def write_trace(trajectory: TrajectoryRecord) -> str:
    """Serialize one trajectory as a single JSON line (no trailing newline)."""
    return json.dumps(to_dict(trajectory), ensure_ascii=False, separators=(",", ":"))


def _require(data: dict, key: str, types: type | tuple[type, ...], line: int | None):
    if key not in data:
        raise MalformedRecord(f"missing field {key!r}", line)
    value = data[key]
    if not isinstance(value, types):
        raise MalformedRecord(f"field {key!r} has type {type(value).__name__}", line)
    return value


def _step_from_dict(data: Any, line: int | None) -> ReasoningStep:
    if not isinstance(data, dict):
        raise MalformedRecord("step is not an object", line)
    index = _require(data, "t", int, line)
    prose = _require(data, "prose", str, line)
    tool = data.get("tool")
    if tool is None:
        return ReasoningStep(index=index, prose=prose)
    status = data.get("status")
    if status not in (STATUS_OK, STATUS_ERROR, None):
        raise MalformedRecord(f"step {index}: unknown status {status!r}", line)
    result = data.get("result")
    if status == STATUS_OK and result is None:
        raise MalformedRecord(f"step {index}: ok status without result", line)
    latency = data.get("latency_ms") or 0.0
    call = ToolCallRecord(
        tool=tool,
        query=_require(data, "query", str, line),
        result=result,
        status=status,
        error=data.get("error"),
        latency_ms=float(latency) if not isinstance(latency, float) else latency,
        shown_chars=data.get("shown_chars"),
    )
    return ReasoningStep(index=index, prose=prose, tool_call=call)


def from_dict(data: Any, line: int | None = None) -> TrajectoryRecord:
    if not isinstance(data, dict):
        raise MalformedRecord("record is not a JSON object", line)
    raw_steps = _require(data, "steps", list, line)
    steps = tuple(_step_from_dict(s, line) for s in raw_steps)
    for expected, step in enumerate(steps):
        if step.index != expected:
            raise MalformedRecord(f"step indices out of order: expected {expected}, got {step.index}", line)
    strategy_raw = _require(data, "strategy", dict, line)
    try:
        strategy = StrategyDescriptor.from_dict(strategy_raw)
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedRecord(f"bad strategy: {exc}", line) from exc
    answer = data.get("answer")
    if answer is not None and not isinstance(answer, str):
        raise MalformedRecord("answer must be a string or null", line)
    wall = data.get("wall_time_s", 0.0)
    return TrajectoryRecord(
        question_id=_require(data, "question_id", str, line),
        knowledge_context=_require(data, "knowledge_context", str, line),
        question_text=data.get("question_text", ""),
        strategy=strategy,
        seed=_require(data, "seed", int, line),
        steps=steps,
        answer=answer,
        wall_time=float(wall) if not isinstance(wall, float) else wall,
        started_at_ms=int(data.get("started_at_ms", 0)),
        context_hashes=tuple(data.get("context_hashes", ())),
        error=data.get("error"),
    )


def read_trace(record: str, line: int | None = None) -> TrajectoryRecord:
    try:
        data = json.loads(record)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON: {exc.msg}", line) from exc
    return from_dict(data, line)


def iter_trace_file(path: str | Path) -> Iterator[TrajectoryRecord]:
    """Yield trajectories from a JSONL trace file; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            yield read_trace(raw, line=lineno)


def read_trace_file(path: str | Path) -> list[TrajectoryRecord]:
    return list(iter_trace_file(path))


class TraceStore:
    """Append-only JSONL writer; safe for concurrent appends from many trajectories."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, trajectory: TrajectoryRecord) -> None:
        line = write_trace(trajectory) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()

    def read(self) -> list[TrajectoryRecord]:
        if not self.path.exists():
            return []
        return read_trace_file(self.path)


# --- human-readable rendering -------------------------------------------------------


def _clip(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    return text[:limit] + f"\n[... showing {limit} of {len(text)} chars]"


def render_text(trajectory: TrajectoryRecord, max_result_chars: int = 800) -> str:
    """Numbered turns with their query and result blocks, then the conclusion."""
    strategy = trajectory.strategy
    out = [f"=== question {trajectory.question_id} | strategy {strategy.name} | seed {trajectory.seed} ==="]
    turn = 0
    for step in trajectory.steps:
        call = step.tool_call
        if call is None:
            continue
        turn += 1
        out.append(f"------------ Turn {turn} ------------")
        if step.prose.strip():
            out.append(step.prose.strip())
        out.append(f"[tool: {call.tool}]")
        out.append(markers.render_query(call.tool, call.query))
        out.append("System returns:")
        if call.status == STATUS_ERROR:
            body = f"ERROR: {call.error}"
        elif call.status is None:
            body = "(pending)"
        else:
            body = _clip(call.result or "", max_result_chars)
        out.append(markers.render_result(call.tool, body))
    if trajectory.finalized:
        out.append("------------ Conclusion ------------")
        final = trajectory.steps[-1] if trajectory.steps else None
        if final is not None and final.tool_call is None and final.prose.strip() and final.prose.strip() != trajectory.answer:
            out.append(final.prose.strip())
        out.append(trajectory.answer or "")
    else:
        out.append("------------ Unfinished ------------")
        out.append(trajectory.error or "no answer recorded")
    return "\n".join(out) + "\n"
