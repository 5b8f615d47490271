"""The reasoning loop: generate, scan for a tool query, route, execute, integrate, repeat."""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from . import agents as agent_mod
from . import markers
from .backends import Backend, GenerationRequest, RetryPolicy, with_retry
from .errors import (
    BackendError,
    BudgetExhausted,
    EngineError,
    MalformedSegment,
    MarkerError,
    MissingAnswerBlock,
    OrchestraError,
    UnknownTool,
)
from .evaluation import LabelSet, majority_at_k, normalize_answer, vote_fractions
from .registry import Registry, lookup, render_context
from .trace import (
    STATUS_ERROR,
    STATUS_OK,
    Question,
    ReasoningStep,
    StrategyDescriptor,
    ToolCallRecord,
    TraceStore,
    TrajectoryRecord,
    append_step,
    context_hash,
    evidence_text,
    finalize,
    new_trajectory,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EngineBudget:
    max_steps: int = 16
    max_wall_seconds: float = 300.0
    max_consecutive_tool_failures: int = 3

    def __post_init__(self) -> None:
        if self.max_steps <= 0 or self.max_wall_seconds <= 0 or self.max_consecutive_tool_failures <= 0:
            raise ValueError("budgets must be positive")


@dataclass(frozen=True)
class CaseResult:
    question_id: str
    trajectories: tuple[TrajectoryRecord, ...]
    normalized_answers: tuple[str | None, ...]
    vote_fractions: dict[str, float] = field(default_factory=dict)
    answer: str | None = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "answers": [t.answer for t in self.trajectories],
            "errors": [t.error for t in self.trajectories],
            "normalized_answers": list(self.normalized_answers),
            "vote_fractions": self.vote_fractions,
            "answer": self.answer,
        }


PREAMBLE_VARIANTS: dict[str, str] = {
    "baseline": "",
    "evidence-first": (
        "Reasoning strategy: gather patient-specific evidence (records, measurements, history) "
        "before consulting general knowledge."
    ),
    "imaging-first": (
        "Reasoning strategy: begin with imaging findings when imaging is available, "
        "then corroborate them with other evidence."
    ),
    "guideline-first": (
        "Reasoning strategy: first establish the relevant clinical guideline criteria, "
        "then test the case against them."
    ),
}


def default_strategies(k: int, registry: Registry | None = None, temperature: float | None = None) -> list[StrategyDescriptor]:
    """Baseline, three preamble variants and one tool-priority reordering, cycled to length k."""
    if temperature is None:
        temperature = 0.0 if k == 1 else 0.7
    base = [StrategyDescriptor(name, text, temperature) for name, text in PREAMBLE_VARIANTS.items()]
    reordered = tuple(reversed(registry.names)) if registry is not None and len(registry) > 1 else None
    base.append(StrategyDescriptor("reordered-tools", "", temperature, reordered))
    out = []
    for i in range(k):
        s = base[i % len(base)]
        if i >= len(base):
            s = dataclasses.replace(s, name=f"{s.name}#{i // len(base) + 1}")
        out.append(s)
    return out


def normalize_for(question: Question, answer: str | None) -> str | None:
    if answer is None:
        return None
    if question.label_set:
        return normalize_answer(answer, LabelSet.of(question))
    return answer.strip() or None


class Engine:
    """Runs trajectories for one registry, backend and agent table.

    ``strict`` requires an explicit answer block; otherwise a marker-free
    segment is taken as the conclusion. ``max_evidence_chars`` truncates what
    the model sees of each tool result (the trace keeps the full text).
    ``route_with_prose`` sends the prose preceding a query along with it.
    """

    def __init__(
        self,
        registry: Registry,
        backend: Backend,
        agents: Mapping[str, agent_mod.Agent] | None = None,
        budget: EngineBudget = EngineBudget(),
        strict: bool = True,
        max_tokens: int = 1024,
        max_evidence_chars: int | None = None,
        route_with_prose: bool = False,
        retry_policy: RetryPolicy = RetryPolicy(max_attempts=1),
        use_stop_sequences: bool = True,
        observers: Sequence[Callable[[ReasoningStep], None]] = (),
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.registry = registry
        self.backend = backend
        self.tools = agent_mod.resolve(registry, agents or {})
        self.budget = budget
        self.strict = strict
        self.max_tokens = max_tokens
        self.max_evidence_chars = max_evidence_chars
        self.route_with_prose = route_with_prose
        self.retry_policy = retry_policy
        self.observers = list(observers)
        self.clock = clock
        self.sleep = sleep
        self.stop_sequences: tuple[str, ...] = ()
        if use_stop_sequences:
            stops = markers.stop_sequences(registry.names)
            cap = getattr(backend, "max_stop_sequences", None)
            # Providers with short stop lists fall back to scanning the full segment.
            if cap is None or len(stops) <= cap:
                self.stop_sequences = tuple(stops)

    # -- one trajectory ---------------------------------------------------------

    def _execute(self, query: markers.ToolQuery) -> ToolCallRecord:
        started = time.perf_counter()
        result = error = None
        try:
            descriptor = lookup(self.registry, query.tool)
            agent = self.tools[descriptor.name]
            payload = query.payload
            if self.route_with_prose and query.prose.strip():
                payload = f"{query.prose.strip()}\n\n{payload}"
            result = agent(payload)
            if not isinstance(result, str):
                result = str(result)
        except UnknownTool as exc:
            error = f"UnknownToolInvoked: {exc}"
        except Exception as exc:  # tool failures are fed back to the model
            error = f"{type(exc).__name__}: {exc}"
        latency = (time.perf_counter() - started) * 1000.0
        if error is not None:
            return ToolCallRecord(query.tool, query.payload, None, STATUS_ERROR, error, latency)
        shown = None
        if self.max_evidence_chars is not None and len(result) > self.max_evidence_chars:
            shown = self.max_evidence_chars
        return ToolCallRecord(query.tool, query.payload, result, STATUS_OK, None, latency, shown)

    def run_trajectory(self, question: Question, strategy: StrategyDescriptor, seed: int = 0) -> TrajectoryRecord:
        start = self.clock()
        knowledge = render_context(self.registry, strategy.preamble, strategy.tool_priority_hint)
        traj = new_trajectory(question, knowledge, strategy, seed)
        messages = [
            {"role": "system", "content": knowledge},
            {"role": "user", "content": traj.question_text},
        ]
        hashes: list[str] = []
        failures = 0

        def stamp(t: TrajectoryRecord, error: str | None = None) -> TrajectoryRecord:
            return dataclasses.replace(t, context_hashes=tuple(hashes), wall_time=self.clock() - start, error=error)

        def fail(exc_type, *args, cause: BaseException | None = None):
            err = exc_type(*args)
            err.trajectory = stamp(traj, str(err))
            if cause is not None:
                raise err from cause
            raise err

        def check_wall() -> None:
            if self.clock() - start > self.budget.max_wall_seconds:
                fail(BudgetExhausted, "wall_time")

        for _ in range(self.budget.max_steps):
            check_wall()
            hashes.append(context_hash(messages))
            request = GenerationRequest(
                messages=tuple(dict(m) for m in messages),
                temperature=strategy.temperature,
                seed=seed,
                stop_sequences=self.stop_sequences,
                max_tokens=self.max_tokens,
            )
            try:
                res = with_retry(self.backend, request, self.retry_policy, self.sleep)
            except BackendError as exc:
                fail(EngineError, f"backend failure: {type(exc).__name__}: {exc}", cause=exc)

            text = res.text
            if res.stop_reason == "stop_sequence" and res.matched_stop:
                text += res.matched_stop
            try:
                event = markers.scan(text)
                if isinstance(event, markers.Incomplete) and res.stop_reason == "stop_sequence":
                    # the provider swallowed an unidentified stop; close the open block
                    event = markers.scan(text + event.closing_marker)
            except MarkerError as exc:
                fail(MalformedSegment, f"{type(exc).__name__}: {exc}", cause=exc)

            index = len(traj.steps)
            if isinstance(event, markers.ToolQuery):
                call = self._execute(event)
                step = ReasoningStep(index, event.prose, call)
                traj = append_step(traj, step)
                for observe in self.observers:
                    observe(step)
                messages.append({"role": "assistant", "content": event.prose + markers.render_query(event.tool, event.payload)})
                messages.append({"role": "user", "content": markers.render_result(event.tool, evidence_text(call))})
                failures = failures + 1 if call.status == STATUS_ERROR else 0
                if failures >= self.budget.max_consecutive_tool_failures:
                    fail(BudgetExhausted, "tool_failures")
                check_wall()
                continue

            if isinstance(event, markers.AnswerBlock):
                step = ReasoningStep(index, event.prose)
                answer = event.text
            elif isinstance(event, markers.Prose):
                if self.strict:
                    traj = append_step(traj, ReasoningStep(index, event.text))
                    fail(MissingAnswerBlock, "segment ended without an answer block or tool query")
                step = ReasoningStep(index, event.text)
                answer = event.text.strip()
            else:
                fail(MalformedSegment, "segment ended inside an unterminated block")
            traj = append_step(traj, step)
            for observe in self.observers:
                observe(step)
            return finalize(stamp(traj), answer)

        fail(BudgetExhausted, "steps")

    # -- k trajectories -----------------------------------------------------------

    def _safe_run(self, question: Question, strategy: StrategyDescriptor, seed: int) -> TrajectoryRecord:
        try:
            return self.run_trajectory(question, strategy, seed)
        except OrchestraError as exc:
            traj = getattr(exc, "trajectory", None)
            if traj is None:
                knowledge = render_context(self.registry, strategy.preamble, strategy.tool_priority_hint)
                traj = dataclasses.replace(new_trajectory(question, knowledge, strategy, seed), error=str(exc))
            logger.info("trajectory %s/%s failed: %s", question.id, strategy.name, exc)
            return traj

    def run_case(
        self,
        question: Question,
        k: int = 1,
        strategies: Sequence[StrategyDescriptor] | None = None,
        base_seed: int = 0,
        max_workers: int = 1,
        store: TraceStore | None = None,
    ) -> CaseResult:
        """Run ``k`` independent trajectories; failures become abstentions, never abort the case."""
        if k < 1:
            raise ValueError("k must be positive")
        if strategies is None:
            strategies = default_strategies(k, self.registry)
        elif len(strategies) == 1:
            strategies = list(strategies) * k
        elif len(strategies) != k:
            raise ValueError(f"need 1 or {k} strategies, got {len(strategies)}")
        seeds = [base_seed + i for i in range(k)]
        jobs = list(zip(strategies, seeds))
        if max_workers > 1 and k > 1:
            with ThreadPoolExecutor(max_workers=min(max_workers, k)) as pool:
                trajectories = list(pool.map(lambda job: self._safe_run(question, *job), jobs))
        else:
            trajectories = [self._safe_run(question, s, seed) for s, seed in jobs]
        if store is not None:
            for t in trajectories:
                store.append(t)
        return case_result(question, trajectories)


def case_result(question: Question, trajectories: Sequence[TrajectoryRecord]) -> CaseResult:
    """Aggregate finished trajectories; also used to rebuild results from trace files."""
    normalized = tuple(normalize_for(question, t.answer) for t in trajectories)
    return CaseResult(
        question_id=question.id,
        trajectories=tuple(trajectories),
        normalized_answers=normalized,
        vote_fractions=vote_fractions(normalized),
        answer=majority_at_k(normalized) if normalized else None,
    )


def run_trajectory(
    question: Question,
    registry: Registry,
    backend: Backend,
    agents: Mapping[str, agent_mod.Agent],
    strategy: StrategyDescriptor,
    budget: EngineBudget = EngineBudget(),
    seed: int = 0,
    **options,
) -> TrajectoryRecord:
    return Engine(registry, backend, agents, budget, **options).run_trajectory(question, strategy, seed)


def run_case(
    question: Question,
    k: int,
    strategies: Sequence[StrategyDescriptor] | None,
    registry: Registry,
    backend: Backend,
    agents: Mapping[str, agent_mod.Agent],
    budget: EngineBudget = EngineBudget(),
    base_seed: int = 0,
    max_workers: int = 1,
    store: TraceStore | None = None,
    **options,
) -> CaseResult:
    engine = Engine(registry, backend, agents, budget, **options)
    return engine.run_case(question, k, strategies, base_seed, max_workers, store)
