"""Exception hierarchy shared across the runtime."""

from __future__ import annotations


class OrchestraError(Exception):
    """Base class for every error raised by this package."""


# --- trajectories / traces -------------------------------------------------


class TraceError(OrchestraError):
    pass


class AlreadyFinalized(TraceError):
    pass


class IndexGap(TraceError):
    pass


class PendingToolCall(TraceError):
    pass


class MalformedRecord(TraceError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


# --- marker grammar --------------------------------------------------------


class MarkerError(OrchestraError):
    pass


class NestedMarker(MarkerError):
    pass


class MismatchedEnd(MarkerError):
    pass


class OversizePayload(MarkerError):
    pass


class BadToolName(MarkerError):
    pass


# --- registry ----------------------------------------------------------------


class RegistryError(OrchestraError):
    pass


class DuplicateName(RegistryError):
    pass


class BadEndpoint(RegistryError):
    pass


class SchemaViolation(RegistryError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class UnknownTool(RegistryError):
    pass


# --- backends ------------------------------------------------------------------


class BackendError(OrchestraError):
    retryable = False


class Timeout(BackendError):
    retryable = True


class RateLimited(BackendError):
    retryable = True

    def __init__(self, message: str = "rate limited", retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class ProtocolError(BackendError):
    pass


class NoScriptMatch(BackendError):
    pass


# --- engine --------------------------------------------------------------------


class EngineError(OrchestraError):
    """Raised when a trajectory cannot finish; carries the partial record."""

    def __init__(self, message: str, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


BUDGET_PREFIX = "budget exhausted"


class BudgetExhausted(EngineError):
    def __init__(self, kind: str, trajectory=None):
        super().__init__(f"{BUDGET_PREFIX}: {kind}", trajectory)
        self.kind = kind


class MissingAnswerBlock(EngineError):
    pass


class MalformedSegment(EngineError):
    pass


# --- agents --------------------------------------------------------------------


class AgentError(OrchestraError):
    pass


class NonSelectRejected(AgentError):
    pass


class ExecutionFailed(AgentError):
    pass


class SchemaUnavailable(AgentError):
    pass


class EmptyCorpus(AgentError):
    pass


class ProviderUnavailable(AgentError):
    pass


class FetchTimeout(AgentError):
    pass


class SandboxError(AgentError):
    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class TimeLimit(SandboxError):
    pass


class MemoryLimit(SandboxError):
    pass


class NonZeroExit(SandboxError):
    pass


class EmptySeries(AgentError):
    pass


class RemoteError(AgentError):
    def __init__(self, status: int, body: str):
        super().__init__(f"remote error {status}: {body[:200]}")
        self.status = status
        self.body = body


class RemoteTimeout(AgentError):
    pass


# --- evaluation ----------------------------------------------------------------


class EvaluationError(OrchestraError):
    pass


class EmptyList(EvaluationError):
    pass


class LengthMismatch(EvaluationError):
    pass


class EmptyMatrix(EvaluationError):
    pass
