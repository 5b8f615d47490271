"""HTTP API over a case queue; every response is rebuilt from persisted traces."""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import uuid
from pathlib import Path
from typing import Sequence

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import trace as trace_mod
from .engine import Engine, case_result
from .errors import MalformedRecord
from .registry import render_context
from .trace import Question, StrategyDescriptor, TraceStore

logger = logging.getLogger(__name__)

QUEUED, RUNNING, DONE, FAILED = "queued", "running", "done", "failed"


class QueueFull(Exception):
    pass


class CaseService:
    """Bounded queue of pending cases drained by a fixed pool of worker threads.

    Status of in-flight cases lives in memory. Finished cases are served from
    ``<out>/cases/<id>.question.json`` and ``<out>/cases/<id>.jsonl`` only, so a
    restarted service still answers for them.
    """

    def __init__(
        self,
        engine: Engine,
        out_dir: str | Path,
        k: int = 1,
        strategies: Sequence[StrategyDescriptor] | None = None,
        queue_size: int = 16,
        workers: int | None = None,
        base_seed: int = 0,
    ):
        self.engine = engine
        self.cases_dir = Path(out_dir) / "cases"
        self.cases_dir.mkdir(parents=True, exist_ok=True)
        self.k = k
        self.strategies = list(strategies) if strategies else None
        self.base_seed = base_seed
        self._queue: queue.Queue = queue.Queue(maxsize=queue_size)
        self._status: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._threads = [
            threading.Thread(target=self._worker, name=f"case-worker-{i}", daemon=True)
            for i in range(workers or os.cpu_count() or 1)
        ]
        for t in self._threads:
            t.start()

    # -- paths ----------------------------------------------------------------

    def _question_path(self, case_id: str) -> Path:
        return self.cases_dir / f"{case_id}.question.json"

    def trace_path(self, case_id: str) -> Path:
        return self.cases_dir / f"{case_id}.jsonl"

    # -- queue ----------------------------------------------------------------

    def submit(self, text: str, label_set: Sequence[str] = (), k: int | None = None) -> str:
        k = self.k if k is None else k
        if k < 1:
            raise ValueError("k must be >= 1")
        if self.strategies is not None and len(self.strategies) not in (1, k):
            raise ValueError(f"configured strategies do not cover k={k}")
        case_id = uuid.uuid4().hex
        question = Question(id=case_id, text=text, label_set=tuple(label_set))
        meta = {"question": text, "label_set": list(label_set), "k": k}
        with self._lock:
            self._status[case_id] = {"status": QUEUED}
        self._question_path(case_id).write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
        try:
            self._queue.put_nowait((question, k))
        except queue.Full:
            with self._lock:
                del self._status[case_id]
            self._question_path(case_id).unlink()
            raise QueueFull("case queue is full") from None
        return case_id

    def _worker(self) -> None:
        while True:
            question, k = self._queue.get()
            with self._lock:
                self._status[question.id] = {"status": RUNNING}
            try:
                path = self.trace_path(question.id)
                self.engine.run_case(question, k, self.strategies, self.base_seed, 1, TraceStore(path))
                state = {"status": DONE}
            except Exception as exc:  # noqa: BLE001 - a bad case must not kill the worker
                logger.exception("case %s failed", question.id)
                state = {"status": FAILED, "error": str(exc)}
            with self._lock:
                if state["status"] == DONE:
                    self._status.pop(question.id, None)
                else:
                    self._status[question.id] = state
            self._queue.task_done()

    def join(self) -> None:
        """Block until every queued case has been processed."""
        self._queue.join()

    # -- views ----------------------------------------------------------------

    def question(self, case_id: str) -> Question | None:
        path = self._question_path(case_id)
        if not path.exists():
            return None
        meta = json.loads(path.read_text(encoding="utf-8"))
        return Question(id=case_id, text=meta["question"], label_set=tuple(meta["label_set"]))

    def traces(self, case_id: str) -> list[trace_mod.TrajectoryRecord] | None:
        path = self.trace_path(case_id)
        if not path.exists():
            return None if self.question(case_id) is None else []
        return trace_mod.read_trace_file(path)

    def case(self, case_id: str) -> dict | None:
        with self._lock:
            state = self._status.get(case_id)
        if state is not None:
            return {"case_id": case_id, **state}
        question = self.question(case_id)
        if question is None:
            return None
        trajectories = self.traces(case_id) or []
        if not trajectories:
            # Metadata without traces: the process died before the case ran.
            return {"case_id": case_id, "status": FAILED, "error": "no traces recorded"}
        return {"case_id": case_id, "status": DONE, "result": case_result(question, trajectories).to_dict()}


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


def create_app(service: CaseService) -> FastAPI:
    app = FastAPI(title="orchestra")
    _valid_id = set("0123456789abcdef")

    def known_id(case_id: str) -> bool:
        return len(case_id) == 32 and set(case_id) <= _valid_id

    @app.post("/cases")
    async def post_case(request: Request):
        try:
            body = json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return _error(400, "body must be JSON")
        if not isinstance(body, dict):
            return _error(400, "body must be a JSON object")
        unknown = set(body) - {"question", "label_set", "k"}
        if unknown:
            return _error(400, f"unknown fields: {sorted(unknown)}")
        text = body.get("question")
        if not isinstance(text, str) or not text.strip():
            return _error(400, "question must be a non-empty string")
        labels = body.get("label_set", [])
        if not isinstance(labels, list) or not all(isinstance(x, str) and x for x in labels):
            return _error(400, "label_set must be a list of strings")
        k = body.get("k")
        if k is not None and (not isinstance(k, int) or isinstance(k, bool) or k < 1):
            return _error(400, "k must be a positive integer")
        if not service.engine.backend.available():
            return _error(503, "model backend unreachable")
        try:
            case_id = service.submit(text, labels, k)
        except ValueError as exc:
            return _error(400, str(exc))
        except QueueFull as exc:
            return _error(503, str(exc))
        return JSONResponse({"case_id": case_id}, status_code=202)

    @app.get("/cases/{case_id}")
    def get_case(case_id: str):
        view = service.case(case_id) if known_id(case_id) else None
        if view is None:
            return _error(404, f"unknown case {case_id}")
        return view

    @app.get("/traces/{case_id}")
    def get_traces(case_id: str):
        try:
            records = service.traces(case_id) if known_id(case_id) else None
        except MalformedRecord as exc:
            return _error(500, str(exc))
        if records is None:
            return _error(404, f"unknown case {case_id}")
        return [trace_mod.to_dict(r) for r in records]

    @app.get("/tools")
    def get_tools():
        return Response(render_context(service.engine.registry).encode("utf-8"), media_type="text/plain; charset=utf-8")

    @app.get("/healthz")
    def healthz():
        if not service.engine.backend.available():
            return _error(503, "model backend unreachable")
        return {"status": "ok"}

    return app
