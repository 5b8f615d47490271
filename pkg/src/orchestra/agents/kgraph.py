"""Clinical knowledge graph: triples extracted from reasoning steps, queried as external memory."""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass

from ..backends import Backend, GenerationRequest

EXTRACTION_INSTRUCTIONS = (
    "Extract clinical relations from the text. Reply with a JSON array of "
    '[subject, relation, object] triples, e.g. [["dyspnea", "suggests", "heart_failure"]]. '
    "Reply [] if there are none."
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def normalize_concept(text: str) -> str:
    return " ".join(str(text).lower().split())


def _tokens(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(text.lower()))


def _phrase(concept: str) -> str:
    return " ".join(_TOKEN_RE.findall(concept.replace("_", " ")))


@dataclass(frozen=True)
class Triple:
    subject: str
    relation: str
    object: str
    provenance: tuple[int, ...] = ()  # step indices that asserted the triple

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject, self.relation, self.object)

    def render(self) -> str:
        steps = ", ".join(str(s) for s in self.provenance)
        label = "step" if len(self.provenance) == 1 else "steps"
        return f"{self.subject} -[{self.relation}]-> {self.object} ({label} {steps})"


def parse_triples(text: str) -> list[tuple[str, str, str]]:
    """Accept a JSON array of 3-element arrays, or ``s | r | o`` lines."""
    text = text.strip()
    start, end = text.find("["), text.rfind("]")
    if start >= 0 and end > start:
        try:
            data = json.loads(text[start : end + 1])
            return [tuple(str(x) for x in item) for item in data if isinstance(item, list) and len(item) == 3]
        except json.JSONDecodeError:
            pass
    out = []
    for line in text.splitlines():
        parts = [p.strip() for p in line.split("|")]
        if len(parts) == 3 and all(parts):
            out.append((parts[0], parts[1], parts[2]))
    return out


class KnowledgeGraph:
    def __init__(self, backend: Backend | None = None, top_k: int = 10):
        self.backend = backend
        self.top_k = top_k
        self._triples: dict[tuple[str, str, str], list[int]] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._triples)

    def triples(self) -> list[Triple]:
        with self._lock:
            return [Triple(s, r, o, tuple(p)) for (s, r, o), p in self._triples.items()]

    def add(self, subject: str, relation: str, obj: str, step: int) -> Triple | None:
        key = (normalize_concept(subject), normalize_concept(relation), normalize_concept(obj))
        if not all(key):
            return None
        with self._lock:
            refs = self._triples.setdefault(key, [])
            if step not in refs:
                refs.append(step)
            return Triple(*key, tuple(refs))

    def ingest(self, prose: str, step: int) -> list[Triple]:
        """Extract triples from ``prose`` via the backend and store them with ``step`` provenance."""
        if self.backend is None or not prose.strip():
            return []
        messages = (
            {"role": "system", "content": EXTRACTION_INSTRUCTIONS},
            {"role": "user", "content": prose},
        )
        reply = self.backend.generate(GenerationRequest(messages=messages, temperature=0.0)).text
        stored = []
        for s, r, o in parse_triples(reply):
            t = self.add(s, r, o, step)
            if t is not None:
                stored.append(t)
        return stored

    def observe(self, step) -> None:
        """Engine hook: ingest each reasoning step's prose."""
        self.ingest(step.prose, step.index)

    def local(self, payload: str) -> list[Triple]:
        """1-hop neighbourhood of concepts mentioned in ``payload``."""
        text = " " + " ".join(_TOKEN_RE.findall(payload.lower())) + " "
        hits = []
        for t in self.triples():
            for concept in (t.subject, t.object):
                phrase = _phrase(concept)
                if phrase and f" {phrase} " in text:
                    hits.append(t)
                    break
        return hits

    def global_(self, payload: str) -> list[Triple]:
        """Top-k triples by token overlap with ``payload``; zero-overlap triples are dropped."""
        query = _tokens(payload.replace("_", " "))
        scored = []
        for i, t in enumerate(self.triples()):
            overlap = len(query & _tokens(f"{t.subject} {t.relation} {t.object}".replace("_", " ")))
            if overlap:
                scored.append((-overlap, i, t))
        scored.sort(key=lambda x: (x[0], x[1]))
        return [t for _, _, t in scored[: self.top_k]]

    def query(self, payload: str) -> str:
        """Payload may start with ``local:`` or ``global:``; local is the default."""
        mode, _, rest = payload.partition(":")
        if mode.strip().lower() == "global":
            found = self.global_(rest)
        elif mode.strip().lower() == "local":
            found = self.local(rest)
        else:
            found = self.local(payload)
        return "\n".join(t.render() for t in found)

    __call__ = query
