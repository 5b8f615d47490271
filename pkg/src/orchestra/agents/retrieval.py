"""Guideline retrieval: overlapping token chunks ranked by BM25, newer documents first on ties."""

from __future__ import annotations

import datetime as dt
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import EmptyCorpus

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)
_DATE_RE = re.compile(r"^date:\s*(\d{4}-\d{2}-\d{2})\s*$", re.IGNORECASE | re.MULTILINE)


def tokenize(text: str) -> list[str]:
    return [t.lower() for t in _TOKEN_RE.findall(text)]


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    date: dt.date


@dataclass(frozen=True)
class RetrievalChunk:
    doc_id: str
    chunk_index: int
    text: str
    score: float = 0.0
    date: dt.date | None = None


def chunk_words(words: Sequence[str], size: int = 300, overlap: int = 50) -> list[list[str]]:
    """Split a word list into windows of ``size`` words sharing ``overlap`` words."""
    if size <= 0 or not 0 <= overlap < size:
        raise ValueError("need size > 0 and 0 <= overlap < size")
    if not words:
        return []
    step = size - overlap
    chunks = []
    start = 0
    while True:
        chunks.append(list(words[start : start + size]))
        if start + size >= len(words):
            break
        start += step
    return chunks


def _document_date(text: str, path: Path) -> dt.date:
    m = _DATE_RE.search(text)
    if m:
        try:
            return dt.date.fromisoformat(m.group(1))
        except ValueError:
            pass
    return dt.datetime.fromtimestamp(path.stat().st_mtime, tz=dt.timezone.utc).date()


def load_documents(directory: str | Path) -> list[Document]:
    """Plain-text or Markdown files, dated by a ``date:`` line or file mtime."""
    root = Path(directory)
    docs = []
    for path in sorted(root.rglob("*")):
        if path.suffix.lower() not in (".txt", ".md") or not path.is_file():
            continue
        text = path.read_text(encoding="utf-8")
        docs.append(Document(doc_id=str(path.relative_to(root)), text=text, date=_document_date(text, path)))
    return docs


class Corpus:
    def __init__(self, chunk_size: int = 300, overlap: int = 50, k1: float = 1.2, b: float = 0.75):
        self.chunk_size = chunk_size
        self.overlap = overlap
        self.k1 = k1
        self.b = b
        self.chunks: list[RetrievalChunk] = []
        self._tf: list[Counter] = []
        self._len: list[int] = []

    def __len__(self) -> int:
        return len(self.chunks)

    def add(self, doc: Document) -> None:
        for i, words in enumerate(chunk_words(doc.text.split(), self.chunk_size, self.overlap)):
            text = " ".join(words)
            tokens = tokenize(text)
            self.chunks.append(RetrievalChunk(doc.doc_id, i, text, 0.0, doc.date))
            self._tf.append(Counter(tokens))
            self._len.append(len(tokens))

    def extend(self, docs: Iterable[Document]) -> "Corpus":
        for d in docs:
            self.add(d)
        return self

    @classmethod
    def from_directory(cls, directory: str | Path, **kwargs) -> "Corpus":
        return cls(**kwargs).extend(load_documents(directory))

    def search(self, query: str, k: int = 5) -> list[RetrievalChunk]:
        """Top-``k`` chunks by BM25; chunks scoring zero are dropped.

        Collection statistics (chunk count, document frequency, mean length)
        are taken over the chunks that share at least one token with the
        query, so adding unrelated documents cannot reorder existing results.
        """
        if not self.chunks:
            raise EmptyCorpus("corpus has no chunks")
        terms = set(tokenize(query))
        candidates = [i for i, tf in enumerate(self._tf) if any(t in tf for t in terms)]
        if not candidates:
            return []
        n = len(candidates)
        avgdl = sum(self._len[i] for i in candidates) / n
        df = {t: sum(1 for i in candidates if t in self._tf[i]) for t in terms}
        idf = {t: math.log(1 + (n - df[t] + 0.5) / (df[t] + 0.5)) for t in terms if df[t]}

        scored = []
        for i in candidates:
            tf = self._tf[i]
            norm = self.k1 * (1 - self.b + self.b * self._len[i] / avgdl)
            score = 0.0
            for t, w in idf.items():
                f = tf.get(t, 0)
                if f:
                    score += w * f * (self.k1 + 1) / (f + norm)
            if score > 0:
                scored.append((score, i))
        scored.sort(key=lambda si: (-si[0], -self.chunks[si[1]].date.toordinal(), si[1]))
        out = []
        for score, i in scored[:k]:
            c = self.chunks[i]
            out.append(RetrievalChunk(c.doc_id, c.chunk_index, c.text, score, c.date))
        return out


class RetrievalAgent:
    def __init__(self, corpus: Corpus, k: int = 5):
        self.corpus = corpus
        self.k = k

    def __call__(self, payload: str) -> str:
        hits = self.corpus.search(payload, self.k)
        if not hits:
            return "No matching guideline sections."
        blocks = [
            f"[{n}] {h.doc_id} #{h.chunk_index} ({h.date.isoformat()}, score {h.score:.3f})\n{h.text}"
            for n, h in enumerate(hits, start=1)
        ]
        return "\n\n".join(blocks)
