"""Web search: provider hits enriched with a context window pulled from each page."""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from html.parser import HTMLParser
from pathlib import Path
from typing import Callable, Protocol

import httpx

from ..errors import FetchTimeout, ProviderUnavailable

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class WebHit:
    title: str
    url: str
    date: str
    snippet: str
    extracted_context: str | None = None


class SearchProvider(Protocol):
    def search(self, query: str, k: int) -> list[WebHit]: ...


class FixtureProvider:
    """Serves canned hits from a JSON file: ``{query: [hit, ...]}`` or a bare hit list."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def search(self, query: str, k: int) -> list[WebHit]:
        try:
            data = json.loads(self.path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ProviderUnavailable(f"fixture provider {self.path}: {exc}") from exc
        if isinstance(data, dict):
            data = data.get(query, data.get("*", []))
        hits = [
            WebHit(title=h.get("title", ""), url=h["url"], date=h.get("date", ""), snippet=h.get("snippet", ""))
            for h in data
        ]
        return hits[:k]


class FixturePages:
    """Offline page fetcher: a JSON file mapping URL to page HTML or text."""

    def __init__(self, path: str | Path):
        self.pages: dict[str, str] = json.loads(Path(path).read_text(encoding="utf-8"))

    def __call__(self, url: str) -> str:
        try:
            return self.pages[url]
        except KeyError:
            raise FetchTimeout(f"no fixture page for {url}") from None


def no_fetch(url: str) -> str:
    raise FetchTimeout("page fetching disabled")


class _TextExtractor(HTMLParser):
    _SKIP = {"script", "style", "noscript", "head"}

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._skip = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip += 1

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip:
            self._skip -= 1

    def handle_data(self, data):
        if not self._skip:
            self.parts.append(data)


def html_to_text(html: str) -> str:
    parser = _TextExtractor()
    parser.feed(html)
    parser.close()
    return " ".join(" ".join(parser.parts).split())


def http_fetch(url: str, timeout_s: float = 5.0) -> str:
    try:
        resp = httpx.get(url, timeout=timeout_s, follow_redirects=True)
    except httpx.TimeoutException as exc:
        raise FetchTimeout(f"fetching {url} timed out") from exc
    except httpx.HTTPError as exc:
        raise FetchTimeout(f"fetching {url} failed: {exc}") from exc
    if resp.status_code >= 400:
        raise FetchTimeout(f"fetching {url} returned {resp.status_code}")
    return resp.text


def best_window(page_text: str, snippet: str, window: int = 256) -> str:
    """The ``window``-token span of the page sharing the most distinct tokens with the snippet.

    Ties go to the earliest span. Tokens are whitespace-delimited words; the
    overlap compares their lowercased word characters.
    """
    words = page_text.split()
    if len(words) <= window:
        return " ".join(words)
    target = {t.lower() for t in _TOKEN_RE.findall(snippet)}
    keys = [{t.lower() for t in _TOKEN_RE.findall(w)} & target for w in words]

    counts: dict[str, int] = {}

    def add(i: int, sign: int) -> None:
        for t in keys[i]:
            counts[t] = counts.get(t, 0) + sign
            if counts[t] == 0:
                del counts[t]

    for i in range(window):
        add(i, 1)
    best_start, best = 0, len(counts)
    for start in range(1, len(words) - window + 1):
        add(start - 1, -1)
        add(start + window - 1, 1)
        if len(counts) > best:
            best_start, best = start, len(counts)
    return " ".join(words[best_start : best_start + window])


def _clip_bytes(text: str, limit: int) -> str:
    raw = text.encode("utf-8")
    if len(raw) <= limit:
        return text
    return raw[:limit].decode("utf-8", "ignore")


class WebSearchAgent:
    def __init__(
        self,
        provider: SearchProvider,
        fetch: Callable[[str], str] = http_fetch,
        k: int = 5,
        window_tokens: int = 256,
        window_bytes: int = 4096,
        max_workers: int = 5,
    ):
        self.provider = provider
        self.fetch = fetch
        self.k = k
        self.window_tokens = window_tokens
        self.window_bytes = window_bytes
        self.max_workers = max_workers

    def _enrich(self, hit: WebHit) -> WebHit:
        try:
            page = self.fetch(hit.url)
        except Exception:
            # degrade to the snippet alone
            return hit
        text = html_to_text(page) if "<" in page else page
        context = _clip_bytes(best_window(text, hit.snippet, self.window_tokens), self.window_bytes)
        return WebHit(hit.title, hit.url, hit.date, hit.snippet, context)

    def search(self, query: str) -> list[WebHit]:
        hits = self.provider.search(query, self.k)
        if not hits:
            return []
        with ThreadPoolExecutor(max_workers=min(self.max_workers, len(hits))) as pool:
            return list(pool.map(self._enrich, hits))

    def __call__(self, payload: str) -> str:
        return json.dumps([asdict(h) for h in self.search(payload)], ensure_ascii=False)
