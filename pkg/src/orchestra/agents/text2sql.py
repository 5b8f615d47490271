"""Text2SQL agent: schema-grounded SQL generation, review, read-only execution."""

from __future__ import annotations

import re
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from ..backends import Backend, GenerationRequest
from ..errors import BackendError, ExecutionFailed, NonSelectRejected, SchemaUnavailable

GENERATE_INSTRUCTIONS = (
    "You translate questions about patient data into a single SQLite SELECT statement. "
    "Use only the tables and columns in the schema below. Reply with the SQL only."
)
REVIEW_INSTRUCTION = (
    "Check the statement below against the schema for errors or inefficiencies. "
    "Reply with the corrected SQL only, or OK if it needs no change.\n"
)
REPAIR_INSTRUCTION = "The statement failed with the error below. Reply with a corrected SQL statement only.\n"

_SQL_FENCE_RE = re.compile(r"```(?:sql)?\s*\n?(.*?)```", re.DOTALL | re.IGNORECASE)
_COMMENT_RE = re.compile(r"--[^\n]*|/\*.*?(?:\*/|$)", re.DOTALL)
_STRING_RE = re.compile(r"'(?:[^']|'')*'|\"(?:[^\"]|\"\")*\"")


@dataclass(frozen=True)
class Column:
    name: str
    declared_type: str


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]
    foreign_keys: tuple[tuple[str, str, str], ...] = ()  # (column, ref_table, ref_column)


@dataclass(frozen=True)
class SchemaDescription:
    tables: tuple[Table, ...]

    def render(self) -> str:
        lines = []
        for t in self.tables:
            cols = ", ".join(f"{c.name} {c.declared_type}".strip() for c in t.columns)
            lines.append(f"TABLE {t.name} ({cols})")
            for col, ref_t, ref_c in t.foreign_keys:
                lines.append(f"  FOREIGN KEY {t.name}.{col} -> {ref_t}.{ref_c}")
        return "\n".join(lines)


@dataclass
class SQLAnswer:
    text: str
    sql: str
    columns: list[str]
    rows: list[tuple]
    retry_count: int = 0
    history: list[str] = field(default_factory=list)


def connect_readonly(path: str | Path) -> sqlite3.Connection:
    uri = f"{Path(path).resolve().as_uri()}?mode=ro"
    conn = sqlite3.connect(uri, uri=True, check_same_thread=False)
    conn.set_authorizer(_read_only_authorizer)
    return conn


_ALLOWED_ACTIONS = {
    sqlite3.SQLITE_SELECT,
    sqlite3.SQLITE_READ,
    sqlite3.SQLITE_FUNCTION,
    getattr(sqlite3, "SQLITE_RECURSIVE", 33),
}


_INTROSPECTION_PRAGMAS = {"table_info", "foreign_key_list"}


def _read_only_authorizer(action, arg1, arg2, db_name, trigger) -> int:
    if action in _ALLOWED_ACTIONS:
        return sqlite3.SQLITE_OK
    if action == sqlite3.SQLITE_PRAGMA and (arg1 or "").lower() in _INTROSPECTION_PRAGMAS:
        return sqlite3.SQLITE_OK
    return sqlite3.SQLITE_DENY


def introspect(conn: sqlite3.Connection) -> SchemaDescription:
    try:
        names = [
            r[0]
            for r in conn.execute(
                "SELECT name FROM sqlite_master WHERE type IN ('table','view') AND name NOT LIKE 'sqlite_%' ORDER BY name"
            )
        ]
        tables = []
        for name in names:
            cols = tuple(Column(r[1], r[2] or "") for r in conn.execute(f"PRAGMA table_info({_quote(name)})"))
            fks = tuple((r[3], r[2], r[4]) for r in conn.execute(f"PRAGMA foreign_key_list({_quote(name)})"))
            tables.append(Table(name, cols, fks))
    except sqlite3.Error as exc:
        raise SchemaUnavailable(f"cannot read schema: {exc}") from exc
    return SchemaDescription(tuple(tables))


def _quote(identifier: str) -> str:
    return '"' + identifier.replace('"', '""') + '"'


def extract_sql(text: str) -> str:
    m = _SQL_FENCE_RE.search(text)
    sql = m.group(1) if m else text
    return sql.strip()


def _strip_comments(sql: str) -> str:
    # Blank out string literals first so comment markers inside them are ignored.
    masked = _STRING_RE.sub(lambda m: "'" + " " * (len(m.group(0)) - 2) + "'", sql)
    out = []
    last = 0
    for m in _COMMENT_RE.finditer(masked):
        out.append(sql[last : m.start()])
        out.append(" ")
        last = m.end()
    out.append(sql[last:])
    return "".join(out)


_WRITE_KEYWORDS = re.compile(
    r"\b(INSERT|UPDATE|DELETE|REPLACE|DROP|ALTER|CREATE|ATTACH|DETACH|PRAGMA|VACUUM|REINDEX|ANALYZE)\b",
    re.IGNORECASE,
)


def check_select(sql: str) -> str:
    """Return the statement if it is a single SELECT; raise NonSelectRejected otherwise.

    A leading ``WITH`` clause is accepted when no write keyword appears
    outside string literals.
    """
    body = _strip_comments(sql).strip()
    masked = _STRING_RE.sub("''", body).strip()
    first = re.match(r"[A-Za-z_]+", masked)
    keyword = first.group(0).upper() if first else ""
    if keyword not in ("SELECT", "WITH") or (keyword == "WITH" and _WRITE_KEYWORDS.search(masked)):
        raise NonSelectRejected(f"only SELECT statements are allowed: {sql.strip()[:80]!r}")
    statements = [s for s in masked.split(";") if s.strip()]
    if len(statements) != 1:
        raise NonSelectRejected("exactly one statement is allowed")
    return body.rstrip().rstrip(";").rstrip()


def render_rows(columns: list[str], rows: list[tuple], cap: int = 50) -> str:
    """Compact table; a single scalar is rendered bare."""
    if len(columns) == 1 and len(rows) == 1:
        return _cell(rows[0][0])
    lines = [" | ".join(columns)]
    lines.extend(" | ".join(_cell(v) for v in row) for row in rows[:cap])
    if len(rows) > cap:
        lines.append(f"... {len(rows) - cap} more rows (showing {cap} of {len(rows)})")
    if not rows:
        lines.append("(no rows)")
    return "\n".join(lines)


def _cell(value) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, bytes):
        return f"<{len(value)} bytes>"
    return str(value)


def review_prompt(sql: str) -> str:
    return REVIEW_INSTRUCTION + sql


def repair_prompt(sql: str, error: str) -> str:
    return f"{REPAIR_INSTRUCTION}Statement: {sql}\nError: {error}"


class Text2SQLAgent:
    """Natural-language questions answered from a relational database.

    Each call opens its own read-only connection. ``connect`` may be replaced
    with any DB-API style factory returning a connection.
    """

    def __init__(
        self,
        backend: Backend,
        database: str | Path | None = None,
        connect: Callable[[], sqlite3.Connection] | None = None,
        row_cap: int = 50,
        max_repairs: int = 2,
        review: bool = True,
    ):
        if connect is None:
            if database is None:
                raise ValueError("need a database path or a connect factory")
            db_path = Path(database)
            connect = lambda: connect_readonly(db_path)  # noqa: E731
        self.backend = backend
        self.connect = connect
        self.row_cap = row_cap
        self.max_repairs = max_repairs
        self.review = review

    def _ask(self, messages: list[dict[str, str]]) -> str:
        result = self.backend.generate(GenerationRequest(messages=tuple(messages), temperature=0.0))
        return result.text

    def answer(self, request: str) -> SQLAnswer:
        try:
            conn = self.connect()
        except (sqlite3.Error, OSError) as exc:
            raise SchemaUnavailable(f"cannot open database: {exc}") from exc
        try:
            schema = introspect(conn)
            system = f"{GENERATE_INSTRUCTIONS}\n\nSchema:\n{schema.render()}"
            messages = [{"role": "system", "content": system}, {"role": "user", "content": request}]
            draft = self._ask(messages)
            sql = extract_sql(draft)
            history = [sql]
            messages.append({"role": "assistant", "content": draft})
            if self.review:
                messages.append({"role": "user", "content": review_prompt(sql)})
                verdict = self._ask(messages)
                messages.append({"role": "assistant", "content": verdict})
                if verdict.strip().upper().rstrip(".") != "OK":
                    sql = extract_sql(verdict)
                    history.append(sql)

            retries = 0
            while True:
                statement = check_select(sql)
                try:
                    cursor = conn.execute(statement)
                    rows = cursor.fetchall()
                    columns = [d[0] for d in cursor.description or ()]
                    break
                except sqlite3.Error as exc:
                    if retries >= self.max_repairs:
                        raise ExecutionFailed(f"SQL failed after {retries} repairs: {exc}") from exc
                    retries += 1
                    messages.append({"role": "user", "content": repair_prompt(sql, str(exc))})
                    fixed = self._ask(messages)
                    messages.append({"role": "assistant", "content": fixed})
                    sql = extract_sql(fixed)
                    history.append(sql)
        except BackendError as exc:
            raise ExecutionFailed(f"SQL generation failed: {exc}") from exc
        finally:
            conn.close()
        return SQLAnswer(render_rows(columns, rows, self.row_cap), statement, columns, rows, retries, history)

    def __call__(self, payload: str) -> str:
        return self.answer(payload).text
