"""Shared fixtures. Every test runs with outbound network blocked: only loopback connects are allowed."""

from __future__ import annotations

import ipaddress
import json
import socket
import sqlite3
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

_real_connect = socket.socket.connect
_real_connect_ex = socket.socket.connect_ex
_real_getaddrinfo = socket.getaddrinfo
_real_create_connection = socket.create_connection

BLOCKED: list[object] = []


class NetworkBlocked(RuntimeError):
    pass


def _is_local(address) -> bool:
    if isinstance(address, (str, bytes)):  # AF_UNIX path
        return True
    host = address[0]
    if host in ("localhost", ""):
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


def _guarded_connect(self, address):
    if not _is_local(address):
        BLOCKED.append(address)
        raise NetworkBlocked(f"outbound connection to {address!r} blocked in tests")
    return _real_connect(self, address)


def _guarded_connect_ex(self, address):
    if not _is_local(address):
        BLOCKED.append(address)
        raise NetworkBlocked(f"outbound connection to {address!r} blocked in tests")
    return _real_connect_ex(self, address)


def _guarded_getaddrinfo(host, *args, **kwargs):
    if host not in (None, "localhost") and not _is_local((host if isinstance(host, str) else host.decode(), 0)):
        BLOCKED.append(host)
        raise NetworkBlocked(f"name resolution for {host!r} blocked in tests")
    return _real_getaddrinfo(host, *args, **kwargs)


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    monkeypatch.setattr(socket.socket, "connect", _guarded_connect)
    monkeypatch.setattr(socket.socket, "connect_ex", _guarded_connect_ex)
    monkeypatch.setattr(socket, "getaddrinfo", _guarded_getaddrinfo)
    yield


# --- toy clinical database -------------------------------------------------------

TOY_SQL = FIXTURES / "toy_db.sql"


@pytest.fixture
def toy_db(tmp_path) -> Path:
    path = tmp_path / "toy.sqlite"
    con = sqlite3.connect(path)
    con.executescript(TOY_SQL.read_text(encoding="utf-8"))
    con.commit()
    con.close()
    return path


# --- loopback HTTP stub -----------------------------------------------------------


class StubServer:
    """Tiny loopback server; ``routes`` maps path to a handler(body_dict) -> (status, payload, delay)."""

    def __init__(self):
        self.routes: dict[tuple[str, str], object] = {}
        self.requests: list[tuple[str, str, dict, bytes]] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _serve(self, method):
                length = int(self.headers.get("content-length") or 0)
                raw = self.rfile.read(length) if length else b""
                stub.requests.append((method, self.path, dict(self.headers), raw))
                handler = stub.routes.get((method, self.path))
                if handler is None:
                    self.send_response(404)
                    self.end_headers()
                    return
                body = json.loads(raw) if raw else None
                status, payload, headers, delay = handler(body)
                if delay:
                    stub.release.wait(delay)
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                try:
                    self.send_response(status)
                    for k, v in (headers or {}).items():
                        self.send_header(k, v)
                    self.send_header("content-type", "application/json")
                    self.send_header("content-length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

            def do_GET(self):
                self._serve("GET")

            def do_POST(self):
                self._serve("POST")

        self.release = threading.Event()
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def route(self, method: str, path: str, status: int = 200, payload=None, headers=None, delay: float = 0.0):
        self.routes[(method, path)] = lambda body: (status, payload, headers, delay)

    def handler(self, method: str, path: str, fn):
        self.routes[(method, path)] = fn


@pytest.fixture
def stub_server():
    stub = StubServer()
    stub.thread.start()
    yield stub
    stub.release.set()
    stub.server.shutdown()
    stub.server.server_close()
