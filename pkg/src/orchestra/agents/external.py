"""HTTP bridge to remotely hosted tools (imaging models and similar)."""

from __future__ import annotations

import httpx

from ..errors import RemoteError, RemoteTimeout
from ..registry import ToolDescriptor


def invoke(descriptor: ToolDescriptor, payload: str, client: httpx.Client | None = None) -> str:
    """POST ``{"query": payload}`` to the tool endpoint and return its ``result`` verbatim."""
    if not descriptor.is_external or not descriptor.endpoint:
        raise ValueError(f"tool {descriptor.name!r} is not an external tool")
    timeout = descriptor.timeout_ms / 1000.0
    try:
        if client is None:
            resp = httpx.post(descriptor.endpoint, json={"query": payload}, timeout=timeout)
        else:
            resp = client.post(descriptor.endpoint, json={"query": payload}, timeout=timeout)
    except httpx.TimeoutException as exc:
        raise RemoteTimeout(f"{descriptor.name}: no response within {descriptor.timeout_ms} ms") from exc
    except httpx.HTTPError as exc:
        raise RemoteError(0, f"transport error: {exc}") from exc
    if resp.status_code != 200:
        raise RemoteError(resp.status_code, resp.text)
    try:
        result = resp.json()["result"]
    except (ValueError, KeyError, TypeError) as exc:
        raise RemoteError(resp.status_code, f"response lacks a result field: {resp.text[:200]}") from exc
    return result if isinstance(result, str) else str(result)


class ExternalAgent:
    def __init__(self, descriptor: ToolDescriptor, client: httpx.Client | None = None):
        self.descriptor = descriptor
        self.client = client

    def __call__(self, payload: str) -> str:
        return invoke(self.descriptor, payload, self.client)


def probe(descriptor: ToolDescriptor, timeout_s: float = 3.0) -> bool:
    """True when the endpoint answers at all (any HTTP status)."""
    try:
        httpx.post(descriptor.endpoint, json={"query": ""}, timeout=timeout_s)
    except httpx.HTTPError:
        return False
    return True
