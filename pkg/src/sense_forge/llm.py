"""Chat-completion client with retry and exponential backoff."""

from __future__ import annotations

import logging
import os
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import httpx

from .errors import AuthError, EndpointError, NetworkError, RateLimitedError

log = logging.getLogger(__name__)

API_KEY_ENV = "SENSE_FORGE_API_KEY"
MAX_ATTEMPTS = 3
BACKOFF_BASE_S = 1.0


@dataclass
class Endpoint:
    """Where and how to reach a chat-completion API.

    ``url`` is the full completions URL. ``transport`` lets tests swap in an
    ``httpx.MockTransport``; ``sleep`` is injectable for the same reason.
    """

    url: str
    api_key: str | None = None
    model: str = "gpt-4"
    timeout_s: float = 120.0
    max_attempts: int = MAX_ATTEMPTS
    backoff_base_s: float = BACKOFF_BASE_S
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    @classmethod
    def from_env(cls, url: str, **kwargs: Any) -> Endpoint:
        return cls(url=url, api_key=os.environ.get(API_KEY_ENV), **kwargs)

    def client(self) -> httpx.Client:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return httpx.Client(headers=headers, timeout=self.timeout_s, transport=self.transport)


def chat_payload(prompt: str, model: str, *, temperature: float, max_tokens: int,
                 seed: int | None = None) -> dict[str, Any]:
    payload: dict[str, Any] = {
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
        "max_tokens": max_tokens,
    }
    if seed is not None:
        payload["seed"] = seed
    return payload


def _extract_content(body: Any) -> str:
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise EndpointError(f"malformed chat-completion response: {exc!r}") from exc
    if not isinstance(content, str):
        raise EndpointError("chat-completion content is not a string")
    return content


def complete(endpoint: Endpoint, payload: dict[str, Any], client: httpx.Client | None = None) -> str:
    """POST ``payload`` and return ``choices[0].message.content``.

    429, 5xx and transport failures are retried with exponential backoff up to
    ``endpoint.max_attempts`` requests in total; 401/403 fail immediately.
    """
    own = client is None
    client = client or endpoint.client()
    last: EndpointError | None = None
    try:
        for attempt in range(endpoint.max_attempts):
            if attempt:
                delay = endpoint.backoff_base_s * 2 ** (attempt - 1)
                log.info("retrying %s in %.1fs (attempt %d/%d)",
                         endpoint.url, delay, attempt + 1, endpoint.max_attempts)
                endpoint.sleep(delay)
            try:
                resp = client.post(endpoint.url, json=payload)
            except httpx.HTTPError as exc:
                last = NetworkError(f"{endpoint.url}: {exc}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"{endpoint.url}: HTTP {resp.status_code}")
            if resp.status_code == 429:
                last = RateLimitedError(f"{endpoint.url}: HTTP 429 after {attempt + 1} attempts")
                continue
            if resp.status_code >= 500:
                last = NetworkError(f"{endpoint.url}: HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise EndpointError(f"{endpoint.url}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
            except ValueError as exc:
                raise EndpointError(f"{endpoint.url}: response is not JSON") from exc
            return _extract_content(body)
    finally:
        if own:
            client.close()
    assert last is not None
    raise last
