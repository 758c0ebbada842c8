"""Uniform client for OpenAI-compatible chat-completion endpoints.

One wire protocol for everything: ``POST {base_url}/v1/chat/completions``
with ``{model, messages, temperature, max_tokens, seed?}``, reading the
reply from ``choices[0].message.content``. Endpoints whose base_url uses
the ``mock://`` scheme are served by an in-process scripted backend (see
:mod:`tutorkit.mock`) so tests and demos run without any network.

Transient failures are retried with exponential backoff, base 2, up to
``max_retries`` times (default 5). Jitter of +/-20% can be applied to the
delays; it is off by default so mock-driven runs stay bit-reproducible.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass

import requests

from .errors import TutorKitError

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})
_VALID_ROLES = ("system", "user", "assistant")


class TransportError(TutorKitError):
    """The endpoint could not be reached (or kept failing) after all retries."""


class TransientFailure(Exception):
    """A failure worth another attempt; becomes TransportError once retries
    run out. Mock backends raise it to inject scripted failures."""


class HttpError(TutorKitError):
    """The endpoint answered with a non-retryable HTTP error."""

    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"HTTP {status}: {detail}" if detail else f"HTTP {status}")
        self.status = status


class EmptyCompletion(TutorKitError):
    """The endpoint returned a completion with no content."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _VALID_ROLES:
            raise ValueError(f"role must be one of {_VALID_ROLES}, got {self.role!r}")

    def as_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage("assistant", content)


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for one chat-completions endpoint.

    ``api_key_env`` names an environment variable holding the bearer token;
    keys are never stored in config files. ``max_inflight`` caps concurrent
    requests to this endpoint across all worker threads.
    """

    base_url: str
    model_name: str
    api_key_env: str = ""
    temperature: float = 0.0
    max_tokens: int = 2048
    request_timeout: float = 120.0
    max_retries: int = 5
    backoff_base: float = 0.5
    jitter: bool = False
    max_inflight: int = 16

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")


def retry_schedule(max_retries: int, backoff_base: float) -> list[float]:
    """Delays before each retry: ``[b, 2b, 4b, ...]``, one per retry."""
    if max_retries < 0:
        raise ValueError("max_retries must be >= 0")
    return [backoff_base * (2**i) for i in range(max_retries)]


@dataclass
class ChatResult:
    """A completion plus how it was obtained."""

    text: str
    attempts: int
    endpoint: str
    model: str


class ChatClient:
    """Thread-safe front end for all chat-completion traffic.

    Every call is appended to ``log_path`` (JSONL, one record per call with
    timestamps, attempt count, full messages, and the raw reply) so judge
    decisions can be audited after the fact.
    """

    def __init__(self, log_path: str | None = None, sleep=time.sleep):
        self._log_path = log_path
        self._sleep = sleep
        self._log_lock = threading.Lock()
        self._semaphores: dict[str, threading.BoundedSemaphore] = {}
        self._sem_lock = threading.Lock()

    def chat(
        self,
        endpoint: EndpointConfig,
        messages: list[ChatMessage],
        seed: int | None = None,
    ) -> str:
        """Return the assistant content of a single completion."""
        return self.chat_detailed(endpoint, messages, seed).text

    def chat_detailed(
        self,
        endpoint: EndpointConfig,
        messages: list[ChatMessage],
        seed: int | None = None,
    ) -> ChatResult:
        if not messages:
            raise ValueError("messages must be non-empty")
        if messages[0].role != "system":
            raise ValueError("first message must have role 'system'")

        payload = {
            "model": endpoint.model_name,
            "messages": [m.as_dict() for m in messages],
            "temperature": endpoint.temperature,
            "max_tokens": endpoint.max_tokens,
        }
        if seed is not None:
            payload["seed"] = seed

        delays = retry_schedule(endpoint.max_retries, endpoint.backoff_base)
        started = time.time()
        attempt = 0
        errors: list[str] = []
        with self._semaphore(endpoint):
            while True:
                attempt += 1
                try:
                    text = self._send_once(endpoint, payload)
                    break
                except TransientFailure as exc:
                    errors.append(str(exc))
                    if attempt > endpoint.max_retries:
                        self._log(endpoint, payload, None, attempt, started, errors)
                        raise TransportError(
                            f"{endpoint.base_url} failed after {attempt} attempts: {exc}"
                        ) from exc
                    delay = delays[attempt - 1]
                    if endpoint.jitter:
                        delay *= random.uniform(0.8, 1.2)
                    self._sleep(delay)
                except (HttpError, EmptyCompletion):
                    self._log(endpoint, payload, None, attempt, started, errors)
                    raise

        if not text:
            self._log(endpoint, payload, text, attempt, started, errors)
            raise EmptyCompletion(f"{endpoint.base_url} returned an empty completion")
        self._log(endpoint, payload, text, attempt, started, errors)
        return ChatResult(text, attempt, endpoint.base_url, endpoint.model_name)

    def _send_once(self, endpoint: EndpointConfig, payload: dict) -> str:
        if endpoint.base_url.startswith("mock://"):
            from . import mock

            return mock.dispatch_inprocess(endpoint.base_url, payload)
        return self._send_http(endpoint, payload)

    def _send_http(self, endpoint: EndpointConfig, payload: dict) -> str:
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_env:
            key = os.environ.get(endpoint.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        url = endpoint.base_url.rstrip("/") + "/v1/chat/completions"
        try:
            resp = requests.post(
                url, json=payload, headers=headers, timeout=endpoint.request_timeout
            )
        except requests.RequestException as exc:
            raise TransientFailure(f"request failed: {exc}") from exc
        if resp.status_code in RETRYABLE_STATUS:
            raise TransientFailure(f"status {resp.status_code}")
        if resp.status_code >= 400:
            raise HttpError(resp.status_code, resp.text[:500])
        try:
            body = resp.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransientFailure(f"malformed response body: {exc}") from exc
        if content is None:
            raise EmptyCompletion(f"{url} returned null content")
        return content

    def _semaphore(self, endpoint: EndpointConfig) -> threading.BoundedSemaphore:
        with self._sem_lock:
            sem = self._semaphores.get(endpoint.base_url)
            if sem is None:
                sem = threading.BoundedSemaphore(max(1, endpoint.max_inflight))
                self._semaphores[endpoint.base_url] = sem
            return sem

    def _log(
        self,
        endpoint: EndpointConfig,
        payload: dict,
        response: str | None,
        attempts: int,
        started: float,
        errors: list[str],
    ) -> None:
        if not self._log_path:
            return
        record = {
            "ts": started,
            "elapsed": time.time() - started,
            "endpoint": endpoint.base_url,
            "model": endpoint.model_name,
            "seed": payload.get("seed"),
            "attempts": attempts,
            "messages": payload["messages"],
            "response": response,
            "errors": errors,
        }
        line = json.dumps(record, ensure_ascii=False)
        with self._log_lock:
            with open(self._log_path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
