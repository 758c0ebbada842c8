"""Deterministic scripted backends for tests and desk-scale demos.

A playbook is an ordered list of rules; the first rule whose predicates all
match the incoming request wins. Predicates:

``always``      matches everything (useful as a trailing fallback)
``contains``    substring of the concatenated message contents
``turn_index``  number of assistant messages already in the request
``seed_in``     request seed is one of the listed values
``seed_mod``    ``[m, residues]``: request seed modulo m is in residues

A rule may declare ``fail_count`` forced transport failures before it starts
answering. Failures are counted per unique request (messages plus seed), so
retries of the same call consume them while unrelated concurrent traffic
does not; replies therefore depend only on request content, which makes any
interleaving of calls bit-reproducible.

The same backend can be queried in process (register it and point an
endpoint at ``mock://<name>``) or served over HTTP with the real wire
protocol via :class:`MockHttpServer`.
"""

from __future__ import annotations

import hashlib
import json
import threading
import uuid
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import gateway
from .errors import TutorKitError

_PREDICATE_KEYS = ("always", "contains", "turn_index", "seed_in", "seed_mod")


class NoMatchingRule(TutorKitError):
    """No playbook rule matched a request; the fixture itself is buggy."""


class BadPlaybook(TutorKitError):
    """A playbook rule is structurally invalid."""


@dataclass(frozen=True)
class MockRule:
    reply: str
    always: bool = False
    contains: tuple[str, ...] | None = None  # AND over substrings
    turn_index: int | None = None
    seed_in: tuple[int, ...] | None = None
    seed_mod: tuple[int, tuple[int, ...]] | None = None
    fail_count: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.contains, str):
            object.__setattr__(self, "contains", (self.contains,))
        has_predicate = any(
            getattr(self, k) is not None for k in ("contains", "turn_index", "seed_in", "seed_mod")
        )
        if not self.always and not has_predicate:
            raise BadPlaybook("rule needs at least one predicate (or always=True)")

    def matches(self, text: str, n_assistant: int, seed: int | None) -> bool:
        if self.contains is not None and not all(c in text for c in self.contains):
            return False
        if self.turn_index is not None and n_assistant != self.turn_index:
            return False
        if self.seed_in is not None and seed not in self.seed_in:
            return False
        if self.seed_mod is not None:
            modulus, residues = self.seed_mod
            if seed is None or seed % modulus not in residues:
                return False
        return True


def rule_from_dict(raw: dict) -> MockRule:
    """Build a rule from one playbook JSON object."""
    unknown = set(raw) - set(_PREDICATE_KEYS) - {"reply", "fail_count"}
    if unknown:
        raise BadPlaybook(f"unknown playbook keys: {sorted(unknown)}")
    if "reply" not in raw:
        raise BadPlaybook("playbook rule missing 'reply'")
    if not any(k in raw for k in _PREDICATE_KEYS):
        raise BadPlaybook("playbook rule needs at least one predicate (or 'always')")
    seed_mod = None
    if "seed_mod" in raw:
        modulus, residues = raw["seed_mod"]
        seed_mod = (int(modulus), tuple(int(r) for r in residues))
    contains = raw.get("contains")
    if isinstance(contains, list):
        contains = tuple(str(c) for c in contains)
    return MockRule(
        reply=raw["reply"],
        always=bool(raw.get("always", False)),
        contains=contains,
        turn_index=raw.get("turn_index"),
        seed_in=tuple(raw["seed_in"]) if "seed_in" in raw else None,
        seed_mod=seed_mod,
        fail_count=int(raw.get("fail_count", 0)),
    )


def load_playbook(path: str) -> list[MockRule]:
    """Read rules from a JSONL file, one rule object per line."""
    rules = []
    try:
        f = open(path, encoding="utf-8")
    except OSError as exc:
        raise BadPlaybook(f"cannot read playbook {path}: {exc}") from exc
    with f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rules.append(rule_from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise BadPlaybook(f"{path}:{line_no}: invalid JSON: {exc}") from exc
    if not rules:
        raise BadPlaybook(f"{path}: playbook is empty")
    return rules


class MockBackend:
    """Scripted replier over a playbook; safe for concurrent use."""

    def __init__(self, rules: list[MockRule]):
        if not rules:
            raise BadPlaybook("playbook must be non-empty")
        self.rules = list(rules)
        self._failures: dict[tuple[int, str], int] = {}
        self._lock = threading.Lock()

    def complete(self, payload: dict) -> str:
        """Answer one chat-completions payload, honoring forced failures."""
        messages = payload.get("messages", [])
        seed = payload.get("seed")
        text = "\n".join(str(m.get("content", "")) for m in messages)
        n_assistant = sum(1 for m in messages if m.get("role") == "assistant")
        for i, rule in enumerate(self.rules):
            if not rule.matches(text, n_assistant, seed):
                continue
            if rule.fail_count > 0 and self._consume_failure(i, messages, seed, rule.fail_count):
                raise gateway.TransientFailure(f"mock rule {i} forced failure")
            return rule.reply
        raise NoMatchingRule(
            f"no rule matched request (assistant_count={n_assistant}, seed={seed}): "
            f"{text[:160]!r}"
        )

    def _consume_failure(self, rule_idx: int, messages, seed, budget: int) -> bool:
        fp = hashlib.sha256(
            json.dumps([messages, seed], sort_keys=True, ensure_ascii=False).encode()
        ).hexdigest()
        key = (rule_idx, fp)
        with self._lock:
            used = self._failures.get(key, 0)
            if used < budget:
                self._failures[key] = used + 1
                return True
        return False


# In-process registry: endpoints with base_url "mock://<name>" resolve here.
_REGISTRY: dict[str, MockBackend] = {}
_REGISTRY_LOCK = threading.Lock()


def register_backend(backend: MockBackend, name: str | None = None) -> str:
    """Register a backend and return its ``mock://`` base URL."""
    name = name or uuid.uuid4().hex[:12]
    with _REGISTRY_LOCK:
        _REGISTRY[name] = backend
    return f"mock://{name}"


def dispatch_inprocess(base_url: str, payload: dict) -> str:
    name = base_url.removeprefix("mock://").strip("/")
    with _REGISTRY_LOCK:
        backend = _REGISTRY.get(name)
    if backend is None:
        raise NoMatchingRule(f"no in-process mock registered as {base_url!r}")
    return backend.complete(payload)


def mock_backend(
    playbook: list[dict] | list[MockRule], name: str | None = None
) -> gateway.EndpointConfig:
    """Create and register an in-process backend; returns a usable endpoint.

    The returned endpoint has a tiny backoff so scripted failure injection
    does not slow the test suite down.
    """
    rules = [r if isinstance(r, MockRule) else rule_from_dict(r) for r in playbook]
    base_url = register_backend(MockBackend(rules), name)
    return gateway.EndpointConfig(
        base_url=base_url,
        model_name="mock",
        backoff_base=0.001,
    )


class _Handler(BaseHTTPRequestHandler):
    backend: MockBackend  # set by MockHttpServer

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        if self.path.rstrip("/") != "/v1/chat/completions":
            self._send(404, {"error": "unknown path"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            self._send(400, {"error": "invalid JSON body"})
            return
        try:
            reply = self.backend.complete(payload)
        except gateway.TransientFailure:
            self._send(503, {"error": "scripted failure"})
            return
        except NoMatchingRule as exc:
            self._send(422, {"error": str(exc)})
            return
        self._send(
            200,
            {
                "object": "chat.completion",
                "model": payload.get("model", "mock"),
                "choices": [
                    {
                        "index": 0,
                        "message": {"role": "assistant", "content": reply},
                        "finish_reason": "stop",
                    }
                ],
            },
        )

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, fmt: str, *args) -> None:
        pass  # keep test output clean


class MockHttpServer:
    """Serve a MockBackend over real HTTP on localhost.

    Usable as a context manager; ``base_url`` is valid after ``start()``.
    """

    def __init__(self, backend: MockBackend, port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"backend": backend})
        self._server = ThreadingHTTPServer(("127.0.0.1", port), handler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> "MockHttpServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockHttpServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()

    def endpoint(self, **overrides) -> gateway.EndpointConfig:
        """EndpointConfig pointed at this server (tiny backoff by default)."""
        defaults = {"model_name": "mock", "backoff_base": 0.001}
        defaults.update(overrides)
        return gateway.EndpointConfig(base_url=self.base_url, **defaults)
