"""Chat-completions client with a content-addressed response cache.

Requests go over the OpenAI-compatible wire shape (POST
/v1/chat/completions, image parts as data-URL image_url entries,
bearer credential from LMM_API_KEY). Every successful exchange is
cached as one JSON file keyed by a digest of the request (model,
temperature, turn texts, image bytes), which makes replay runs fully
deterministic and free of network use.

Modes: "replay" serves only from cache and raises CacheMissError on a
miss; "record" checks the cache first and sends on a miss; "live"
behaves like record (budget enforcement lives in the bench harness).
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Union

import httpx

API_KEY_ENV = "LMM_API_KEY"
CHAT_PATH = "/v1/chat/completions"

MODES = ("live", "record", "replay")


class GatewayError(Exception):
    """Base gateway failure; code is stable and machine readable."""

    code = "gateway_error"
    retryable = False


class AuthError(GatewayError):
    code = "auth"


class RateLimitError(GatewayError):
    code = "rate_limit"
    retryable = True


class GatewayTimeoutError(GatewayError):
    code = "timeout"
    retryable = True


class TransportError(GatewayError):
    code = "transport"
    retryable = True


class MalformedResponseError(GatewayError):
    code = "malformed_response"


class CacheMissError(GatewayError):
    code = "cache_miss"


@dataclass
class TextPart:
    text: str


@dataclass
class ImagePart:
    png: bytes


Part = Union[TextPart, ImagePart]


@dataclass
class Turn:
    role: str
    parts: List[Part]


@dataclass
class ChatRequest:
    model: str
    turns: List[Turn]
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if not any(t.role == "user" for t in self.turns):
            raise ValueError("a chat request needs at least one user turn")
        for t in self.turns:
            if t.role != "user" and any(isinstance(p, ImagePart) for p in t.parts):
                raise ValueError("images may only appear in user turns")


@dataclass
class ChatResponse:
    text: str
    model_echo: str
    latency_ms: float
    from_cache: bool


@dataclass
class RetryPolicy:
    retries: int = 3
    backoff: float = 0.5
    timeout: float = 60.0


def cache_key(req: ChatRequest) -> str:
    """Digest of everything that shapes the model's answer."""
    doc = {
        "model": req.model,
        "temperature": req.temperature,
        "turns": [
            {
                "role": t.role,
                "parts": [
                    {"text": p.text}
                    if isinstance(p, TextPart)
                    else {"image_sha256": hashlib.sha256(p.png).hexdigest()}
                    for p in t.parts
                ],
            }
            for t in req.turns
        ],
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class ResponseCache:
    """One JSON file per key under <root>/<key[:2]>/<key>.json."""

    def __init__(self, root):
        self.root = Path(root)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def lookup(self, key: str) -> Optional[dict]:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            if "text" not in doc:
                raise ValueError("entry lacks text")
            return doc
        except (OSError, ValueError) as exc:
            warnings.warn(f"corrupt cache entry {path}: {exc}")
            return None

    def store(self, key: str, doc: dict) -> None:
        """First writer wins; concurrent stores of the same key are safe."""
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.exists():
            return
        tmp = path.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
        try:
            # hard link is atomic and refuses to clobber an existing entry
            os.link(tmp, path)
        except FileExistsError:
            pass
        finally:
            os.unlink(tmp)


def to_wire(req: ChatRequest) -> dict:
    messages = []
    for turn in req.turns:
        if turn.role != "user" and len(turn.parts) == 1 and isinstance(turn.parts[0], TextPart):
            messages.append({"role": turn.role, "content": turn.parts[0].text})
            continue
        content = []
        for p in turn.parts:
            if isinstance(p, TextPart):
                content.append({"type": "text", "text": p.text})
            else:
                url = "data:image/png;base64," + base64.b64encode(p.png).decode("ascii")
                content.append({"type": "image_url", "image_url": {"url": url}})
        messages.append({"role": turn.role, "content": content})
    return {
        "model": req.model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }


def _wire_texts(body: dict) -> List[str]:
    """All text parts of a wire body, in order (used by mock transports)."""
    out = []
    for msg in body.get("messages", []):
        content = msg.get("content")
        if isinstance(content, str):
            out.append(content)
            continue
        for part in content or []:
            if isinstance(part, dict) and part.get("type") == "text":
                out.append(part.get("text", ""))
    return out


class HttpTransport:
    """POSTs wire bodies to an OpenAI-compatible endpoint."""

    def __init__(self, endpoint: str, timeout: float = 60.0, api_key: Optional[str] = None):
        base = endpoint.rstrip("/")
        self.url = base if base.endswith("/chat/completions") else base + CHAT_PATH
        self.timeout = timeout
        self.api_key = api_key

    def __call__(self, body: dict) -> dict:
        key = self.api_key if self.api_key is not None else os.environ.get(API_KEY_ENV)
        if not key:
            raise AuthError(f"no credential: set {API_KEY_ENV}")
        try:
            resp = httpx.post(
                self.url,
                json=body,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
        except httpx.TimeoutException as exc:
            raise GatewayTimeoutError(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credential ({resp.status_code})")
        if resp.status_code == 429:
            raise RateLimitError("rate limited")
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}")
        if resp.status_code != 200:
            raise MalformedResponseError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except json.JSONDecodeError as exc:
            raise MalformedResponseError(f"non-JSON response: {exc}") from exc


class MockTransport:
    """Deterministic stand-in for an LMM endpoint.

    script is either a callable (texts, body) -> reply, or a dict
    {"rules": [{"contains": str, "reply": str}], "default": str}
    matched against the last user text. With no script every request
    gets "OK".
    """

    def __init__(self, script=None, model_echo: str = "mock"):
        self.script = script
        self.model_echo = model_echo
        self.calls = 0
        self._lock = threading.Lock()

    def _reply(self, texts: List[str], body: dict) -> str:
        if callable(self.script):
            return self.script(texts, body)
        if isinstance(self.script, dict):
            last = texts[-1] if texts else ""
            for rule in self.script.get("rules", []):
                if rule.get("contains", "") in last:
                    return rule.get("reply", "")
            return self.script.get("default", "OK")
        return "OK"

    def __call__(self, body: dict) -> dict:
        with self._lock:
            self.calls += 1
        reply = self._reply(_wire_texts(body), body)
        return {
            "model": self.model_echo,
            "choices": [{"message": {"role": "assistant", "content": reply}}],
        }


class RefusingTransport:
    """Fails the test if anything attempts network traffic."""

    def __call__(self, body: dict):
        raise AssertionError("network transport invoked in replay-only mode")


def build_transport(endpoint: Optional[str], timeout: float = 60.0):
    """Map an --endpoint value to a transport; mock:<path> loads a script."""
    if endpoint is None:
        return None
    if endpoint == "mock:" or endpoint == "mock":
        return MockTransport()
    if endpoint.startswith("mock:"):
        with open(endpoint[len("mock:") :], "r", encoding="utf-8") as fh:
            return MockTransport(json.load(fh))
    return HttpTransport(endpoint, timeout=timeout)


class LmmClient:
    """Cache-aware chat client with a bounded in-flight pool."""

    def __init__(
        self,
        mode: str = "replay",
        cache_dir=None,
        transport: Optional[Callable[[dict], dict]] = None,
        endpoint: Optional[str] = None,
        policy: Optional[RetryPolicy] = None,
        max_in_flight: int = 4,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.cache = ResponseCache(cache_dir) if cache_dir is not None else None
        self.policy = policy or RetryPolicy()
        if transport is None and endpoint is not None:
            transport = build_transport(endpoint, timeout=self.policy.timeout)
        self.transport = transport
        self._gate = threading.Semaphore(max(1, max_in_flight))

    def send_chat(self, req: ChatRequest, policy: Optional[RetryPolicy] = None) -> ChatResponse:
        """Resolve a request from cache or the transport.

        Raises CacheMissError in replay mode when the key is absent;
        transient transport failures are retried with exponential
        backoff before surfacing.
        """
        policy = policy or self.policy
        key = cache_key(req)
        if self.cache is not None:
            hit = self.cache.lookup(key)
            if hit is not None:
                return ChatResponse(
                    text=hit["text"],
                    model_echo=hit.get("model_echo", req.model),
                    latency_ms=0.0,
                    from_cache=True,
                )
        if self.mode == "replay":
            raise CacheMissError(f"no cached response for key {key[:12]}…")
        if self.transport is None:
            raise TransportError("no transport configured (endpoint missing)")

        body = to_wire(req)
        attempt = 0
        start = time.monotonic()
        while True:
            try:
                with self._gate:
                    raw = self.transport(body)
                break
            except GatewayError as exc:
                if not exc.retryable or attempt >= policy.retries:
                    raise
                time.sleep(policy.backoff * (2**attempt))
                attempt += 1
        latency_ms = (time.monotonic() - start) * 1000.0

        try:
            text = raw["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"response lacks choices[0].message.content: {exc}") from exc
        if not isinstance(text, str) or not text:
            raise MalformedResponseError("response text is empty")
        model_echo = raw.get("model", req.model)
        if self.cache is not None:
            self.cache.store(key, {"key": key, "model": req.model, "model_echo": model_echo, "text": text})
        return ChatResponse(text=text, model_echo=model_echo, latency_ms=latency_ms, from_cache=False)


def send_chat(
    req: ChatRequest,
    policy: Optional[RetryPolicy] = None,
    *,
    client: Optional[LmmClient] = None,
    **client_kwargs,
) -> ChatResponse:
    """Function form of LmmClient.send_chat for one-off calls."""
    if client is None:
        client = LmmClient(**client_kwargs)
    return client.send_chat(req, policy=policy)


def cache_lookup(key: str, cache_dir) -> Optional[ChatResponse]:
    """Fetch a stored transcript by key, or None when absent/corrupt."""
    hit = ResponseCache(cache_dir).lookup(key)
    if hit is None:
        return None
    return ChatResponse(
        text=hit["text"],
        model_echo=hit.get("model_echo", ""),
        latency_ms=0.0,
        from_cache=True,
    )
