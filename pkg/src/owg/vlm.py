"""Vision-language model backends.

Every backend exposes ``complete(request) -> ChatResponse``. ``RemoteBackend``
talks to a chat-completions endpoint, ``ReplayBackend`` serves recorded
transcripts keyed by :func:`canonical_key`, ``ScriptedBackend`` echoes
programmed answers per stage, and ``RecordingBackend`` wraps any backend and
appends what it sees to a transcript.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List

import httpx

from .errors import (
    AllSamplesUnparsable,
    AuthError,
    BackendUnavailable,
    MalformedRemoteResponse,
    ParseError,
    RateLimited,
    ReplayMiss,
)
from .parsing import majority_vote
from .prompts import ImagePart, PromptBundle

log = logging.getLogger(__name__)

API_KEY_ENV = "OWG_API_KEY"
DEFAULT_MODEL = "gpt-4-vision-preview"
DEFAULT_SAMPLES = 5
SAMPLING_TEMPERATURE = 0.7


@dataclass(frozen=True)
class ChatRequest:
    bundle: PromptBundle
    temperature: float = 0.0
    n_samples: int = 1
    model_name: str = DEFAULT_MODEL

    def __post_init__(self):
        if not (self.temperature >= 0 and self.temperature != float("inf")):
            raise ValueError("temperature must be finite and >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass(frozen=True)
class ChatResponse:
    texts: List[str]
    backend_id: str
    latency_ms: int = 0


def request_for(bundle, k=1, model_name=DEFAULT_MODEL):
    """Request with the default sampling policy: greedy for one sample,
    temperature 0.7 when sampling for self-consistency."""
    return ChatRequest(bundle, 0.0 if k == 1 else SAMPLING_TEMPERATURE, k, model_name)


def canonical_payload(req):
    messages = []
    for m in req.bundle.messages:
        parts = []
        for p in m.parts:
            if isinstance(p, ImagePart):
                parts.append({"type": "image", "mime": p.mime, "sha256": p.sha256})
            else:
                parts.append({"type": "text", "text": p.text})
        messages.append({"role": m.role, "parts": parts})
    return {
        "model": req.model_name,
        "temperature": req.temperature,
        "n": req.n_samples,
        "stage": req.bundle.stage,
        "format": req.bundle.expected_format,
        "templates": req.bundle.template_hash,
        "messages": messages,
    }


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def canonical_key(req):
    return hashlib.sha256(canonical_json(canonical_payload(req)).encode("ascii")).hexdigest()


def wire_payload(req):
    """Chat-completions JSON body with images inlined as data URLs."""
    messages = []
    for m in req.bundle.messages:
        content = []
        for p in m.parts:
            if isinstance(p, ImagePart):
                url = f"data:{p.mime};base64," + base64.b64encode(p.png).decode("ascii")
                content.append({"type": "image_url", "image_url": {"url": url}})
            else:
                content.append({"type": "text", "text": p.text})
        messages.append({"role": m.role, "content": content})
    return {
        "model": req.model_name,
        "temperature": req.temperature,
        "n": req.n_samples,
        "messages": messages,
    }


class TranscriptStore:
    """JSON-Lines transcript: one ``{"key": hex, "responses": [...]}`` per line.

    The first entry for a key wins. Reads go against an immutable snapshot;
    appends are serialized by a lock.
    """

    def __init__(self, origin=None, entries=None):
        self.origin = os.fspath(origin) if origin else None
        self._entries = dict(entries or {})
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path, missing_ok=False):
        entries = {}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as f:
                for lineno, line in enumerate(f, 1):
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    key = row["key"]
                    if len(key) != 64 or any(c not in "0123456789abcdef" for c in key):
                        raise ValueError(f"{path}:{lineno}: malformed key")
                    entries.setdefault(key, tuple(row["responses"]))
        elif not missing_ok:
            from .errors import MissingFile

            raise MissingFile(f"missing transcript {path}")
        return cls(path, entries)

    def get(self, key):
        return self._entries.get(key)

    def __contains__(self, key):
        return key in self._entries

    def __len__(self):
        return len(self._entries)

    def append(self, key, responses):
        with self._lock:
            if key in self._entries:
                return False
            snapshot = dict(self._entries)
            snapshot[key] = tuple(responses)
            self._entries = snapshot
            if self.origin:
                with open(self.origin, "a", encoding="utf-8") as f:
                    f.write(json.dumps({"key": key, "responses": list(responses)}) + "\n")
            return True


class ReplayBackend:
    backend_id = "replay"
    supports_n = True

    def __init__(self, store):
        self.store = store if isinstance(store, TranscriptStore) else TranscriptStore.load(store)

    def complete(self, req):
        key = canonical_key(req)
        texts = self.store.get(key)
        if texts is None:
            raise ReplayMiss(key)
        return ChatResponse(list(texts), self.backend_id, 0)


class ScriptedBackend:
    """Programmed answers per stage.

    A script value is either a string (returned for every sample) or a list of
    strings consumed one per sample, cycling when exhausted. A callable value
    receives the request and returns either form.
    """

    backend_id = "scripted"
    supports_n = True

    def __init__(self, script):
        self.script = dict(script)
        self._cursor = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f))

    def complete(self, req):
        stage = req.bundle.stage
        if stage not in self.script:
            raise MalformedRemoteResponse(f"script has no entry for stage {stage!r}")
        value = self.script[stage]
        if callable(value):
            value = value(req)
        if isinstance(value, str):
            return ChatResponse([value] * req.n_samples, self.backend_id, 0)
        texts = []
        with self._lock:
            pos = self._cursor.get(stage, 0)
            for _ in range(req.n_samples):
                texts.append(value[pos % len(value)])
                pos += 1
            self._cursor[stage] = pos
        return ChatResponse(texts, self.backend_id, 0)


class RecordingBackend:
    """Serve from the transcript when possible, else ask ``inner`` and append."""

    def __init__(self, inner, store):
        self.inner = inner
        self.store = store
        self.backend_id = f"record({inner.backend_id})"
        self.supports_n = getattr(inner, "supports_n", False)

    def complete(self, req):
        key = canonical_key(req)
        texts = self.store.get(key)
        if texts is not None:
            return ChatResponse(list(texts), self.backend_id, 0)
        resp = self.inner.complete(req)
        if len(resp.texts) == req.n_samples:
            self.store.append(key, resp.texts)
        else:
            log.warning("not recording partial response for %s (%d/%d texts)",
                        key, len(resp.texts), req.n_samples)
        return resp


def _default_sleep(seconds):
    time.sleep(seconds)


class RemoteBackend:
    """Chat-completions client. The credential comes from ``OWG_API_KEY``."""

    backend_id = "remote"
    supports_n = True
    backoff = (1.0, 2.0, 4.0)

    def __init__(self, endpoint, api_key=None, timeout=120.0, transport=None,
                 sleep: Callable[[float], None] = _default_sleep):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise AuthError(f"no credential: set {API_KEY_ENV}")
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._sleep = sleep

    def _post(self, payload):
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        last = None
        for attempt in range(len(self.backoff) + 1):
            if attempt:
                self._sleep(self.backoff[attempt - 1])
            try:
                r = self._client.post(self.endpoint, json=payload, headers=headers)
            except (httpx.TimeoutException, httpx.TransportError) as e:
                last = BackendUnavailable(f"transport failure: {e}")
                continue
            if r.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credential ({r.status_code})")
            if r.status_code == 429:
                last = RateLimited("rate limited after retries")
                continue
            if r.status_code >= 500:
                last = BackendUnavailable(f"server error {r.status_code}")
                continue
            if r.status_code >= 400:
                raise MalformedRemoteResponse(f"request rejected ({r.status_code}): {r.text[:200]}")
            return r
        raise last

    def complete(self, req):
        t0 = time.monotonic()
        r = self._post(wire_payload(req))
        try:
            body = r.json()
            texts = []
            for choice in body["choices"]:
                content = choice["message"]["content"]
                if isinstance(content, list):
                    content = "".join(c.get("text", "") for c in content)
                if not isinstance(content, str):
                    raise TypeError("content is not text")
                texts.append(content)
        except (ValueError, KeyError, TypeError) as e:
            raise MalformedRemoteResponse(f"unexpected response shape: {e}") from None
        if not texts or len(texts) > req.n_samples:
            raise MalformedRemoteResponse(f"got {len(texts)} choices for n={req.n_samples}")
        return ChatResponse(texts, self.backend_id, int((time.monotonic() - t0) * 1000))


@dataclass
class Vote:
    value: object
    parses: List[object] = field(default_factory=list)
    raw: List[str] = field(default_factory=list)


def self_consistent(backend, req, parser, key=lambda parsed: parsed, max_workers=8):
    """Sample ``req.n_samples`` responses, parse each, majority-vote the rest.

    Returns a :class:`Vote` whose ``value`` is the first parse carrying the
    winning key and whose ``parses`` hold one entry per sample (``None`` for
    unparsable ones).
    """
    k = req.n_samples
    if getattr(backend, "supports_n", False) or k == 1:
        texts = backend.complete(req).texts
    else:
        single = ChatRequest(req.bundle, req.temperature, 1, req.model_name)
        with ThreadPoolExecutor(max_workers=min(k, max_workers)) as pool:
            texts = [t for r in pool.map(lambda _: backend.complete(single), range(k)) for t in r.texts]
    parses = []
    for t in texts:
        try:
            parses.append(parser(t))
        except ParseError:
            parses.append(None)
    good = [p for p in parses if p is not None]
    if not good:
        raise AllSamplesUnparsable(f"none of {len(texts)} {req.bundle.stage} samples parsed")
    winner = majority_vote([key(p) for p in good])
    value = next(p for p in good if key(p) == winner)
    return Vote(value, parses, list(texts))


def parse_backend(name, endpoint=None, record_to=None):
    """Build a backend from a CLI string: remote | replay:FILE | scripted:FILE."""
    if name == "remote":
        if not endpoint:
            raise ValueError("remote backend needs --endpoint")
        backend = RemoteBackend(endpoint)
    elif name.startswith("replay:"):
        backend = ReplayBackend(name.split(":", 1)[1])
    elif name.startswith("scripted:"):
        backend = ScriptedBackend.from_file(name.split(":", 1)[1])
    else:
        raise ValueError(f"unknown backend {name!r}")
    if record_to:
        backend = RecordingBackend(backend, TranscriptStore.load(record_to, missing_ok=True))
    return backend
