"""Model clients.

A client is any object with ``complete(request: dict) -> str``. Requests are
plain JSON-able dicts (``task``, ``model``, ``messages``, ``image`` and task
specific fields), which makes them hashable for the mock fixtures.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from pathlib import Path
from typing import NamedTuple, Protocol

from ..exceptions import ClientError

log = logging.getLogger(__name__)

ENDPOINT_ENV = "NEGGROUND_ENDPOINT"
API_KEY_ENV = "NEGGROUND_API_KEY"


class ModelClient(Protocol):
    def complete(self, request: dict) -> str: ...


class CallRecord(NamedTuple):
    task: str
    key: str
    image: object
    target: object


def _record(request: dict) -> CallRecord:
    overlay = request.get("overlay") or {}
    target = overlay.get("target_box") or request.get("crop")
    return CallRecord(request.get("task"), request_key(request), request.get("image"),
                      tuple(target) if target else None)


def request_key(request: dict) -> str:
    """Stable hash of a request (sorted-key canonical JSON)."""
    blob = json.dumps(request, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:24]


def _extract_text(payload) -> str:
    if isinstance(payload, str):
        return payload
    if isinstance(payload, dict):
        if "choices" in payload:
            try:
                return payload["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError):
                pass
        for key in ("text", "output", "answer", "content"):
            if isinstance(payload.get(key), str):
                return payload[key]
    raise ClientError("response body has no text field")


class HttpClient:
    """POST the request as JSON to an endpoint read from the environment."""

    def __init__(self, endpoint_env=ENDPOINT_ENV, api_key_env=API_KEY_ENV, timeout=60.0, model=None):
        self.endpoint_env = endpoint_env
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.model = model

    def complete(self, request: dict) -> str:
        import httpx

        url = os.environ.get(self.endpoint_env)
        if not url:
            raise ClientError(f"environment variable {self.endpoint_env} is not set")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = dict(request)
        if self.model and "model" not in body:
            body["model"] = self.model
        try:
            resp = httpx.post(url, json=body, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            return _extract_text(resp.json())
        except httpx.HTTPError as exc:
            raise ClientError(f"{type(exc).__name__}: {exc}") from exc
        except ValueError as exc:
            raise ClientError(f"response is not JSON: {exc}") from exc


class MockClient:
    """Replay canned responses keyed by :func:`request_key`.

    The fixtures directory holds ``<key>.txt`` files and/or an
    ``index.jsonl`` of ``{"key", "task", "response"}`` lines. Every call is
    appended to :attr:`call_log` as a :class:`CallRecord`.
    """

    def __init__(self, fixtures_dir):
        self.fixtures_dir = Path(fixtures_dir)
        self._index = {}
        index = self.fixtures_dir / "index.jsonl"
        if index.exists():
            for line in index.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._index[rec["key"]] = rec["response"]
        self.call_log = []
        self._lock = threading.Lock()

    def complete(self, request: dict) -> str:
        rec = _record(request)
        key = rec.key
        with self._lock:
            self.call_log.append(rec)
        if key in self._index:
            return self._index[key]
        path = self.fixtures_dir / f"{key}.txt"
        if path.exists():
            return path.read_text(encoding="utf-8")
        raise ClientError(f"no mock fixture for {request.get('task')} request {key}")

    def calls(self, task=None) -> int:
        return sum(1 for c in self.call_log if task is None or c.task == task)


class RecordingClient:
    """Wrap a client and store every exchange as a mock fixture."""

    def __init__(self, inner, fixtures_dir):
        self.inner = inner
        self.fixtures_dir = Path(fixtures_dir)
        self.fixtures_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._entries = {}

    def complete(self, request: dict) -> str:
        response = self.inner.complete(request)
        with self._lock:
            self._entries[request_key(request)] = {"task": request.get("task"), "response": response}
        return response

    def save(self):
        with open(self.fixtures_dir / "index.jsonl", "w", encoding="utf-8") as fh:
            for key in sorted(self._entries):
                rec = {"key": key, **self._entries[key]}
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


class CountingClient:
    """Thin wrapper recording tasks, for call accounting in tests and logs."""

    def __init__(self, inner):
        self.inner = inner
        self.call_log = []
        self._lock = threading.Lock()

    def complete(self, request: dict) -> str:
        with self._lock:
            self.call_log.append(_record(request))
        return self.inner.complete(request)

    def calls(self, task=None) -> int:
        return sum(1 for c in self.call_log if task is None or c.task == task)
