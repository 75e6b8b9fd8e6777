"""Transport for chat-completion endpoints with an on-disk response cache.

Responsibility: turn a ChatRequest into response text against any
OpenAI-compatible chat completions endpoint, retrying transient failures with
exponential backoff and caching responses by request content hash so reruns
never re-query.

Does NOT: build prompts, parse responses, or decide what to do with them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import requests

from .errors import RateLimitedError, TransportError

logger = logging.getLogger(__name__)

DEFAULT_MAX_OUTPUT = 4096
DEFAULT_TEMPERATURE = 0.0


@dataclass(frozen=True)
class ChatRequest:
    """One deterministic chat completion request."""

    user_text: str
    model_id: str = ""
    system_text: str | None = None
    max_output: int = DEFAULT_MAX_OUTPUT
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.max_output <= 0:
            raise ValueError("max_output must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class Endpoint:
    """Where to send requests and which env var holds the bearer token."""

    base_url: str
    path: str = "/v1/chat/completions"
    api_key_env: str = "CASETIME_API_KEY"
    timeout_s: float = 120.0

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + self.path


def cache_key(request: ChatRequest) -> str:
    """Content hash of the request; endpoint-independent on purpose."""
    canon = json.dumps(
        {
            "model_id": request.model_id,
            "system_text": request.system_text,
            "user_text": request.user_text,
            "max_output": request.max_output,
            "temperature": request.temperature,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _cache_path(cache_dir: str | Path, request: ChatRequest) -> Path:
    return Path(cache_dir) / f"{cache_key(request)}.txt"


def _write_cache(path: Path, text: str) -> None:
    # Atomic write so concurrent workers never see a torn file.
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _extract_text(payload: dict) -> str:
    try:
        text = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as e:
        raise TransportError(f"malformed completion payload: {e}") from e
    if not isinstance(text, str):
        raise TransportError(f"completion content is {type(text).__name__}, not text")
    return text


def complete(
    request: ChatRequest,
    endpoint: Endpoint,
    cache_dir: str | Path | None = None,
    retries: int = 4,
    backoff_s: float = 0.5,
    session: requests.Session | None = None,
) -> str:
    """Resolve a request to response text, via cache when possible.

    Retries connection errors, 5xx, and 429 up to `retries` times with
    exponential backoff (429 honors Retry-After when sent). Exhausted retries
    raise RateLimitedError for 429s, TransportError otherwise. Successful
    responses are cached before returning.
    """
    if cache_dir is not None:
        cached = _cache_path(cache_dir, request)
        if cached.exists():
            return cached.read_text(encoding="utf-8")

    messages = []
    if request.system_text is not None:
        messages.append({"role": "system", "content": request.system_text})
    messages.append({"role": "user", "content": request.user_text})
    body = {
        "model": request.model_id,
        "messages": messages,
        "max_tokens": request.max_output,
        "temperature": request.temperature,
    }
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(endpoint.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    post = (session or requests).post
    last_err: Exception | None = None
    retry_after: float | None = None
    rate_limited = False
    for attempt in range(retries + 1):
        if attempt > 0:
            delay = retry_after if retry_after is not None else backoff_s * (2 ** (attempt - 1))
            time.sleep(delay)
            retry_after = None
        try:
            resp = post(endpoint.url, json=body, headers=headers, timeout=endpoint.timeout_s)
        except requests.RequestException as e:
            last_err = e
            rate_limited = False
            logger.warning("attempt %d failed: %s", attempt + 1, e)
            continue
        if resp.status_code == 429:
            rate_limited = True
            header = resp.headers.get("Retry-After")
            try:
                retry_after = float(header) if header is not None else None
            except ValueError:
                retry_after = None
            last_err = TransportError(f"rate limited by {endpoint.url}")
            logger.warning("attempt %d rate limited (Retry-After=%s)", attempt + 1, header)
            continue
        if resp.status_code >= 500:
            last_err = TransportError(f"server error {resp.status_code}")
            rate_limited = False
            logger.warning("attempt %d got %d", attempt + 1, resp.status_code)
            continue
        if resp.status_code != 200:
            # 4xx other than 429 will not improve with retries.
            raise TransportError(f"request rejected with {resp.status_code}: {resp.text[:200]}")
        text = _extract_text(resp.json())
        if cache_dir is not None:
            _write_cache(_cache_path(cache_dir, request), text)
        return text

    if rate_limited:
        raise RateLimitedError(
            f"rate limited after {retries + 1} attempts", retry_after=retry_after
        ) from last_err
    raise TransportError(f"endpoint unreachable after {retries + 1} attempts") from last_err


class _RateGate:
    """Serializes request starts so they are at least min_interval_s apart."""

    def __init__(self, min_interval_s: float):
        self.min_interval_s = min_interval_s
        self._lock = threading.Lock()
        self._next_start = 0.0

    def wait(self) -> None:
        if self.min_interval_s <= 0:
            return
        with self._lock:
            now = time.monotonic()
            start = max(now, self._next_start)
            self._next_start = start + self.min_interval_s
        delay = start - now
        if delay > 0:
            time.sleep(delay)


def complete_many(
    requests_: Sequence[ChatRequest],
    endpoint: Endpoint,
    cache_dir: str | Path | None = None,
    max_workers: int = 4,
    min_interval_s: float = 0.0,
    retries: int = 4,
    backoff_s: float = 0.5,
) -> list[str | Exception]:
    """Resolve many requests with bounded parallelism.

    Returns one entry per request in order: response text, or the exception
    that request ended with. Failures never abort the batch.
    """
    gate = _RateGate(min_interval_s)
    results: list[str | Exception] = [None] * len(requests_)  # type: ignore[list-item]

    def run(idx: int, req: ChatRequest):
        gate.wait()
        try:
            results[idx] = complete(
                req, endpoint, cache_dir=cache_dir, retries=retries, backoff_s=backoff_s
            )
        except Exception as e:  # noqa: BLE001 - isolation is the contract here
            results[idx] = e

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for i, req in enumerate(requests_):
            pool.submit(run, i, req)
    return results
