"""Uniform gateway to chat, embedding, and captioning backends.

Backends are plain callables; remote HTTP backends and deterministic offline
stubs share the same gateway surface, so the whole pipeline runs unchanged
with or without hosted models. The stubs are pure functions: identical inputs
give identical outputs across processes and platforms.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import requests

from .textproc import count_tokens, split_sentences, words

MODEL_TOKEN_ENV = "DATASCOUT_MODEL_TOKEN"


class GatewayError(Exception):
    """Base class for gateway errors."""


class OverBudgetError(GatewayError):
    """Request rejected before sending: prompt exceeds the context budget."""


class GatewayFailure(GatewayError):
    """Backend failed after the configured number of attempts."""


class InvalidInputError(GatewayError):
    """Degenerate input rejected by the gateway (e.g. zero-length image)."""


def _env_token() -> str:
    return os.environ.get(MODEL_TOKEN_ENV, "")


@dataclass
class GatewayConfig:
    """Connection and decoding settings shared by all gateway calls."""

    chat_endpoint: str = ""
    embed_endpoint: str = ""
    caption_endpoint: str = ""
    api_token: str = field(default_factory=_env_token)
    temperature: float = 0.5
    max_new_tokens: int = 1024
    context_budget_tokens: int = 8192
    embed_dims: int = 768
    retry_count: int = 3
    backoff_start_s: float = 1.0
    requests_per_second: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.retry_count < 0:
            raise ValueError(f"retry_count must be >= 0, got {self.retry_count}")
        if self.embed_dims < 1:
            raise ValueError(f"embed_dims must be positive, got {self.embed_dims}")


@dataclass
class EmbeddingVector:
    """A dense embedding; unit Euclidean norm when ``normalized`` is set."""

    dims: int
    values: np.ndarray
    normalized: bool = True

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.dims,):
            raise ValueError(f"expected {self.dims} dims, got shape {self.values.shape}")
        if self.normalized:
            norm = float(np.linalg.norm(self.values))
            if not (1.0 - 1e-6 <= norm <= 1.0 + 1e-6):
                raise ValueError(f"normalized vector has norm {norm}")


class RateLimiter:
    """Token-bucket limiter serializing bursts across threads."""

    def __init__(self, rate_per_sec: float, burst: int = 1) -> None:
        if rate_per_sec <= 0:
            raise ValueError("rate_per_sec must be positive")
        self._rate = rate_per_sec
        self._burst = float(burst)
        self._tokens = float(burst)
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self._burst, self._tokens + (now - self._last) * self._rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            time.sleep(wait)


# ---------------------------------------------------------------------------
# Offline stub backends
# ---------------------------------------------------------------------------

_QUESTION_COUNT_RE = re.compile(r"create a list of (\d+) questions")


class StubChatBackend:
    """Deterministic extractive chat stand-in.

    Recognizes the instruction phrases used by the pipeline's prompts and
    answers by extraction, never invention:

    - ``SUMMARIZE:``      -> first 3 sentences of the trailing payload, bulleted
    - ``COMBINE:``        -> first sentence of every blank-line-separated block
    - description prompts ("You are a helpful data analyst") -> sectioned
      Description / Domain / Keywords reply derived from the embedded summary
    - question prompts ("create a list of N questions") -> N numbered
      questions built from the embedded summary's sentences

    Anything else falls back to the SUMMARIZE behaviour over the whole prompt.
    """

    def __call__(self, prompt: str, **_params) -> str:
        if "You are a helpful data analyst" in prompt:
            return self._describe(prompt)
        count = _QUESTION_COUNT_RE.search(prompt)
        if count:
            return self._questions(prompt, int(count.group(1)))
        if "COMBINE:" in prompt:
            return self._combine(prompt.split("COMBINE:", 1)[1])
        if "SUMMARIZE:" in prompt:
            return self._summarize(prompt.split("SUMMARIZE:", 1)[1])
        return self._summarize(prompt)

    @staticmethod
    def _summarize(payload: str) -> str:
        sents = split_sentences(payload)[:3]
        return "\n".join(f"- {s}" for s in sents)

    @staticmethod
    def _combine(payload: str) -> str:
        lines = []
        for block in re.split(r"\n\s*\n", payload):
            block = block.strip()
            if not block:
                continue
            sents = split_sentences(block)
            if sents:
                first = sents[0]
                lines.append(first if first.startswith("- ") else f"- {first}")
        return "\n".join(lines)

    @staticmethod
    def _describe(prompt: str) -> str:
        start = prompt.find("additional information")
        tail = prompt[start + len("additional information"):] if start >= 0 else prompt
        cut = tail.rfind("If possible from the labels")
        payload = (tail[:cut] if cut >= 0 else tail).strip().lstrip(":").strip()
        sents = split_sentences(payload)
        description = " ".join(sents[:3]) if sents else payload
        counts = Counter(w for w in words(payload) if len(w) >= 4)
        top = [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:5]]
        domain = top[0].capitalize() if top else "General"
        keywords = ", ".join(top) if top else "data"
        return f"Description: {description}\nDomain: {domain}\nKeywords: {keywords}"

    @staticmethod
    def _questions(prompt: str, n: int) -> str:
        start = prompt.find("about a dataset:")
        tail = prompt[start + len("about a dataset:"):] if start >= 0 else prompt
        cut = tail.rfind("Based on the summary")
        payload = (tail[:cut] if cut >= 0 else tail).strip()
        sents = [s.strip("-• ").strip() for s in split_sentences(payload)]
        sents = [s for s in sents if s] or ["this dataset"]
        lines = []
        for i in range(n):
            fragment = sents[i % len(sents)].rstrip(".!?")
            lines.append(f"{i + 1}. Which dataset would contain {fragment}?")
        return "\n".join(lines)


class StubEmbedBackend:
    """Signed feature hashing of per-word character 3-grams.

    Each word contributes its length-3 character substrings (the word itself
    when shorter); every gram is hashed into one of ``dims`` buckets with a
    +/-1 sign. Doubling a text doubles every gram count uniformly, so lexical
    overlap survives into cosine space. Hashing is keyed BLAKE2b, never
    Python's salted ``hash``, so vectors are stable across processes.
    """

    def __init__(self, dims: int = 768, seed: int = 0) -> None:
        self.dims = dims
        self._key = seed.to_bytes(8, "little", signed=True)
        self._gram_cache: dict[str, tuple[int, float]] = {}

    def _bucket(self, gram: str) -> tuple[int, float]:
        cached = self._gram_cache.get(gram)
        if cached is None:
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=self._key).digest()
            value = int.from_bytes(digest, "little")
            cached = (value % self.dims, 1.0 if (value >> 61) & 1 else -1.0)
            self._gram_cache[gram] = cached
        return cached

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dims)
        for word in words(text):
            if len(word) < 3:
                grams = [word]
            else:
                grams = [word[i:i + 3] for i in range(len(word) - 2)]
            for gram in grams:
                bucket, sign = self._bucket(gram)
                vec[bucket] += sign
        return vec


class StubCaptionBackend:
    """Content-hash captions: ``image:`` + first 8 hex chars of SHA-256."""

    def __call__(self, image_bytes: bytes) -> str:
        return "image:" + hashlib.sha256(image_bytes).hexdigest()[:8]


# ---------------------------------------------------------------------------
# Remote HTTP backends
# ---------------------------------------------------------------------------


class HttpChatBackend:
    """Chat-completions-style JSON backend."""

    def __init__(self, endpoint: str, token: str = "", timeout: float = 120.0) -> None:
        self.endpoint = endpoint
        self.token = token
        self.timeout = timeout

    def _headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self.token}"} if self.token else {}

    def __call__(self, prompt: str, *, temperature: float, max_tokens: int) -> str:
        payload = {
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        resp = requests.post(self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


class HttpEmbedBackend:
    """POST {"input": [text]} -> {"data": [{"embedding": [...]}]}."""

    def __init__(self, endpoint: str, token: str = "", timeout: float = 60.0) -> None:
        self.endpoint = endpoint
        self.token = token
        self.timeout = timeout

    def __call__(self, text: str) -> np.ndarray:
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        resp = requests.post(self.endpoint, json={"input": [text]}, headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        return np.asarray(resp.json()["data"][0]["embedding"], dtype=float)


class HttpCaptionBackend:
    """POST raw image bytes -> {"caption": "..."}."""

    def __init__(self, endpoint: str, token: str = "", timeout: float = 120.0) -> None:
        self.endpoint = endpoint
        self.token = token
        self.timeout = timeout

    def __call__(self, image_bytes: bytes) -> str:
        headers = {"Content-Type": "application/octet-stream"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        resp = requests.post(self.endpoint, data=image_bytes, headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()["caption"]


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


class ModelGateway:
    """Single entry point for chat, embedding, and captioning calls.

    Shareable across threads; prompt-size checks happen before any request is
    sent, and transient backend failures are retried up to
    ``config.retry_count`` attempts with exponential backoff.
    """

    def __init__(
        self,
        config: Optional[GatewayConfig] = None,
        chat_backend: Optional[Callable[..., str]] = None,
        embed_backend: Optional[Callable[[str], np.ndarray]] = None,
        caption_backend: Optional[Callable[[bytes], str]] = None,
    ) -> None:
        self.config = config or GatewayConfig()
        self._chat = chat_backend
        self._embed = embed_backend
        self._caption = caption_backend
        self._limiter = (
            RateLimiter(self.config.requests_per_second)
            if self.config.requests_per_second
            else None
        )
        self._sleep = time.sleep  # injectable for tests

    @classmethod
    def with_stubs(cls, config: Optional[GatewayConfig] = None, seed: int = 0) -> "ModelGateway":
        """Gateway wired to the deterministic offline stubs."""
        config = config or GatewayConfig()
        return cls(
            config=config,
            chat_backend=StubChatBackend(),
            embed_backend=StubEmbedBackend(dims=config.embed_dims, seed=seed),
            caption_backend=StubCaptionBackend(),
        )

    @classmethod
    def from_endpoints(cls, config: GatewayConfig) -> "ModelGateway":
        """Gateway wired to the HTTP backends named in the config."""
        return cls(
            config=config,
            chat_backend=HttpChatBackend(config.chat_endpoint, config.api_token) if config.chat_endpoint else None,
            embed_backend=HttpEmbedBackend(config.embed_endpoint, config.api_token) if config.embed_endpoint else None,
            caption_backend=HttpCaptionBackend(config.caption_endpoint, config.api_token) if config.caption_endpoint else None,
        )

    # -- internals ----------------------------------------------------------

    def _call_with_retry(self, fn: Callable[[], object], what: str):
        attempts = max(1, self.config.retry_count)
        last: Exception | None = None
        for attempt in range(attempts):
            if self._limiter is not None:
                self._limiter.acquire()
            try:
                return fn()
            except GatewayError:
                raise
            except Exception as exc:  # transport / backend errors are retryable
                last = exc
                if attempt + 1 < attempts:
                    self._sleep(self.config.backoff_start_s * (2 ** attempt))
        raise GatewayFailure(f"{what} failed after {attempts} attempts: {last}")

    # -- public API -----------------------------------------------------------

    def chat(self, prompt: str, *, temperature: Optional[float] = None,
             max_new_tokens: Optional[int] = None) -> str:
        if self._chat is None:
            raise GatewayFailure("no chat backend registered")
        n_tokens = count_tokens(prompt)
        if n_tokens > self.config.context_budget_tokens:
            raise OverBudgetError(
                f"prompt has {n_tokens} tokens, budget is {self.config.context_budget_tokens}"
            )
        temp = self.config.temperature if temperature is None else temperature
        max_tokens = self.config.max_new_tokens if max_new_tokens is None else max_new_tokens
        return self._call_with_retry(
            lambda: self._chat(prompt, temperature=temp, max_tokens=max_tokens), "chat"
        )

    def embed(self, text: str) -> EmbeddingVector:
        if self._embed is None:
            raise GatewayFailure("no embed backend registered")
        raw = np.asarray(self._call_with_retry(lambda: self._embed(text), "embed"), dtype=float)
        norm = float(np.linalg.norm(raw))
        if norm == 0.0:
            values = np.zeros(raw.shape[0] if raw.size else self.config.embed_dims)
            values[0] = 1.0
        else:
            values = raw / norm
        return EmbeddingVector(dims=values.shape[0], values=values, normalized=True)

    def caption(self, image_bytes: bytes) -> str:
        if self._caption is None:
            raise GatewayFailure("no caption backend registered")
        if not image_bytes:
            raise InvalidInputError("zero-length image payload")
        text = self._call_with_retry(lambda: self._caption(image_bytes), "caption")
        if not text:
            raise GatewayFailure("caption backend returned empty caption")
        return text
