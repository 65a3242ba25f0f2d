"""Uniform access to text-generation and embedding backends.

Every caller goes through a :class:`Gateway`, which resolves a
:class:`ModelHandle` to a backend: either an HTTP upstream speaking the
OpenAI-compatible completions/embeddings shape, or one of the deterministic
in-process stubs (``endpoint = "stub:<name>"``).  Stubs are pure functions of
``(seed, inputs)``, which is what makes the whole test suite and the
acceptance statistics runnable offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import httpx
import numpy as np

from .errors import FinragError

logger = logging.getLogger(__name__)

KIND_CHAT = "chat_generation"
KIND_SCORED = "scored_completion"
KIND_EMBEDDING = "embedding"
KINDS = (KIND_CHAT, KIND_SCORED, KIND_EMBEDDING)

NEG_INF_SENTINEL = -1e9  # stands in for log 0 while keeping scores finite

# flipped by the CLI --trace flag; per-handle options={"trace": true} also works
TRACE_BODIES = False


class GatewayError(FinragError):
    pass


class Timeout(GatewayError):
    pass


class UpstreamError(GatewayError):
    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"upstream returned {status}: {detail}")
        self.status = status


class RateLimited(GatewayError):
    pass


class UnsupportedByBackend(GatewayError):
    pass


class DimensionMismatch(GatewayError):
    pass


class EmptyText(GatewayError):
    pass


class ConfigError(GatewayError):
    pass


@dataclass(frozen=True, slots=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_ms: int = 50


@dataclass(frozen=True, slots=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    stop: tuple[str, ...] = ()


@dataclass(frozen=True)
class ModelHandle:
    """Named backend: id, kind, endpoint (URL or ``stub:<name>``), limits."""

    id: str
    kind: str
    endpoint: str
    max_in_flight: int = 4
    timeout_ms: int = 30_000
    retry: RetryPolicy = RetryPolicy()
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"handle {self.id}: unknown kind {self.kind!r}")
        if self.max_in_flight < 1:
            raise ConfigError(f"handle {self.id}: max_in_flight must be >= 1")

    @property
    def is_stub(self) -> bool:
        return self.endpoint.startswith("stub:")


@dataclass(frozen=True, slots=True)
class ScoredCompletionResult:
    """Per-candidate natural-log scores; <= 0 when ``normalized`` is set."""

    log_probs: dict[str, float]
    model_id: str
    latency_ms: float
    normalized: bool = False


def _stable_u64(*parts: str) -> int:
    digest = hashlib.sha256("|".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _apply_stop(text: str, stop: Sequence[str]) -> str:
    cut = len(text)
    for s in stop:
        pos = text.find(s)
        if pos != -1:
            cut = min(cut, pos)
    return text[:cut]


# ---------------------------------------------------------------------------
# Stub backends
# ---------------------------------------------------------------------------


class _StubBase:
    """Instrumented base: tracks peak concurrent calls and calls per request key."""

    def __init__(self, handle: ModelHandle):
        self.handle = handle
        self.seed = int(handle.options.get("seed", 0))
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight_seen = 0
        self.calls_by_key: dict[str, int] = {}
        self._lock = threading.Lock()

    def _enter(self, request_key: str) -> None:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)
            self.calls_by_key[request_key] = self.calls_by_key.get(request_key, 0) + 1

    def _exit(self) -> None:
        with self._lock:
            self.in_flight -= 1

    def generate(self, prompt: str, params: GenerationParams, request_key: str) -> str:
        raise UnsupportedByBackend(f"{self.handle.id} cannot generate")

    def score(self, prompt: str, candidates: Sequence[str], request_key: str) -> dict[str, float]:
        raise UnsupportedByBackend(f"{self.handle.id} cannot score candidates")

    def embed(self, texts: Sequence[str], request_key: str) -> list[list[float]]:
        raise UnsupportedByBackend(f"{self.handle.id} cannot embed")


class EchoStub(_StubBase):
    def generate(self, prompt: str, params: GenerationParams, request_key: str) -> str:
        self._enter(request_key)
        try:
            sleep_ms = float(self.handle.options.get("sleep_ms", 0))
            if sleep_ms:
                time.sleep(sleep_ms / 1000.0)
            return _apply_stop(prompt, params.stop)
        finally:
            self._exit()


class ScriptedStub(_StubBase):
    """Returns the value of the first table key contained in the prompt."""

    def generate(self, prompt: str, params: GenerationParams, request_key: str) -> str:
        self._enter(request_key)
        try:
            table: Mapping[str, str] = self.handle.options.get("table", {})
            for key, value in table.items():
                if key in prompt:
                    return _apply_stop(value, params.stop)
            return _apply_stop(str(self.handle.options.get("default", "")), params.stop)
        finally:
            self._exit()


class FixedScoresStub(_StubBase):
    def score(self, prompt: str, candidates: Sequence[str], request_key: str) -> dict[str, float]:
        self._enter(request_key)
        try:
            scores: Mapping[str, float] = self.handle.options.get("scores", {})
            missing = [c for c in candidates if c not in scores]
            if missing:
                raise UpstreamError(500, f"fixed-scores stub lacks candidates {missing}")
            return {c: float(scores[c]) for c in candidates}
        finally:
            self._exit()


class UniformScoresStub(_StubBase):
    def score(self, prompt: str, candidates: Sequence[str], request_key: str) -> dict[str, float]:
        self._enter(request_key)
        try:
            return {c: math.log(1.0 / len(candidates)) for c in candidates}
        finally:
            self._exit()


class ScriptedScoresStub(_StubBase):
    """Maps a prompt substring to winning letters (or a full score map).

    Letter-string values score members +1 and the rest -10 so that both the
    single argmax and the joint combination argmax land exactly on them.
    """

    def score(self, prompt: str, candidates: Sequence[str], request_key: str) -> dict[str, float]:
        self._enter(request_key)
        try:
            table: Mapping[str, object] = self.handle.options.get("table", {})
            for key, value in table.items():
                if key not in prompt:
                    continue
                if isinstance(value, Mapping):
                    return {c: float(value.get(c, NEG_INF_SENTINEL)) for c in candidates}
                winners = set(str(value))
                return {c: (1.0 if c in winners else -10.0) for c in candidates}
            raise UpstreamError(500, "scripted-scores stub has no entry for this prompt")
        finally:
            self._exit()


class RandomChoiceStub(_StubBase):
    """Picks one candidate uniformly, keyed on hash(seed, prompt)."""

    def score(self, prompt: str, candidates: Sequence[str], request_key: str) -> dict[str, float]:
        self._enter(request_key)
        try:
            pick = sorted(candidates)[_stable_u64(str(self.seed), prompt) % len(candidates)]
            return {c: (-0.01 if c == pick else -8.0) for c in candidates}
        finally:
            self._exit()


class RandomComboStub(_StubBase):
    """Picks one option combination (size >= 2) uniformly per prompt.

    Members score +1 and non-members -10, so summing member scores makes the
    chosen combination the unique joint-score argmax.  Scores are explicitly
    unnormalized.
    """

    def score(self, prompt: str, candidates: Sequence[str], request_key: str) -> dict[str, float]:
        from .scoring import enumerate_combinations

        self._enter(request_key)
        try:
            combos = enumerate_combinations(len(candidates))
            chosen = combos[_stable_u64(str(self.seed), prompt) % len(combos)]
            return {c: (1.0 if c in chosen else -10.0) for c in candidates}
        finally:
            self._exit()


class HashEmbedStub(_StubBase):
    """Deterministic unit-free embedding: one RNG draw keyed on (seed, text)."""

    def embed(self, texts: Sequence[str], request_key: str) -> list[list[float]]:
        self._enter(request_key)
        try:
            dim = int(self.handle.options.get("dim", 32))
            out = []
            for text in texts:
                rng = np.random.default_rng(_stable_u64(str(self.seed), "embed", text))
                out.append(rng.standard_normal(dim).tolist())
            return out
        finally:
            self._exit()


class KeyedEmbedStub(HashEmbedStub):
    """Looks up vectors for texts containing a table key; hash fallback otherwise."""

    def embed(self, texts: Sequence[str], request_key: str) -> list[list[float]]:
        table: Mapping[str, Sequence[float]] = self.handle.options.get("table", {})
        out = []
        for text in texts:
            vec = next((list(map(float, v)) for k, v in table.items() if k in text), None)
            out.append(vec if vec is not None else super().embed([text], request_key)[0])
        return out


class FlakyStub(ScriptedStub):
    """Fails the first attempt of every request key; test aid for retry logic."""

    def generate(self, prompt: str, params: GenerationParams, request_key: str) -> str:
        first_attempt = self.calls_by_key.get(request_key, 0) == 0
        result = super().generate(prompt, params, request_key)
        if first_attempt:
            raise UpstreamError(503, "flaky stub: first attempt fails")
        return result


_STUBS = {
    "echo": EchoStub,
    "scripted": ScriptedStub,
    "fixed_scores": FixedScoresStub,
    "uniform": UniformScoresStub,
    "scripted_scores": ScriptedScoresStub,
    "random_choice": RandomChoiceStub,
    "random_combo": RandomComboStub,
    "hash_embed": HashEmbedStub,
    "keyed_embed": KeyedEmbedStub,
    "flaky": FlakyStub,
}


# ---------------------------------------------------------------------------
# HTTP backend (OpenAI-compatible JSON shape)
# ---------------------------------------------------------------------------


class HttpBackend:
    def __init__(self, handle: ModelHandle):
        self.handle = handle
        headers = {}
        key_env = handle.options.get("api_key_env")
        if key_env and os.environ.get(key_env):
            headers["Authorization"] = f"Bearer {os.environ[key_env]}"
        self._client = httpx.Client(
            base_url=handle.endpoint.rstrip("/"),
            timeout=handle.timeout_ms / 1000.0,
            headers=headers,
            transport=handle.options.get("transport"),
        )

    def _post(self, path: str, payload: dict) -> dict:
        if TRACE_BODIES or self.handle.options.get("trace"):
            redacted = {k: v for k, v in payload.items() if "key" not in k.lower()}
            logger.info("POST %s %s", path, json.dumps(redacted, ensure_ascii=False)[:500])
        try:
            response = self._client.post(path, json=payload)
        except httpx.TimeoutException as exc:
            raise Timeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise UpstreamError(0, str(exc)) from exc
        if response.status_code == 429:
            raise RateLimited("429 from upstream")
        if response.status_code >= 400:
            raise UpstreamError(response.status_code, response.text[:200])
        return response.json()

    def generate(self, prompt: str, params: GenerationParams, request_key: str) -> str:
        payload = {
            "model": self.handle.options.get("model", self.handle.id),
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.stop:
            payload["stop"] = list(params.stop)
        data = self._post("/chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise UpstreamError(200, f"malformed completion body: {data!r}"[:200]) from exc

    def score(self, prompt: str, candidates: Sequence[str], request_key: str) -> dict[str, float]:
        payload = {
            "model": self.handle.options.get("model", self.handle.id),
            "prompt": prompt,
            "max_tokens": 1,
            "logprobs": max(20, len(candidates)),
            "temperature": 0.0,
        }
        try:
            data = self._post("/completions", payload)
            top = data["choices"][0]["logprobs"]["top_logprobs"][0]
        except (UpstreamError, KeyError, IndexError, TypeError):
            return self._score_by_generation(prompt, candidates, request_key)
        scores: dict[str, float] = {}
        for cand in candidates:
            for variant in (cand, " " + cand):
                if variant in top:
                    scores[cand] = float(top[variant])
                    break
            else:
                scores[cand] = NEG_INF_SENTINEL
        return scores

    def _score_by_generation(self, prompt: str, candidates: Sequence[str], request_key: str) -> dict[str, float]:
        # Chat-only upstream: emulate scoring by one greedy letter; the pick
        # gets log 1 and the rest a finite floor, preserving argmax semantics.
        text = self.generate(prompt, GenerationParams(temperature=0.0, max_tokens=4), request_key)
        pick = next((ch for ch in text.strip().upper() if ch in candidates), None)
        if pick is None:
            raise UnsupportedByBackend(f"upstream answer {text!r} names no candidate")
        return {c: (0.0 if c == pick else NEG_INF_SENTINEL) for c in candidates}

    def embed(self, texts: Sequence[str], request_key: str) -> list[list[float]]:
        payload = {"model": self.handle.options.get("model", self.handle.id), "input": list(texts)}
        data = self._post("/embeddings", payload)
        try:
            vectors = [item["embedding"] for item in data["data"]]
        except (KeyError, TypeError) as exc:
            raise UpstreamError(200, f"malformed embeddings body: {data!r}"[:200]) from exc
        if len(vectors) != len(texts):
            raise DimensionMismatch(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        return vectors


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


def _log_softmax(scores: Mapping[str, float]) -> dict[str, float]:
    peak = max(scores.values())
    logz = peak + math.log(sum(math.exp(v - peak) for v in scores.values()))
    return {k: v - logz for k, v in scores.items()}


class Gateway:
    """Registry of model handles with throttling and retry around backends."""

    def __init__(self, handles: Iterable[ModelHandle] = ()):
        self._handles: dict[str, ModelHandle] = {}
        self._backends: dict[str, object] = {}
        self._semaphores: dict[str, threading.BoundedSemaphore] = {}
        self._lock = threading.Lock()
        self._key_counter = 0
        for handle in handles:
            self.register(handle)

    def register(self, handle: ModelHandle) -> ModelHandle:
        with self._lock:
            self._handles[handle.id] = handle
            self._backends.pop(handle.id, None)
            self._semaphores[handle.id] = threading.BoundedSemaphore(handle.max_in_flight)
        return handle

    def resolve(self, handle: str | ModelHandle) -> ModelHandle:
        if isinstance(handle, ModelHandle):
            if handle.id not in self._handles:
                self.register(handle)
            return self._handles[handle.id]
        try:
            return self._handles[handle]
        except KeyError:
            raise ConfigError(f"unknown model handle {handle!r}") from None

    def backend(self, handle: str | ModelHandle):
        handle = self.resolve(handle)
        with self._lock:
            if handle.id not in self._backends:
                if handle.is_stub:
                    name = handle.endpoint.split(":", 1)[1]
                    if name not in _STUBS:
                        raise ConfigError(f"unknown stub backend {name!r}")
                    self._backends[handle.id] = _STUBS[name](handle)
                else:
                    self._backends[handle.id] = HttpBackend(handle)
            return self._backends[handle.id]

    def _next_key(self, handle: ModelHandle) -> str:
        with self._lock:
            self._key_counter += 1
            return f"{handle.id}:{self._key_counter}"

    def _call(self, handle: ModelHandle, fn, *args):
        key = self._next_key(handle)
        semaphore = self._semaphores[handle.id]
        last: Exception | None = None
        for attempt in range(handle.retry.max_attempts):
            with semaphore:
                try:
                    return fn(*args, key)
                except (Timeout, RateLimited) as exc:
                    last = exc
                except UpstreamError as exc:
                    if 400 <= exc.status < 500 and exc.status != 429:
                        raise
                    last = exc
            if attempt + 1 < handle.retry.max_attempts:
                time.sleep(handle.retry.backoff_base_ms * (2**attempt) / 1000.0)
        assert last is not None
        raise last

    def generate(
        self,
        handle: str | ModelHandle,
        prompt: str,
        params: GenerationParams | None = None,
    ) -> str:
        handle = self.resolve(handle)
        if handle.kind != KIND_CHAT:
            raise UnsupportedByBackend(f"handle {handle.id} has kind {handle.kind}, not {KIND_CHAT}")
        if not prompt:
            raise ValueError("prompt must be non-empty")
        backend = self.backend(handle)
        return self._call(handle, backend.generate, prompt, params or GenerationParams())

    def score_candidates(
        self,
        handle: str | ModelHandle,
        prompt: str,
        candidates: Sequence[str],
        normalize: bool = False,
    ) -> ScoredCompletionResult:
        handle = self.resolve(handle)
        if handle.kind not in (KIND_SCORED, KIND_CHAT):
            raise UnsupportedByBackend(f"handle {handle.id} cannot score candidates")
        if not candidates:
            raise ValueError("candidates must be non-empty")
        if len(set(candidates)) != len(candidates):
            raise ValueError("candidates must be pairwise distinct")
        for cand in candidates:
            if len(cand) != 1:
                raise ValueError(f"candidate {cand!r} is not a single letter")
        backend = self.backend(handle)
        start = time.perf_counter()
        scores = self._call(handle, backend.score, prompt, tuple(candidates))
        latency_ms = (time.perf_counter() - start) * 1000.0
        missing = [c for c in candidates if c not in scores]
        if missing:
            raise UpstreamError(200, f"backend omitted candidates {missing}")
        scores = {c: float(scores[c]) for c in candidates}
        for cand, value in scores.items():
            if not math.isfinite(value):
                raise UpstreamError(200, f"non-finite score {value} for {cand!r}")
        normalized = normalize
        if normalize:
            scores = _log_softmax(scores)
        return ScoredCompletionResult(
            log_probs=scores, model_id=handle.id, latency_ms=latency_ms, normalized=normalized
        )

    def embed(self, handle: str | ModelHandle, texts: Sequence[str]) -> list[list[float]]:
        handle = self.resolve(handle)
        if handle.kind != KIND_EMBEDDING:
            raise UnsupportedByBackend(f"handle {handle.id} has kind {handle.kind}, not {KIND_EMBEDDING}")
        if not texts:
            return []
        for text in texts:
            if not text:
                raise EmptyText("cannot embed an empty string")
        backend = self.backend(handle)
        vectors = self._call(handle, backend.embed, tuple(texts))
        dims = {len(v) for v in vectors}
        if len(vectors) != len(texts) or len(dims) != 1:
            raise DimensionMismatch(f"expected {len(texts)} same-dimension vectors, got dims {sorted(dims)}")
        return [list(map(float, v)) for v in vectors]


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------


def _load_config_file(path: str | Path) -> dict:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".json":
        return json.loads(raw.decode("utf-8"))
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(raw.decode("utf-8"))


def handle_from_dict(handle_id: str, spec: Mapping) -> ModelHandle:
    retry = spec.get("retry", {})
    return ModelHandle(
        id=handle_id,
        kind=spec.get("kind", KIND_CHAT),
        endpoint=spec.get("endpoint", "stub:echo"),
        max_in_flight=int(spec.get("max_in_flight", 4)),
        timeout_ms=int(spec.get("timeout_ms", 30_000)),
        retry=RetryPolicy(
            max_attempts=int(retry.get("max_attempts", 3)),
            backoff_base_ms=int(retry.get("backoff_base_ms", 50)),
        ),
        options=dict(spec.get("options", {})),
    )


def load_gateway(path: str | Path) -> Gateway:
    """Build a gateway from a TOML/JSON config with a ``[models.<id>]`` table."""
    config = _load_config_file(path)
    models = config.get("models")
    if not isinstance(models, Mapping) or not models:
        raise ConfigError(f"{path}: config lacks a [models] section")
    return Gateway(handle_from_dict(hid, spec) for hid, spec in models.items())
