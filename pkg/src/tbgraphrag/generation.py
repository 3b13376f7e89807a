"""LLM endpoints and answer orchestration.

Remote endpoints speak the OpenAI-compatible chat-completions wire schema,
so a locally served fine-tuned model and a hosted API plug in the same
way. Deterministic mock endpoints ship in-tree so the whole evaluation
battery runs offline.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import requests

from .retrieve import HybridRetriever, RetrievalConfig, RetrievalResult
from .tokenization import tokenize

MOCK_LATENCY_SECONDS = 0.01


class GenerationError(Exception):
    """Generation failed after bounded retries."""


class EndpointRequestError(GenerationError):
    """Non-retryable HTTP failure (4xx) with a body excerpt."""


class ProtocolError(GenerationError):
    """Endpoint returned JSON we cannot interpret."""


@dataclass
class LlmEndpoint:
    """Remote endpoint configuration; auth names an environment variable."""

    name: str
    base_url: str
    model_id: str
    auth_env: str | None = None
    timeout_seconds: float = 60.0
    max_parallel_requests: int = 4

    def __post_init__(self) -> None:
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be > 0")


@dataclass
class GenerationRequest:
    messages: list[dict[str, str]]
    max_tokens: int = 512
    temperature: float = 0.0
    want_logprobs: bool = False
    seed: int | None = None


@dataclass
class GenerationResponse:
    text: str
    latency_seconds: float
    finish_reason: str = "stop"
    token_logprobs: list[float] | None = None

    def __post_init__(self) -> None:
        if self.token_logprobs is not None and any(lp > 0 for lp in self.token_logprobs):
            raise ValueError("token logprobs must be <= 0")


class _BoundedEndpoint:
    """Common bookkeeping: request log and per-endpoint parallelism bound."""

    name = "endpoint"
    is_mock = False

    def __init__(self, max_parallel_requests: int = 4):
        self.max_parallel_requests = max_parallel_requests
        self._semaphore = threading.Semaphore(max_parallel_requests)
        self._lock = threading.Lock()
        self.request_log: list[GenerationRequest] = []
        self.in_flight = 0
        self.max_in_flight_seen = 0

    def complete(self, request: GenerationRequest) -> GenerationResponse:
        with self._semaphore:
            with self._lock:
                self.request_log.append(request)
                self.in_flight += 1
                self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)
            try:
                return self._complete(request)
            finally:
                with self._lock:
                    self.in_flight -= 1

    def _complete(self, request: GenerationRequest) -> GenerationResponse:
        raise NotImplementedError


def _mock_response(text: str, request: GenerationRequest) -> GenerationResponse:
    logprobs = None
    if request.want_logprobs:
        # One pseudo-logprob per generated token; deterministic.
        logprobs = [-0.1] * max(1, len(tokenize(text)))
    return GenerationResponse(
        text=text,
        latency_seconds=MOCK_LATENCY_SECONDS,
        finish_reason="stop",
        token_logprobs=logprobs,
    )


class MockEchoEndpoint(_BoundedEndpoint):
    """Returns a canned acknowledgement quoting the last user message."""

    is_mock = True

    def __init__(self, name: str = "mock-echo", prefix: str = "Echo: ", **kwargs):
        super().__init__(**kwargs)
        self.name = name
        self.prefix = prefix

    def _complete(self, request: GenerationRequest) -> GenerationResponse:
        user = next(
            (m["content"] for m in reversed(request.messages) if m["role"] == "user"), ""
        )
        return _mock_response(f"{self.prefix}{user}", request)


class MockCannedEndpoint(_BoundedEndpoint):
    """Maps exact user messages (or a matching substring key) to canned answers."""

    is_mock = True

    def __init__(
        self,
        answers: Mapping[str, str] | None = None,
        default: str = "I do not know.",
        name: str = "mock-canned",
        **kwargs,
    ):
        super().__init__(**kwargs)
        self.name = name
        self.answers = dict(answers or {})
        self.default = default

    def _complete(self, request: GenerationRequest) -> GenerationResponse:
        user = next(
            (m["content"] for m in reversed(request.messages) if m["role"] == "user"), ""
        )
        if user in self.answers:
            return _mock_response(self.answers[user], request)
        for key in sorted(self.answers):
            if key in user:
                return _mock_response(self.answers[key], request)
        return _mock_response(self.default, request)


class MockScriptedEndpoint(_BoundedEndpoint):
    """Plays back a fixed script of responses, cycling when exhausted."""

    is_mock = True

    def __init__(self, script: Sequence[str], name: str = "mock-scripted", **kwargs):
        super().__init__(**kwargs)
        if not script:
            raise ValueError("script must be non-empty")
        self.name = name
        self.script = list(script)
        self._cursor = 0

    def _complete(self, request: GenerationRequest) -> GenerationResponse:
        with self._lock:
            text = self.script[self._cursor % len(self.script)]
            self._cursor += 1
        return _mock_response(text, request)


class MockFailingEndpoint(_BoundedEndpoint):
    """Always fails; used to exercise generator-failure paths."""

    is_mock = True

    def __init__(self, name: str = "mock-failing", message: str = "simulated outage", **kwargs):
        super().__init__(**kwargs)
        self.name = name
        self.message = message

    def _complete(self, request: GenerationRequest) -> GenerationResponse:
        raise GenerationError(self.message)


class RemoteChatEndpoint(_BoundedEndpoint):
    """OpenAI-compatible chat-completions client with bounded retries."""

    def __init__(
        self,
        config: LlmEndpoint,
        max_attempts: int = 3,
        backoff_seconds: float = 0.5,
        audit_path: str | None = None,
        session: requests.Session | None = None,
    ):
        super().__init__(max_parallel_requests=config.max_parallel_requests)
        self.name = config.name
        self.config = config
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds
        self.audit_path = audit_path
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env:
            token = os.environ.get(self.config.auth_env)
            if not token:
                raise GenerationError(
                    f"auth environment variable {self.config.auth_env} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _audit(self, record: dict) -> None:
        if not self.audit_path:
            return
        with open(self.audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def _complete(self, request: GenerationRequest) -> GenerationResponse:
        url = f"{self.config.base_url.rstrip('/')}/chat/completions"
        payload: dict = {
            "model": self.config.model_id,
            "messages": request.messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.want_logprobs:
            payload["logprobs"] = True
        if request.seed is not None:
            payload["seed"] = request.seed

        started = time.perf_counter()
        last_error: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._session.post(
                    url,
                    json=payload,
                    headers=self._headers(),
                    timeout=self.config.timeout_seconds,
                )
            except requests.Timeout as exc:
                last_error = GenerationError(f"timeout after {self.config.timeout_seconds}s")
                last_error.__cause__ = exc
            except requests.RequestException as exc:
                last_error = exc
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = GenerationError(f"HTTP {resp.status_code} from {url}")
                elif resp.status_code >= 400:
                    raise EndpointRequestError(
                        f"HTTP {resp.status_code} from {url}: {resp.text[:200]}"
                    )
                else:
                    response = self._parse(resp, started)
                    self._audit(
                        {
                            "endpoint": self.name,
                            "model": self.config.model_id,
                            "messages": request.messages,
                            "status": resp.status_code,
                            "text": response.text,
                            "latency_seconds": response.latency_seconds,
                        }
                    )
                    return response
            if attempt < self.max_attempts:
                time.sleep(self.backoff_seconds * 2 ** (attempt - 1))
        raise GenerationError(
            f"generation failed after {self.max_attempts} attempts: {last_error}"
        )

    def _parse(self, resp: requests.Response, started: float) -> GenerationResponse:
        try:
            data = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"response is not JSON: {resp.text[:200]}") from exc
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
            finish = choice.get("finish_reason", "stop")
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"unexpected response shape: {json.dumps(data)[:200]}") from exc
        if text is None:
            raise ProtocolError("response text is null")
        logprobs = None
        lp = choice.get("logprobs")
        if lp and isinstance(lp, dict) and lp.get("content"):
            logprobs = [float(item["logprob"]) for item in lp["content"]]
        return GenerationResponse(
            text=text,
            latency_seconds=time.perf_counter() - started,
            finish_reason=finish,
            token_logprobs=logprobs,
        )


def generate(endpoint, request: GenerationRequest) -> GenerationResponse:
    """Run one completion against any endpoint object."""
    return endpoint.complete(request)


# ---------------------------------------------------------------------------
# Prompt templates and answering

@dataclass
class PromptTemplate:
    system_text: str
    user_template: str
    context_separator: str = "\n\n---\n\n"

    def __post_init__(self) -> None:
        if self.user_template.count("{question}") != 1:
            raise ValueError("user_template must contain {question} exactly once")
        if self.user_template.count("{context}") > 1:
            raise ValueError("user_template may contain {context} at most once")

    @property
    def requires_context(self) -> bool:
        return "{context}" in self.user_template

    def render(self, question: str, context: str | None = None) -> list[dict[str, str]]:
        if self.requires_context and context is None:
            raise ValueError("this template requires retrieved context")
        user = self.user_template.replace("{question}", question)
        if self.requires_context:
            user = user.replace("{context}", context or "")
        messages = []
        if self.system_text:
            messages.append({"role": "system", "content": self.system_text})
        messages.append({"role": "user", "content": user})
        return messages


DEFAULT_SYSTEM_TEXT = (
    "You are a clinical assistant answering questions about tuberculosis "
    "care using South African guidelines and current literature. Answer "
    "precisely and avoid speculation."
)

ZERO_SHOT_TEMPLATE = PromptTemplate(
    system_text=DEFAULT_SYSTEM_TEXT,
    user_template="Question: {question}\n\nAnswer:",
)

RAG_TEMPLATE = PromptTemplate(
    system_text=DEFAULT_SYSTEM_TEXT,
    user_template=(
        "Use the context passages below to answer the question. Cite only "
        "facts present in the context.\n\nContext:\n{context}\n\n"
        "Question: {question}\n\nAnswer:"
    ),
)


@dataclass
class RagAnswer:
    response: GenerationResponse
    retrieval: RetrievalResult
    prompt_messages: list[dict[str, str]] = field(default_factory=list)


def answer_zero_shot(
    endpoint,
    question: str,
    template: PromptTemplate = ZERO_SHOT_TEMPLATE,
    max_tokens: int = 512,
    want_logprobs: bool = True,
    seed: int | None = None,
) -> GenerationResponse:
    """Single-turn answer with no exemplars and no retrieved context."""
    if template.requires_context:
        raise ValueError("zero-shot answering requires a template without {context}")
    request = GenerationRequest(
        messages=template.render(question),
        max_tokens=max_tokens,
        temperature=0.0,
        want_logprobs=want_logprobs,
        seed=seed,
    )
    return generate(endpoint, request)


def answer_with_rag(
    endpoint,
    question: str,
    retriever: HybridRetriever,
    config: RetrievalConfig | None = None,
    template: PromptTemplate = RAG_TEMPLATE,
    max_tokens: int = 512,
    want_logprobs: bool = True,
    seed: int | None = None,
    clock: Callable[[], float] | None = None,
) -> RagAnswer:
    """Retrieve, assemble the grounded prompt, then generate.

    Retrieval runs before any generation call and does not depend on which
    endpoint is configured; retrieval errors propagate untouched.
    """
    if not template.requires_context:
        raise ValueError("RAG answering requires a template with {context}")
    retrieval = retriever.retrieve(question, config=config, clock=clock)
    context = template.context_separator.join(
        retriever.chunk(c.chunk_id).text for c in retrieval.chunks
    )
    messages = template.render(question, context=context)
    request = GenerationRequest(
        messages=messages,
        max_tokens=max_tokens,
        temperature=0.0,
        want_logprobs=want_logprobs,
        seed=seed,
    )
    response = generate(endpoint, request)
    return RagAnswer(response=response, retrieval=retrieval, prompt_messages=messages)
