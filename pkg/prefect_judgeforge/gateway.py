"""Module for calling chat-completion and token-scoring endpoints from Prefect flows."""
import asyncio
import hashlib
import json
import math
import os
import threading
import time
from pathlib import Path
from typing import (
    Any,
    Awaitable,
    Callable,
    Dict,
    List,
    Optional,
    Sequence,
    TypeVar,
    Union,
)

import httpx
from prefect import task
from prefect.logging import get_logger
from prefect.utilities.asyncutils import run_sync_in_worker_thread
from pydantic import BaseModel, root_validator, validator
from tenacity import (
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)
from typing_extensions import Literal, Protocol

from prefect_judgeforge.credentials import JudgeCredentials
from prefect_judgeforge.exceptions import (
    EmptyText,
    ProtocolError,
    TransientError,
    UnsupportedByProvider,
)

logger = get_logger("prefect_judgeforge.gateway")

T = TypeVar("T")
R = TypeVar("R")

BOS_TEXT = "\n"


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ChatMessage(BaseModel):
    role: Literal["system", "user", "assistant"]
    content: str


class ChatRequest(BaseModel):
    """One chat-completion request.

    Attributes:
        model: Model identifier.
        messages: Conversation, oldest first.
        temperature: Sampling temperature; 0 for judging and classification.
        max_tokens: Completion length cap.
        attempt: Sampling attempt index. Distinct attempts of one prompt get
            distinct request ids, so a retried sample is not served from cache.
            Never sent to the provider.
        request_id: Content hash of the request; filled in when omitted.
    """

    model: str
    messages: List[ChatMessage]
    temperature: float = 0.0
    max_tokens: int = 2048
    attempt: int = 0
    request_id: str = ""

    @validator("messages")
    def _messages_not_empty(cls, messages):
        if not messages:
            raise ValueError("A chat request needs at least one message.")
        return messages

    @validator("temperature")
    def _temperature_non_negative(cls, temperature):
        if temperature < 0:
            raise ValueError("temperature must be non-negative.")
        return temperature

    @validator("max_tokens")
    def _max_tokens_positive(cls, max_tokens):
        if max_tokens < 1:
            raise ValueError("max_tokens must be positive.")
        return max_tokens

    @root_validator(skip_on_failure=True)
    def _fill_request_id(cls, values):
        if not values.get("request_id"):
            identity = {
                "model": values["model"],
                "messages": [message.dict() for message in values["messages"]],
                "temperature": values["temperature"],
                "max_tokens": values["max_tokens"],
            }
            if values.get("attempt"):
                identity["attempt"] = values["attempt"]
            values["request_id"] = prompt_hash(json.dumps(identity, sort_keys=True))
        return values

    @classmethod
    def from_prompt(cls, model: str, prompt: str, **kwargs: Any) -> "ChatRequest":
        """A single-turn request carrying `prompt` as the user message."""
        return cls(
            model=model, messages=[ChatMessage(role="user", content=prompt)], **kwargs
        )

    @property
    def prompt(self) -> str:
        """Content of the last user message."""
        for message in reversed(self.messages):
            if message.role == "user":
                return message.content
        return self.messages[-1].content


class TokenScore(BaseModel):
    """Log-probability of one token under the scoring model."""

    token: str
    logprob: float

    @validator("logprob")
    def _finite_non_positive(cls, logprob):
        if not math.isfinite(logprob) or logprob > 0:
            raise ValueError(f"logprob must be finite and <= 0, got {logprob}.")
        return logprob


class RetryPolicy(BaseModel):
    """Retry and concurrency limits of a gateway.

    Attributes:
        max_attempts: Attempts per request, the first one included.
        base_delay: Seconds waited before the first retry.
        multiplier: Growth factor of the delay between retries.
        max_in_flight: Requests allowed in flight at once.
    """

    max_attempts: int = 3
    base_delay: float = 1.0
    multiplier: float = 2.0
    max_in_flight: int = 4

    @validator("max_attempts", "max_in_flight")
    def _positive(cls, value):
        if value < 1:
            raise ValueError("must be at least 1.")
        return value

    @validator("multiplier")
    def _growing(cls, multiplier):
        if multiplier <= 1:
            raise ValueError("multiplier must be greater than 1.")
        return multiplier


class ChatProvider(Protocol):
    def complete(self, request: ChatRequest) -> str:
        ...

    def score(
        self, text: str, condition: Optional[str], model: str
    ) -> List[TokenScore]:
        ...


class TokenScorer(Protocol):
    def score(self, text: str, condition: Optional[str] = None) -> List[TokenScore]:
        ...


class HttpChatProvider:
    """Provider backed by a chat-completion compatible HTTP API.

    Args:
        credentials: `JudgeCredentials` block holding endpoint and key.
        transport: Optional `httpx` transport, used in tests.
    """

    def __init__(
        self,
        credentials: JudgeCredentials,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.credentials = credentials
        self.transport = transport

    def complete(self, request: ChatRequest) -> str:
        payload = {
            "model": request.model,
            "messages": [message.dict() for message in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        with self.credentials.get_client("chat", transport=self.transport) as chat:
            body = chat.post(payload)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(
                "Response body lacks choices[0].message.content."
            ) from exc
        if not isinstance(content, str):
            raise ProtocolError("choices[0].message.content is not a string.")
        return content

    def score(
        self, text: str, condition: Optional[str], model: str
    ) -> List[TokenScore]:
        """
        Scores `text` through the completion endpoint with logprob echo.

        The text is prefixed with the condition, or with a newline when there
        is none, and only tokens starting inside `text` are returned.
        """
        prefix = condition if condition else BOS_TEXT
        payload = {
            "model": model,
            "prompt": prefix + text,
            "max_tokens": 0,
            "temperature": 0,
            "echo": True,
            "logprobs": 0,
        }
        with self.credentials.get_client(
            "completions", transport=self.transport
        ) as completions:
            body = completions.post(payload)
        try:
            logprobs = body["choices"][0]["logprobs"]
            tokens = logprobs["tokens"]
            values = logprobs["token_logprobs"]
            offsets = logprobs["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise UnsupportedByProvider(
                "Completion endpoint does not echo token logprobs."
            ) from exc
        scores = []
        for token, value, offset in zip(tokens, values, offsets):
            if offset < len(prefix):
                continue
            if value is None:
                raise ProtocolError(f"Token {token!r} came back without a logprob.")
            scores.append(TokenScore(token=token, logprob=min(float(value), 0.0)))
        return scores


Reply = Union[str, Exception]


class MockChatProvider:
    """Deterministic in-process provider.

    Replies come from `replies`, keyed by the hash of the request's user
    prompt; a list of replies is consumed one per call, which lets tests
    script failures before a success. Unmatched prompts go to `responder`.

    Args:
        replies: Canned replies or exceptions keyed by `prompt_hash(prompt)`.
        responder: Fallback producing a reply for any request.
        scorer: Local token scorer answering `score` calls.
        latency: Seconds each call takes; makes overlapping calls observable.
    """

    def __init__(
        self,
        replies: Optional[Dict[str, Union[Reply, List[Reply]]]] = None,
        responder: Optional[Callable[[ChatRequest], str]] = None,
        scorer: Optional[TokenScorer] = None,
        latency: float = 0.0,
    ):
        self.replies = {
            key: list(value) if isinstance(value, list) else value
            for key, value in (replies or {}).items()
        }
        self.responder = responder
        self.scorer = scorer
        self.latency = latency
        self.calls: List[ChatRequest] = []
        self.in_flight = 0
        self.peak_in_flight = 0
        self._lock = threading.Lock()

    def _next_reply(self, request: ChatRequest) -> Reply:
        key = prompt_hash(request.prompt)
        with self._lock:
            canned = self.replies.get(key)
            if isinstance(canned, list):
                if len(canned) > 1:
                    return canned.pop(0)
                canned = canned[0] if canned else None
        if canned is not None:
            return canned
        if self.responder is not None:
            return self.responder(request)
        raise ProtocolError(f"Mock provider has no reply for prompt {key[:12]}.")

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls.append(request)
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            if self.latency:
                time.sleep(self.latency)
            reply = self._next_reply(request)
            if isinstance(reply, Exception):
                raise reply
            return reply
        finally:
            with self._lock:
                self.in_flight -= 1

    def score(
        self, text: str, condition: Optional[str], model: str
    ) -> List[TokenScore]:
        if self.scorer is None:
            raise UnsupportedByProvider("Mock provider has no token scorer.")
        return self.scorer.score(text, condition)


class ConstantScorer:
    """Assigns the same log-probability to every whitespace token."""

    def __init__(self, logprob: float = -1.0):
        self.logprob = logprob

    def score(self, text: str, condition: Optional[str] = None) -> List[TokenScore]:
        return [TokenScore(token=token, logprob=self.logprob) for token in text.split()]


class NGramScorer:
    """
    Bigram scorer with unigram back-off, for desk-scale difficulty scoring.

    The first answer token is conditioned on the last token of the condition,
    or on `<s>` without one. Unknown tokens get `floor` probability.

    Args:
        unigram: Token probabilities.
        bigram: Next-token probabilities keyed by previous token.
        floor: Probability of tokens neither table knows.
        tokenizer: `whitespace` splits on whitespace, `char` scores characters.
    """

    START = "<s>"

    def __init__(
        self,
        unigram: Dict[str, float],
        bigram: Optional[Dict[str, Dict[str, float]]] = None,
        floor: float = 1e-6,
        tokenizer: Literal["whitespace", "char"] = "whitespace",
    ):
        self.unigram = unigram
        self.bigram = bigram or {}
        self.floor = floor
        self.tokenizer = tokenizer

    def tokenize(self, text: str) -> List[str]:
        if self.tokenizer == "char":
            return list(text)
        return text.split()

    def probability(self, previous: str, token: str) -> float:
        following = self.bigram.get(previous, {})
        if token in following:
            return following[token]
        return self.unigram.get(token, self.floor)

    def score(self, text: str, condition: Optional[str] = None) -> List[TokenScore]:
        context = self.tokenize(condition) if condition else []
        previous = context[-1] if context else self.START
        scores = []
        for token in self.tokenize(text):
            scores.append(
                TokenScore(
                    token=token, logprob=math.log(self.probability(previous, token))
                )
            )
            previous = token
        return scores

    @classmethod
    def fit(
        cls, corpus: Sequence[str], floor: float = 1e-6, tokenizer: str = "whitespace"
    ) -> "NGramScorer":
        """Maximum-likelihood tables from a list of texts."""
        scorer = cls({}, {}, floor=floor, tokenizer=tokenizer)
        unigram: Dict[str, int] = {}
        bigram: Dict[str, Dict[str, int]] = {}
        for text in corpus:
            previous = cls.START
            for token in scorer.tokenize(text):
                unigram[token] = unigram.get(token, 0) + 1
                following = bigram.setdefault(previous, {})
                following[token] = following.get(token, 0) + 1
                previous = token
        total = sum(unigram.values()) or 1
        scorer.unigram = {
            token: count / total for token, count in sorted(unigram.items())
        }
        scorer.bigram = {
            previous: {
                token: count / sum(following.values())
                for token, count in sorted(following.items())
            }
            for previous, following in sorted(bigram.items())
        }
        return scorer


class LlmGateway:
    """
    Shared entry point for model calls.

    Bounds in-flight requests, retries transient failures with exponential
    backoff and caches completions by request id, in memory and optionally on
    disk.

    Args:
        provider: Where requests go, e.g. `HttpChatProvider` or `MockChatProvider`.
        policy: Retry and concurrency limits.
        cache_dir: Directory of the on-disk completion cache; None disables it.
        scorer: Local token scorer; when set, `score_tokens` never calls the provider.
        sleep: Sleep function used between retries.

    Example:
        ```python
        from prefect_judgeforge.gateway import ChatRequest, LlmGateway, MockChatProvider

        gateway = LlmGateway(MockChatProvider(responder=lambda request: "ok"))
        gateway.chat_complete(ChatRequest.from_prompt("judge", "hello"))
        ```
    """

    def __init__(
        self,
        provider: ChatProvider,
        policy: Optional[RetryPolicy] = None,
        cache_dir: Optional[Union[str, Path]] = None,
        scorer: Optional[TokenScorer] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.provider = provider
        self.policy = policy or RetryPolicy()
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.scorer = scorer
        self.sleep = sleep
        self._slots = threading.BoundedSemaphore(self.policy.max_in_flight)
        self._cache_lock = threading.Lock()
        self._memory: Dict[str, str] = {}
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _retrying(self) -> Retrying:
        return Retrying(
            stop=stop_after_attempt(self.policy.max_attempts),
            wait=wait_exponential(
                multiplier=self.policy.base_delay, exp_base=self.policy.multiplier
            ),
            retry=retry_if_exception_type(TransientError),
            sleep=self.sleep,
            reraise=True,
            before_sleep=self._log_retry,
        )

    @staticmethod
    def _log_retry(retry_state) -> None:
        logger.warning(
            "Retrying after %s (attempt %d, waiting %.2fs)",
            type(retry_state.outcome.exception()).__name__,
            retry_state.attempt_number,
            retry_state.next_action.sleep,
        )

    def _cache_path(self, request_id: str) -> Optional[Path]:
        return self.cache_dir / f"{request_id}.json" if self.cache_dir else None

    def cached(self, request_id: str) -> Optional[str]:
        """The cached completion of a request id, if any."""
        with self._cache_lock:
            if request_id in self._memory:
                return self._memory[request_id]
            path = self._cache_path(request_id)
            if path is not None and path.exists():
                completion = json.loads(path.read_text(encoding="utf-8"))["completion"]
                self._memory[request_id] = completion
                return completion
        return None

    def _store(self, request: ChatRequest, completion: str) -> str:
        with self._cache_lock:
            if request.request_id in self._memory:
                return self._memory[request.request_id]
            self._memory[request.request_id] = completion
            path = self._cache_path(request.request_id)
            if path is not None:
                entry = {
                    "request_id": request.request_id,
                    "model": request.model,
                    "completion": completion,
                }
                partial = path.with_suffix(".json.partial")
                partial.write_text(
                    json.dumps(entry, ensure_ascii=False), encoding="utf-8"
                )
                os.replace(partial, path)
        return completion

    def _call(self, request: ChatRequest) -> str:
        with self._slots:
            return self.provider.complete(request)

    def chat_complete(self, request: ChatRequest) -> str:
        """
        Returns the completion of a request.

        Raises:
            RateLimited: When throttling outlasts the retry policy.
            GatewayTimeout: When timeouts outlast the retry policy.
            ServerError: When server errors outlast the retry policy.
            AuthError: When credentials are rejected; never retried.
            ProtocolError: When the response body is malformed.
        """
        cached = self.cached(request.request_id)
        if cached is not None:
            logger.debug("Cache hit for request %s", request.request_id[:12])
            return cached
        completion = self._retrying()(self._call, request)
        return self._store(request, completion)

    def complete_prompt(self, model: str, prompt: str, **kwargs: Any) -> str:
        """Shorthand for a single-turn request."""
        return self.chat_complete(ChatRequest.from_prompt(model, prompt, **kwargs))

    def score_tokens(
        self, text: str, condition: Optional[str] = None, model: str = ""
    ) -> List[TokenScore]:
        """
        Per-token log-probabilities of `text`, conditioned on `condition` when given.

        Raises:
            EmptyText: If `text` is blank.
            UnsupportedByProvider: If the provider cannot echo logprobs.
        """
        if not text.strip():
            raise EmptyText("Cannot score an empty text.")
        if self.scorer is not None:
            return self.scorer.score(text, condition)

        def call() -> List[TokenScore]:
            with self._slots:
                return self.provider.score(text, condition, model)

        return self._retrying()(call)


async def map_bounded(
    fn: Callable[[T], R], items: Sequence[T], parallelism: int
) -> List[R]:
    """
    Runs a blocking function over items in worker threads, at most
    `parallelism` at a time, and returns results in input order.
    """
    semaphore = asyncio.Semaphore(max(1, parallelism))

    async def run(item: T) -> R:
        async with semaphore:
            return await run_sync_in_worker_thread(fn, item)

    return list(await asyncio.gather(*(run(item) for item in items)))


def run_async(awaitable: Awaitable[T]) -> T:
    """Runs a coroutine to completion from synchronous code."""
    return asyncio.run(awaitable)


@task
async def chat_complete(request: ChatRequest, gateway: LlmGateway) -> str:
    """Get a chat completion through a gateway.

    Args:
        request: The `ChatRequest` to send.
        gateway: `LlmGateway` applying retries, caching and concurrency limits.

    Returns:
        The content of the first choice.

    Example:
        Ask the judge model a question:
        ```python
        from prefect import flow
        from prefect_judgeforge.credentials import JudgeCredentials
        from prefect_judgeforge.gateway import (
            ChatRequest,
            HttpChatProvider,
            LlmGateway,
        )
        from prefect_judgeforge.tasks import chat_complete

        @flow
        def ask_judge():
            gateway = LlmGateway(HttpChatProvider(JudgeCredentials.load("judge")))
            return chat_complete(ChatRequest.from_prompt("judge", "Hi"), gateway)
        ```
    """
    return await run_sync_in_worker_thread(gateway.chat_complete, request)


@task
async def score_tokens(
    text: str,
    gateway: LlmGateway,
    condition: Optional[str] = None,
    model: str = "",
) -> List[TokenScore]:
    """Score the tokens of a text, optionally conditioned on a prefix.

    Args:
        text: Text whose tokens are scored.
        gateway: `LlmGateway` holding the provider or local scorer.
        condition: Optional conditioning text, e.g. the instruction.
        model: Scoring model identifier for remote providers.

    Returns:
        One `TokenScore` per token of `text`.
    """
    return await run_sync_in_worker_thread(
        gateway.score_tokens, text, condition=condition, model=model
    )
