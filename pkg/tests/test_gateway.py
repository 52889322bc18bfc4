import json
import math

import httpx
import pytest

from prefect_judgeforge.exceptions import (
    AuthError,
    EmptyText,
    ProtocolError,
    RateLimited,
    ServerError,
    UnsupportedByProvider,
)
from prefect_judgeforge.gateway import (
    ChatMessage,
    ChatRequest,
    ConstantScorer,
    HttpChatProvider,
    LlmGateway,
    MockChatProvider,
    NGramScorer,
    RetryPolicy,
    map_bounded,
    prompt_hash,
)
from prefect_judgeforge.tasks import chat_complete, score_tokens


def chat_body(content):
    return {"choices": [{"message": {"role": "assistant", "content": content}}]}


def test_request_id_is_a_content_hash():
    first = ChatRequest.from_prompt("judge", "Rate this.")
    assert first.request_id == ChatRequest.from_prompt("judge", "Rate this.").request_id
    warmer = ChatRequest.from_prompt("judge", "Rate this.", temperature=0.7)
    assert warmer.request_id != first.request_id
    assert first.prompt == "Rate this."


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(messages=[]),
        dict(messages=[ChatMessage(role="user", content="hi")], temperature=-0.1),
        dict(messages=[ChatMessage(role="user", content="hi")], max_tokens=0),
    ],
)
def test_invalid_requests(kwargs):
    with pytest.raises(ValueError):
        ChatRequest(model="judge", **kwargs)


def test_retry_policy_validation():
    with pytest.raises(ValueError):
        RetryPolicy(max_in_flight=0)
    with pytest.raises(ValueError):
        RetryPolicy(multiplier=1.0)


def test_transient_failures_are_retried_with_backoff():
    sleeps = []
    provider = MockChatProvider(
        replies={prompt_hash("p"): [RateLimited("slow"), ServerError("down"), "ok"]}
    )
    gateway = LlmGateway(
        provider, policy=RetryPolicy(base_delay=0.5), sleep=sleeps.append
    )
    assert gateway.complete_prompt("judge", "p") == "ok"
    assert len(provider.calls) == 3
    assert sleeps == [0.5, 1.0]


def test_retries_stop_after_max_attempts(no_wait_policy):
    provider = MockChatProvider(replies={prompt_hash("p"): RateLimited("slow")})
    gateway = LlmGateway(provider, policy=no_wait_policy, sleep=lambda seconds: None)
    with pytest.raises(RateLimited):
        gateway.complete_prompt("judge", "p")
    assert len(provider.calls) == no_wait_policy.max_attempts


@pytest.mark.parametrize("error", [AuthError("no"), ProtocolError("bad body")])
def test_permanent_failures_are_not_retried(no_wait_policy, error):
    provider = MockChatProvider(replies={prompt_hash("p"): error})
    gateway = LlmGateway(provider, policy=no_wait_policy, sleep=lambda seconds: None)
    with pytest.raises(type(error)):
        gateway.complete_prompt("judge", "p")
    assert len(provider.calls) == 1


def test_memory_cache(no_wait_policy):
    provider = MockChatProvider(responder=lambda request: "fresh")
    gateway = LlmGateway(provider, policy=no_wait_policy)
    request = ChatRequest.from_prompt("judge", "p")
    assert gateway.chat_complete(request) == "fresh"
    assert gateway.chat_complete(request) == "fresh"
    assert len(provider.calls) == 1
    assert gateway.cached(request.request_id) == "fresh"
    assert gateway.cached("missing") is None


def test_attempts_of_one_prompt_bypass_each_other_in_cache(no_wait_policy):
    provider = MockChatProvider(responder=lambda request: f"sample {request.attempt}")
    gateway = LlmGateway(provider, policy=no_wait_policy)
    first = ChatRequest.from_prompt("questioner", "p", temperature=0.7)
    retry = ChatRequest.from_prompt("questioner", "p", temperature=0.7, attempt=1)
    assert retry.request_id != first.request_id
    assert gateway.chat_complete(first) == "sample 0"
    assert gateway.chat_complete(retry) == "sample 1"
    assert gateway.chat_complete(retry) == "sample 1"
    assert len(provider.calls) == 2


def test_disk_cache_survives_gateways(tmp_path, no_wait_policy):
    request = ChatRequest.from_prompt("judge", "p")
    first = LlmGateway(
        MockChatProvider(responder=lambda request: "stored"),
        policy=no_wait_policy,
        cache_dir=tmp_path,
    )
    first.chat_complete(request)

    entry = json.loads((tmp_path / f"{request.request_id}.json").read_text())
    assert entry == {
        "request_id": request.request_id,
        "model": "judge",
        "completion": "stored",
    }
    assert not list(tmp_path.glob("*.partial"))

    offline = MockChatProvider()
    second = LlmGateway(offline, policy=no_wait_policy, cache_dir=tmp_path)
    assert second.chat_complete(request) == "stored"
    assert offline.calls == []


def test_mock_provider_without_reply_fails():
    with pytest.raises(ProtocolError):
        MockChatProvider().complete(ChatRequest.from_prompt("judge", "p"))


async def test_in_flight_requests_are_bounded():
    provider = MockChatProvider(
        responder=lambda request: request.prompt.upper(), latency=0.05
    )
    gateway = LlmGateway(provider, policy=RetryPolicy(max_in_flight=2))
    prompts = [f"prompt {index}" for index in range(8)]
    results = await map_bounded(
        lambda prompt: gateway.complete_prompt("judge", prompt), prompts, 8
    )
    assert results == [prompt.upper() for prompt in prompts]
    assert provider.peak_in_flight <= 2


async def test_map_bounded_keeps_input_order():
    results = await map_bounded(lambda item: item * item, [3, 1, 2], parallelism=2)
    assert results == [9, 1, 4]


def test_score_tokens_rejects_blank_text(mock_gateway):
    with pytest.raises(EmptyText):
        mock_gateway.score_tokens("   ")


def test_score_tokens_prefers_local_scorer():
    provider = MockChatProvider()
    gateway = LlmGateway(provider, scorer=ConstantScorer(-0.5))
    scores = gateway.score_tokens("two tokens", condition="ignored")
    assert [(score.token, score.logprob) for score in scores] == [
        ("two", -0.5),
        ("tokens", -0.5),
    ]


def test_score_tokens_without_any_scorer(mock_gateway):
    with pytest.raises(UnsupportedByProvider):
        mock_gateway.score_tokens("some answer")


def test_ngram_scorer_fit_and_score():
    scorer = NGramScorer.fit(["a b", "a c"])
    assert scorer.unigram == {"a": 0.5, "b": 0.25, "c": 0.25}
    assert scorer.bigram[NGramScorer.START] == {"a": 1.0}

    plain = scorer.score("a b")
    assert [score.logprob for score in plain] == pytest.approx([0.0, math.log(0.5)])

    conditioned = scorer.score("a b", condition="x y")
    assert [score.logprob for score in conditioned] == pytest.approx(
        [math.log(0.5), math.log(0.5)]
    )
    assert scorer.score("z")[0].logprob == pytest.approx(math.log(1e-6))


def test_ngram_scorer_char_tokenizer():
    scorer = NGramScorer.fit(["ab"], tokenizer="char")
    assert [score.token for score in scorer.score("ba")] == ["b", "a"]


def test_http_provider_complete(judge_credentials):
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json=chat_body("[[4]]"))

    transport = httpx.MockTransport(handler)
    provider = HttpChatProvider(judge_credentials, transport=transport)
    reply = provider.complete(ChatRequest.from_prompt("judge", "Rate this."))
    assert reply == "[[4]]"
    assert seen[0]["messages"] == [{"role": "user", "content": "Rate this."}]
    assert seen[0]["temperature"] == 0.0


def test_http_provider_rejects_malformed_body(judge_credentials):
    transport = httpx.MockTransport(
        lambda request: httpx.Response(200, json={"choices": []})
    )
    provider = HttpChatProvider(judge_credentials, transport=transport)
    with pytest.raises(ProtocolError):
        provider.complete(ChatRequest.from_prompt("judge", "Rate this."))


def test_gateway_retries_http_server_errors(judge_credentials, no_wait_policy):
    statuses = [503, 200]

    def handler(request):
        status = statuses.pop(0)
        body = chat_body("recovered") if status == 200 else {"error": "busy"}
        return httpx.Response(status, json=body)

    transport = httpx.MockTransport(handler)
    provider = HttpChatProvider(judge_credentials, transport=transport)
    gateway = LlmGateway(provider, policy=no_wait_policy, sleep=lambda seconds: None)
    assert gateway.complete_prompt("judge", "p") == "recovered"
    assert statuses == []


def test_http_provider_scores_only_the_answer(judge_credentials):
    seen = []

    def handler(request):
        assert request.url.path == "/v1/completions"
        seen.append(json.loads(request.content))
        logprobs = {
            "tokens": ["Q", ":", " 84"],
            "token_logprobs": [None, -0.3, -0.7],
            "text_offset": [0, 1, 2],
        }
        return httpx.Response(200, json={"choices": [{"logprobs": logprobs}]})

    transport = httpx.MockTransport(handler)
    provider = HttpChatProvider(judge_credentials, transport=transport)
    scores = provider.score(" 84", condition="Q:", model="scorer")
    assert [(score.token, score.logprob) for score in scores] == [(" 84", -0.7)]
    assert seen[0]["prompt"] == "Q: 84"
    assert seen[0]["echo"] is True
    assert seen[0]["max_tokens"] == 0


def test_http_provider_without_logprobs(judge_credentials):
    transport = httpx.MockTransport(
        lambda request: httpx.Response(200, json=chat_body("no logprobs"))
    )
    provider = HttpChatProvider(judge_credentials, transport=transport)
    gateway = LlmGateway(provider)
    with pytest.raises(UnsupportedByProvider):
        gateway.score_tokens("answer", model="scorer")


async def test_chat_complete_task(mock_gateway, simulated_provider):
    request = ChatRequest.from_prompt("model_a", "Name a prime number.")
    reply = await chat_complete.fn(request, mock_gateway)
    assert reply
    assert len(simulated_provider.calls) == 1


async def test_score_tokens_task():
    gateway = LlmGateway(MockChatProvider(), scorer=ConstantScorer())
    scores = await score_tokens.fn("one two three", gateway)
    assert len(scores) == 3
