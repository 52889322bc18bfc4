import math

import numpy as np
import pytest

from prefect_judgeforge.exceptions import (
    DegenerateAnswer,
    EmptyAfterFilter,
    EmptyText,
    ForgeError,
    ScorerFailure,
)
from prefect_judgeforge.gateway import (
    ConstantScorer,
    LlmGateway,
    MockChatProvider,
    NGramScorer,
)
from prefect_judgeforge.selection import (
    IfdScore,
    answer_loss,
    assign_scenario_z,
    fit_record_scorer,
    ifd_score,
    select_by_ifd,
)
from prefect_judgeforge.sft import SftMeta, SftRecord, SftSpan
from prefect_judgeforge.tasks import score_records


class FailingScorer:
    def score(self, text, condition=None):
        raise KeyError("vocabulary")


class SilentScorer:
    def score(self, text, condition=None):
        return []


def record(record_id, prompt, target, scenario="math_qa"):
    return SftRecord(
        prompt=prompt,
        target=target,
        spans=[SftSpan(start=0, end=len(target), kind="SFT")],
        meta=SftMeta(record_id=record_id, mode="single", scenario=scenario, score=3),
    )


def with_ifd(record_id, ifd, scenario="s"):
    return IfdScore(
        record_id=record_id,
        conditioned_loss=ifd,
        unconditioned_loss=1.0,
        scenario=scenario,
    )


@pytest.fixture
def bigram_scorer():
    return NGramScorer(
        unigram={"a": 0.5, "b": 0.25, "c": 0.25},
        bigram={
            "q": {"a": 0.8},
            "c": {"a": 0.1},
            NGramScorer.START: {"a": 0.4},
            "a": {"b": 0.5},
        },
    )


def test_ifd_matches_hand_computed_losses(bigram_scorer):
    score = ifd_score("q", "a b", bigram_scorer, record_id="r1", scenario="math_qa")
    conditioned = -math.log(0.8) - math.log(0.5)
    unconditioned = -math.log(0.4) - math.log(0.5)
    assert score.conditioned_loss == pytest.approx(conditioned)
    assert score.unconditioned_loss == pytest.approx(unconditioned)
    assert score.ifd == pytest.approx(conditioned / unconditioned)
    assert score.ifd < 1
    assert (score.record_id, score.scenario) == ("r1", "math_qa")


def test_ifd_matches_brute_force_oracle_on_seeded_pairs():
    rng = np.random.default_rng(8)
    vocabulary = ["a", "b", "c", "d", "e", "f"]
    unigram = dict(zip(vocabulary, rng.uniform(0.05, 0.9, len(vocabulary))))
    bigram = {
        previous: dict(zip(vocabulary, rng.uniform(0.05, 0.9, len(vocabulary))))
        for previous in vocabulary + [NGramScorer.START]
    }
    scorer = NGramScorer(unigram=unigram, bigram=bigram)

    def oracle_loss(answer, question=None):
        previous = question[-1] if question else NGramScorer.START
        total = 0.0
        for token in answer:
            total -= math.log(bigram[previous][token])
            previous = token
        return total

    for _ in range(100):
        question = [str(t) for t in rng.choice(vocabulary, int(rng.integers(1, 5)))]
        answer = [str(t) for t in rng.choice(vocabulary, int(rng.integers(1, 7)))]
        score = ifd_score(" ".join(question), " ".join(answer), scorer)
        expected = oracle_loss(answer, question) / oracle_loss(answer)
        assert score.ifd == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_unhelpful_instruction_has_ifd_above_one(bigram_scorer):
    assert ifd_score("c", "a b", bigram_scorer).ifd > 1


def test_constant_scorer_gives_unit_ifd():
    assert ifd_score("Name a colour.", "Blue.", ConstantScorer(-1.0)).ifd == 1.0


def test_ifd_through_a_gateway(bigram_scorer):
    gateway = LlmGateway(MockChatProvider(scorer=bigram_scorer))
    direct = ifd_score("q", "a b", bigram_scorer)
    assert ifd_score("q", "a b", gateway).ifd == pytest.approx(direct.ifd)


def test_answer_loss_sums_negative_logprobs():
    assert answer_loss(ConstantScorer(-0.25), "one two three") == pytest.approx(0.75)


def test_ifd_errors():
    with pytest.raises(EmptyText):
        ifd_score("q", "  ", ConstantScorer())
    certain = NGramScorer(
        unigram={"a": 1.0}, bigram={NGramScorer.START: {"a": 1.0}, "q": {"a": 1.0}}
    )
    with pytest.raises(DegenerateAnswer):
        ifd_score("q", "a", certain)
    with pytest.raises(ScorerFailure):
        ifd_score("q", "a", FailingScorer())
    with pytest.raises(ScorerFailure):
        ifd_score("q", "a", SilentScorer())


def test_losses_must_be_positive():
    with pytest.raises(ValueError):
        IfdScore(record_id="r", conditioned_loss=0.0, unconditioned_loss=1.0)


def test_assign_scenario_z():
    scores = [
        with_ifd("a1", 1.0, "a"),
        with_ifd("a2", 2.0, "a"),
        with_ifd("a3", 3.0, "a"),
        with_ifd("b1", 0.5, "b"),
    ]
    z = [score.z for score in assign_scenario_z(scores)]
    assert z == pytest.approx([-1.0, 0.0, 1.0, 0.0])
    assert all(score.z is None for score in scores)


def test_zero_spread_scenario_gets_zero_z():
    scores = [with_ifd("a1", 0.7, "a"), with_ifd("a2", 0.7, "a")]
    assert [score.z for score in assign_scenario_z(scores)] == [0.0, 0.0]


@pytest.mark.parametrize("seed", range(10))
def test_threshold_selection_on_random_pools(seed):
    rng = np.random.default_rng(seed)
    pool = [with_ifd(f"r{i}", float(rng.uniform(0.2, 1.6))) for i in range(20)]
    survivors = sorted(
        (score for score in pool if score.ifd <= 1), key=lambda score: -score.ifd
    )
    for budget in (1, 5, 20):
        if not survivors:
            with pytest.raises(EmptyAfterFilter):
                select_by_ifd(pool, budget)
            continue
        chosen = select_by_ifd(pool, budget)
        assert chosen == [score.record_id for score in survivors[:budget]]


@pytest.mark.parametrize("seed", range(10))
def test_scenario_z_selection_on_random_pools(seed):
    rng = np.random.default_rng(seed)
    pool = assign_scenario_z(
        [
            with_ifd(f"r{i}", float(rng.uniform(0.2, 1.6)), scenario=f"s{i % 3}")
            for i in range(20)
        ]
    )
    chosen = select_by_ifd(pool, budget=8, policy="scenario_z", z_threshold=0.5)
    by_id = {score.record_id: score for score in pool}
    picked = [by_id[record_id] for record_id in chosen]
    assert all(score.z <= 0.5 for score in picked)
    assert [score.ifd for score in picked] == sorted(
        (score.ifd for score in picked), reverse=True
    )
    eligible = [score for score in pool if score.z <= 0.5]
    assert len(chosen) == min(8, len(eligible))
    if len(eligible) > len(chosen):
        floor = min(score.ifd for score in picked)
        skipped = [score for score in eligible if score.record_id not in chosen]
        assert all(score.ifd <= floor for score in skipped)


def test_selection_errors():
    with pytest.raises(ForgeError):
        select_by_ifd([], 3)
    with pytest.raises(ForgeError):
        select_by_ifd([with_ifd("r", 0.5)], 0)
    with pytest.raises(ForgeError):
        select_by_ifd([with_ifd("r", 0.5)], 1, policy="scenario_z")
    with pytest.raises(ForgeError):
        select_by_ifd([with_ifd("r", 0.5)], 1, policy="random")
    with pytest.raises(EmptyAfterFilter):
        select_by_ifd([with_ifd("r", 1.5)], 1)


def test_fit_record_scorer_corpus():
    records = [record("r1", "What is two plus two?", "It is four.")]
    scorer = fit_record_scorer(records)
    assert scorer.unigram["four."] == pytest.approx(2 / 11)
    assert scorer.bigram["two?"] == {"It": 1.0}


async def test_score_records_task():
    records = [
        record("r1", "What is two plus two?", "It is four."),
        record("r2", "Name a prime.", "Seven is prime.", scenario="open_qa"),
    ]
    scorer = fit_record_scorer(records)
    scores = await score_records.fn(records, scorer, parallelism=2)
    assert [score.record_id for score in scores] == ["r1", "r2"]
    assert [score.z for score in scores] == [0.0, 0.0]
    assert all(score.ifd > 0 for score in scores)
