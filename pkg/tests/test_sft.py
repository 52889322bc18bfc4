import pytest

from prefect_judgeforge.exceptions import MissingScore, NotPairwise, ParseFailure
from prefect_judgeforge.models import JudgeTask
from prefect_judgeforge.prompts import render_judge_prompt
from prefect_judgeforge.sft import (
    SftMeta,
    SftRecord,
    SftSpan,
    balance_by_score,
    double_pairwise,
    label_token_spans,
    make_sft_record,
    swap_pairwise_prompt,
    swap_record,
)
from prefect_judgeforge.verdicts import (
    mirror_pairwise_verdict,
    parse_pairwise_verdict,
    render_pairwise_verdict,
)

GRADED_TARGET = (
    "I believe the overall rating is [[4]].\n"
    "Strengths of the current response:\n"
    "1. Accuracy: correct result. [[5]]\n"
)

PAIRWISE_TARGET = (
    "I believe [[Response 2 is better]], with the overall score for Response 1 "
    "being [[2]], and the overall score for Response 2 being [[4]], based on the "
    "following reasons:\n"
    "1. Accuracy: response 2 gets the product right. [[1]] [[5]]\n"
    "2. Clarity: both are short. [[3]] [[3]]\n"
)


def scored(record_id, score):
    return SftRecord(
        prompt="p",
        target="x",
        spans=[SftSpan(start=0, end=1, kind="SFT")],
        meta=SftMeta(record_id=record_id, mode="single", scenario="s", score=score),
    )


@pytest.fixture
def pairwise_task(math_instruction, math_responses):
    return JudgeTask(
        mode="pairwise", instruction=math_instruction, responses=math_responses
    )


@pytest.fixture
def pairwise_record(small_catalog, pairwise_task):
    prompt = render_judge_prompt(pairwise_task, small_catalog).text
    return make_sft_record(prompt, PAIRWISE_TARGET, pairwise_task)


def test_graded_target_spans():
    spans = label_token_spans(GRADED_TARGET, "single")
    record = SftRecord(
        prompt="p",
        target=GRADED_TARGET,
        spans=spans,
        meta=SftMeta(record_id="r", mode="single", scenario="math_qa", score=4),
    )
    assert record.span_texts() == [
        (
            "SFT",
            "I believe the overall rating is [[4]].\n"
            "Strengths of the current response:\n"
            "1. Accuracy: ",
        ),
        ("Sim", "correct result."),
        ("SFT", " [[5]]\n"),
    ]


def test_pairwise_target_spans(pairwise_record):
    texts = pairwise_record.span_texts()
    assert [text for kind, text in texts if kind == "Sim"] == [
        "response 2 gets the product right.",
        "both are short.",
    ]
    assert "".join(text for _, text in texts) == PAIRWISE_TARGET
    assert texts[0][0] == "SFT"
    assert texts[0][1].startswith("I believe [[Response 2 is better]]")


def test_every_bracket_token_is_sft(pairwise_record):
    for span in pairwise_record.spans:
        if span.kind == "Sim":
            assert "[[" not in pairwise_record.target[span.start : span.end]


def test_invalid_targets_are_rejected():
    with pytest.raises(ParseFailure):
        label_token_spans("No verdict here.", "single")
    with pytest.raises(ParseFailure):
        label_token_spans(GRADED_TARGET, "pairwise")


def test_spans_must_cover_target():
    meta = SftMeta(record_id="r", mode="single", scenario="s", score=1)
    with pytest.raises(ValueError):
        SftRecord(
            prompt="p",
            target="abc",
            spans=[SftSpan(start=0, end=2, kind="SFT")],
            meta=meta,
        )
    with pytest.raises(ValueError):
        SftRecord(
            prompt="p",
            target="abc",
            spans=[
                SftSpan(start=0, end=1, kind="SFT"),
                SftSpan(start=2, end=3, kind="Sim"),
            ],
            meta=meta,
        )


def test_make_sft_record_metadata(small_catalog, math_instruction, math_responses):
    task = JudgeTask(instruction=math_instruction, responses=math_responses[:1])
    prompt = render_judge_prompt(task, small_catalog).text
    record = make_sft_record(prompt, GRADED_TARGET, task)
    assert record.meta.record_id == "q1|model_a|single"
    assert record.meta.score == 4
    assert record.meta.winner is None
    assert record.balance_key == 4


def test_pairwise_record_metadata(pairwise_record):
    assert pairwise_record.meta.winner == "response_2"
    assert pairwise_record.balance_key == "response_2"
    assert pairwise_record.meta.record_id == "q1|model_a+model_b|pairwise"


def test_swap_record(pairwise_record):
    swapped = swap_record(pairwise_record)
    assert swapped.meta.record_id.endswith("#swap")
    assert swapped.meta.winner == "response_1"
    assert "[Response 1]: It is 74." in swapped.prompt
    assert "[Response 2]: 12 * 7 = 84." in swapped.prompt
    assert swapped.meta.task.response_models == ["model_b", "model_a"]

    restored = swap_record(swapped)
    assert restored.meta.record_id == pairwise_record.meta.record_id
    assert restored.prompt == pairwise_record.prompt
    assert restored.target == pairwise_record.target


def test_swap_record_target_follows_pairwise_skeleton(pairwise_record):
    swapped = swap_record(pairwise_record)
    verdict = parse_pairwise_verdict(pairwise_record.target)
    mirrored = mirror_pairwise_verdict(verdict)
    assert swapped.target == render_pairwise_verdict(mirrored) + "\n"
    assert swapped.target.startswith(
        "I believe [[Response 1 is better]], with the overall score for Response 1 "
        "being [[4]], and the overall score for Response 2 being [[2]]"
    )
    assert [span.kind for span in swapped.spans] == [
        span.kind for span in pairwise_record.spans
    ]


def test_swap_pairwise_prompt_needs_data_block():
    with pytest.raises(ParseFailure):
        swap_pairwise_prompt("Nothing to swap.")


def test_double_pairwise(pairwise_record):
    doubled = double_pairwise([pairwise_record])
    assert len(doubled) == 2
    assert doubled[0] is pairwise_record
    assert doubled[1].meta.winner == "response_1"
    with pytest.raises(NotPairwise):
        double_pairwise([scored("r", 3)])


def test_double_pairwise_dataset_arithmetic(pairwise_record):
    pairwise = [
        pairwise_record.copy(
            update={
                "meta": pairwise_record.meta.copy(
                    update={"record_id": f"q{index}|model_a+model_b|pairwise"}
                )
            }
        )
        for index in range(3803)
    ]
    graded = [scored(f"g{index}", 1 + index % 5) for index in range(6404)]
    doubled = double_pairwise(pairwise)
    assert len(doubled) == 7606
    assert len(graded + doubled) == 14010
    assert len({record.meta.record_id for record in doubled}) == 7606
    assert sum(record.meta.winner == "response_1" for record in doubled) == 3803


def test_uniform_balance_caps_at_median_bucket():
    scores = [5, 5, 5, 5, 3, 3, 1]
    records = [scored(f"r{index}", score) for index, score in enumerate(scores)]
    balanced = balance_by_score(records, "uniform", seed=7)
    scores = [record.meta.score for record in balanced]
    assert scores.count(5) == 2
    assert scores.count(3) == 2
    assert scores.count(1) == 1
    ids = [record.meta.record_id for record in balanced]
    assert ids == sorted(ids, key=lambda record_id: int(record_id[1:]))
    assert balance_by_score(records, "uniform", seed=7) == balanced


def test_explicit_histogram_balance():
    scores = [5, 5, 5, 3, 3]
    records = [scored(f"r{index}", score) for index, score in enumerate(scores)]
    balanced = balance_by_score(records, {"5": 1})
    scores = [record.meta.score for record in balanced]
    assert scores.count(5) == 1
    assert scores.count(3) == 2


def test_balance_edge_cases():
    assert balance_by_score([]) == []
    unscored = SftRecord(
        prompt="p",
        target="x",
        spans=[SftSpan(start=0, end=1, kind="SFT")],
        meta=SftMeta(record_id="r", mode="single", scenario="s"),
    )
    with pytest.raises(MissingScore):
        balance_by_score([unscored])
