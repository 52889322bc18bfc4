import numpy as np
import pytest

from prefect_judgeforge.augment import (
    AugmentOptions,
    CriteriaRegression,
    augment_custom_prompts,
    augment_record,
    criteria_scores,
    fit_criteria_regression,
    fit_scenario_regressions,
)
from prefect_judgeforge.exceptions import (
    EmptyInput,
    ForgeError,
    LengthMismatch,
    NoAliases,
    NoRegressionModel,
)
from prefect_judgeforge.models import CriterionAlias, JudgeTask
from prefect_judgeforge.prompts import attach_aliases, render_judge_prompt
from prefect_judgeforge.sft import make_sft_record

GRADED_TARGET = (
    "I believe the overall rating of this response is [[4]].\n"
    "Strengths of the current response:\n"
    "1. Accuracy: the product is right. [[5]]\n"
    "Weaknesses of the current response:\n"
    "1. Reasoning: no steps are shown. [[2]]\n"
)

PAIRWISE_TARGET = (
    "I believe [[Response 1 is better]], with the overall score for Response 1 "
    "being [[4]], and the overall score for Response 2 being [[2]].\n"
    "1. Accuracy: only response 1 is right. [[5]] [[1]]\n"
)


@pytest.fixture
def graded_task(math_instruction, math_responses):
    return JudgeTask(instruction=math_instruction, responses=math_responses[:1])


@pytest.fixture
def graded_record(small_catalog, graded_task):
    prompt = render_judge_prompt(graded_task, small_catalog).text
    return make_sft_record(prompt, GRADED_TARGET, graded_task)


@pytest.fixture
def aliased_catalog(small_catalog):
    return attach_aliases(
        small_catalog,
        "math_qa",
        {
            "Accuracy": [
                CriterionAlias(name="Soundness", description="Every claim holds up.")
            ],
            "Reasoning": [
                CriterionAlias(
                    name="Logic flow",
                    description="Every inference is justified by earlier ones.",
                )
            ],
        },
    )


@pytest.fixture
def regressions():
    rows = [([5, 2], 4), ([1, 1], 1), ([5, 5], 5), ([3, 3], 3)]
    return {"math_qa": fit_criteria_regression(rows, ["Accuracy", "Reasoning"])}


def test_regression_recovers_affine_scores():
    rows = [([2, 4], 3), ([4, 2], 3), ([5, 5], 5), ([1, 1], 1), ([3, 5], 4)]
    model = fit_criteria_regression(rows)
    assert model.criteria == ["c0", "c1"]
    assert model.weights == pytest.approx([0.5, 0.5], abs=1e-3)
    assert model.intercept == pytest.approx(0.0, abs=1e-2)
    assert model.predict([4, 4]) == 4


def test_noiseless_mean_of_sub_scores_is_recovered():
    rng = np.random.default_rng(5)
    features = rng.uniform(1, 5, size=(400, 4))
    rows = [(list(row), float(row.mean())) for row in features]
    model = fit_criteria_regression(rows, ridge=0.0)
    assert model.weights == pytest.approx([0.25] * 4, abs=1e-6)
    training_mae = np.mean([abs(model.predict_raw(x) - y) for x, y in rows])
    assert training_mae <= 1e-6


def test_noisy_regression_generalizes():
    rng = np.random.default_rng(6)
    weights = np.array([0.4, 0.3, 0.2, 0.1])
    features = rng.uniform(1, 5, size=(1000, 4))
    targets = features @ weights + rng.normal(0.0, 0.1, size=1000)
    rows = [(list(x), float(y)) for x, y in zip(features, targets)]
    model = fit_criteria_regression(rows[:800])
    held_out = np.mean([abs(model.predict_raw(x) - y) for x, y in rows[800:]])
    assert held_out <= 0.15
    assert model.weights == pytest.approx(list(weights), abs=0.05)


def test_single_row_regression_predicts_its_score():
    model = fit_criteria_regression([([4, 2], 3)])
    assert model.weights == [0.0, 0.0]
    assert model.intercept == pytest.approx(3.0)
    assert model.predict([1, 5]) == 3


def test_missing_sub_scores_take_the_mean():
    model = fit_criteria_regression([([4, None], 4), ([2, 2], 2), ([3, 4], 3)])
    assert model.means == pytest.approx([3.0, 3.0])
    assert model.predict_raw([3, None]) == pytest.approx(model.predict_raw([3, 3]))


def test_prediction_is_clamped_and_rounded_half_up():
    model = CriteriaRegression(criteria=["a"], weights=[2.0], intercept=0.0, means=[0])
    assert model.predict([5]) == 5
    assert model.predict([1.25]) == 3
    assert model.predict([-1]) == 1


def test_regression_errors():
    with pytest.raises(EmptyInput):
        fit_criteria_regression([])
    with pytest.raises(LengthMismatch):
        fit_criteria_regression([([1, 2], 1), ([1], 1)])
    with pytest.raises(LengthMismatch):
        fit_criteria_regression([([1, 2], 1)], ["only"])
    model = fit_criteria_regression([([1, 2], 1)])
    with pytest.raises(LengthMismatch):
        model.predict([1])


def test_criteria_scores_average_repeated_items(small_catalog, graded_task):
    target = GRADED_TARGET + "2. Accuracy: but it is terse. [[3]]\n"
    scores = criteria_scores(target, graded_task, small_catalog.get("math_qa"))
    assert scores == {"Accuracy": 4.0, "Reasoning": 2.0}


def test_fit_scenario_regressions(graded_record, small_catalog):
    fitted = fit_scenario_regressions([graded_record], small_catalog)
    assert set(fitted) == {"math_qa"}
    assert fitted["math_qa"].criteria == ["Accuracy", "Reasoning"]
    assert fitted["math_qa"].intercept == pytest.approx(4.0)


def test_identity_transform(graded_record, small_catalog):
    rng = np.random.default_rng(0)
    result = augment_record(
        graded_record, "identity", AugmentOptions(), small_catalog, rng
    )
    assert result.meta.transform == "identity"
    assert result.target == graded_record.target
    assert result.prompt == graded_record.prompt


def test_rating_transform(graded_record, small_catalog):
    options = AugmentOptions(rating_targets=["ten_class"])
    rng = np.random.default_rng(0)
    result = augment_record(graded_record, "rating", options, small_catalog, rng)
    assert "[[8]]" in result.target
    assert "[[10]]" in result.target
    assert "[[3]]" in result.target
    assert result.meta.rating == "ten_class"
    assert result.meta.score == 8
    assert "a ten-tier system (1-10)" in result.prompt


def test_rephrase_transform(graded_record, aliased_catalog):
    options = AugmentOptions(rephrase_prob=1.0)
    rng = np.random.default_rng(0)
    result = augment_record(graded_record, "rephrase", options, aliased_catalog, rng)
    assert "1. Soundness: the product is right. [[5]]" in result.target
    assert "1. Logic flow: no steps are shown. [[2]]" in result.target
    assert "1. Soundness: Every claim holds up." in result.prompt
    assert result.meta.score == 4
    assert set(result.meta.task.criteria_overrides) == {"Accuracy", "Reasoning"}


def test_rephrase_needs_aliases(graded_record, small_catalog):
    options = AugmentOptions(rephrase_prob=1.0)
    with pytest.raises(NoAliases):
        augment_record(
            graded_record,
            "rephrase",
            options,
            small_catalog,
            np.random.default_rng(0),
        )


@pytest.mark.parametrize("seed", range(4))
def test_downsample_transform(graded_record, small_catalog, regressions, seed):
    options = AugmentOptions(downsample_range=(1, 1))
    rng = np.random.default_rng(seed)
    result = augment_record(
        graded_record, "downsample", options, small_catalog, rng, regressions
    )
    kept = result.meta.task.effective_criteria
    assert len(kept) == 1
    dropped = ({"Accuracy", "Reasoning"} - set(kept)).pop()
    assert f"{dropped}:" not in result.target
    assert f"{dropped}:" not in result.prompt

    sub_score = {"Accuracy": 5, "Reasoning": 2}[kept[0]]
    expected = regressions["math_qa"].predict([sub_score, sub_score])
    assert result.meta.score == expected
    assert f"[[{expected}]]" in result.target.splitlines()[0]


def test_downsample_requires_regression(graded_record, small_catalog):
    with pytest.raises(NoRegressionModel):
        augment_record(
            graded_record,
            "downsample",
            AugmentOptions(),
            small_catalog,
            np.random.default_rng(0),
        )


def test_downsample_rejects_pairwise(
    small_catalog, math_instruction, math_responses, regressions
):
    task = JudgeTask(
        mode="pairwise", instruction=math_instruction, responses=math_responses
    )
    record = make_sft_record(
        render_judge_prompt(task, small_catalog).text, PAIRWISE_TARGET, task
    )
    with pytest.raises(ForgeError):
        augment_record(
            record,
            "downsample",
            AugmentOptions(),
            small_catalog,
            np.random.default_rng(0),
            regressions,
        )


def test_failing_transforms_pass_records_through(graded_record, small_catalog):
    options = AugmentOptions(mix_weights={"downsample": 1.0})
    augmented = augment_custom_prompts([graded_record] * 3, options, small_catalog)
    assert augmented == [graded_record] * 3


def test_augmentation_is_deterministic(graded_record, aliased_catalog, regressions):
    options = AugmentOptions()
    records = [graded_record] * 6
    first = augment_custom_prompts(records, options, aliased_catalog, 3, regressions)
    second = augment_custom_prompts(records, options, aliased_catalog, 3, regressions)
    assert first == second
    assert len(first) == len(records)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(rephrase_prob=1.5),
        dict(downsample_range=(0, 2)),
        dict(downsample_range=(3, 2)),
        dict(mix_weights={"identity": 0.0}),
        dict(mix_weights={"identity": -1.0}),
    ],
)
def test_augment_options_validation(kwargs):
    with pytest.raises(ValueError):
        AugmentOptions(**kwargs)
