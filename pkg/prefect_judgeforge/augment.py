"""Custom-prompt augmentation of fine-tuning records and the criteria regression
that re-derives overall scores when criteria are dropped."""
import math
import re
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from prefect.logging import get_logger
from pydantic import BaseModel, Field, validator
from typing_extensions import Literal

from prefect_judgeforge.catalog import ScenarioCatalog, normalize_name
from prefect_judgeforge.exceptions import (
    EmptyInput,
    ForgeError,
    LengthMismatch,
    NoAliases,
    NoRegressionModel,
)
from prefect_judgeforge.models import (
    FIVE_TIER,
    JudgeTask,
    RatingKind,
    RatingSystem,
    Scenario,
)
from prefect_judgeforge.prompts import (
    SIMILARITY_THRESHOLD,
    remap_rating,
    render_judge_prompt,
    similarity_gate,
)
from prefect_judgeforge.sft import SftRecord, label_token_spans
from prefect_judgeforge.verdicts import (
    BRACKET,
    INTEGER,
    ITEM,
    header_kind,
    is_verdict_marker,
    parse_graded_verdict,
    point_text,
)

logger = get_logger("prefect_judgeforge.augment")

Transform = Literal["rephrase", "downsample", "rating", "identity"]
TRANSFORMS: Tuple[str, ...] = ("rephrase", "downsample", "rating", "identity")
RIDGE = 1e-3
ITEM_NUMBER = re.compile(r"^(\s*)(\d+)([.)])")


class CriteriaRegression(BaseModel):
    """Affine map from criterion sub-scores to the overall score.

    Attributes:
        criteria: Feature names, in catalog order.
        weights: One weight per criterion.
        intercept: Unpenalized offset.
        means: Per-criterion training means, used for missing sub-scores.
        rating: Rating system predictions are clamped to.
    """

    criteria: List[str]
    weights: List[float]
    intercept: float
    means: List[float]
    rating: RatingSystem = FIVE_TIER

    def _vector(self, sub_scores: Sequence[Optional[float]]) -> np.ndarray:
        if len(sub_scores) != len(self.criteria):
            raise LengthMismatch(
                f"Expected {len(self.criteria)} sub-scores, got {len(sub_scores)}."
            )
        return np.array(
            [
                mean if value is None else value
                for value, mean in zip(sub_scores, self.means)
            ],
            dtype=float,
        )

    def predict_raw(self, sub_scores: Sequence[Optional[float]]) -> float:
        """Unrounded prediction; missing sub-scores take the training mean."""
        return float(self._vector(sub_scores) @ np.array(self.weights) + self.intercept)

    def predict(
        self,
        sub_scores: Sequence[Optional[float]],
        rating: Optional[RatingSystem] = None,
    ) -> int:
        """Prediction clamped to the rating range and rounded half-up."""
        rating = rating or self.rating
        value = min(max(self.predict_raw(sub_scores), rating.min), rating.max)
        return min(rating.max, math.floor(Fraction(value) + Fraction(1, 2)))


def fit_criteria_regression(
    rows: Sequence[Tuple[Sequence[Optional[float]], float]],
    criteria: Optional[Sequence[str]] = None,
    rating: RatingSystem = FIVE_TIER,
    ridge: float = RIDGE,
) -> CriteriaRegression:
    """
    Ridge least-squares fit of the overall score on criterion sub-scores.

    Missing sub-scores (`None`) are imputed with the criterion's mean; a
    criterion never observed imputes 0. The intercept is not penalized, so a
    single row yields zero weights and an intercept equal to its score.

    Args:
        rows: (sub-score vector, overall score) pairs.
        criteria: Feature names; defaults to `c0, c1, ...`.
        rating: Rating system predictions are clamped to.
        ridge: Ridge penalty on the weights.

    Raises:
        EmptyInput: If `rows` is empty.
        LengthMismatch: If vectors differ in length or from `criteria`.

    Example:
        ```python
        from prefect_judgeforge.augment import fit_criteria_regression

        model = fit_criteria_regression([([4, 2], 3), ([5, 5], 5), ([1, 3], 2)])
        model.predict([4, None])
        ```
    """
    if not rows:
        raise EmptyInput("At least one row is required.")
    width = len(rows[0][0])
    if any(len(vector) != width for vector, _ in rows):
        raise LengthMismatch("All sub-score vectors must have the same length.")
    names = list(criteria) if criteria is not None else [f"c{i}" for i in range(width)]
    if len(names) != width:
        raise LengthMismatch(f"Got {len(names)} criteria for {width} sub-scores.")

    raw = np.array(
        [[np.nan if value is None else value for value in row] for row, _ in rows],
        dtype=float,
    ).reshape(len(rows), width)
    observed = ~np.isnan(raw)
    counts = observed.sum(axis=0)
    sums = np.where(observed, raw, 0.0).sum(axis=0)
    means = np.divide(sums, counts, out=np.zeros(width), where=counts > 0)
    features = np.where(observed, raw, means)
    target = np.array([overall for _, overall in rows], dtype=float)

    centered = features - means
    offset = target - target.mean()
    gram = centered.T @ centered + ridge * np.eye(width)
    weights = np.linalg.solve(gram, centered.T @ offset)
    intercept = float(target.mean() - means @ weights)
    return CriteriaRegression(
        criteria=names,
        weights=[float(weight) for weight in weights],
        intercept=intercept,
        means=[float(mean) for mean in means],
        rating=rating,
    )


def _shown_names(task: JudgeTask, scenario: Scenario) -> Dict[str, str]:
    """Maps the normalized name each criterion is shown under to its catalog name."""
    shown = {normalize_name(name): name for name in scenario.criterion_names}
    for name, alias in task.criteria_overrides.items():
        shown[normalize_name(alias.name)] = name
    return shown


def _item_criterion(line: str, shown: Dict[str, str]) -> Optional[str]:
    text = point_text(line)
    if ":" not in text:
        return None
    return shown.get(normalize_name(text.split(":", 1)[0]))


def criteria_scores(
    target: str, task: JudgeTask, scenario: Scenario
) -> Dict[str, float]:
    """Mean sub-score per catalog criterion named by the items of a graded target."""
    verdict = parse_graded_verdict(target, task.rating)
    shown = _shown_names(task, scenario)
    collected: Dict[str, List[int]] = {}
    for point in verdict.strengths + verdict.weaknesses:
        if ":" not in point.text:
            continue
        name = shown.get(normalize_name(point.text.split(":", 1)[0]))
        if name is not None:
            collected.setdefault(name, []).append(point.score)
    return {name: sum(scores) / len(scores) for name, scores in collected.items()}


def regression_rows(
    records: Sequence[SftRecord], scenario: Scenario
) -> List[Tuple[List[Optional[float]], float]]:
    """(sub-score vector, overall) rows of a scenario's graded records."""
    rows = []
    for record in records:
        task = record.meta.task
        if (
            record.meta.mode == "pairwise"
            or record.meta.scenario != scenario.id
            or record.meta.score is None
            or task is None
        ):
            continue
        scores = criteria_scores(record.target, task, scenario)
        rows.append(
            (
                [scores.get(name) for name in scenario.criterion_names],
                float(record.meta.score),
            )
        )
    return rows


def fit_scenario_regressions(
    records: Sequence[SftRecord], catalog: ScenarioCatalog
) -> Dict[str, CriteriaRegression]:
    """One criteria regression per scenario that has graded records."""
    regressions = {}
    for scenario in catalog.scenarios:
        rows = regression_rows(records, scenario)
        if rows:
            regressions[scenario.id] = fit_criteria_regression(
                rows, scenario.criterion_names
            )
    return regressions


class AugmentOptions(BaseModel):
    """Knobs of custom-prompt augmentation.

    Attributes:
        rephrase_prob: Chance that each criterion is swapped for an alias.
        downsample_range: Inclusive bounds on the number of criteria kept.
        rating_targets: Rating systems the rating transform draws from.
        mix_weights: Relative weight of each transform.
        similarity_threshold: Gate aliases must pass to be used.
    """

    rephrase_prob: float = 0.5
    downsample_range: Tuple[int, int] = (2, 4)
    rating_targets: List[RatingKind] = Field(
        default_factory=lambda: ["ten_class", "three_class", "binary_01"]
    )
    mix_weights: Dict[Transform, float] = Field(
        default_factory=lambda: {name: 0.25 for name in TRANSFORMS}
    )
    similarity_threshold: float = SIMILARITY_THRESHOLD

    @validator("rephrase_prob")
    def _probability(cls, value):
        if not 0 <= value <= 1:
            raise ValueError("rephrase_prob must lie in [0, 1].")
        return value

    @validator("downsample_range")
    def _range(cls, bounds):
        low, high = bounds
        if low < 1 or high < low:
            raise ValueError("downsample_range must satisfy 1 <= low <= high.")
        return bounds

    @validator("mix_weights")
    def _weights(cls, weights):
        if any(weight < 0 for weight in weights.values()):
            raise ValueError("mix_weights must be non-negative.")
        if not any(weights.values()):
            raise ValueError("mix_weights must not all be zero.")
        return weights

    def probabilities(self) -> List[float]:
        total = sum(self.mix_weights.values())
        return [self.mix_weights.get(name, 0.0) / total for name in TRANSFORMS]


def _renumber(target: str) -> str:
    lines, number = [], 0
    for line in target.splitlines(keepends=True):
        if header_kind(line):
            number = 0
        match = ITEM_NUMBER.match(line)
        if match:
            number += 1
            line = f"{match.group(1)}{number}{match.group(3)}" + line[match.end() :]
        lines.append(line)
    return "".join(lines)


def _replace_overall(target: str, overall: int) -> str:
    token = next(BRACKET.finditer(target))
    return target[: token.start()] + f"[[{overall}]]" + target[token.end() :]


def _rephrase(
    record: SftRecord,
    task: JudgeTask,
    scenario: Scenario,
    options: AugmentOptions,
    rng: np.random.Generator,
) -> Tuple[JudgeTask, str]:
    names = task.effective_criteria or scenario.criterion_names
    overrides = dict(task.criteria_overrides)
    renames: Dict[str, str] = {}
    for name in names:
        if rng.random() >= options.rephrase_prob:
            continue
        criterion = scenario.criterion(name)
        passing = [
            alias
            for alias in criterion.aliases
            if similarity_gate(criterion, alias, options.similarity_threshold)
        ]
        if not passing:
            raise NoAliases(f"No gate-passing alias for {scenario.id} / {name}.")
        alias = passing[int(rng.integers(len(passing)))]
        shown = overrides[name].name if name in overrides else name
        renames[normalize_name(shown)] = alias.name
        overrides[name] = alias

    lines = []
    for line in record.target.splitlines(keepends=True):
        prefix = ITEM.match(line)
        if prefix:
            head, _, rest = line[prefix.end() :].partition(":")
            new_name = renames.get(normalize_name(head)) if rest else None
            if new_name is not None:
                line = line[: prefix.end()] + new_name + ":" + rest
        lines.append(line)
    return task.copy(update={"criteria_overrides": overrides}), "".join(lines)


def _downsample(
    record: SftRecord,
    task: JudgeTask,
    scenario: Scenario,
    options: AugmentOptions,
    rng: np.random.Generator,
    regressions: Dict[str, CriteriaRegression],
) -> Tuple[JudgeTask, str]:
    if task.mode == "pairwise":
        raise ForgeError("Criteria down-sampling applies to graded records only.")
    regression = regressions.get(scenario.id)
    if regression is None:
        raise NoRegressionModel(f"No criteria regression for {scenario.id!r}.")
    effective = task.effective_criteria or scenario.criterion_names
    names = [name for name in scenario.criterion_names if name in effective]
    high = min(options.downsample_range[1], len(names))
    low = min(options.downsample_range[0], high)
    k = int(rng.integers(low, high + 1))
    chosen = rng.choice(len(names), size=k, replace=False)
    kept = [names[index] for index in sorted(int(index) for index in chosen)]

    scores = criteria_scores(record.target, task, scenario)
    surviving = [scores[name] for name in kept if name in scores]
    filler = sum(surviving) / len(surviving) if surviving else None
    vector = [
        scores.get(name, filler) if name in kept else filler
        for name in regression.criteria
    ]
    overall = regression.predict(vector, task.rating)

    shown = _shown_names(task, scenario)
    lines = [
        line
        for line in record.target.splitlines(keepends=True)
        if not (ITEM.match(line) and _item_criterion(line, shown) not in (None, *kept))
    ]
    target = _replace_overall(_renumber("".join(lines)), overall)
    return task.copy(update={"effective_criteria": kept}), target


def _rerate(
    record: SftRecord,
    task: JudgeTask,
    options: AugmentOptions,
    rng: np.random.Generator,
) -> Tuple[JudgeTask, str]:
    targets = options.rating_targets
    rating = RatingSystem.of(targets[int(rng.integers(len(targets)))])
    source = task.rating

    def remap(match) -> str:
        content = match.group(1).strip()
        if is_verdict_marker(content) or not INTEGER.match(content):
            return match.group(0)
        return f"[[{remap_rating(int(content), source, rating)}]]"

    return task.copy(update={"rating": rating}), BRACKET.sub(remap, record.target)


def augment_record(
    record: SftRecord,
    transform: str,
    options: AugmentOptions,
    catalog: ScenarioCatalog,
    rng: np.random.Generator,
    regressions: Optional[Dict[str, CriteriaRegression]] = None,
) -> SftRecord:
    """
    Applies one transform to a record, re-rendering its prompt and relabelling spans.

    Raises:
        NoAliases: If a criterion picked for rephrasing has no gate-passing alias.
        NoRegressionModel: If down-sampling lacks a regression for the scenario.
        ForgeError: If the record carries no judge task to re-render.
    """
    if transform == "identity":
        meta = record.meta.copy(update={"transform": transform})
        return record.copy(update={"meta": meta})
    task = record.meta.task
    if task is None:
        raise ForgeError(f"Record {record.meta.record_id!r} carries no judge task.")
    scenario = catalog.get(task.instruction.scenario)
    if transform == "rephrase":
        task, target = _rephrase(record, task, scenario, options, rng)
    elif transform == "downsample":
        task, target = _downsample(
            record, task, scenario, options, rng, regressions or {}
        )
    elif transform == "rating":
        task, target = _rerate(record, task, options, rng)
    else:
        raise ForgeError(f"Unknown transform {transform!r}.")

    spans = label_token_spans(target, task.mode, task.rating)
    verdict_score = None
    if task.mode != "pairwise":
        verdict_score = parse_graded_verdict(target, task.rating).overall
    meta = record.meta.copy(
        update={
            "rating": task.rating.kind,
            "score": verdict_score,
            "task": task,
            "transform": transform,
        }
    )
    return SftRecord(
        prompt=render_judge_prompt(task, catalog).text,
        target=target,
        spans=spans,
        meta=meta,
    )


def augment_custom_prompts(
    records: Sequence[SftRecord],
    options: AugmentOptions,
    catalog: ScenarioCatalog,
    seed: int = 0,
    regressions: Optional[Dict[str, CriteriaRegression]] = None,
) -> List[SftRecord]:
    """
    Diversifies the judge prompts of fine-tuning records.

    Each record gets one transform drawn with `options.mix_weights`:
    `rephrase` swaps criteria for gate-passing aliases, `downsample` keeps a
    random subset of criteria and re-derives the overall score with the
    scenario's criteria regression, `rating` re-renders the grading tiers in
    another rating system and remaps every score, `identity` leaves the
    record alone. A record whose transform cannot apply is passed through.

    Args:
        records: Records to augment; they must carry their judge task.
        options: Transform mix and parameters.
        catalog: Catalog holding the criteria and their aliases.
        seed: Seed of the transform and parameter draws.
        regressions: Criteria regressions keyed by scenario id.

    Returns:
        One record per input record, in input order.
    """
    rng = np.random.default_rng(seed)
    probabilities = options.probabilities()
    augmented = []
    for record in records:
        transform = TRANSFORMS[int(rng.choice(len(TRANSFORMS), p=probabilities))]
        try:
            augmented.append(
                augment_record(record, transform, options, catalog, rng, regressions)
            )
        except ForgeError as exc:
            logger.info(
                "Passing %s through unchanged (%s): %s",
                record.meta.record_id,
                transform,
                exc,
            )
            augmented.append(record)
    return augmented
