"""Domain types shared by every judgeforge module."""
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, root_validator, validator
from typing_extensions import Literal

RatingKind = Literal["five_tier", "binary_01", "binary_12", "three_class", "ten_class"]
JudgeMode = Literal["single", "reference_guided", "pairwise"]
InstructionSource = Literal[
    "reference_questioning", "role_play_quiz", "benchmark", "manual"
]
Winner = Literal["response_1", "response_2", "tie"]

RATING_BOUNDS = {
    "five_tier": (1, 5),
    "binary_01": (0, 1),
    "binary_12": (1, 2),
    "three_class": (1, 3),
    "ten_class": (1, 10),
}

DEFAULT_SCENARIO_ID = "default"


class RatingSystem(BaseModel):
    """An integer rating scale.

    Attributes:
        kind: Name of the scale.
        min: Lowest admissible score.
        max: Highest admissible score.
    """

    kind: RatingKind = "five_tier"
    min: int = 1
    max: int = 5

    class Config:
        frozen = True

    @root_validator(pre=True)
    def _bounds_follow_kind(cls, values):
        kind = values.get("kind", "five_tier")
        if kind not in RATING_BOUNDS:
            raise ValueError(f"Unknown rating system {kind!r}.")
        lo, hi = RATING_BOUNDS[kind]
        if values.get("min", lo) != lo or values.get("max", hi) != hi:
            raise ValueError(f"Rating system {kind} is fixed to ({lo}, {hi}).")
        values.update(min=lo, max=hi)
        return values

    @classmethod
    def of(cls, kind: str) -> "RatingSystem":
        return cls(kind=kind)

    @property
    def is_binary(self) -> bool:
        return self.max - self.min == 1

    def contains(self, score: int) -> bool:
        return self.min <= score <= self.max


FIVE_TIER = RatingSystem()


class CriterionAlias(BaseModel):
    """A rephrased (name, description) pair for a criterion."""

    name: str
    description: str

    class Config:
        frozen = True


class Criterion(BaseModel):
    """One judge criterion of a scenario.

    Attributes:
        name: Short criterion name, e.g. `Accuracy`.
        description: What a response must do to satisfy it.
        aliases: Rephrasings that passed the similarity gate.
    """

    name: str
    description: str
    aliases: List[CriterionAlias] = Field(default_factory=list)


class Scenario(BaseModel):
    """A user-instruction category with its ordered judge criteria.

    Criteria are kept in descending order of importance.
    """

    id: str
    name: str
    description: str
    criteria: List[Criterion]

    @validator("criteria")
    def _criteria_not_empty(cls, criteria):
        if not criteria:
            raise ValueError("A scenario needs at least one criterion.")
        return criteria

    def criterion(self, name: str) -> Criterion:
        for criterion in self.criteria:
            if criterion.name == name:
                return criterion
        raise KeyError(name)

    @property
    def criterion_names(self) -> List[str]:
        return [criterion.name for criterion in self.criteria]


class Instruction(BaseModel):
    """A user instruction, synthesized or collected."""

    id: str
    scenario: str
    text: str
    source: InstructionSource = "manual"
    reference_answer: Optional[str] = Field(default=None, alias="reference")
    meta: Dict[str, Any] = Field(default_factory=dict)

    class Config:
        allow_population_by_field_name = True

    @validator("text")
    def _text_not_empty(cls, text):
        if not text.strip():
            raise ValueError("Instruction text must not be empty.")
        return text


class ResponseRecord(BaseModel):
    """A model's response to an instruction, or the error that replaced it."""

    instruction_id: str
    model: str
    text: str = ""
    error: Optional[str] = None


class JudgeTask(BaseModel):
    """One evaluation request.

    Attributes:
        mode: `single`, `reference_guided` or `pairwise`.
        instruction: The instruction under evaluation.
        responses: One response, or two for pairwise comparison.
        rating: Rating system the judge must use.
        effective_criteria: Names of the scenario criteria to show the judge,
            in catalog order; `None` means all of them.
        criteria_overrides: Rephrasings shown in place of a criterion,
            keyed by the original criterion name.
    """

    mode: JudgeMode = "single"
    instruction: Instruction
    responses: List[ResponseRecord]
    rating: RatingSystem = FIVE_TIER
    effective_criteria: Optional[List[str]] = None
    criteria_overrides: Dict[str, CriterionAlias] = Field(default_factory=dict)

    @validator("effective_criteria")
    def _effective_not_empty(cls, names):
        if names is not None and not names:
            raise ValueError("effective_criteria must not be empty.")
        return names

    @property
    def response_models(self) -> List[str]:
        return [response.model for response in self.responses]

    @property
    def key(self) -> str:
        """Identifier of the judgment this task produces."""
        models = "+".join(self.response_models)
        return "|".join([self.instruction.id, models, self.mode])


class ScoredPoint(BaseModel):
    """A strength or weakness with its sub-score."""

    text: str
    score: int


class PairedPoint(BaseModel):
    """A pairwise rationale line with the sub-score of each response."""

    text: str
    score_1: int
    score_2: int


def _check_bounds(rating: RatingSystem, scores: List[int]) -> None:
    for score in scores:
        if not rating.contains(score):
            raise ValueError(
                f"Score {score} outside {rating.kind} ({rating.min}-{rating.max})."
            )


class GradedVerdict(BaseModel):
    """Parsed outcome of single-answer or reference-guided grading."""

    overall: int
    strengths: List[ScoredPoint] = Field(default_factory=list)
    weaknesses: List[ScoredPoint] = Field(default_factory=list)
    raw: str = ""
    rating: RatingSystem = FIVE_TIER

    @root_validator(skip_on_failure=True)
    def _scores_in_bounds(cls, values):
        scores = [values["overall"]]
        scores += [point.score for point in values["strengths"]]
        scores += [point.score for point in values["weaknesses"]]
        _check_bounds(values["rating"], scores)
        return values


class PairwiseVerdict(BaseModel):
    """Parsed outcome of a pairwise comparison."""

    winner: Winner
    score_1: int
    score_2: int
    rationale: List[PairedPoint] = Field(default_factory=list)
    raw: str = ""
    rating: RatingSystem = FIVE_TIER

    @root_validator(skip_on_failure=True)
    def _scores_in_bounds(cls, values):
        scores = [values["score_1"], values["score_2"]]
        for point in values["rationale"]:
            scores += [point.score_1, point.score_2]
        _check_bounds(values["rating"], scores)
        return values
