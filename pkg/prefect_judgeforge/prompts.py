"""Rendering of every prompt family, rating-system remapping and the criteria
rephrasing gate."""
import math
import re
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateNotFound
from jinja2.exceptions import UndefinedError
from pydantic import BaseModel, Field, root_validator, validator
from typing_extensions import Literal

from prefect_judgeforge.catalog import ScenarioCatalog
from prefect_judgeforge.exceptions import (
    EmptyCatalog,
    EmptyInstruction,
    EmptyText,
    MissingField,
    MissingReference,
    OutOfRange,
    PromptError,
    UnknownCriterion,
    UnresolvedPlaceholder,
    WrongResponseCount,
    WrongSeedCount,
)
from prefect_judgeforge.models import (
    FIVE_TIER,
    Criterion,
    CriterionAlias,
    JudgeTask,
    RatingSystem,
    Scenario,
)

TEMPLATE_DIR = Path(__file__).parent / "templates"
DEFAULT_LANGUAGE = "en"
SIMILARITY_THRESHOLD = 0.4

JUDGE_FAMILIES = {
    "single": "judge_single",
    "reference_guided": "judge_reference",
    "pairwise": "judge_pairwise",
}
QUIZ_FAMILIES = {
    "math_qa": "quiz_math",
    "programming": "quiz_programming",
    "reading_extraction": "quiz_reading",
}

FIVE_TIER_TEXT = {
    1: "The response has significant flaws, totally deviates from the criteria, "
    "and should not be seen in practice.",
    2: "The response has parts that meet the criteria and can be adopted, but as "
    "a whole, the quality is not sufficient.",
    3: "The response has a mix of strengths and weaknesses, with strengths overall "
    "outweighing the weaknesses within the evaluation criteria.",
    4: "The response is of acceptable quality, overall meets the criteria, and has "
    "few minor issues that can be improved.",
    5: "The response is excellent, strictly meets the criteria in all aspects.",
}
REFERENCE_SENTENCE = (
    "When a reference answer is given, this tier represents the quality shown by "
    "the reference answer."
)
SUPERIOR_SENTENCE = (
    "When a reference answer is given, this tier represents a quality superior to "
    "the reference answer."
)
BINARY_TEXT = (
    "The response does not meet the criteria as a whole and should not be adopted.",
    "The response generally meets the criteria and can be adopted. When a reference "
    "answer is given, this tier represents a quality at or above the reference answer.",
)
SYSTEM_NAMES = {
    "five_tier": "a five-tier system",
    "three_class": "a three-tier system",
    "ten_class": "a ten-tier system",
    "binary_01": "a binary system",
    "binary_12": "a binary system",
}

_environment = Environment(
    loader=FileSystemLoader(str(TEMPLATE_DIR)),
    undefined=StrictUndefined,
    keep_trailing_newline=True,
    autoescape=False,
)


class PromptBundle(BaseModel):
    """A rendered prompt.

    Attributes:
        text: The prompt text sent to the model.
        anchors: Verbatim phrases the prompt is known to carry exactly once.
        mode: Prompt family, e.g. `judge_single` or `quiz_math`.
    """

    text: str
    anchors: List[str] = Field(default_factory=list)
    mode: str

    @root_validator(skip_on_failure=True)
    def _anchors_occur_once(cls, values):
        for anchor in values["anchors"]:
            occurrences = values["text"].count(anchor)
            if occurrences != 1:
                raise ValueError(
                    f"Anchor {anchor!r} occurs {occurrences} times in the prompt."
                )
        return values


class QuizSpec(BaseModel):
    """Variables of a role-playing quiz prompt.

    Attributes:
        scenario: `math_qa`, `programming` or `reading_extraction`.
        difficulty: Difficulty level, e.g. `medium`.
        audience: Who the questions are for.
        subject: Subject (math) or topic (programming) of the questions.
        language: Language the questions are written in.
        company: Recruiting company; required for programming quizzes.
        reading_material: Text the questions are about; required for reading quizzes.
        count: Number of questions asked for.
    """

    scenario: Literal["math_qa", "programming", "reading_extraction"]
    difficulty: str = ""
    audience: str = ""
    subject: str = ""
    language: str = "English"
    company: Optional[str] = None
    reading_material: Optional[str] = None
    count: int = 10

    @validator("count")
    def _count_positive(cls, count):
        if count < 1:
            raise ValueError("count must be positive.")
        return count

    @property
    def topic(self) -> str:
        return self.subject

    def missing_fields(self) -> List[str]:
        """Names of fields this scenario needs but this quiz leaves empty."""
        required = {
            "math_qa": ["difficulty", "audience", "subject", "language"],
            "programming": ["difficulty", "audience", "subject", "language", "company"],
            "reading_extraction": ["language", "reading_material"],
        }[self.scenario]
        return [name for name in required if not (getattr(self, name) or "").strip()]


def render_template(family: str, variant: str = DEFAULT_LANGUAGE, **variables) -> str:
    """
    Renders one template file.

    Raises:
        PromptError: If no template exists for the family and language.
        UnresolvedPlaceholder: If a placeholder has no value.
    """
    try:
        template = _environment.get_template(f"{variant}/{family}.j2")
    except TemplateNotFound as exc:
        raise PromptError(
            f"No {family!r} template for language variant {variant!r}."
        ) from exc
    try:
        return template.render(**variables)
    except UndefinedError as exc:
        raise UnresolvedPlaceholder(f"{family}: {exc.message}") from exc


def _half_up(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


def remap_rating(score: int, source: RatingSystem, target: RatingSystem) -> int:
    """
    Maps a score between rating systems.

    Targets with three or more classes use the affine map between endpoints,
    rounded half-up. Binary targets are positive iff the score reaches three
    quarters of the source range, which is tier 4 on the five-tier system.

    Raises:
        OutOfRange: If `score` is outside `source`.

    Example:
        ```python
        from prefect_judgeforge.models import FIVE_TIER, RatingSystem
        from prefect_judgeforge.prompts import remap_rating

        remap_rating(3, FIVE_TIER, RatingSystem.of("ten_class"))  # 6
        ```
    """
    if not source.contains(score):
        raise OutOfRange(
            f"Score {score} is outside the {source.kind} range "
            f"({source.min}-{source.max})."
        )
    offset = Fraction(score - source.min)
    span = source.max - source.min
    if target.is_binary:
        return target.max if offset >= Fraction(3, 4) * span else target.min
    return target.min + _half_up(offset * (target.max - target.min) / span)


def _five_tier_anchor(tier: int, rating: RatingSystem) -> int:
    return 1 + _half_up(Fraction(tier - rating.min) * 4 / (rating.max - rating.min))


def tier_lines(rating: RatingSystem) -> List[str]:
    """
    Tier descriptions for any rating system.

    Each tier borrows the five-tier description nearest to it. The
    reference-answer sentence goes to the tier five-tier 4 maps to, the
    superior-quality sentence to the top tier when that is a different tier.
    """
    if rating.is_binary:
        return [f"{rating.min} {BINARY_TEXT[0]}", f"{rating.max} {BINARY_TEXT[1]}"]
    reference_tier = remap_rating(4, FIVE_TIER, rating)
    lines = []
    for tier in range(rating.min, rating.max + 1):
        text = FIVE_TIER_TEXT[_five_tier_anchor(tier, rating)]
        if tier == reference_tier:
            text = f"{text} {REFERENCE_SENTENCE}"
        elif tier == rating.max:
            text = f"{text} {SUPERIOR_SENTENCE}"
        lines.append(f"{tier} {text}")
    return lines


def rating_phrase(rating: RatingSystem) -> str:
    return f"{SYSTEM_NAMES[rating.kind]} ({rating.min}-{rating.max})"


def ordinal(number: int) -> str:
    if 11 <= number % 100 <= 13:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(number % 10, "th")
    return f"{number}{suffix}"


def effective_criteria(task: JudgeTask, scenario: Scenario) -> List[Criterion]:
    """
    The criteria a task shows the judge, in catalog order, with overrides applied.

    Raises:
        UnknownCriterion: If the task names a criterion outside the scenario.
    """
    names = task.effective_criteria or scenario.criterion_names
    unknown = sorted(set(names) - set(scenario.criterion_names))
    unknown += sorted(set(task.criteria_overrides) - set(scenario.criterion_names))
    if unknown:
        raise UnknownCriterion(
            f"Criteria {unknown} are not defined for scenario {scenario.id!r}."
        )
    selected = []
    for criterion in scenario.criteria:
        if criterion.name not in names:
            continue
        override = task.criteria_overrides.get(criterion.name)
        if override is not None:
            criterion = Criterion(name=override.name, description=override.description)
        selected.append(criterion)
    return selected


def criteria_block(criteria: Sequence[Criterion]) -> str:
    return "\n".join(
        f"{number}. {criterion.name}: {criterion.description}"
        for number, criterion in enumerate(criteria, start=1)
    )


def render_judge_prompt(
    task: JudgeTask, catalog: ScenarioCatalog, language: str = DEFAULT_LANGUAGE
) -> PromptBundle:
    """
    Renders the evaluation prompt of a judge task.

    Args:
        task: The task; its mode picks the single, reference-guided or
            pairwise template.
        catalog: Catalog the instruction's scenario resolves in.
        language: Template language variant.

    Returns:
        A `PromptBundle` tagged with the template family.

    Raises:
        UnknownScenario: If the instruction's scenario is not in the catalog.
        MissingReference: If a reference-guided task has no reference answer.
        WrongResponseCount: If the response count does not fit the mode.

    Example:
        ```python
        from prefect_judgeforge.catalog import ScenarioCatalog
        from prefect_judgeforge.models import Instruction, JudgeTask, ResponseRecord
        from prefect_judgeforge.prompts import render_judge_prompt

        task = JudgeTask(
            instruction=Instruction(id="q1", scenario="math_qa", text="1 + 1?"),
            responses=[ResponseRecord(instruction_id="q1", model="m", text="2")],
        )
        print(render_judge_prompt(task, ScenarioCatalog.load()).text)
        ```
    """
    scenario = catalog.get(task.instruction.scenario)
    expected = 2 if task.mode == "pairwise" else 1
    if len(task.responses) != expected:
        raise WrongResponseCount(
            f"{task.mode} judging takes {expected} response(s), "
            f"got {len(task.responses)}."
        )
    reference = task.instruction.reference_answer
    if task.mode == "reference_guided" and not (reference or "").strip():
        raise MissingReference(
            f"Instruction {task.instruction.id!r} has no reference answer."
        )

    rating = task.rating
    variables = dict(
        scenario_name=scenario.name,
        scenario_description=scenario.description,
        criteria=criteria_block(effective_criteria(task, scenario)),
        rating_phrase=rating_phrase(rating),
        tiers="\n".join(tier_lines(rating)),
        score_range=f"{rating.min}-{rating.max}",
        instruction=task.instruction.text,
    )
    anchors = [
        "Your task is to evaluate the quality of AI responses",
        "keep the `[[' and `]]' symbols",
    ]
    if task.mode == "pairwise":
        variables.update(
            response_1=task.responses[0].text,
            response_2=task.responses[1].text,
            score_low=rating.min,
            score_high=rating.max,
        )
        anchors += ["[Response 1]:", "[Response 2]:", "[[Both Responses are tied]]"]
    else:
        variables["response"] = task.responses[0].text
    if task.mode == "reference_guided":
        variables.update(
            reference=reference,
            reference_tier=ordinal(remap_rating(4, FIVE_TIER, rating)),
        )
        anchors += [
            "[Reference answer]:",
            "the reference answer may not be the only possible one",
        ]

    family = JUDGE_FAMILIES[task.mode]
    return PromptBundle(
        text=render_template(family, language, **variables),
        anchors=anchors,
        mode=family,
    )


def render_classification_prompt(
    instruction: str, catalog: ScenarioCatalog, language: str = DEFAULT_LANGUAGE
) -> PromptBundle:
    """
    Renders the scenario classification prompt over every catalog scenario.

    Raises:
        EmptyInstruction: If `instruction` is blank.
        EmptyCatalog: If the catalog holds no scenarios.
    """
    if not instruction.strip():
        raise EmptyInstruction("Cannot classify an empty instruction.")
    if catalog.is_empty():
        raise EmptyCatalog("Cannot classify against an empty catalog.")
    scenarios = "\n".join(
        f"{number}. {scenario.name}: {scenario.description}"
        for number, scenario in enumerate(catalog.scenarios, start=1)
    )
    return PromptBundle(
        text=render_template(
            "classification",
            language,
            count=len(catalog.scenarios),
            scenarios=scenarios,
            instruction=instruction,
        ),
        anchors=[
            "Please directly provide the name of the scenario",
            'you can classify it as "default"',
        ],
        mode="classification",
    )


def render_questioning_prompt(
    scenario: Scenario,
    reference_text: str,
    seeds: Sequence[str],
    batch: int = 5,
    language: str = DEFAULT_LANGUAGE,
) -> PromptBundle:
    """
    Renders the reference-based questioning prompt.

    Args:
        scenario: Scenario the questions must belong to.
        reference_text: Article the questions are grounded on.
        seeds: Exactly three example instructions of the scenario.
        batch: Number of question-answer pairs asked for.
        language: Template language variant.

    Raises:
        MissingReference: If `reference_text` is blank.
        WrongSeedCount: If `seeds` does not hold exactly three examples.
    """
    if not reference_text.strip():
        raise MissingReference("Questioning needs a non-empty reference text.")
    if len(seeds) != 3:
        raise WrongSeedCount(f"Questioning takes 3 seed examples, got {len(seeds)}.")
    if batch < 1:
        raise PromptError("batch must be positive.")
    return PromptBundle(
        text=render_template(
            "questioning",
            language,
            scenario_name=scenario.name,
            scenario_description=scenario.description,
            reference_text=reference_text,
            example_1=seeds[0],
            example_2=seeds[1],
            example_3=seeds[2],
            batch=batch,
        ),
        anchors=[
            f"Please generate {batch} sets of question-answer pairs",
            "[END OF QA PAIR]",
        ],
        mode="questioning",
    )


def render_quiz_prompt(
    spec: QuizSpec, language: str = DEFAULT_LANGUAGE
) -> PromptBundle:
    """
    Renders the role-playing quiz prompt for the quiz scenario.

    Raises:
        MissingField: If a field the scenario requires is empty.
    """
    missing = spec.missing_fields()
    if missing:
        raise MissingField(f"{spec.scenario} quiz prompts need {missing}.")
    family = QUIZ_FAMILIES[spec.scenario]
    anchors = {
        "quiz_math": [
            f"help me generate {spec.count}",
            '"subject": "[the subject of the question]"',
        ],
        "quiz_programming": [
            "programming or code analysis questions",
            "30 to 50 lines",
        ],
        "quiz_reading": [
            f"prepare {spec.count} questions based on the following reading materials"
        ],
    }[family]
    return PromptBundle(
        text=render_template(
            family,
            language,
            count=spec.count,
            difficulty=spec.difficulty,
            audience=spec.audience,
            subject=spec.subject,
            topic=spec.topic,
            language=spec.language,
            company=spec.company,
            reading_material=spec.reading_material,
        ),
        anchors=anchors,
        mode=family,
    )


def render_rephrase_prompt(
    scenario: Scenario,
    criterion: Criterion,
    count: int = 3,
    language: str = DEFAULT_LANGUAGE,
) -> PromptBundle:
    """Renders the prompt asking for alternative wordings of one criterion."""
    return PromptBundle(
        text=render_template(
            "rephrase",
            language,
            scenario_name=scenario.name,
            scenario_description=scenario.description,
            criterion_name=criterion.name,
            criterion_description=criterion.description,
            count=count,
        ),
        anchors=["alternative versions of this criterion"],
        mode="rephrase",
    )


_WORD = re.compile(r"\w+")


def _token_set(name: str, description: str) -> set:
    return set(_WORD.findall(f"{name} {description}".lower()))


def jaccard_similarity(
    original: Criterion, candidate: Union[CriterionAlias, Tuple[str, str]]
) -> float:
    """
    Token-level Jaccard similarity of two (name, description) pairs.

    Raises:
        EmptyText: If either side has no word tokens.
    """
    if isinstance(candidate, tuple):
        candidate = CriterionAlias(name=candidate[0], description=candidate[1])
    texts = [original.name, original.description, candidate.name, candidate.description]
    if any(not text.strip() for text in texts):
        raise EmptyText("Criterion names and descriptions must be non-empty.")
    left = _token_set(original.name, original.description)
    right = _token_set(candidate.name, candidate.description)
    if not left or not right:
        raise EmptyText("Criterion texts must contain word tokens.")
    return len(left & right) / len(left | right)


def similarity_gate(
    original: Criterion,
    candidate: Union[CriterionAlias, Tuple[str, str]],
    threshold: float = SIMILARITY_THRESHOLD,
) -> bool:
    """True when a rephrasing diverges enough on the surface to be worth keeping."""
    return jaccard_similarity(original, candidate) <= threshold


def attach_aliases(
    catalog: ScenarioCatalog,
    scenario_id: str,
    aliases: Dict[str, Sequence[CriterionAlias]],
    threshold: float = SIMILARITY_THRESHOLD,
) -> ScenarioCatalog:
    """
    Returns a catalog whose criteria carry the gate-passing candidate aliases.

    Args:
        catalog: Catalog to extend.
        scenario_id: Scenario the criteria belong to.
        aliases: Candidate aliases keyed by criterion name.
        threshold: Jaccard similarity at or below which a candidate passes.

    Raises:
        UnknownCriterion: If a key is not a criterion of the scenario.
    """
    scenario = catalog.get(scenario_id)
    unknown = sorted(set(aliases) - set(scenario.criterion_names))
    if unknown:
        raise UnknownCriterion(
            f"Criteria {unknown} are not defined for scenario {scenario_id!r}."
        )
    criteria = []
    for criterion in scenario.criteria:
        kept = list(criterion.aliases)
        for candidate in aliases.get(criterion.name, []):
            if candidate in kept:
                continue
            if similarity_gate(criterion, candidate, threshold):
                kept.append(candidate)
        criteria.append(criterion.copy(update={"aliases": kept}))
    return catalog.replace(scenario.copy(update={"criteria": criteria}))
