"""Instruction-following difficulty (IFD) scoring and IFD-based data selection."""
import math
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from prefect import task
from prefect.logging import get_logger
from pydantic import BaseModel, root_validator
from typing_extensions import Literal

from prefect_judgeforge.exceptions import (
    DegenerateAnswer,
    EmptyAfterFilter,
    EmptyText,
    ForgeError,
    JudgeForgeError,
    ScorerFailure,
)
from prefect_judgeforge.gateway import (
    LlmGateway,
    NGramScorer,
    TokenScore,
    TokenScorer,
    map_bounded,
)
from prefect_judgeforge.sft import SftRecord

logger = get_logger("prefect_judgeforge.selection")

SelectionPolicy = Literal["threshold_gt_1", "scenario_z"]
DEFAULT_Z_THRESHOLD = 3.0

Scorer = Union[LlmGateway, TokenScorer]


class IfdScore(BaseModel):
    """Difficulty of one (instruction, answer) record.

    Attributes:
        record_id: Record the score belongs to.
        conditioned_loss: Summed negative logprob of the answer given the
            instruction.
        unconditioned_loss: Summed negative logprob of the answer alone.
        ifd: Ratio of the two losses; above 1 the instruction does not help.
        scenario: Scenario of the record.
        z: Per-scenario z-score of `ifd`, filled by `assign_scenario_z`.
    """

    record_id: str
    conditioned_loss: float
    unconditioned_loss: float
    ifd: float = 0.0
    scenario: str = ""
    z: Optional[float] = None

    @root_validator(skip_on_failure=True)
    def _ratio_of_losses(cls, values):
        if values["conditioned_loss"] <= 0 or values["unconditioned_loss"] <= 0:
            raise ValueError("Losses must be positive.")
        values["ifd"] = values["conditioned_loss"] / values["unconditioned_loss"]
        return values


def _token_scores(
    scorer: Scorer, text: str, condition: Optional[str]
) -> List[TokenScore]:
    try:
        if isinstance(scorer, LlmGateway):
            return scorer.score_tokens(text, condition=condition)
        return scorer.score(text, condition)
    except EmptyText:
        raise
    except (JudgeForgeError, ValueError, KeyError) as exc:
        raise ScorerFailure(f"Token scorer failed: {exc}") from exc


def answer_loss(scorer: Scorer, answer: str, condition: Optional[str] = None) -> float:
    """Summed negative log-probability of the answer's tokens."""
    scores = _token_scores(scorer, answer, condition)
    if not scores:
        raise ScorerFailure("Token scorer returned no tokens.")
    return -math.fsum(score.logprob for score in scores)


def ifd_score(
    question: str,
    answer: str,
    scorer: Scorer,
    record_id: str = "",
    scenario: str = "",
) -> IfdScore:
    """
    Computes the IFD of an answer: its loss given the question over its loss alone.

    Token boundaries are the scorer's own.

    Args:
        question: Instruction the answer is conditioned on.
        answer: Answer whose tokens are scored.
        scorer: An `LlmGateway` or a local token scorer.
        record_id: Identifier stored on the score.
        scenario: Scenario stored on the score.

    Raises:
        EmptyText: If `answer` is blank.
        DegenerateAnswer: If either loss is zero.
        ScorerFailure: If the scorer fails or returns no tokens.

    Example:
        ```python
        from prefect_judgeforge.gateway import ConstantScorer
        from prefect_judgeforge.selection import ifd_score

        ifd_score("Name a colour.", "Blue.", ConstantScorer(-1.0)).ifd  # 1.0
        ```
    """
    if not answer.strip():
        raise EmptyText("Cannot score an empty answer.")
    conditioned = answer_loss(scorer, answer, question)
    unconditioned = answer_loss(scorer, answer)
    if unconditioned == 0 or conditioned == 0:
        raise DegenerateAnswer(f"Answer of {record_id or 'record'} has zero loss.")
    return IfdScore(
        record_id=record_id,
        conditioned_loss=conditioned,
        unconditioned_loss=unconditioned,
        scenario=scenario,
    )


def assign_scenario_z(scores: Sequence[IfdScore]) -> List[IfdScore]:
    """
    Returns copies of the scores with per-scenario z-values of `ifd`.

    Uses the sample standard deviation; scenarios with one record or no
    spread get z = 0.
    """
    grouped: Dict[str, List[float]] = {}
    for score in scores:
        grouped.setdefault(score.scenario, []).append(score.ifd)
    moments = {}
    for scenario, values in grouped.items():
        data = np.array(values, dtype=float)
        std = float(data.std(ddof=1)) if len(data) > 1 else 0.0
        moments[scenario] = (float(data.mean()), std)
    scored = []
    for score in scores:
        mean, std = moments[score.scenario]
        z = (score.ifd - mean) / std if std > 0 else 0.0
        scored.append(score.copy(update={"z": z}))
    return scored


def select_by_ifd(
    scores: Sequence[IfdScore],
    budget: int,
    policy: SelectionPolicy = "threshold_gt_1",
    z_threshold: float = DEFAULT_Z_THRESHOLD,
) -> List[str]:
    """
    Picks the hardest records that pass a filter policy.

    `threshold_gt_1` drops records with IFD above 1. `scenario_z` drops
    records whose per-scenario z exceeds `z_threshold`. Survivors are sorted
    by IFD descending and truncated to `budget`.

    Raises:
        ForgeError: If `scores` is empty, `budget` is not positive, or a
            `scenario_z` selection meets a score without z.
        EmptyAfterFilter: If no record survives the filter.
    """
    if not scores:
        raise ForgeError("At least one IFD score is required.")
    if budget < 1:
        raise ForgeError("budget must be positive.")
    if policy == "threshold_gt_1":
        survivors = [score for score in scores if score.ifd <= 1]
    elif policy == "scenario_z":
        if any(score.z is None for score in scores):
            raise ForgeError("scenario_z selection needs z from assign_scenario_z.")
        survivors = [score for score in scores if score.z <= z_threshold]
    else:
        raise ForgeError(f"Unknown selection policy {policy!r}.")
    logger.info("%d of %d records pass %s", len(survivors), len(scores), policy)
    if not survivors:
        raise EmptyAfterFilter(f"No record survives the {policy} filter.")
    ranked = sorted(survivors, key=lambda score: -score.ifd)
    return [score.record_id for score in ranked[:budget]]


@task
async def score_records(
    records: Sequence[SftRecord],
    scorer: Scorer,
    parallelism: int = 4,
) -> List[IfdScore]:
    """
    Computes the IFD of every fine-tuning record.

    The record's prompt conditions its target.

    Args:
        records: Records to score.
        scorer: An `LlmGateway` or a local token scorer.
        parallelism: Records scored at once.

    Returns:
        One `IfdScore` per record, in input order, with scenario z-values.
    """

    def score(record: SftRecord) -> IfdScore:
        return ifd_score(
            record.prompt,
            record.target,
            scorer,
            record_id=record.meta.record_id,
            scenario=record.meta.scenario,
        )

    return assign_scenario_z(await map_bounded(score, list(records), parallelism))


def fit_record_scorer(records: Sequence[SftRecord]) -> NGramScorer:
    """
    A bigram scorer fitted on the records themselves.

    The corpus holds every prompt followed by its target, and every target
    alone, so that both conditioned and unconditioned answers are in-domain.
    """
    corpus = [f"{record.prompt}\n{record.target}" for record in records]
    corpus += [record.target for record in records]
    return NGramScorer.fit(corpus)
