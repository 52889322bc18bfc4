"""Fine-tuning records: SFT/Sim span labeling, pairwise doubling and score balancing."""
import re
import statistics
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, root_validator
from typing_extensions import Literal

from prefect_judgeforge.exceptions import (
    MissingScore,
    NotPairwise,
    ParseFailure,
    VerdictError,
)
from prefect_judgeforge.models import (
    FIVE_TIER,
    JudgeMode,
    JudgeTask,
    RatingKind,
    RatingSystem,
    Winner,
)
from prefect_judgeforge.verdicts import (
    BRACKET,
    ITEM,
    MIRRORED_WINNER,
    header_kind,
    is_verdict_marker,
    lines_with_offsets,
    parse_verdict,
    swap_pairwise_output,
)

SpanKind = Literal["SFT", "Sim"]
BalanceKey = Union[int, str]

SWAP_SUFFIX = "#swap"
PAIRWISE_DATA = re.compile(
    r"\[Response 1\]: (?P<first>.*?)\n\n\*\*\*\n\n"
    r"\[Response 2\]: (?P<second>.*?)\n\n\*\*\*\n\n\[Data End\]",
    re.DOTALL,
)
NAME_PREFIX = re.compile(r"[^\[\]:\n]{1,60}:\s*")


class SftSpan(BaseModel):
    """A labelled character range of a target, end exclusive."""

    start: int
    end: int
    kind: SpanKind


class SftMeta(BaseModel):
    """Provenance of an SFT record.

    Attributes:
        record_id: Stable identifier; swapped pairwise copies end in `#swap`.
        mode: Judging mode of the target.
        scenario: Scenario id of the instruction.
        rating: Rating system the target's scores use.
        score: Overall score of graded targets.
        winner: Verdict of pairwise targets.
        task: The judge task the prompt was rendered from.
        transform: Augmentation applied to the record, if any.
    """

    record_id: str
    mode: JudgeMode
    scenario: str
    rating: RatingKind = "five_tier"
    score: Optional[int] = None
    winner: Optional[Winner] = None
    task: Optional[JudgeTask] = None
    transform: Optional[str] = None

    @property
    def rating_system(self) -> RatingSystem:
        return RatingSystem.of(self.rating)


class SftRecord(BaseModel):
    """One fine-tuning example: prompt, target and the target's span labels."""

    prompt: str
    target: str
    spans: List[SftSpan] = Field(default_factory=list)
    meta: SftMeta

    @root_validator(skip_on_failure=True)
    def _spans_cover_target(cls, values):
        position = 0
        for span in values["spans"]:
            if span.start != position or span.end <= span.start:
                raise ValueError(
                    f"Spans must be sorted, disjoint and gap-free; "
                    f"got {span.start}-{span.end} at offset {position}."
                )
            position = span.end
        if position != len(values["target"]):
            raise ValueError("Spans must cover the whole target.")
        return values

    def span_texts(self) -> List[Tuple[str, str]]:
        """(kind, text) of every span, in order."""
        return [(span.kind, self.target[span.start : span.end]) for span in self.spans]

    @property
    def balance_key(self) -> BalanceKey:
        """Overall score of graded records, verdict of pairwise ones.

        Raises:
            MissingScore: If the record carries neither.
        """
        if self.meta.mode == "pairwise" and self.meta.winner is not None:
            return self.meta.winner
        if self.meta.mode != "pairwise" and self.meta.score is not None:
            return self.meta.score
        raise MissingScore(f"Record {self.meta.record_id!r} has no score or verdict.")


def _append(spans: List[List], start: int, end: int, kind: str) -> None:
    if end <= start:
        return
    if spans and spans[-1][2] == kind and spans[-1][1] == start:
        spans[-1][1] = end
    else:
        spans.append([start, end, kind])


def _label_prose(spans: List[List], text: str, offset: int) -> None:
    """Labels a free-text segment: brackets SFT, stripped prose Sim, padding SFT."""
    cursor = 0
    pieces = [(m.start(), m.end()) for m in BRACKET.finditer(text)]
    for start, end in pieces + [(len(text), None)]:
        segment = text[cursor:start]
        core = segment.strip()
        base = offset + cursor
        if core:
            lead = segment.index(core)
            _append(spans, base, base + lead, "SFT")
            _append(spans, base + lead, base + lead + len(core), "Sim")
            _append(spans, base + lead + len(core), offset + start, "SFT")
        else:
            _append(spans, base, offset + start, "SFT")
        if end is None:
            break
        _append(spans, offset + start, offset + end, "SFT")
        cursor = end


def label_token_spans(
    target: str, mode: str, rating: RatingSystem = FIVE_TIER
) -> List[SftSpan]:
    """
    Labels every character of a judge target as SFT or Sim.

    The verdict sentence, section headers, enumeration markers, criterion
    name prefixes, line breaks and every `[[...]]` token are SFT. The free
    prose of rationale items is Sim. Adjacent spans of one kind are merged.

    Args:
        target: Judge output used as a fine-tuning target.
        mode: Judging mode the target was produced in.
        rating: Rating system the target's scores use.

    Returns:
        Sorted, disjoint spans covering the target exactly.

    Raises:
        ParseFailure: If the target is not a valid verdict for `mode`.
    """
    try:
        parse_verdict(target, mode, rating)
    except VerdictError as exc:
        raise ParseFailure(f"Target is not a valid {mode} verdict: {exc}") from exc

    tokens = list(BRACKET.finditer(target))
    if mode == "pairwise":
        verdict_from = next(m.start() for m in tokens if is_verdict_marker(m.group(1)))
        boundary = _first_item_after(target, verdict_from)
        skeleton = {m.start() for m in tokens if verdict_from <= m.start() < boundary}
    else:
        skeleton = {tokens[0].start()}

    spans: List[List] = []
    for offset, line in lines_with_offsets(target):
        body = line.rstrip("\r\n")
        carries_verdict = any(offset <= at < offset + len(body) for at in skeleton)
        if carries_verdict or header_kind(body) or not body.strip():
            _append(spans, offset, offset + len(body), "SFT")
        else:
            prefix = ITEM.match(body)
            cursor = prefix.end() if prefix else 0
            if prefix:
                name = NAME_PREFIX.match(body, cursor)
                if name:
                    cursor = name.end()
            _append(spans, offset, offset + cursor, "SFT")
            _label_prose(spans, body[cursor:], offset + cursor)
        _append(spans, offset + len(body), offset + len(line), "SFT")
    return [SftSpan(start=start, end=end, kind=kind) for start, end, kind in spans]


def _first_item_after(target: str, position: int) -> int:
    for offset, line in lines_with_offsets(target):
        if offset > position and ITEM.match(line):
            return offset
    return len(target)


def make_sft_record(
    prompt: str,
    target: str,
    task: JudgeTask,
    record_id: Optional[str] = None,
) -> SftRecord:
    """
    Builds a labelled record from a rendered prompt and a judge output.

    Raises:
        ParseFailure: If the target is not a valid verdict for the task's mode.
    """
    spans = label_token_spans(target, task.mode, task.rating)
    verdict = parse_verdict(target, task.mode, task.rating)
    return SftRecord(
        prompt=prompt,
        target=target,
        spans=spans,
        meta=SftMeta(
            record_id=record_id or task.key,
            mode=task.mode,
            scenario=task.instruction.scenario,
            rating=task.rating.kind,
            score=getattr(verdict, "overall", None),
            winner=getattr(verdict, "winner", None),
            task=task,
        ),
    )


def swap_pairwise_prompt(prompt: str) -> str:
    """
    Exchanges the two responses of a rendered pairwise prompt.

    Raises:
        ParseFailure: If the prompt lacks the two-response data block.
    """
    match = PAIRWISE_DATA.search(prompt)
    if match is None:
        raise ParseFailure("Prompt has no [Response 1]/[Response 2] data block.")
    swapped = (
        f"[Response 1]: {match.group('second')}\n\n***\n\n"
        f"[Response 2]: {match.group('first')}\n\n***\n\n[Data End]"
    )
    return prompt[: match.start()] + swapped + prompt[match.end() :]


def swap_record(record: SftRecord) -> SftRecord:
    """The record as if its two responses had been presented in reverse order."""
    if record.meta.mode != "pairwise":
        raise NotPairwise(f"Record {record.meta.record_id!r} is {record.meta.mode}.")
    target = swap_pairwise_output(record.target, record.meta.rating_system)
    record_id = record.meta.record_id
    if record_id.endswith(SWAP_SUFFIX):
        record_id = record_id[: -len(SWAP_SUFFIX)]
    else:
        record_id = record_id + SWAP_SUFFIX
    task = record.meta.task
    if task is not None:
        task = task.copy(update={"responses": list(reversed(task.responses))})
    meta = record.meta.copy(
        update={
            "record_id": record_id,
            "winner": MIRRORED_WINNER.get(record.meta.winner),
            "task": task,
        }
    )
    return SftRecord(
        prompt=swap_pairwise_prompt(record.prompt),
        target=target,
        spans=label_token_spans(target, "pairwise", record.meta.rating_system),
        meta=meta,
    )


def double_pairwise(records: Sequence[SftRecord]) -> List[SftRecord]:
    """
    Returns the records followed by one order-swapped copy of each.

    Raises:
        NotPairwise: If a record is not in pairwise mode.
    """
    swapped = [swap_record(record) for record in records]
    return list(records) + swapped


def _normalize_key(key: BalanceKey) -> BalanceKey:
    if isinstance(key, str) and key.lstrip("-").isdigit():
        return int(key)
    return key


def balance_by_score(
    records: Sequence[SftRecord],
    target: Union[Literal["uniform"], Dict[BalanceKey, int]] = "uniform",
    seed: int = 0,
) -> List[SftRecord]:
    """
    Down-samples over-represented scores, or pairwise verdicts.

    With `uniform`, every bucket is capped at the median bucket size
    (rounded down). With an explicit histogram, listed buckets are capped at
    the given counts and unlisted ones are kept whole. Survivors keep their
    input order.

    Args:
        records: Records to balance.
        target: `uniform` or a map of bucket key to cap.
        seed: Seed of the within-bucket sampler.

    Raises:
        MissingScore: If a record has neither an overall score nor a verdict.

    Example:
        ```python
        from prefect_judgeforge.sft import balance_by_score

        balanced = balance_by_score(records, "uniform", seed=7)
        ```
    """
    buckets: Dict[BalanceKey, List[int]] = {}
    for index, record in enumerate(records):
        buckets.setdefault(record.balance_key, []).append(index)
    if not buckets:
        return []
    if target == "uniform":
        cap = int(statistics.median(len(members) for members in buckets.values()))
        caps = {key: cap for key in buckets}
    else:
        caps = {_normalize_key(key): count for key, count in target.items()}

    rng = np.random.default_rng(seed)
    keep = set()
    for key in sorted(buckets, key=lambda key: (type(key).__name__, key)):
        members = buckets[key]
        cap = caps.get(key)
        if cap is None or len(members) <= cap:
            keep.update(members)
            continue
        chosen = rng.choice(len(members), size=max(cap, 0), replace=False)
        keep.update(members[int(index)] for index in chosen)
    return [record for index, record in enumerate(records) if index in keep]
