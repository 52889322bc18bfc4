"""Parsing of raw judge outputs into verdicts, and canonical verdict rendering.

Judges are asked to wrap every score in `[[` and `]]`. Graded outputs carry an
overall score followed by a strengths section and a weaknesses section, each
item with its own sub-score. Pairwise outputs carry exactly one verdict marker
followed by the overall score of each response.
"""
import re
from typing import List, Match, Optional, Sequence, Tuple, Union

from prefect.logging import get_logger

from prefect_judgeforge.catalog import ScenarioCatalog, normalize_name
from prefect_judgeforge.exceptions import (
    AmbiguousVerdict,
    EmptyCatalog,
    MissingMarker,
    NotAnInteger,
    OutOfRange,
    UnknownScenario,
)
from prefect_judgeforge.models import (
    DEFAULT_SCENARIO_ID,
    FIVE_TIER,
    GradedVerdict,
    PairedPoint,
    PairwiseVerdict,
    RatingSystem,
    ScoredPoint,
)

BRACKET = re.compile(r"\[\[(.*?)\]\]")
INTEGER = re.compile(r"^[+-]?\d+$")
ITEM = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s*")
LABEL = re.compile(r"(Response\s*)([12])", re.IGNORECASE)
ADJACENT_LABEL = re.compile(
    r"Response\s*([12])\s*(?:being|score|scores)?\s*[:=]?\s*$", re.IGNORECASE
)

STRENGTH_HEADERS = (
    "Strengths of the current response",
    "Strengths of the current reply",
    "Advantages of the current response",
    "Advantages of the current reply",
    "Current response strengths",
)
WEAKNESS_HEADERS = (
    "Shortcomings of the current response",
    "Shortcomings of the current reply",
    "Weaknesses of the current response",
    "Weaknesses of the current reply",
    "Current response weaknesses",
)

VERDICT_MARKERS = {
    "response 1 is better": "response_1",
    "response 2 is better": "response_2",
    "both responses are tied": "tie",
}
MARKER_TEXT = {
    "response_1": "Response 1 is better",
    "response_2": "Response 2 is better",
    "tie": "Both Responses are tied",
}
MIRRORED_WINNER = {"response_1": "response_2", "response_2": "response_1", "tie": "tie"}

Verdict = Union[GradedVerdict, PairwiseVerdict]

logger = get_logger("prefect_judgeforge.verdicts")


def header_kind(
    line: str,
    strength_headers: Sequence[str] = STRENGTH_HEADERS,
    weakness_headers: Sequence[str] = WEAKNESS_HEADERS,
) -> Optional[str]:
    """Returns `strengths`, `weaknesses` or None for a single output line."""
    core = line.strip().strip("#*_").strip().rstrip(":：").strip("*_ ")
    core = normalize_name(core)
    if not core:
        return None
    if core in {normalize_name(header) for header in strength_headers}:
        return "strengths"
    if core in {normalize_name(header) for header in weakness_headers}:
        return "weaknesses"
    return None


def is_verdict_marker(token: str) -> bool:
    return normalize_name(token) in VERDICT_MARKERS


def point_text(line: str) -> str:
    """The prose of an enumerated item, without marker and score tokens."""
    text = ITEM.sub("", line, count=1)
    text = BRACKET.sub("", text)
    return " ".join(text.split())


def _score(token: str, rating: RatingSystem) -> int:
    content = token.strip()
    if not INTEGER.match(content):
        raise NotAnInteger(f"Bracketed token [[{content}]] is not an integer score.")
    value = int(content)
    if not rating.contains(value):
        raise OutOfRange(
            f"Score {value} is outside the {rating.kind} range "
            f"({rating.min}-{rating.max})."
        )
    return value


def lines_with_offsets(raw: str) -> List[Tuple[int, str]]:
    """Lines of `raw` with their line endings, each paired with its start offset."""
    offset = 0
    lines = []
    for line in raw.splitlines(keepends=True):
        lines.append((offset, line))
        offset += len(line)
    return lines


def parse_graded_verdict(
    raw: str,
    rating: RatingSystem = FIVE_TIER,
    strength_headers: Sequence[str] = STRENGTH_HEADERS,
    weakness_headers: Sequence[str] = WEAKNESS_HEADERS,
) -> GradedVerdict:
    """
    Parses a single-answer or reference-guided judge output.

    The first bracketed integer is the overall score. Bracketed integers on
    the item lines under the strengths header become strength sub-scores,
    those under the weaknesses header become weakness sub-scores. A
    paragraph that follows a blank line and is not an enumerated item closes
    the section; its scores are bounds-checked but not attached. Scores
    written before the first section header are bounds-checked and logged at
    debug level, since no section claims them.

    Args:
        raw: The judge output.
        rating: Rating system the scores must lie in.
        strength_headers: Accepted spellings of the strengths header.
        weakness_headers: Accepted spellings of the weaknesses header.

    Returns:
        The parsed `GradedVerdict`.

    Raises:
        MissingMarker: If no `[[n]]` token is present.
        NotAnInteger: If a bracketed token is not an integer.
        OutOfRange: If a score is outside `rating`.

    Example:
        ```python
        from prefect_judgeforge.verdicts import parse_graded_verdict

        verdict = parse_graded_verdict(
            "I believe the overall rating of this response is [[4]].\\n"
            "Strengths of the current response:\\n"
            "1. Accuracy: correct result. [[5]]\\n"
        )
        assert verdict.overall == 4
        ```
    """
    tokens = list(BRACKET.finditer(raw or ""))
    if not tokens:
        raise MissingMarker("Judge output contains no [[score]] marker.")
    scores = {match.start(): _score(match.group(1), rating) for match in tokens}
    overall_at = tokens[0].start()

    sections = {"strengths": [], "weaknesses": []}
    section = None
    unsectioned = []
    closing = False
    previous_blank = False
    for start, line in lines_with_offsets(raw):
        kind = header_kind(line, strength_headers, weakness_headers)
        if kind:
            section, closing, previous_blank = kind, False, False
            continue
        if not line.strip():
            previous_blank = True
            continue
        if section is None:
            previous_blank = False
            unsectioned += [
                scores[start + match.start()]
                for match in BRACKET.finditer(line)
                if start + match.start() != overall_at
            ]
            continue
        if ITEM.match(line):
            closing = False
        elif previous_blank:
            closing = True
        previous_blank = False
        if closing:
            continue
        text = point_text(line)
        for match in BRACKET.finditer(line):
            position = start + match.start()
            if position == overall_at:
                continue
            sections[section].append(ScoredPoint(text=text, score=scores[position]))

    if unsectioned:
        logger.debug(
            "Ignoring %d score(s) written before any section header: %s",
            len(unsectioned),
            unsectioned,
        )
    return GradedVerdict(
        overall=scores[overall_at],
        strengths=sections["strengths"],
        weaknesses=sections["weaknesses"],
        raw=raw,
        rating=rating,
    )


def _labels(text: str, pair: Sequence[Match], floor: int) -> Optional[Tuple[str, str]]:
    """Response labels written right before each of two score tokens, if any."""
    gaps = (text[floor : pair[0].start()], text[pair[0].end() : pair[1].start()])
    found = [ADJACENT_LABEL.search(gap) for gap in gaps]
    if all(found) and found[0].group(1) != found[1].group(1):
        return found[0].group(1), found[1].group(1)
    return None


def _attribute(
    text: str, pair: Sequence[Match], floor: int, rating: RatingSystem
) -> Tuple[int, int]:
    first, second = (_score(match.group(1), rating) for match in pair)
    labels = _labels(text, pair, floor)
    if labels is not None and labels[0] == "2":
        return second, first
    return first, second


def _numeric_tokens(text: str) -> List[Match]:
    return [
        match
        for match in BRACKET.finditer(text)
        if not is_verdict_marker(match.group(1))
    ]


def parse_pairwise_verdict(
    raw: str, rating: RatingSystem = FIVE_TIER
) -> PairwiseVerdict:
    """
    Parses a pairwise comparison output.

    The winner comes from the single verdict marker. The two bracketed scores
    after it are the overall scores; a score written right after a
    `Response N` label is attributed to that response, otherwise template
    order applies. Enumerated lines after the verdict sentence carrying two
    scores become the rationale.

    Raises:
        MissingMarker: If the verdict marker or one of the overall scores is absent.
        AmbiguousVerdict: If different verdict markers are present.
        NotAnInteger: If a score token is not an integer.
        OutOfRange: If a score is outside `rating`.
    """
    tokens = list(BRACKET.finditer(raw or ""))
    markers = [match for match in tokens if is_verdict_marker(match.group(1))]
    winners = {VERDICT_MARKERS[normalize_name(match.group(1))] for match in markers}
    if not winners:
        raise MissingMarker("Judge output contains no pairwise verdict marker.")
    if len(winners) > 1:
        raise AmbiguousVerdict(
            f"Judge output carries conflicting verdicts {sorted(winners)}."
        )
    marker = markers[0]
    numeric = _numeric_tokens(raw)
    for match in numeric:
        _score(match.group(1), rating)

    lines = lines_with_offsets(raw)
    boundary = len(raw)
    for start, line in lines:
        if start >= marker.end() and ITEM.match(line):
            boundary = start
            break
    head = [match for match in numeric if marker.end() <= match.start() < boundary]
    if len(head) < 2:
        raise MissingMarker("Expected an overall score for each response.")
    score_1, score_2 = _attribute(raw, head[:2], marker.end(), rating)

    rationale = []
    for start, line in lines:
        if start < boundary or not ITEM.match(line):
            continue
        pair = _numeric_tokens(line)
        if len(pair) < 2:
            continue
        point_1, point_2 = _attribute(line, pair[:2], 0, rating)
        rationale.append(
            PairedPoint(text=point_text(line), score_1=point_1, score_2=point_2)
        )

    return PairwiseVerdict(
        winner=winners.pop(),
        score_1=score_1,
        score_2=score_2,
        rationale=rationale,
        raw=raw,
        rating=rating,
    )


def parse_verdict(raw: str, mode: str, rating: RatingSystem = FIVE_TIER) -> Verdict:
    """Dispatches to the parser matching a judging mode."""
    if mode == "pairwise":
        return parse_pairwise_verdict(raw, rating)
    return parse_graded_verdict(raw, rating)


def parse_scenario_label(raw: str, catalog: ScenarioCatalog) -> str:
    """
    Resolves a classifier output to a scenario id.

    Names match after whitespace and case normalization only; the literal
    `default` maps to the reserved default id.

    Raises:
        EmptyCatalog: If the catalog holds no scenarios.
        UnknownScenario: If `raw` names no catalog scenario.
    """
    if catalog.is_empty():
        raise EmptyCatalog("Cannot resolve scenario labels against an empty catalog.")
    if normalize_name(raw) == DEFAULT_SCENARIO_ID:
        return DEFAULT_SCENARIO_ID
    scenario = catalog.find_by_name(raw)
    if scenario is None:
        raise UnknownScenario(f"Classifier output {raw.strip()!r} names no scenario.")
    return scenario.id


def render_graded_verdict(verdict: GradedVerdict) -> str:
    """Renders a graded verdict into the output skeleton the judge prompt asks for."""
    lines = [
        f"I believe the overall rating of this response is [[{verdict.overall}]], "
        "and the reasons are as follows.",
        f"{STRENGTH_HEADERS[0]}:",
    ]
    lines += [
        f"{number}. {' '.join(point.text.split())} [[{point.score}]]"
        for number, point in enumerate(verdict.strengths, start=1)
    ]
    lines.append(f"{WEAKNESS_HEADERS[0]}:")
    lines += [
        f"{number}. {' '.join(point.text.split())} [[{point.score}]]"
        for number, point in enumerate(verdict.weaknesses, start=1)
    ]
    return "\n".join(lines)


def render_pairwise_verdict(verdict: PairwiseVerdict) -> str:
    """Renders a pairwise verdict into the pairwise output skeleton."""
    lines = [
        f"I believe [[{MARKER_TEXT[verdict.winner]}]], with the overall score for "
        f"Response 1 being [[{verdict.score_1}]], and the overall score for "
        f"Response 2 being [[{verdict.score_2}]], based on the following reasons:"
    ]
    lines += [
        f"{number}. {' '.join(point.text.split())} "
        f"[[{point.score_1}]] [[{point.score_2}]]"
        for number, point in enumerate(verdict.rationale, start=1)
    ]
    return "\n".join(lines)


def swap_labels(text: str) -> str:
    """Exchanges every `Response 1` / `Response 2` label in `text`."""
    return LABEL.sub(
        lambda match: match.group(1) + ("2" if match.group(2) == "1" else "1"), text
    )


def mirror_pairwise_verdict(verdict: PairwiseVerdict) -> PairwiseVerdict:
    """The verdict a judge would give with the two responses presented reversed."""
    return verdict.copy(
        update={
            "winner": MIRRORED_WINNER[verdict.winner],
            "score_1": verdict.score_2,
            "score_2": verdict.score_1,
            "rationale": [
                PairedPoint(
                    text=swap_labels(point.text),
                    score_1=point.score_2,
                    score_2=point.score_1,
                )
                for point in verdict.rationale
            ],
        }
    )


def swap_pairwise_output(raw: str, rating: RatingSystem = FIVE_TIER) -> str:
    """
    Rewrites a pairwise output as if the two responses had been presented in
    the opposite order.

    The output is parsed, mirrored and rendered back into the pairwise
    skeleton, so the verdict sentence still names Response 1 first. Labels
    are exchanged inside the rationale prose only. Trailing whitespace of
    `raw` is kept, and applying the function twice to a canonical output
    returns it unchanged.

    Raises:
        MissingMarker: If the verdict marker or an overall score is absent.
        AmbiguousVerdict: If different verdict markers are present.
    """
    mirrored = mirror_pairwise_verdict(parse_pairwise_verdict(raw, rating))
    trailing = raw[len(raw.rstrip()) :]
    return render_pairwise_verdict(mirrored) + trailing
