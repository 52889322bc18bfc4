"""Tasks for synthesizing instructions, collecting responses, classifying
instructions and generating criterion aliases through the gateway."""
import hashlib
import json
import re
from typing import Dict, List, Optional, Sequence, Tuple, Union

from prefect import task
from prefect.logging import get_logger
from prefect.utilities.asyncutils import run_sync_in_worker_thread
from pydantic import BaseModel, Field
from typing_extensions import Literal

from prefect_judgeforge.catalog import ScenarioCatalog, load_seed_instructions
from prefect_judgeforge.exceptions import (
    ForgeError,
    JudgeForgeError,
    ParseFailure,
    UnknownScenario,
)
from prefect_judgeforge.gateway import ChatRequest, LlmGateway, map_bounded
from prefect_judgeforge.models import (
    CriterionAlias,
    Instruction,
    ResponseRecord,
    Scenario,
)
from prefect_judgeforge.prompts import (
    QUIZ_FAMILIES,
    QuizSpec,
    render_classification_prompt,
    render_questioning_prompt,
    render_quiz_prompt,
    render_rephrase_prompt,
)
from prefect_judgeforge.verdicts import parse_scenario_label

logger = get_logger("prefect_judgeforge.synthesis")

QA_BLOCK = re.compile(
    r"QUESTION:\s*(?P<question>.*?)\s*\n\s*ANSWER:\s*(?P<answer>.*?)\s*\n"
    r"\s*LEVEL:\s*(?P<level>.*?)\s*\n\s*\[END OF QA PAIR\]",
    re.DOTALL,
)
REFUSAL_PREFIX = "sorry, this article does not contain enough information"
SYNTHESIS_TEMPERATURE = 0.7


class ReferenceSource(BaseModel):
    """Reference-based questioning: questions grounded on an article."""

    kind: Literal["reference"] = "reference"
    text: str
    seeds: Optional[List[str]] = None
    batch: int = 5


class QuizSource(BaseModel):
    """Role-playing quiz generation for math, programming or reading scenarios."""

    kind: Literal["quiz"] = "quiz"
    spec: QuizSpec


InstructionSource = Union[ReferenceSource, QuizSource]


class SynthesisResult(BaseModel):
    """Instructions produced for one source.

    Attributes:
        instructions: Deduplicated instructions, in generation order.
        requested: How many instructions were asked for.
        underproduced: True when fewer than `requested` were produced.
    """

    instructions: List[Instruction] = Field(default_factory=list)
    requested: int
    underproduced: bool = False


def instruction_id(scenario_id: str, text: str) -> str:
    """Content-addressed instruction id."""
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
    return f"{scenario_id}-{digest}"


def is_refusal(output: str) -> bool:
    return output.strip().lower().startswith(REFUSAL_PREFIX)


def parse_qa_blocks(output: str) -> List[Dict[str, str]]:
    """
    Extracts QUESTION/ANSWER/LEVEL blocks.

    Raises:
        ParseFailure: If the output is neither a refusal nor holds any block.
    """
    if is_refusal(output):
        return []
    blocks = [
        {key: " ".join(value.split()) for key, value in match.groupdict().items()}
        for match in QA_BLOCK.finditer(output)
    ]
    blocks = [block for block in blocks if block["question"]]
    if not blocks:
        raise ParseFailure("Output holds no QUESTION/ANSWER/LEVEL block.")
    return blocks


def parse_jsonl_items(
    output: str, required: Sequence[str] = ("question",)
) -> List[dict]:
    """
    Extracts one JSON object per line, skipping lines that are not objects
    or lack a required non-empty field.

    Raises:
        ParseFailure: If no line yields a usable object.
    """
    items = []
    for line in output.splitlines():
        line = line.strip().rstrip(",")
        if not line.startswith("{"):
            continue
        try:
            item = json.loads(line)
        except json.JSONDecodeError:
            logger.warning("Skipping malformed line %r", line[:80])
            continue
        if not isinstance(item, dict):
            continue
        if all(str(item.get(key) or "").strip() for key in required):
            items.append(item)
    if not items:
        raise ParseFailure("Output holds no usable JSON line.")
    return items


def _reference_instructions(
    scenario: Scenario, source: ReferenceSource, output: str
) -> List[Instruction]:
    return [
        Instruction(
            id=instruction_id(scenario.id, block["question"]),
            scenario=scenario.id,
            text=block["question"],
            source="reference_questioning",
            reference_answer=block["answer"] or None,
            meta={"level": block["level"]},
        )
        for block in parse_qa_blocks(output)
    ]


def _quiz_instructions(
    scenario: Scenario, source: QuizSource, output: str
) -> List[Instruction]:
    instructions = []
    for item in parse_jsonl_items(output):
        question = " ".join(str(item["question"]).split())
        meta = {
            key: value
            for key, value in item.items()
            if key not in ("question", "answer")
        }
        answer = str(item.get("answer") or "").strip()
        instructions.append(
            Instruction(
                id=instruction_id(scenario.id, question),
                scenario=scenario.id,
                text=question,
                source="role_play_quiz",
                reference_answer=answer or None,
                meta=meta,
            )
        )
    return instructions


def _render_source(
    scenario: Scenario, source: InstructionSource, wanted: int
) -> str:
    if isinstance(source, QuizSource):
        spec = source.spec.copy(update={"count": min(source.spec.count, wanted)})
        return render_quiz_prompt(spec).text
    seeds = source.seeds or load_seed_instructions().get(scenario.id, [])
    batch = min(source.batch, wanted)
    return render_questioning_prompt(scenario, source.text, seeds, batch).text


@task
async def synthesize_instructions(
    scenario: Scenario,
    source: InstructionSource,
    n: int,
    gateway: LlmGateway,
    model: str,
    max_batches: int = 3,
    temperature: float = SYNTHESIS_TEMPERATURE,
    seen: Optional[Sequence[str]] = None,
) -> SynthesisResult:
    """
    Generates up to `n` instructions for a scenario.

    Batches are requested until `n` unique instructions exist, `max_batches`
    is reached, or a batch adds nothing new. Each batch is a distinct
    request, so a batch retried after an unparseable output reaches the model
    again instead of the cache. Instructions are deduplicated by exact text
    hash, also against the `seen` ids.

    Args:
        scenario: Scenario the instructions must belong to.
        source: A `ReferenceSource` (article-based questioning) or a
            `QuizSource` (role-playing quiz for math, programming or reading).
        n: Number of instructions wanted.
        gateway: `LlmGateway` to call.
        model: Questioner model identifier.
        max_batches: Upper bound on gateway calls.
        temperature: Sampling temperature of the questioner.
        seen: Instruction ids produced earlier, never repeated.

    Returns:
        A `SynthesisResult`; `underproduced` is set when fewer than `n`
        instructions came back, including when the model refused.

    Raises:
        ForgeError: If a quiz source is used outside its scenario.
        ParseFailure: If no batch output matched the expected skeleton.

    Example:
        ```python
        from prefect import flow
        from prefect_judgeforge.catalog import ScenarioCatalog
        from prefect_judgeforge.synthesis import ReferenceSource
        from prefect_judgeforge.tasks import synthesize_instructions

        @flow
        def questions(gateway):
            scenario = ScenarioCatalog.load().get("open_qa")
            source = ReferenceSource(text="An article about urban gardening ...")
            return synthesize_instructions(scenario, source, 5, gateway, "questioner")
        ```
    """
    if n < 1:
        raise ForgeError("n must be positive.")
    if isinstance(source, QuizSource):
        if source.spec.scenario != scenario.id or scenario.id not in QUIZ_FAMILIES:
            raise ForgeError(
                f"Quiz sources serve {sorted(QUIZ_FAMILIES)}; "
                f"got {source.spec.scenario!r} for scenario {scenario.id!r}."
            )
        parse = _quiz_instructions
    else:
        parse = _reference_instructions

    known = set(seen or [])
    produced: List[Instruction] = []
    failures = 0
    refused = False
    for attempt in range(max_batches):
        wanted = n - len(produced)
        if wanted <= 0:
            break
        prompt = _render_source(scenario, source, wanted)
        request = ChatRequest.from_prompt(
            model, prompt, temperature=temperature, attempt=attempt
        )
        output = await run_sync_in_worker_thread(gateway.chat_complete, request)
        if is_refusal(output):
            logger.warning("Questioner declined the reference text for %s", scenario.id)
            refused = True
            break
        try:
            batch = parse(scenario, source, output)
        except ParseFailure:
            failures += 1
            logger.warning("Unparseable synthesis output for %s", scenario.id)
            continue
        fresh = [item for item in batch if item.id not in known]
        for item in fresh:
            known.add(item.id)
        produced.extend(fresh[:wanted])
        if not fresh:
            break

    if not produced and failures and not refused:
        raise ParseFailure(
            f"No synthesis output for {scenario.id!r} matched the expected skeleton."
        )
    underproduced = len(produced) < n
    if underproduced:
        logger.warning(
            "Produced %d of %d instructions for %s", len(produced), n, scenario.id
        )
    return SynthesisResult(
        instructions=produced, requested=n, underproduced=underproduced
    )


@task
async def collect_responses(
    instructions: Sequence[Instruction],
    models: Sequence[str],
    gateway: LlmGateway,
    parallelism: int = 4,
    temperature: float = SYNTHESIS_TEMPERATURE,
) -> List[ResponseRecord]:
    """
    Gets one response per (instruction, model) pair.

    Failed calls become records carrying an `error` tag instead of text.

    Args:
        instructions: Instructions to answer.
        models: Responder model identifiers.
        gateway: `LlmGateway` to call.
        parallelism: Requests dispatched at once.
        temperature: Sampling temperature of the responders.

    Returns:
        Records ordered by instruction, then model.

    Raises:
        ForgeError: If `models` is empty.
    """
    if not models:
        raise ForgeError("At least one responder model is required.")
    pairs = [(instruction, model) for instruction in instructions for model in models]

    def respond(pair: Tuple[Instruction, str]) -> ResponseRecord:
        instruction, model = pair
        request = ChatRequest.from_prompt(
            model, instruction.text, temperature=temperature
        )
        try:
            text = gateway.chat_complete(request)
        except JudgeForgeError as exc:
            logger.warning("No response from %s for %s: %s", model, instruction.id, exc)
            return ResponseRecord(
                instruction_id=instruction.id,
                model=model,
                error=f"{type(exc).__name__}: {exc}",
            )
        return ResponseRecord(instruction_id=instruction.id, model=model, text=text)

    return await map_bounded(respond, pairs, parallelism)


class Classification(BaseModel):
    """Scenario assigned to one instruction."""

    instruction_id: str
    scenario: Optional[str] = None
    raw_output: str = ""
    error: Optional[str] = None


@task
async def classify_instructions(
    instructions: Sequence[Instruction],
    catalog: ScenarioCatalog,
    gateway: LlmGateway,
    model: str,
    parallelism: int = 4,
) -> List[Classification]:
    """
    Routes instructions to scenarios with the classification prompt.

    Unresolvable classifier outputs become error-tagged entries.
    """

    def classify(instruction: Instruction) -> Classification:
        prompt = render_classification_prompt(instruction.text, catalog).text
        try:
            raw = gateway.chat_complete(ChatRequest.from_prompt(model, prompt))
        except JudgeForgeError as exc:
            return Classification(instruction_id=instruction.id, error=str(exc))
        try:
            scenario = parse_scenario_label(raw, catalog)
        except UnknownScenario as exc:
            logger.warning("Unresolved scenario label for %s", instruction.id)
            return Classification(
                instruction_id=instruction.id, raw_output=raw, error=str(exc)
            )
        return Classification(
            instruction_id=instruction.id, scenario=scenario, raw_output=raw
        )

    return await map_bounded(classify, list(instructions), parallelism)


def classification_accuracy(
    classifications: Sequence[Classification], instructions: Sequence[Instruction]
) -> float:
    """Share of instructions whose predicted scenario equals their labelled one."""
    labels = {instruction.id: instruction.scenario for instruction in instructions}
    if not classifications:
        return 0.0
    hits = sum(
        1
        for item in classifications
        if item.scenario == labels.get(item.instruction_id)
    )
    return hits / len(classifications)


@task
async def generate_criteria_aliases(
    catalog: ScenarioCatalog,
    scenario_id: str,
    gateway: LlmGateway,
    model: str,
    count: int = 3,
    parallelism: int = 4,
) -> Dict[str, List[CriterionAlias]]:
    """
    Asks the gateway for alternative wordings of every criterion of a scenario.

    Candidates are returned ungated; `prompts.attach_aliases` applies the
    similarity gate when attaching them to the catalog. Criteria whose output
    cannot be parsed get no candidates.
    """
    scenario = catalog.get(scenario_id)

    def rephrase(criterion) -> List[CriterionAlias]:
        prompt = render_rephrase_prompt(scenario, criterion, count).text
        output = gateway.chat_complete(
            ChatRequest.from_prompt(model, prompt, temperature=SYNTHESIS_TEMPERATURE)
        )
        try:
            items = parse_jsonl_items(output, required=("name", "description"))
        except ParseFailure:
            logger.warning("No usable alias for %s / %s", scenario_id, criterion.name)
            return []
        return [
            CriterionAlias(
                name=str(item["name"]).strip(),
                description=str(item["description"]).strip(),
            )
            for item in items
        ]

    candidates = await map_bounded(rephrase, scenario.criteria, parallelism)
    return {
        criterion.name: aliases
        for criterion, aliases in zip(scenario.criteria, candidates)
    }


def plan_sources(
    catalog: ScenarioCatalog,
    reference_text: Optional[str] = None,
    quiz_specs: Optional[Sequence[QuizSpec]] = None,
    scenario_ids: Optional[Sequence[str]] = None,
) -> List[Tuple[Scenario, InstructionSource]]:
    """
    Pairs each requested scenario with the source its instructions come from.

    A quiz spec wins over the reference text for its scenario. Scenarios
    with neither are skipped.

    Raises:
        UnknownScenario: If a requested scenario is not in the catalog.
        ForgeError: If no scenario ends up with a source.
    """
    quizzes = {spec.scenario: spec for spec in quiz_specs or []}
    plan: List[Tuple[Scenario, InstructionSource]] = []
    for scenario_id in scenario_ids or catalog.ids:
        scenario = catalog.get(scenario_id)
        if scenario.id in quizzes:
            plan.append((scenario, QuizSource(spec=quizzes[scenario.id])))
        elif reference_text and reference_text.strip():
            plan.append((scenario, ReferenceSource(text=reference_text)))
        else:
            logger.warning("No instruction source for %s, skipping it", scenario.id)
    if not plan:
        raise ForgeError("Neither a reference text nor a quiz spec was supplied.")
    return plan
