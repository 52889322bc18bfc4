"""Benchmark harness: judge task files, score them against human labels and
emit per-scenario reports."""
import json
import threading
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from prefect import task
from prefect.logging import get_logger
from pydantic import BaseModel, root_validator
from tabulate import tabulate
from typing_extensions import Literal

from prefect_judgeforge.catalog import ScenarioCatalog
from prefect_judgeforge.exceptions import (
    HarnessError,
    IdMismatch,
    JudgeForgeError,
    UnsupportedFormat,
    VerdictError,
)
from prefect_judgeforge.gateway import ChatRequest, LlmGateway, map_bounded
from prefect_judgeforge.metrics import (
    OVERALL,
    AgrParams,
    MetricReport,
    MetricRow,
    ScoredPair,
    aggregate_normalized,
    build_report,
    random_baseline,
)
from prefect_judgeforge.models import (
    FIVE_TIER,
    GradedVerdict,
    Instruction,
    JudgeMode,
    JudgeTask,
    PairwiseVerdict,
    RatingKind,
    RatingSystem,
    ResponseRecord,
)
from prefect_judgeforge.prompts import DEFAULT_LANGUAGE, render_judge_prompt
from prefect_judgeforge.records import (
    PARTIAL_SUFFIX,
    append_jsonl,
    read_jsonl,
    write_jsonl,
)
from prefect_judgeforge.sft import SftRecord, make_sft_record
from prefect_judgeforge.verdicts import (
    STRENGTH_HEADERS,
    WEAKNESS_HEADERS,
    parse_graded_verdict,
    parse_pairwise_verdict,
)

logger = get_logger("prefect_judgeforge.harness")

ReportFormat = Literal["table", "jsonl"]
PairwiseLabel = Union[int, Literal["tie"]]

PAIRWISE_CODES = {"response_1": 1, "response_2": 2, "tie": 3}
LABEL_CODES = {1: 1, 2: 2, "tie": 3}
PAIRWISE_ACCURACY = AgrParams(p=1, q=0)
TABLE_HEADERS = ["Scenario", "#Tests", "SAG", "z-val", "avg. y", "RGG", "Δ"]


class BenchRecord(BaseModel):
    """A human-labelled benchmark item.

    Graded items carry one response and an integer score. Pairwise items
    carry a second response and a label among 1, 2 and `tie`.

    Attributes:
        instruction_id: Identifier of the instruction.
        scenario: Scenario id of the instruction.
        instruction: Instruction text.
        response: The (first) response.
        reference: Optional reference answer for reference-guided grading.
        label: Human score, or pairwise preference.
        model: Model that wrote `response`.
        response_2: Second response of pairwise items.
        model_2: Model that wrote `response_2`.
        rating: Rating system of `label` and of the judge's scores.
    """

    instruction_id: str
    scenario: str
    instruction: str
    response: str
    reference: Optional[str] = None
    label: PairwiseLabel
    model: Optional[str] = None
    response_2: Optional[str] = None
    model_2: Optional[str] = None
    rating: RatingKind = "five_tier"

    @root_validator(skip_on_failure=True)
    def _label_fits(cls, values):
        label = values["label"]
        if values["response_2"] is not None:
            if label not in LABEL_CODES:
                raise ValueError(f"Pairwise label must be 1, 2 or tie, got {label!r}.")
        elif label == "tie" or not RatingSystem.of(values["rating"]).contains(label):
            raise ValueError(f"Label {label!r} outside {values['rating']}.")
        return values

    @property
    def is_pairwise(self) -> bool:
        return self.response_2 is not None

    @property
    def models(self) -> Tuple[str, ...]:
        if self.is_pairwise:
            return (self.model or "model_1", self.model_2 or "model_2")
        return (self.model or "bench",)


class JudgmentRecord(BaseModel):
    """The judge's output for one task, parsed, or the error that replaced it.

    Attributes:
        instruction_id: Instruction the judged response(s) answer.
        model: Responder of single and reference-guided tasks.
        models: Both responders of pairwise tasks, in presentation order.
        mode: Judging mode.
        raw_output: The judge's text; empty when the call itself failed.
        verdict: Parsed verdict, without its raw text.
        error: Error tag when no verdict could be produced.
    """

    instruction_id: str
    model: Optional[str] = None
    models: Optional[List[str]] = None
    mode: JudgeMode
    raw_output: str = ""
    verdict: Optional[Union[GradedVerdict, PairwiseVerdict]] = None
    error: Optional[str] = None

    @root_validator(skip_on_failure=True)
    def _verdict_xor_error(cls, values):
        if (values["verdict"] is None) == (values["error"] is None):
            raise ValueError("A judgment carries either a verdict or an error.")
        return values

    @property
    def responders(self) -> Tuple[str, ...]:
        return tuple(self.models) if self.models else (self.model or "",)

    @property
    def key(self) -> str:
        """Same identifier as the `JudgeTask.key` the record was produced from."""
        return "|".join([self.instruction_id, "+".join(self.responders), self.mode])

    @classmethod
    def for_task(cls, judge_task: JudgeTask, **fields) -> "JudgmentRecord":
        responders = judge_task.response_models
        if judge_task.mode == "pairwise":
            return cls(
                instruction_id=judge_task.instruction.id,
                models=responders,
                mode=judge_task.mode,
                **fields,
            )
        return cls(
            instruction_id=judge_task.instruction.id,
            model=responders[0],
            mode=judge_task.mode,
            **fields,
        )


def bench_tasks(
    bench: Sequence[BenchRecord], mode: Optional[JudgeMode] = None
) -> List[JudgeTask]:
    """
    Judge tasks for benchmark items.

    Pairwise items always become pairwise tasks. Graded items become
    `reference_guided` tasks when `mode` asks for it and they carry a
    reference, `single` tasks otherwise.
    """
    tasks = []
    for record in bench:
        instruction = Instruction(
            id=record.instruction_id,
            scenario=record.scenario,
            text=record.instruction,
            source="benchmark",
            reference=record.reference,
        )
        texts = [record.response] + ([record.response_2] if record.is_pairwise else [])
        responses = [
            ResponseRecord(instruction_id=record.instruction_id, model=model, text=text)
            for model, text in zip(record.models, texts)
        ]
        if record.is_pairwise:
            judge_mode = "pairwise"
        elif mode == "reference_guided" and record.reference:
            judge_mode = "reference_guided"
        else:
            judge_mode = "single"
        tasks.append(
            JudgeTask(
                mode=judge_mode,
                instruction=instruction,
                responses=responses,
                rating=RatingSystem.of(record.rating),
            )
        )
    return tasks


def parse_task_output(
    raw: str,
    judge_task: JudgeTask,
    strength_headers: Sequence[str] = STRENGTH_HEADERS,
    weakness_headers: Sequence[str] = WEAKNESS_HEADERS,
) -> Union[GradedVerdict, PairwiseVerdict]:
    """Parses a judge output with the parser of the task's mode."""
    if judge_task.mode == "pairwise":
        return parse_pairwise_verdict(raw, judge_task.rating)
    return parse_graded_verdict(
        raw, judge_task.rating, strength_headers, weakness_headers
    )


def _partial_path(output_path: Path) -> Path:
    return output_path.with_name(output_path.name + PARTIAL_SUFFIX)


def _completed(output_path: Optional[Path]) -> Dict[str, JudgmentRecord]:
    """Successful judgments already on disk, from a final or an interrupted run."""
    done: Dict[str, JudgmentRecord] = {}
    if output_path is None:
        return done
    for path in (output_path, _partial_path(output_path)):
        if path.exists():
            for record in read_jsonl(path, JudgmentRecord):
                if record.verdict is not None:
                    done.setdefault(record.key, record)
    return done


@task
async def run_judgments(
    tasks: Sequence[JudgeTask],
    judge_model: str,
    gateway: LlmGateway,
    catalog: ScenarioCatalog,
    parallelism: int = 4,
    output_path: Optional[Union[str, Path]] = None,
    resume: bool = False,
    strength_headers: Sequence[str] = STRENGTH_HEADERS,
    weakness_headers: Sequence[str] = WEAKNESS_HEADERS,
    language: str = DEFAULT_LANGUAGE,
) -> List[JudgmentRecord]:
    """
    Judges every task and parses the outputs.

    Transport and parse failures become error-tagged records; nothing is
    raised per task. Tasks sharing a key are judged once. While running,
    finished records are appended to `<output>.partial`; on completion the
    output file is written atomically in task order and the partial file is
    removed. With `resume`, successful judgments already in the output (or
    partial) file are reused without calling the gateway, and error records
    are retried.

    Args:
        tasks: Tasks to judge.
        judge_model: Model identifier of the judge.
        gateway: `LlmGateway` to call.
        catalog: Catalog the task scenarios resolve in.
        parallelism: Tasks judged at once.
        output_path: JSONL file receiving the records.
        resume: Reuse judgments present in `output_path`.
        strength_headers: Accepted spellings of the strengths header.
        weakness_headers: Accepted spellings of the weaknesses header.
        language: Prompt template variant.

    Returns:
        One record per distinct task key, in task order.

    Example:
        ```python
        from prefect import flow
        from prefect_judgeforge.catalog import ScenarioCatalog
        from prefect_judgeforge.config import build_gateway, load_config
        from prefect_judgeforge.tasks import run_judgments

        @flow
        def judge(tasks):
            config = load_config()
            return run_judgments(
                tasks, "judge", build_gateway(config), ScenarioCatalog.load()
            )
        ```
    """
    unique: Dict[str, JudgeTask] = {}
    for judge_task in tasks:
        unique.setdefault(judge_task.key, judge_task)
    target = Path(output_path) if output_path else None
    done = _completed(target) if resume else {}
    if target is not None:
        target.parent.mkdir(parents=True, exist_ok=True)
        partial = _partial_path(target)
        if resume and done:
            write_jsonl(partial, done.values())
        elif partial.exists():
            partial.unlink()
    pending = [judge_task for key, judge_task in unique.items() if key not in done]
    logger.info("Judging %d tasks, %d reused", len(pending), len(unique) - len(pending))
    lock = threading.Lock()

    def judge(judge_task: JudgeTask) -> JudgmentRecord:
        record = _judge_one(
            judge_task,
            judge_model,
            gateway,
            catalog,
            strength_headers,
            weakness_headers,
            language,
        )
        if target is not None:
            with lock:
                append_jsonl(_partial_path(target), [record])
        return record

    fresh = await map_bounded(judge, pending, parallelism)
    results = dict(done)
    results.update((record.key, record) for record in fresh)
    ordered = [results[key] for key in unique]
    failures = sum(1 for record in ordered if record.error is not None)
    if failures:
        logger.warning("%d of %d judgments failed", failures, len(ordered))
    if target is not None:
        write_jsonl(target, ordered)
        _partial_path(target).unlink(missing_ok=True)
    return ordered


def _judge_one(
    judge_task: JudgeTask,
    judge_model: str,
    gateway: LlmGateway,
    catalog: ScenarioCatalog,
    strength_headers: Sequence[str],
    weakness_headers: Sequence[str],
    language: str,
) -> JudgmentRecord:
    missing = [r.model for r in judge_task.responses if r.error is not None]
    if missing:
        return JudgmentRecord.for_task(
            judge_task, error=f"ResponseUnavailable: no response from {missing}"
        )
    try:
        prompt = render_judge_prompt(judge_task, catalog, language).text
        raw = gateway.chat_complete(ChatRequest.from_prompt(judge_model, prompt))
    except JudgeForgeError as exc:
        logger.warning("Judging %s failed: %s", judge_task.key, exc)
        return JudgmentRecord.for_task(judge_task, error=f"{type(exc).__name__}: {exc}")
    try:
        verdict = parse_task_output(
            raw, judge_task, strength_headers, weakness_headers
        )
    except VerdictError as exc:
        logger.warning("Unparseable verdict for %s: %s", judge_task.key, exc)
        return JudgmentRecord.for_task(
            judge_task, raw_output=raw, error=f"{type(exc).__name__}: {exc}"
        )
    return JudgmentRecord.for_task(
        judge_task, raw_output=raw, verdict=verdict.copy(update={"raw": ""})
    )


def _bench_index(
    bench: Sequence[BenchRecord],
) -> Dict[Tuple[str, Tuple[str, ...]], BenchRecord]:
    return {(record.instruction_id, record.models): record for record in bench}


def evaluate_benchmark(
    judgments: Sequence[JudgmentRecord],
    bench: Sequence[BenchRecord],
    agr_params: Sequence[AgrParams],
) -> MetricReport:
    """
    Scores judgments against the benchmark's human labels.

    Graded judgments pair their overall score with the label; the report
    carries MAE, every requested Agr, the average label, z-values and the
    random-baseline-normalized aggregate. Pairwise judgments are scored by
    exact-match accuracy over the labels 1, 2 and `tie`. Error-tagged
    judgments are left out and reported through `coverage`.

    Args:
        judgments: Judge outputs, all graded or all pairwise.
        bench: Labelled benchmark items.
        agr_params: Agreement metrics; the first is primary.

    Raises:
        IdMismatch: If a judgment resolves to no benchmark item.
        HarnessError: If graded and pairwise judgments are mixed.
        EmptyInput: If no judgment produced a verdict.
    """
    index = _bench_index(bench)
    pairs = []
    modes = set()
    for judgment in judgments:
        record = index.get((judgment.instruction_id, judgment.responders))
        if record is None:
            raise IdMismatch(f"Judgment {judgment.key!r} matches no benchmark item.")
        modes.add(judgment.mode == "pairwise")
        if judgment.verdict is None:
            continue
        if isinstance(judgment.verdict, PairwiseVerdict):
            predicted = PAIRWISE_CODES[judgment.verdict.winner]
            labeled = LABEL_CODES[record.label]
        else:
            predicted, labeled = judgment.verdict.overall, record.label
        pairs.append(
            ScoredPair(predicted=predicted, labeled=labeled, scenario=record.scenario)
        )
    if len(modes) > 1:
        raise HarnessError("Cannot score graded and pairwise judgments together.")
    coverage = len(pairs) / len(judgments) if judgments else 0.0
    logger.info(
        "Scoring %d of %d judgments (coverage %.3f)",
        len(pairs),
        len(judgments),
        coverage,
    )

    if modes == {True}:
        return build_report(
            pairs, [PAIRWISE_ACCURACY], graded=False, coverage=coverage
        )
    report = build_report(pairs, list(agr_params), coverage=coverage)
    rating = RatingSystem.of(bench[0].rating) if bench else RatingSystem()
    metrics = [("mae", report.overall.mae)] + [
        (params, report.overall.agr[params.key]) for params in agr_params
    ]
    report.aggregated = aggregate_normalized(
        metrics, [random_baseline(metric, rating) for metric, _ in metrics]
    )
    return report


def _table_row(row: MetricRow, primary: str) -> List[Optional[Union[str, int, float]]]:
    return [
        row.scenario,
        row.count,
        row.agr.get(primary),
        row.z_value,
        row.avg_label,
        row.rgg,
        row.delta_reference,
    ]


def emit_report(report: MetricReport, format: ReportFormat = "table") -> str:
    """
    Renders a report.

    `table` lays rows out as Scenario, #Tests, SAG, z-val, avg. y, RGG and Δ,
    the `All` row first, with three decimals and `-` for missing values.
    `jsonl` writes a header line followed by the overall row and one line per
    scenario; `parse_report` reads it back.

    Raises:
        UnsupportedFormat: For any other format.
    """
    if format == "table":
        rows = [_table_row(report.overall, report.primary)]
        rows += [_table_row(row, report.primary) for row in report.rows]
        return tabulate(
            rows,
            headers=TABLE_HEADERS,
            floatfmt=".3f",
            missingval="-",
            tablefmt="github",
        )
    if format == "jsonl":
        header = {
            "kind": "report",
            "primary": report.primary,
            "aggregated": report.aggregated,
            "coverage": report.coverage,
        }
        lines = [json.dumps(header, ensure_ascii=False)]
        for row in [report.overall] + report.rows:
            lines.append(json.dumps({"kind": "row", **row.dict()}, ensure_ascii=False))
        return "\n".join(lines) + "\n"
    raise UnsupportedFormat(f"Unsupported report format {format!r}.")


def parse_report(text: str) -> MetricReport:
    """
    Reads a report written by `emit_report(report, "jsonl")`.

    Raises:
        HarnessError: If the text lacks the header or the overall row.
    """
    lines = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not lines or lines[0].get("kind") != "report":
        raise HarnessError("Report text has no header line.")
    header, rows = lines[0], [MetricRow.parse_obj(line) for line in lines[1:]]
    if not rows or rows[0].scenario != OVERALL:
        raise HarnessError("Report text has no overall row.")
    return MetricReport(
        rows=rows[1:],
        overall=rows[0],
        primary=header["primary"],
        aggregated=header["aggregated"],
        coverage=header["coverage"],
    )


def build_judge_tasks(
    instructions: Sequence[Instruction],
    responses: Sequence[ResponseRecord],
    mode: JudgeMode = "single",
    rating: RatingSystem = FIVE_TIER,
) -> List[JudgeTask]:
    """
    Judge tasks for collected responses.

    `single` and `reference_guided` make one task per response; instructions
    without a reference answer fall back to `single`. `pairwise` makes one
    task per pair of responses to the same instruction, in response order.

    Raises:
        IdMismatch: If a response answers an unknown instruction.
    """
    by_id = {instruction.id: instruction for instruction in instructions}
    grouped: Dict[str, List[ResponseRecord]] = {}
    for response in responses:
        if response.instruction_id not in by_id:
            raise IdMismatch(
                f"Response of {response.model} answers unknown instruction "
                f"{response.instruction_id!r}."
            )
        grouped.setdefault(response.instruction_id, []).append(response)

    tasks = []
    for instruction in instructions:
        answers = grouped.get(instruction.id, [])
        task_mode = mode
        if mode == "pairwise":
            groups = [list(pair) for pair in combinations(answers, 2)]
        else:
            groups = [[answer] for answer in answers]
            if mode == "reference_guided" and not instruction.reference_answer:
                logger.info("No reference for %s, grading it alone", instruction.id)
                task_mode = "single"
        tasks.extend(
            JudgeTask(
                mode=task_mode, instruction=instruction, responses=group, rating=rating
            )
            for group in groups
        )
    return tasks


def build_sft_records(
    judgments: Sequence[JudgmentRecord],
    tasks: Sequence[JudgeTask],
    catalog: ScenarioCatalog,
    language: str = DEFAULT_LANGUAGE,
) -> List[SftRecord]:
    """
    Fine-tuning records from successful judgments.

    The prompt is re-rendered from the judgment's task and the raw judge
    output becomes the target; the task is kept in the record metadata.

    Raises:
        IdMismatch: If a judgment matches none of the tasks.
    """
    by_key = {judge_task.key: judge_task for judge_task in tasks}
    records = []
    for judgment in judgments:
        if judgment.verdict is None:
            continue
        judge_task = by_key.get(judgment.key)
        if judge_task is None:
            raise IdMismatch(f"Judgment {judgment.key!r} matches no judge task.")
        prompt = render_judge_prompt(judge_task, catalog, language).text
        records.append(make_sft_record(prompt, judgment.raw_output, judge_task))
    return records
