"""Prefect flows, one per pipeline stage, reading and writing JSONL artifacts.

Every flow can also run without the Prefect engine through its `.fn`, which is
how the `judgeforge` command line drives them; tasks then run in-process.
"""
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Union

from prefect import flow, get_run_logger
from prefect.context import FlowRunContext
from prefect.exceptions import MissingContextError
from prefect.logging import get_logger
from pydantic import BaseModel
from typing_extensions import Literal

from prefect_judgeforge.augment import augment_custom_prompts, fit_scenario_regressions
from prefect_judgeforge.composition import (
    CompositionPlan,
    cluster_scenarios,
    sample_composition,
)
from prefect_judgeforge.config import ForgeConfig, build_gateway
from prefect_judgeforge.exceptions import ForgeError
from prefect_judgeforge.gateway import ConstantScorer
from prefect_judgeforge.harness import (
    BenchRecord,
    JudgmentRecord,
    ReportFormat,
    bench_tasks,
    build_judge_tasks,
    build_sft_records,
    emit_report,
    evaluate_benchmark,
    run_judgments,
)
from prefect_judgeforge.metrics import attach_reference
from prefect_judgeforge.models import Instruction, JudgeMode, ResponseRecord
from prefect_judgeforge.prompts import QuizSpec, attach_aliases
from prefect_judgeforge.records import (
    read_json,
    read_jsonl,
    write_json,
    write_jsonl,
)
from prefect_judgeforge.selection import (
    fit_record_scorer,
    score_records,
    select_by_ifd,
)
from prefect_judgeforge.sft import SftRecord, balance_by_score, double_pairwise
from prefect_judgeforge.synthesis import (
    classification_accuracy,
    classify_instructions,
    collect_responses,
    generate_criteria_aliases,
    plan_sources,
    synthesize_instructions,
)


class StageResult(BaseModel):
    """What a stage wrote.

    Attributes:
        output: Path of the artifact, if the stage wrote one.
        count: Number of records written.
        failures: Items that failed without stopping the stage.
        text: Rendered output of report-like stages.
    """

    output: Optional[str] = None
    count: int = 0
    failures: int = 0
    text: Optional[str] = None


def _run_task(task_obj, *args, **kwargs):
    """Runs a task through the engine inside a flow run, in-process otherwise."""
    if FlowRunContext.get() is None:
        return task_obj.fn(*args, **kwargs)
    return task_obj(*args, **kwargs)


def _logger() -> Union[logging.Logger, logging.LoggerAdapter]:
    try:
        return get_run_logger()
    except MissingContextError:
        return get_logger("prefect_judgeforge.flows")


@flow(name="judgeforge-generate")
async def generate_flow(
    output_path: str,
    reference_path: Optional[str] = None,
    quiz_path: Optional[str] = None,
    scenario_ids: Optional[List[str]] = None,
    n: int = 5,
    config: Optional[ForgeConfig] = None,
    resume: bool = False,
) -> StageResult:
    """
    Synthesizes `n` instructions per scenario into `output_path`.

    Scenarios listed in the quiz file (a JSON list of quiz specs) use
    role-playing quizzes; the others are questioned on the reference text.
    With `resume`, instructions already in the output count towards `n`.
    """
    config = config or ForgeConfig()
    logger = _logger()
    catalog = config.catalog()
    gateway = build_gateway(config)
    reference_text = (
        Path(reference_path).read_text(encoding="utf-8") if reference_path else None
    )
    quiz_specs = (
        [QuizSpec.parse_obj(item) for item in read_json(quiz_path)] if quiz_path else []
    )
    existing: List[Instruction] = []
    if resume and Path(output_path).exists():
        existing = read_jsonl(output_path, Instruction)
    have = Counter(instruction.scenario for instruction in existing)
    produced = list(existing)
    shortfalls = 0
    plan = plan_sources(catalog, reference_text, quiz_specs, scenario_ids)
    for scenario, source in plan:
        wanted = n - have[scenario.id]
        if wanted <= 0:
            continue
        result = await _run_task(
            synthesize_instructions,
            scenario,
            source,
            wanted,
            gateway,
            config.models.questioner,
            max_batches=config.synthesis_batches,
            seen=[instruction.id for instruction in produced],
        )
        produced.extend(result.instructions)
        shortfalls += int(result.underproduced)
    write_jsonl(output_path, produced)
    logger.info("Wrote %d instructions to %s", len(produced), output_path)
    return StageResult(output=output_path, count=len(produced), failures=shortfalls)


@flow(name="judgeforge-respond")
async def respond_flow(
    instructions_path: str,
    output_path: str,
    config: Optional[ForgeConfig] = None,
    resume: bool = False,
) -> StageResult:
    """Collects one response per instruction and responder model."""
    config = config or ForgeConfig()
    gateway = build_gateway(config)
    instructions = read_jsonl(instructions_path, Instruction)
    models = config.models.responders
    done: Dict[tuple, ResponseRecord] = {}
    if resume and Path(output_path).exists():
        for record in read_jsonl(output_path, ResponseRecord):
            if record.error is None:
                done[(record.instruction_id, record.model)] = record
    pending = [
        instruction
        for instruction in instructions
        if any((instruction.id, model) not in done for model in models)
    ]
    fresh = await _run_task(
        collect_responses,
        pending,
        models,
        gateway,
        parallelism=config.parallelism,
    )
    for record in fresh:
        done.setdefault((record.instruction_id, record.model), record)
    responses = [
        done[(instruction.id, model)]
        for instruction in instructions
        for model in models
    ]
    failures = sum(1 for record in responses if record.error is not None)
    write_jsonl(output_path, responses)
    return StageResult(output=output_path, count=len(responses), failures=failures)


@flow(name="judgeforge-judge")
async def judge_flow(
    instructions_path: str,
    responses_path: str,
    output_path: str,
    mode: JudgeMode = "single",
    config: Optional[ForgeConfig] = None,
    resume: bool = False,
) -> StageResult:
    """Judges collected responses; failed judgments are kept as error records."""
    config = config or ForgeConfig()
    tasks = build_judge_tasks(
        read_jsonl(instructions_path, Instruction),
        read_jsonl(responses_path, ResponseRecord),
        mode,
    )
    judgments = await _run_task(
        run_judgments,
        tasks,
        config.models.judge,
        build_gateway(config),
        config.catalog(),
        parallelism=config.parallelism,
        output_path=output_path,
        resume=resume,
        strength_headers=config.strength_headers,
        weakness_headers=config.weakness_headers,
        language=config.language,
    )
    failures = sum(1 for judgment in judgments if judgment.error is not None)
    return StageResult(output=output_path, count=len(judgments), failures=failures)


@flow(name="judgeforge-build-sft")
async def build_sft_flow(
    instructions_path: str,
    responses_path: str,
    judgments_path: str,
    output_path: str,
    double: bool = True,
    config: Optional[ForgeConfig] = None,
) -> StageResult:
    """
    Turns successful judgments into labelled fine-tuning records.

    With `double`, every pairwise record is followed, after all originals, by
    its order-swapped copy.
    """
    config = config or ForgeConfig()
    instructions = read_jsonl(instructions_path, Instruction)
    responses = read_jsonl(responses_path, ResponseRecord)
    judgments = read_jsonl(judgments_path, JudgmentRecord)
    modes = sorted({judgment.mode for judgment in judgments})
    tasks = [
        judge_task
        for mode in modes
        for judge_task in build_judge_tasks(instructions, responses, mode)
    ]
    records = build_sft_records(judgments, tasks, config.catalog(), config.language)
    if double:
        pairwise = [record for record in records if record.meta.mode == "pairwise"]
        graded = [record for record in records if record.meta.mode != "pairwise"]
        records = graded + double_pairwise(pairwise)
    write_jsonl(output_path, records)
    return StageResult(output=output_path, count=len(records))


@flow(name="judgeforge-balance")
async def balance_flow(
    sft_path: str, output_path: str, config: Optional[ForgeConfig] = None
) -> StageResult:
    """Caps over-represented scores and pairwise verdicts."""
    config = config or ForgeConfig()
    records = balance_by_score(
        read_jsonl(sft_path, SftRecord), config.balance_target, config.seed
    )
    write_jsonl(output_path, records)
    return StageResult(output=output_path, count=len(records))


@flow(name="judgeforge-augment")
async def augment_flow(
    sft_path: str,
    output_path: str,
    generate_aliases: bool = False,
    catalog_output: Optional[str] = None,
    config: Optional[ForgeConfig] = None,
) -> StageResult:
    """
    Diversifies judge prompts with rephrased criteria, fewer criteria and
    other rating systems.

    With `generate_aliases`, criterion rephrasings are first requested for
    every scenario in the records and attached when they pass the similarity
    gate; `catalog_output` receives the extended catalog.
    """
    config = config or ForgeConfig()
    records = read_jsonl(sft_path, SftRecord)
    catalog = config.catalog()
    if generate_aliases:
        gateway = build_gateway(config)
        for scenario_id in sorted({record.meta.scenario for record in records}):
            candidates = await _run_task(
                generate_criteria_aliases,
                catalog,
                scenario_id,
                gateway,
                config.models.questioner,
                parallelism=config.parallelism,
            )
            catalog = attach_aliases(
                catalog, scenario_id, candidates, config.augment.similarity_threshold
            )
        if catalog_output:
            catalog.dump(catalog_output)
    augmented = augment_custom_prompts(
        records,
        config.augment,
        catalog,
        seed=config.seed,
        regressions=fit_scenario_regressions(records, catalog),
    )
    write_jsonl(output_path, augmented)
    return StageResult(output=output_path, count=len(augmented))


@flow(name="judgeforge-select")
async def select_flow(
    sft_path: str,
    output_path: str,
    budget: Optional[int] = None,
    policy: Optional[Literal["threshold_gt_1", "scenario_z"]] = None,
    scores_path: Optional[str] = None,
    config: Optional[ForgeConfig] = None,
) -> StageResult:
    """Keeps the hardest records by instruction-following difficulty."""
    config = config or ForgeConfig()
    records = read_jsonl(sft_path, SftRecord)
    if config.scorer == "ngram":
        scorer = fit_record_scorer(records)
    elif config.scorer == "constant":
        scorer = ConstantScorer()
    else:
        scorer = build_gateway(config)
    scores = await _run_task(
        score_records, records, scorer, parallelism=config.parallelism
    )
    if scores_path:
        write_jsonl(scores_path, scores)
    chosen = select_by_ifd(
        scores,
        budget or config.budget,
        policy or config.selection_policy,
        config.z_threshold,
    )
    by_id = {record.meta.record_id: record for record in records}
    selected = [by_id[record_id] for record_id in chosen]
    write_jsonl(output_path, selected)
    return StageResult(output=output_path, count=len(selected))


@flow(name="judgeforge-cluster")
async def cluster_flow(
    features_path: str,
    output_path: str,
    k: Optional[int] = None,
    exclude: Optional[List[str]] = None,
    config: Optional[ForgeConfig] = None,
) -> StageResult:
    """Clusters scenarios from a JSON map of scenario id to effect vector."""
    config = config or ForgeConfig()
    clusters = cluster_scenarios(
        read_json(features_path), k or config.cluster_count, config.seed, exclude
    )
    write_json(output_path, {str(label): names for label, names in clusters.items()})
    return StageResult(output=output_path, count=len(clusters))


@flow(name="judgeforge-compose")
async def compose_flow(
    sft_path: str,
    plan_path: str,
    output_path: str,
    total: Optional[int] = None,
    config: Optional[ForgeConfig] = None,
) -> StageResult:
    """
    Samples fine-tuning records by cluster weights.

    The plan file is a JSON `CompositionPlan`; `total` overrides its total.
    """
    config = config or ForgeConfig()
    plan_data = read_json(plan_path)
    if total is not None:
        plan_data["total"] = total
    plan = CompositionPlan.parse_obj(plan_data)
    records = read_jsonl(sft_path, SftRecord)
    pools: Dict[str, List[str]] = {}
    for record in records:
        pools.setdefault(record.meta.scenario, []).append(record.meta.record_id)
    by_id = {record.meta.record_id: record for record in records}
    chosen = sample_composition(plan, pools, config.seed)
    write_jsonl(output_path, [by_id[record_id] for record_id in chosen])
    return StageResult(output=output_path, count=len(chosen))


@flow(name="judgeforge-bench")
async def bench_flow(
    bench_path: str,
    judgments_path: str,
    mode: Optional[JudgeMode] = None,
    format: ReportFormat = "table",
    config: Optional[ForgeConfig] = None,
    resume: bool = False,
) -> StageResult:
    """Judges a labelled benchmark and reports agreement with the labels."""
    config = config or ForgeConfig()
    bench = read_jsonl(bench_path, BenchRecord)
    judgments = await _run_task(
        run_judgments,
        bench_tasks(bench, mode),
        config.models.judge,
        build_gateway(config),
        config.catalog(),
        parallelism=config.parallelism,
        output_path=judgments_path,
        resume=resume,
        strength_headers=config.strength_headers,
        weakness_headers=config.weakness_headers,
        language=config.language,
    )
    report = evaluate_benchmark(judgments, bench, config.agr_params)
    failures = sum(1 for judgment in judgments if judgment.error is not None)
    return StageResult(
        output=judgments_path,
        count=len(judgments),
        failures=failures,
        text=emit_report(report, format),
    )


@flow(name="judgeforge-report")
async def report_flow(
    judgments_path: str,
    bench_path: str,
    reference_judgments_path: Optional[str] = None,
    format: ReportFormat = "table",
    output_path: Optional[str] = None,
    config: Optional[ForgeConfig] = None,
) -> StageResult:
    """
    Scores existing judgments against a benchmark.

    Judgments made with reference answers, when given, fill the RGG and Δ
    columns.
    """
    config = config or ForgeConfig()
    bench = read_jsonl(bench_path, BenchRecord)
    report = evaluate_benchmark(
        read_jsonl(judgments_path, JudgmentRecord), bench, config.agr_params
    )
    if reference_judgments_path:
        reference = evaluate_benchmark(
            read_jsonl(reference_judgments_path, JudgmentRecord),
            bench,
            config.agr_params,
        )
        report = attach_reference(report, reference)
    text = emit_report(report, format)
    if output_path:
        Path(output_path).write_text(text, encoding="utf-8")
    return StageResult(output=output_path, count=len(report.rows), text=text)


@flow(name="judgeforge-classify")
async def classify_flow(
    instructions_path: str,
    output_path: str,
    config: Optional[ForgeConfig] = None,
) -> StageResult:
    """
    Routes instructions to scenarios and reports accuracy against the
    scenarios they are labelled with.
    """
    config = config or ForgeConfig()
    instructions = read_jsonl(instructions_path, Instruction)
    if not instructions:
        raise ForgeError("No instruction to classify.")
    classifications = await _run_task(
        classify_instructions,
        instructions,
        config.catalog(),
        build_gateway(config),
        config.models.classifier,
        parallelism=config.parallelism,
    )
    write_jsonl(output_path, classifications)
    accuracy = classification_accuracy(classifications, instructions)
    failures = sum(1 for item in classifications if item.error is not None)
    return StageResult(
        output=output_path,
        count=len(classifications),
        failures=failures,
        text=f"accuracy {accuracy:.3f} over {len(classifications)} instructions",
    )
