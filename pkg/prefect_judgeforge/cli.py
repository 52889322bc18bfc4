"""The `judgeforge` command line.

Exit status is 0 on success, 2 when some items failed without stopping the
stage, and 1 on any fatal error, which is printed as a single line.
"""
import asyncio
from enum import Enum
from pathlib import Path
from typing import Awaitable, List, Optional

import typer
from pydantic import ValidationError

from prefect_judgeforge import flows
from prefect_judgeforge.config import ForgeConfig, load_config
from prefect_judgeforge.exceptions import JudgeForgeError

app = typer.Typer(
    add_completion=False,
    help="Build, fine-tune data for, and meta-evaluate LLM judges.",
)

EXIT_PARTIAL = 2
EXIT_FATAL = 1


class Mode(str, Enum):
    """Judging modes."""

    single = "single"
    reference_guided = "reference_guided"
    pairwise = "pairwise"


class Format(str, Enum):
    """Report formats."""

    table = "table"
    jsonl = "jsonl"


class Policy(str, Enum):
    """IFD selection policies."""

    threshold_gt_1 = "threshold_gt_1"
    scenario_z = "scenario_z"


ConfigOption = typer.Option(None, "--config", help="JSON run configuration.")
SeedOption = typer.Option(None, "--seed", help="Overrides the configured seed.")
ParallelismOption = typer.Option(
    None, "--parallelism", help="Overrides the configured parallelism."
)
ResumeOption = typer.Option(
    False, "--resume", help="Reuse results already in the output file."
)
FormatOption = typer.Option(Format.table, "--format", help="Report format.")


def _one_line(exc: BaseException) -> str:
    return f"judgeforge: {type(exc).__name__}: {' '.join(str(exc).split())}"


def _run(stage: Awaitable[flows.StageResult]) -> None:
    try:
        result = asyncio.run(stage)
    except (JudgeForgeError, ValidationError, OSError) as exc:
        typer.echo(_one_line(exc), err=True)
        raise typer.Exit(EXIT_FATAL)
    if result.text is not None:
        typer.echo(result.text.rstrip("\n"))
    if result.output:
        typer.echo(f"wrote {result.count} records to {result.output}", err=True)
    if result.failures:
        typer.echo(f"{result.failures} items failed", err=True)
        raise typer.Exit(EXIT_PARTIAL)


def _configured(
    config: Optional[Path], seed: Optional[int], parallelism: Optional[int]
) -> ForgeConfig:
    try:
        return load_config(config, seed=seed, parallelism=parallelism)
    except (ValidationError, OSError, ValueError) as exc:
        typer.echo(_one_line(exc), err=True)
        raise typer.Exit(EXIT_FATAL)


@app.command("gen")
def gen(
    output: Path = typer.Argument(..., help="Instructions JSONL to write."),
    reference: Optional[Path] = typer.Option(
        None, "--reference", help="Reference text questions are grounded on."
    ),
    quiz: Optional[Path] = typer.Option(
        None, "--quiz", help="JSON list of quiz specs for quiz scenarios."
    ),
    scenario: Optional[List[str]] = typer.Option(
        None, "--scenario", help="Scenario id; repeat for several. Default: all."
    ),
    n: int = typer.Option(5, "--n", help="Instructions per scenario."),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
    resume: bool = ResumeOption,
) -> None:
    """Synthesize instructions per scenario."""
    _run(
        flows.generate_flow.fn(
            str(output),
            reference_path=str(reference) if reference else None,
            quiz_path=str(quiz) if quiz else None,
            scenario_ids=scenario or None,
            n=n,
            config=_configured(config, seed, parallelism),
            resume=resume,
        )
    )


@app.command("respond")
def respond(
    instructions: Path = typer.Argument(..., help="Instructions JSONL."),
    output: Path = typer.Argument(..., help="Responses JSONL to write."),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
    resume: bool = ResumeOption,
) -> None:
    """Collect responses from every configured responder model."""
    _run(
        flows.respond_flow.fn(
            str(instructions),
            str(output),
            config=_configured(config, seed, parallelism),
            resume=resume,
        )
    )


@app.command("judge")
def judge(
    instructions: Path = typer.Argument(..., help="Instructions JSONL."),
    responses: Path = typer.Argument(..., help="Responses JSONL."),
    output: Path = typer.Argument(..., help="Judgments JSONL to write."),
    mode: Mode = typer.Option(Mode.single, "--mode", help="Judging mode."),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
    resume: bool = ResumeOption,
) -> None:
    """Judge collected responses."""
    _run(
        flows.judge_flow.fn(
            str(instructions),
            str(responses),
            str(output),
            mode=mode.value,
            config=_configured(config, seed, parallelism),
            resume=resume,
        )
    )


@app.command("build-sft")
def build_sft(
    instructions: Path = typer.Argument(..., help="Instructions JSONL."),
    responses: Path = typer.Argument(..., help="Responses JSONL."),
    judgments: Path = typer.Argument(..., help="Judgments JSONL."),
    output: Path = typer.Argument(..., help="SFT JSONL to write."),
    double: bool = typer.Option(
        True, "--double/--no-double", help="Add order-swapped pairwise copies."
    ),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
) -> None:
    """Export judgments as span-labelled fine-tuning records."""
    _run(
        flows.build_sft_flow.fn(
            str(instructions),
            str(responses),
            str(judgments),
            str(output),
            double=double,
            config=_configured(config, seed, parallelism),
        )
    )


@app.command("balance")
def balance(
    sft: Path = typer.Argument(..., help="SFT JSONL."),
    output: Path = typer.Argument(..., help="Balanced SFT JSONL to write."),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
) -> None:
    """Down-sample over-represented scores and verdicts."""
    _run(
        flows.balance_flow.fn(
            str(sft), str(output), config=_configured(config, seed, parallelism)
        )
    )


@app.command("augment")
def augment(
    sft: Path = typer.Argument(..., help="SFT JSONL."),
    output: Path = typer.Argument(..., help="Augmented SFT JSONL to write."),
    aliases: bool = typer.Option(
        False, "--aliases", help="Generate criterion rephrasings first."
    ),
    catalog_output: Optional[Path] = typer.Option(
        None, "--catalog-output", help="Where to save the catalog with aliases."
    ),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
) -> None:
    """Diversify judge prompts of fine-tuning records."""
    _run(
        flows.augment_flow.fn(
            str(sft),
            str(output),
            generate_aliases=aliases,
            catalog_output=str(catalog_output) if catalog_output else None,
            config=_configured(config, seed, parallelism),
        )
    )


@app.command("select")
def select(
    sft: Path = typer.Argument(..., help="SFT JSONL."),
    output: Path = typer.Argument(..., help="Selected SFT JSONL to write."),
    budget: Optional[int] = typer.Option(None, "--budget", help="Records kept."),
    policy: Optional[Policy] = typer.Option(None, "--policy", help="IFD filter."),
    scores: Optional[Path] = typer.Option(
        None, "--scores", help="Where to save every record's IFD score."
    ),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
) -> None:
    """Keep the hardest records by instruction-following difficulty."""
    _run(
        flows.select_flow.fn(
            str(sft),
            str(output),
            budget=budget,
            policy=policy.value if policy else None,
            scores_path=str(scores) if scores else None,
            config=_configured(config, seed, parallelism),
        )
    )


@app.command("cluster")
def cluster(
    features: Path = typer.Argument(..., help="JSON map of scenario to effects."),
    output: Path = typer.Argument(..., help="Clusters JSON to write."),
    k: Optional[int] = typer.Option(None, "--k", help="Number of clusters."),
    exclude: Optional[List[str]] = typer.Option(
        None, "--exclude", help="Scenario left out; repeat for several."
    ),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
) -> None:
    """Group scenarios by their effect vectors."""
    _run(
        flows.cluster_flow.fn(
            str(features),
            str(output),
            k=k,
            exclude=exclude or None,
            config=_configured(config, seed, parallelism),
        )
    )


@app.command("compose")
def compose(
    sft: Path = typer.Argument(..., help="SFT JSONL."),
    plan: Path = typer.Argument(..., help="Composition plan JSON."),
    output: Path = typer.Argument(..., help="Composed SFT JSONL to write."),
    total: Optional[int] = typer.Option(None, "--total", help="Records to draw."),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
) -> None:
    """Sample fine-tuning records by cluster weights."""
    _run(
        flows.compose_flow.fn(
            str(sft),
            str(plan),
            str(output),
            total=total,
            config=_configured(config, seed, parallelism),
        )
    )


@app.command("bench")
def bench(
    bench_file: Path = typer.Argument(..., help="Benchmark JSONL."),
    judgments: Path = typer.Argument(..., help="Judgments JSONL to write."),
    mode: Optional[Mode] = typer.Option(
        None, "--mode", help="reference_guided grades with reference answers."
    ),
    format: Format = FormatOption,
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
    resume: bool = ResumeOption,
) -> None:
    """Judge a labelled benchmark and print the agreement report."""
    _run(
        flows.bench_flow.fn(
            str(bench_file),
            str(judgments),
            mode=mode.value if mode else None,
            format=format.value,
            config=_configured(config, seed, parallelism),
            resume=resume,
        )
    )


@app.command("report")
def report(
    judgments: Path = typer.Argument(..., help="Judgments JSONL."),
    bench_file: Path = typer.Argument(..., help="Benchmark JSONL."),
    reference: Optional[Path] = typer.Option(
        None, "--reference", help="Reference-guided judgments for RGG and delta."
    ),
    format: Format = FormatOption,
    output: Optional[Path] = typer.Option(
        None, "--output", help="Also write the report here."
    ),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
) -> None:
    """Score existing judgments against a benchmark."""
    _run(
        flows.report_flow.fn(
            str(judgments),
            str(bench_file),
            reference_judgments_path=str(reference) if reference else None,
            format=format.value,
            output_path=str(output) if output else None,
            config=_configured(config, seed, parallelism),
        )
    )


@app.command("classify")
def classify(
    instructions: Path = typer.Argument(..., help="Labelled instructions JSONL."),
    output: Path = typer.Argument(..., help="Classifications JSONL to write."),
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    parallelism: Optional[int] = ParallelismOption,
) -> None:
    """Route instructions to scenarios and report accuracy."""
    _run(
        flows.classify_flow.fn(
            str(instructions),
            str(output),
            config=_configured(config, seed, parallelism),
        )
    )
