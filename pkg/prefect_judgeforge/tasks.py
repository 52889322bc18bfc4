# noqa
from prefect_judgeforge.gateway import chat_complete, score_tokens
from prefect_judgeforge.harness import run_judgments
from prefect_judgeforge.selection import score_records
from prefect_judgeforge.synthesis import (
    classify_instructions,
    collect_responses,
    generate_criteria_aliases,
    synthesize_instructions,
)

__all__ = [
    "chat_complete",
    "score_tokens",
    "run_judgments",
    "score_records",
    "classify_instructions",
    "collect_responses",
    "generate_criteria_aliases",
    "synthesize_instructions",
]
