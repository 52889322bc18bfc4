"""Run configuration: one JSON file read into `ForgeConfig`."""
from pathlib import Path
from typing import Dict, List, Optional, Union

from prefect.logging import get_logger
from pydantic import BaseModel, Field, validator
from typing_extensions import Literal

from prefect_judgeforge.augment import AugmentOptions
from prefect_judgeforge.catalog import ScenarioCatalog
from prefect_judgeforge.credentials import JudgeCredentials
from prefect_judgeforge.gateway import (
    HttpChatProvider,
    LlmGateway,
    MockChatProvider,
    RetryPolicy,
    TokenScorer,
)
from prefect_judgeforge.metrics import AgrParams
from prefect_judgeforge.mock import SimulatedModel
from prefect_judgeforge.prompts import DEFAULT_LANGUAGE
from prefect_judgeforge.selection import DEFAULT_Z_THRESHOLD, SelectionPolicy
from prefect_judgeforge.verdicts import STRENGTH_HEADERS, WEAKNESS_HEADERS

logger = get_logger("prefect_judgeforge.config")


class ModelRoles(BaseModel):
    """Model identifiers per pipeline role."""

    judge: str = "judge"
    questioner: str = "questioner"
    classifier: str = "judge"
    responders: List[str] = Field(default_factory=lambda: ["model_a", "model_b"])

    @validator("responders")
    def _responders_not_empty(cls, responders):
        if not responders:
            raise ValueError("At least one responder model is required.")
        return responders


class ForgeConfig(BaseModel):
    """Settings shared by every stage of the pipeline.

    Attributes:
        catalog_path: Scenario catalog JSON; the packaged catalog when unset.
        provider: `mock` answers in-process, `http` calls the configured API.
        credentials_block: Name of a saved `JudgeCredentials` block; the
            environment is used when unset.
        models: Model identifiers per role.
        retry: Retry and concurrency limits of the gateway.
        cache: Whether completions are cached on disk.
        cache_dir: Directory of the completion cache.
        seed: Seed of every random draw.
        parallelism: Requests dispatched at once by fan-out stages.
        language: Prompt template variant.
        agr_params: Agreement metrics reported by `bench`; the first is primary.
        strength_headers: Accepted spellings of the strengths header.
        weakness_headers: Accepted spellings of the weaknesses header.
        synthesis_batches: Generation calls allowed per scenario and source.
        balance_target: `uniform` or a histogram of caps per score or verdict.
        augment: Custom-prompt augmentation options.
        selection_policy: IFD filter applied by `select`.
        z_threshold: Cut-off of the `scenario_z` policy.
        budget: Records kept by `select`.
        scorer: Token scorer of `select`; `remote` asks the provider.
        cluster_count: Clusters formed by `cluster`.
    """

    catalog_path: Optional[Path] = None
    provider: Literal["mock", "http"] = "mock"
    credentials_block: Optional[str] = None
    models: ModelRoles = Field(default_factory=ModelRoles)
    retry: RetryPolicy = Field(default_factory=RetryPolicy)
    cache: bool = True
    cache_dir: Path = Path(".judgeforge-cache")
    seed: int = 0
    parallelism: int = 4
    language: str = DEFAULT_LANGUAGE
    agr_params: List[AgrParams] = Field(
        default_factory=lambda: [AgrParams(p=2, q=2), AgrParams(p=1, q=0)]
    )
    strength_headers: List[str] = Field(default_factory=lambda: list(STRENGTH_HEADERS))
    weakness_headers: List[str] = Field(default_factory=lambda: list(WEAKNESS_HEADERS))
    synthesis_batches: int = 3
    balance_target: Union[Literal["uniform"], Dict[str, int]] = "uniform"
    augment: AugmentOptions = Field(default_factory=AugmentOptions)
    selection_policy: SelectionPolicy = "threshold_gt_1"
    z_threshold: float = DEFAULT_Z_THRESHOLD
    budget: int = 1000
    scorer: Literal["ngram", "constant", "remote"] = "ngram"
    cluster_count: int = 3

    @validator("parallelism", "budget", "synthesis_batches", "cluster_count")
    def _positive(cls, value):
        if value < 1:
            raise ValueError("must be at least 1.")
        return value

    @validator("agr_params")
    def _agr_not_empty(cls, params):
        if not params:
            raise ValueError("At least one agreement metric is required.")
        return params

    def catalog(self) -> ScenarioCatalog:
        """The scenario catalog the run uses."""
        return ScenarioCatalog.load(self.catalog_path)


def load_config(path: Optional[Union[str, Path]] = None, **overrides) -> ForgeConfig:
    """
    Reads a configuration file and applies command-line overrides.

    Overrides whose value is None are ignored.

    Example:
        ```python
        from prefect_judgeforge.config import load_config

        config = load_config("judgeforge.json", seed=7)
        ```
    """
    config = ForgeConfig.parse_file(path) if path else ForgeConfig()
    updates = {key: value for key, value in overrides.items() if value is not None}
    if updates:
        config = ForgeConfig.parse_obj({**config.dict(), **updates})
    return config


def build_gateway(
    config: ForgeConfig, scorer: Optional[TokenScorer] = None
) -> LlmGateway:
    """
    The gateway described by a configuration.

    The mock provider answers with a `SimulatedModel` seeded by `config.seed`.
    """
    if config.provider == "mock":
        provider = MockChatProvider(responder=SimulatedModel(seed=config.seed))
    else:
        credentials = (
            JudgeCredentials.load(config.credentials_block)
            if config.credentials_block
            else JudgeCredentials()
        )
        provider = HttpChatProvider(credentials)
    logger.debug("Using the %s provider", config.provider)
    return LlmGateway(
        provider,
        policy=config.retry,
        cache_dir=config.cache_dir if config.cache else None,
        scorer=scorer,
    )
