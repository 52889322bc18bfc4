from pathlib import Path

import pytest
from prefect.testing.utilities import prefect_test_harness

from prefect_judgeforge import JudgeCredentials
from prefect_judgeforge.catalog import ScenarioCatalog
from prefect_judgeforge.config import ForgeConfig
from prefect_judgeforge.gateway import LlmGateway, MockChatProvider, RetryPolicy
from prefect_judgeforge.mock import SimulatedModel
from prefect_judgeforge.models import Criterion, Instruction, ResponseRecord, Scenario

GOLDEN_DIR = Path(__file__).parent / "golden"

GPT4_MATH_EVALUATION = """\
I believe the overall rating for this reply is [[1]] for the following reasons:
Advantages of the current reply:
1. Clarity: The explanation process is relatively clear, comparing integer parts and decimal parts in steps, which is easy to understand. [[3]]

Shortcomings of the current reply:
1. Accuracy: The final conclusion of the reply is incorrect; in fact, 9.9 is greater than 9.11, not as stated in the reply that "9.11 is greater than 9.9." [[1]]
2. Efficiency: Although a comparison process is provided, the efficiency becomes meaningless after presenting an incorrect conclusion. [[1]]
3. Instruction Compliance: It fails to correctly follow the command to provide an accurate answer and does not provide the correct comparison result as per the user's request. [[1]]
4. Method Diversity: It does not offer different comparison methods, such as direct numerical comparison, and only uses a part-by-part comparison approach. [[2]]
5. Answer Structure: Although the structure is clear, comparing integer parts first and then decimal parts, this structure has not effectively served to present the correct answer due to the incorrect final answer. [[1]]

Considering the above ratings, due to the core issue of accuracy, even though other aspects are passable, the overall rating remains at the lowest tier [[1]].
"""  # noqa: E501


@pytest.fixture(scope="session", autouse=True)
def prefect_db():
    """
    Sets up test harness for temporary DB during test runs.
    """
    with prefect_test_harness():
        yield


@pytest.fixture(autouse=True)
def reset_object_registry():
    """
    Ensures each test has a clean object registry.
    """
    from prefect.context import PrefectObjectRegistry

    with PrefectObjectRegistry():
        yield


@pytest.fixture
def judge_credentials():
    return JudgeCredentials(
        api_key="sk-test-0123456789",
        api_base="http://judge.local/v1",
    )


@pytest.fixture
def catalog():
    return ScenarioCatalog.load()


@pytest.fixture
def small_catalog():
    return ScenarioCatalog(
        scenarios=[
            Scenario(
                id="math_qa",
                name="Math QA",
                description="Solve a math problem with a definite answer.",
                criteria=[
                    Criterion(
                        name="Accuracy",
                        description="The final result must be correct.",
                    ),
                    Criterion(
                        name="Reasoning",
                        description="Each step must follow from the previous one.",
                    ),
                ],
            ),
            Scenario(
                id="translation",
                name="Translation",
                description="Translate a text into another language.",
                criteria=[
                    Criterion(
                        name="Faithfulness",
                        description="The meaning of the source is preserved.",
                    )
                ],
            ),
            Scenario(
                id="open_qa",
                name="Open QA",
                description="Answer an open question with advice or opinions.",
                criteria=[
                    Criterion(
                        name="Helpfulness",
                        description="The answer gives practical, usable advice.",
                    )
                ],
            ),
        ]
    )


@pytest.fixture
def math_instruction():
    return Instruction(
        id="q1",
        scenario="math_qa",
        text="What is 12 * 7?",
        reference_answer="84",
    )


@pytest.fixture
def math_responses():
    return [
        ResponseRecord(instruction_id="q1", model="model_a", text="12 * 7 = 84."),
        ResponseRecord(instruction_id="q1", model="model_b", text="It is 74."),
    ]


@pytest.fixture
def no_wait_policy():
    return RetryPolicy(max_attempts=3, base_delay=0.0, max_in_flight=4)


@pytest.fixture
def simulated_provider():
    return MockChatProvider(responder=SimulatedModel(seed=0))


@pytest.fixture
def mock_gateway(simulated_provider, no_wait_policy):
    return LlmGateway(
        simulated_provider, policy=no_wait_policy, sleep=lambda seconds: None
    )


@pytest.fixture
def forge_config(tmp_path):
    return ForgeConfig(cache=False, cache_dir=tmp_path / "cache", parallelism=2)
