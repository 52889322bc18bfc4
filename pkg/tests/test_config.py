import json

import pytest
from pydantic import ValidationError

from prefect_judgeforge.config import ForgeConfig, build_gateway, load_config
from prefect_judgeforge.gateway import ChatRequest, HttpChatProvider, MockChatProvider
from prefect_judgeforge.mock import SimulatedModel


def test_defaults():
    config = load_config()
    assert config.provider == "mock"
    assert config.models.responders == ["model_a", "model_b"]
    assert [params.key for params in config.agr_params] == ["agr_2_2", "agr_1_0"]
    assert config.catalog().ids[0] == "close_qa"


def test_file_and_overrides(tmp_path):
    path = tmp_path / "judgeforge.json"
    path.write_text(
        json.dumps({"seed": 3, "parallelism": 8, "models": {"judge": "big-judge"}})
    )
    config = load_config(path, seed=None, parallelism=2)
    assert config.seed == 3
    assert config.parallelism == 2
    assert config.models.judge == "big-judge"
    assert config.models.questioner == "questioner"


@pytest.mark.parametrize(
    "fields",
    [
        {"parallelism": 0},
        {"budget": 0},
        {"agr_params": []},
        {"provider": "carrier-pigeon"},
        {"models": {"responders": []}},
        {"balance_target": "flat"},
    ],
)
def test_invalid_config(fields):
    with pytest.raises(ValidationError):
        ForgeConfig.parse_obj(fields)


def test_catalog_path(tmp_path, small_catalog):
    path = tmp_path / "catalog.json"
    small_catalog.dump(path)
    assert ForgeConfig(catalog_path=path).catalog() == small_catalog


def test_mock_gateway_is_seeded(forge_config):
    gateway = build_gateway(forge_config)
    assert isinstance(gateway.provider, MockChatProvider)
    assert isinstance(gateway.provider.responder, SimulatedModel)
    request = ChatRequest.from_prompt("model_a", "Name a colour.")
    assert gateway.chat_complete(request) == build_gateway(
        forge_config
    ).chat_complete(request)


def test_http_gateway_reads_the_environment(forge_config, monkeypatch):
    monkeypatch.setenv("JUDGE_API_KEY", "sk-env")
    gateway = build_gateway(forge_config.copy(update={"provider": "http"}))
    assert isinstance(gateway.provider, HttpChatProvider)
    assert gateway.provider.credentials.api_key.get_secret_value() == "sk-env"
