import pytest

from prefect_judgeforge.catalog import (
    ScenarioCatalog,
    load_seed_instructions,
    normalize_name,
)
from prefect_judgeforge.exceptions import UnknownScenario
from prefect_judgeforge.models import Criterion, Scenario


def scenario(scenario_id, name="Name"):
    return Scenario(
        id=scenario_id,
        name=name,
        description="d",
        criteria=[Criterion(name="Accuracy", description="Be right.")],
    )


def test_packaged_catalog(catalog):
    assert catalog.ids == [
        "close_qa",
        "open_qa",
        "math_qa",
        "creative_writing",
        "info_prof_writing",
        "rewriting",
        "translation",
        "reading_extraction",
        "role_playing",
        "programming",
    ]
    math = catalog.get("math_qa")
    assert math.criterion_names[:2] == ["Accuracy", "Clarity"]
    assert all(scenario.criteria for scenario in catalog.scenarios)
    assert not catalog.is_empty()


def test_packaged_seed_instructions(catalog):
    seeds = load_seed_instructions()
    assert set(seeds) <= set(catalog.ids)
    assert all(len(texts) >= 3 for texts in seeds.values())


def test_get_unknown_scenario(small_catalog):
    with pytest.raises(UnknownScenario, match="math_qa"):
        small_catalog.get("cooking")


def test_find_by_name_normalizes(small_catalog):
    assert small_catalog.find_by_name("  math   QA ").id == "math_qa"
    assert small_catalog.find_by_name("Cooking") is None
    assert normalize_name(" Open\tQA ") == "open qa"


@pytest.mark.parametrize(
    "scenarios",
    [
        [scenario("a"), scenario("a")],
        [scenario("default")],
    ],
)
def test_catalog_rejects_bad_ids(scenarios):
    with pytest.raises(ValueError):
        ScenarioCatalog(scenarios=scenarios)


def test_scenario_needs_criteria():
    with pytest.raises(ValueError):
        Scenario(id="a", name="A", description="d", criteria=[])


def test_replace_returns_a_copy(small_catalog):
    renamed = small_catalog.get("translation").copy(update={"name": "Interpreting"})
    replaced = small_catalog.replace(renamed)
    assert replaced.get("translation").name == "Interpreting"
    assert small_catalog.get("translation").name == "Translation"
    assert replaced.ids == small_catalog.ids
    with pytest.raises(UnknownScenario):
        small_catalog.replace(scenario("cooking"))


def test_dump_and_load(small_catalog, tmp_path):
    path = tmp_path / "catalog.json"
    small_catalog.dump(path)
    assert ScenarioCatalog.load(path) == small_catalog
    assert small_catalog.criteria_count == 4
