import numpy as np
import pytest

from prefect_judgeforge.composition import (
    REFERENCE_CLUSTERS,
    CompositionPlan,
    apportion,
    cluster_scenarios,
    kmeans,
    sample_composition,
)
from prefect_judgeforge.exceptions import ForgeError, KTooLarge, PoolExhausted

BLOBS = {
    "a": [0.0, 0.0],
    "b": [0.1, 0.0],
    "c": [10.0, 10.0],
    "d": [10.1, 10.0],
    "e": [-10.0, 10.0],
    "f": [-10.0, 10.2],
}


def pools_of(sizes):
    return {name: [f"{name}-{i}" for i in range(size)] for name, size in sizes.items()}


@pytest.mark.parametrize("seed", range(3))
def test_cluster_scenarios_finds_blobs(seed):
    clusters = cluster_scenarios(BLOBS, k=3, seed=seed)
    assert clusters == {0: ["a", "b"], 1: ["c", "d"], 2: ["e", "f"]}


def test_cluster_scenarios_exclude():
    clusters = cluster_scenarios(BLOBS, k=2, exclude=["e", "f"])
    assert clusters == {0: ["a", "b"], 1: ["c", "d"]}


def test_k_equal_to_rows_gives_singletons():
    labels = kmeans(np.array(list(BLOBS.values())), k=len(BLOBS))
    assert list(labels) == list(range(len(BLOBS)))


def test_kmeans_errors():
    points = np.array(list(BLOBS.values()))
    with pytest.raises(KTooLarge):
        kmeans(points, k=len(BLOBS) + 1)
    with pytest.raises(ForgeError):
        kmeans(points, k=0)
    with pytest.raises(ForgeError):
        kmeans(np.array([[0.0, np.nan], [1.0, 1.0]]), k=1)
    with pytest.raises(ForgeError):
        cluster_scenarios({"a": [0.0], "b": [0.0, 1.0]}, k=1)
    with pytest.raises(KTooLarge):
        cluster_scenarios({"a": [0.0]}, k=1, exclude=["a"])


def test_apportion_largest_remainder():
    assert apportion({"A": 1, "B": 1, "C": 4}, 800) == {"A": 133, "B": 133, "C": 534}


def test_apportion_tie_goes_to_earlier_cluster():
    assert apportion({"A": 1, "B": 1}, 3) == {"A": 2, "B": 1}


@pytest.mark.parametrize("seed", range(5))
def test_apportion_sums_to_total(seed):
    rng = np.random.default_rng(seed)
    weights = {f"c{i}": float(rng.uniform(0, 3)) for i in range(4)}
    total = int(rng.integers(1, 500))
    quotas = apportion(weights, total)
    assert sum(quotas.values()) == total
    scale = sum(weights.values())
    for key, quota in quotas.items():
        assert abs(quota - weights[key] * total / scale) < 1


def test_sample_composition_follows_quotas():
    plan = CompositionPlan(
        clusters={"A": ["math_qa", "programming"], "B": ["translation"]},
        weights={"A": 3, "B": 1},
        total=8,
    )
    pools = pools_of({"math_qa": 1, "programming": 10, "translation": 5})
    selected = sample_composition(plan, pools, seed=4)
    assert len(selected) == 8
    assert len(set(selected)) == 8
    assert sum(item.startswith("translation") for item in selected) == 2
    assert "math_qa-0" in selected
    assert sum(item.startswith("programming") for item in selected) == 5
    assert sample_composition(plan, pools, seed=4) == selected


def test_sample_composition_zero_weight_cluster():
    plan = CompositionPlan(
        clusters={"A": ["math_qa"], "B": ["translation"]},
        weights={"A": 1, "B": 0},
        total=3,
    )
    selected = sample_composition(plan, pools_of({"math_qa": 3, "translation": 3}))
    assert selected == ["math_qa-0", "math_qa-1", "math_qa-2"]


def test_sample_composition_pool_exhausted():
    plan = CompositionPlan(
        clusters={"A": ["math_qa"], "B": ["translation"]},
        weights={"A": 1, "B": 1},
        total=10,
    )
    with pytest.raises(PoolExhausted):
        sample_composition(plan, pools_of({"math_qa": 2, "translation": 20}))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(clusters={"A": ["x"], "B": ["x"]}, weights={"A": 1, "B": 1}, total=2),
        dict(clusters={"A": ["x"]}, weights={"B": 1}, total=2),
        dict(clusters={"A": ["x"]}, weights={"A": 0}, total=2),
        dict(clusters={"A": ["x"]}, weights={"A": -1}, total=2),
        dict(clusters={"A": ["x"]}, weights={"A": 1}, total=0),
    ],
)
def test_composition_plan_validation(kwargs):
    with pytest.raises(ValueError):
        CompositionPlan(**kwargs)


def test_reference_clusters_partition_scenarios(catalog):
    plan = CompositionPlan(
        clusters=REFERENCE_CLUSTERS,
        weights={name: 1.0 for name in REFERENCE_CLUSTERS},
        total=9,
    )
    members = [member for group in plan.clusters.values() for member in group]
    assert set(members) <= set(catalog.ids)
    assert len(members) == 9
