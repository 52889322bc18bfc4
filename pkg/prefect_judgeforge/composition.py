"""Scenario clustering and cluster-weighted sampling of fine-tuning data."""
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from prefect.logging import get_logger
from pydantic import BaseModel, root_validator, validator

from prefect_judgeforge.exceptions import ForgeError, KTooLarge, PoolExhausted

logger = get_logger("prefect_judgeforge.composition")

MAX_ITERATIONS = 100

# Published grouping of the scenario-effect study, kept as a reference fixture.
REFERENCE_CLUSTERS = {
    "A": ["math_qa", "programming"],
    "B": ["info_prof_writing", "rewriting", "translation", "role_playing"],
    "C": ["open_qa", "creative_writing", "reading_extraction"],
}


def _kmeans_plus_plus(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    centroids = np.empty((k, points.shape[1]), dtype=float)
    centroids[0] = points[rng.integers(len(points))]
    for index in range(1, k):
        distances = np.min(
            ((points[:, None, :] - centroids[None, :index, :]) ** 2).sum(axis=2),
            axis=1,
        )
        total = distances.sum()
        if total == 0:
            centroids[index] = points[rng.integers(len(points))]
        else:
            centroids[index] = points[rng.choice(len(points), p=distances / total)]
    return centroids


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    distances = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(distances, axis=1)


def kmeans(
    points: np.ndarray, k: int, seed: int = 0, max_iterations: int = MAX_ITERATIONS
) -> np.ndarray:
    """
    Lloyd's algorithm from a k-means++ start.

    Stops when assignments no longer change or after `max_iterations`. An
    empty cluster is re-seeded with the point farthest from its centroid.
    Labels are renumbered in order of first appearance.

    Raises:
        KTooLarge: If `k` exceeds the number of points.
        ForgeError: If `k` is not positive or the points are not finite.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ForgeError("Features must form a 2-d matrix.")
    if k < 1:
        raise ForgeError("k must be positive.")
    if k > len(points):
        raise KTooLarge(f"Cannot form {k} clusters from {len(points)} rows.")
    if not np.all(np.isfinite(points)):
        raise ForgeError("Features must be finite.")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_plus_plus(points, k, rng)
    labels = _assign(points, centroids)
    for _ in range(max_iterations):
        for cluster in range(k):
            members = points[labels == cluster]
            if len(members):
                centroids[cluster] = members.mean(axis=0)
                continue
            spread = ((points - centroids[labels]) ** 2).sum(axis=1)
            farthest = int(np.argmax(spread))
            centroids[cluster] = points[farthest]
            labels[farthest] = cluster
        updated = _assign(points, centroids)
        if np.array_equal(updated, labels):
            break
        labels = updated

    canonical: Dict[int, int] = {}
    for label in labels:
        canonical.setdefault(int(label), len(canonical))
    return np.array([canonical[int(label)] for label in labels])


def cluster_scenarios(
    features: Mapping[str, Sequence[float]],
    k: int,
    seed: int = 0,
    exclude: Optional[Sequence[str]] = None,
) -> Dict[int, List[str]]:
    """
    Groups scenarios by their effect vectors with k-means.

    Args:
        features: Effect vector per scenario id; all vectors share one length.
        k: Number of clusters.
        seed: Seed of the k-means++ initialization.
        exclude: Scenario ids left out of the clustering.

    Returns:
        Member scenarios per cluster, clusters numbered by first appearance.

    Raises:
        KTooLarge: If `k` exceeds the number of clustered scenarios.

    Example:
        ```python
        from prefect_judgeforge.composition import cluster_scenarios

        cluster_scenarios({"a": [0.0], "b": [0.1], "c": [9.0]}, k=2)
        # {0: ["a", "b"], 1: ["c"]}
        ```
    """
    skipped = set(exclude or [])
    names = [name for name in features if name not in skipped]
    if not names:
        raise KTooLarge("No scenario left to cluster.")
    widths = {len(features[name]) for name in names}
    if len(widths) != 1:
        raise ForgeError("Effect vectors must all have the same length.")
    matrix = np.array([list(features[name]) for name in names], dtype=float)
    labels = kmeans(matrix, k, seed)
    clusters: Dict[int, List[str]] = {}
    for name, label in zip(names, labels):
        clusters.setdefault(int(label), []).append(name)
    return clusters


class CompositionPlan(BaseModel):
    """How many records to draw from each scenario cluster.

    Attributes:
        clusters: Member scenario ids per cluster id.
        weights: Non-negative mixing weight per cluster id.
        total: Number of records to draw.
    """

    clusters: Dict[str, List[str]]
    weights: Dict[str, float]
    total: int

    @validator("total")
    def _total_positive(cls, total):
        if total < 1:
            raise ValueError("total must be positive.")
        return total

    @validator("clusters")
    def _partition(cls, clusters):
        seen = set()
        for members in clusters.values():
            overlap = seen & set(members)
            if overlap:
                raise ValueError(f"Scenarios {sorted(overlap)} sit in several clusters")
            seen.update(members)
        return clusters

    @root_validator(skip_on_failure=True)
    def _weights_cover_clusters(cls, values):
        weights, clusters = values["weights"], values["clusters"]
        if set(weights) != set(clusters):
            raise ValueError("weights must name exactly the plan's clusters.")
        if any(weight < 0 for weight in weights.values()):
            raise ValueError("weights must be non-negative.")
        if not any(weights.values()):
            raise ValueError("weights must not all be zero.")
        return values


def apportion(weights: Mapping[str, float], total: int) -> Dict[str, int]:
    """
    Integer quotas summing to `total`, by largest-remainder apportionment.

    Remainder ties go to the larger weight, then to the earlier cluster.
    """
    exact = {key: Fraction(str(weight)) for key, weight in weights.items()}
    scale = sum(exact.values())
    shares = {key: value * total / scale for key, value in exact.items()}
    quotas = {key: int(share) for key, share in shares.items()}
    order = list(weights)
    ranked = sorted(
        order,
        key=lambda key: (
            -(shares[key] - quotas[key]),
            -exact[key],
            order.index(key),
        ),
    )
    for key in ranked[: total - sum(quotas.values())]:
        quotas[key] += 1
    return quotas


def _spread(quota: int, capacities: List[int]) -> List[int]:
    """Even split of a quota over members, capped by capacity, extras in order."""
    shares = [0] * len(capacities)
    remaining = quota
    while remaining > 0:
        open_members = [i for i, cap in enumerate(capacities) if shares[i] < cap]
        if not open_members:
            break
        step = max(1, remaining // len(open_members))
        for index in open_members:
            grant = min(step, capacities[index] - shares[index], remaining)
            shares[index] += grant
            remaining -= grant
            if remaining == 0:
                break
    return shares


def sample_composition(
    plan: CompositionPlan, pools: Mapping[str, Sequence[str]], seed: int = 0
) -> List[str]:
    """
    Draws exactly `plan.total` record ids following the plan's cluster weights.

    Cluster quotas come from `apportion`. Within a cluster the quota is spread
    evenly over member scenarios, moving the shortfall of small pools to the
    other members, and each scenario's share is sampled uniformly without
    replacement. Sampled ids keep their pool order.

    Args:
        plan: Clusters, weights and total.
        pools: Candidate record ids per scenario id.
        seed: Seed of the sampler.

    Raises:
        PoolExhausted: If a cluster quota exceeds the records its scenarios hold.
    """
    rng = np.random.default_rng(seed)
    quotas = apportion(plan.weights, plan.total)
    selected: List[str] = []
    for cluster, members in plan.clusters.items():
        quota = quotas[cluster]
        if quota == 0:
            continue
        capacities = [len(pools.get(member, [])) for member in members]
        if quota > sum(capacities):
            raise PoolExhausted(
                f"Cluster {cluster} needs {quota} records but holds {sum(capacities)}."
            )
        for member, share in zip(members, _spread(quota, capacities)):
            pool = list(pools.get(member, []))
            if share == 0:
                continue
            chosen = rng.choice(len(pool), size=share, replace=False)
            selected.extend(pool[int(index)] for index in sorted(chosen))
        logger.info("Cluster %s contributes %d records", cluster, quota)
    return selected
