"""Meta-evaluation metrics: MAE, the Agr_p^q family, z-values, correlation and
random-baseline normalization."""
import math
from itertools import product
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, validator
from typing_extensions import Literal

from prefect_judgeforge.exceptions import (
    DegenerateBaseline,
    EmptyInput,
    InvalidCount,
    InvalidHistogram,
    LengthMismatch,
    ScenarioMismatch,
    TooFewValues,
    ZeroVariance,
)
from prefect_judgeforge.models import RatingSystem

OVERALL = "All"


class ScoredPair(BaseModel):
    """A predicted score next to the human label for the same item."""

    predicted: int
    labeled: int
    scenario: str


class AgrParams(BaseModel):
    """Window `p` and decay `q` of the agreement kernel."""

    p: int = 2
    q: float = 2.0

    class Config:
        frozen = True

    @validator("p")
    def _p_positive(cls, p):
        if p < 1:
            raise ValueError("p must be at least 1.")
        return p

    @validator("q")
    def _q_non_negative(cls, q):
        if q < 0:
            raise ValueError("q must be non-negative.")
        return q

    @property
    def key(self) -> str:
        return f"agr_{self.p}_{self.q:g}"


MetricSpec = Union[Literal["mae"], AgrParams]


class MetricRow(BaseModel):
    """Metrics of one scenario, or of the whole benchmark."""

    scenario: str
    count: int
    mae: Optional[float] = None
    agr: Dict[str, float] = Field(default_factory=dict)
    avg_label: Optional[float] = None
    z_value: Optional[float] = None
    rgg: Optional[float] = None
    delta_reference: Optional[float] = None


class MetricReport(BaseModel):
    """Per-scenario rows plus the count-weighted overall row.

    Attributes:
        rows: One row per scenario, in benchmark order.
        overall: The `All` row.
        primary: Agr key z-values and reference deltas are computed on.
        aggregated: Optional random-baseline-normalized summary score.
        coverage: Share of judgments that produced a usable verdict.
    """

    rows: List[MetricRow]
    overall: MetricRow
    primary: str = "agr_2_2"
    aggregated: Optional[float] = None
    coverage: float = 1.0

    @property
    def scenarios(self) -> List[str]:
        return [row.scenario for row in self.rows]

    def row(self, scenario: str) -> MetricRow:
        if scenario == OVERALL:
            return self.overall
        for row in self.rows:
            if row.scenario == scenario:
                return row
        raise KeyError(scenario)


def _require(pairs: Sequence[ScoredPair]) -> None:
    if not pairs:
        raise EmptyInput("At least one scored pair is required.")


def mae(pairs: Sequence[ScoredPair]) -> float:
    """Mean absolute error between predicted and labeled scores."""
    _require(pairs)
    return math.fsum(abs(pair.predicted - pair.labeled) for pair in pairs) / len(pairs)


def agreement_kernel(predicted: int, labeled: int, params: AgrParams) -> float:
    """`1 / (d + 1) ** q` when the distance `d` is below `p`, else 0."""
    distance = abs(predicted - labeled)
    if distance >= params.p:
        return 0.0
    return 1.0 / (distance + 1) ** params.q


def agr(pairs: Sequence[ScoredPair], params: AgrParams) -> float:
    """
    Mean agreement kernel over the pairs.

    `agr(pairs, AgrParams(p=1, q=...))` is exact-match accuracy for any `q`.

    Raises:
        EmptyInput: If `pairs` is empty.
    """
    _require(pairs)
    return math.fsum(
        agreement_kernel(pair.predicted, pair.labeled, params) for pair in pairs
    ) / len(pairs)


def weighted_overall(rows: Sequence[Tuple[int, float]]) -> float:
    """Count-weighted mean of per-scenario values."""
    if not rows:
        raise EmptyInput("At least one (count, value) row is required.")
    if any(count <= 0 for count, _ in rows):
        raise InvalidCount("Counts must be positive.")
    return math.fsum(count * value for count, value in rows) / sum(
        count for count, _ in rows
    )


def scenario_z_values(
    values: Sequence[float], include_overall: bool = True
) -> List[float]:
    """
    Standardizes a metric column.

    Mean and sample standard deviation (n - 1 divisor) are computed over every
    supplied value. When `include_overall` is set, element 0 is the overall
    row and is standardized along with the scenarios.

    Args:
        values: The column, overall value first when `include_overall`.
        include_overall: Whether element 0 is the overall row.

    Returns:
        One z-value per supplied value, aligned with `values`.

    Raises:
        TooFewValues: If fewer than two values are supplied, or only the
            overall value when `include_overall` is set.
    """
    column = np.asarray(values, dtype=float)
    scenario_count = len(column) - 1 if include_overall else len(column)
    if len(column) < 2 or scenario_count < 1:
        raise TooFewValues("z-values need at least two values.")
    if np.ptp(column) == 0:
        return [0.0] * len(column)
    deviation = column.std(ddof=1)
    return [float(z) for z in (column - column.mean()) / deviation]


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """
    Product-moment correlation of two equally long columns.

    Raises:
        LengthMismatch: If the columns differ in length.
        TooFewValues: If fewer than two points are given.
        ZeroVariance: If either column is constant.
    """
    if len(xs) != len(ys):
        raise LengthMismatch(f"Got {len(xs)} x values and {len(ys)} y values.")
    if len(xs) < 2:
        raise TooFewValues("Correlation needs at least two points.")
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    dx, dy = x - x.mean(), y - y.mean()
    norm = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if norm == 0:
        raise ZeroVariance("Correlation is undefined for a constant column.")
    return float(np.clip(float(dx @ dy) / norm, -1.0, 1.0))


def reference_delta(
    sag: MetricReport, rgg: MetricReport, key: Optional[str] = None
) -> List[float]:
    """
    RGG minus SAG on one agreement metric, overall first, then per scenario.

    Scenario rows are matched by name and returned in the SAG report's order.

    Raises:
        ScenarioMismatch: If the reports cover different scenarios.
    """
    key = key or sag.primary
    if set(sag.scenarios) != set(rgg.scenarios):
        raise ScenarioMismatch(
            f"Reports cover different scenarios: {sorted(sag.scenarios)} vs "
            f"{sorted(rgg.scenarios)}."
        )
    return [
        rgg.row(sag_row.scenario).agr[key] - sag_row.agr[key]
        for sag_row in [sag.overall] + sag.rows
    ]


def _metric_value(metric: MetricSpec, predicted: int, labeled: int) -> float:
    if metric == "mae":
        return float(abs(predicted - labeled))
    return agreement_kernel(predicted, labeled, metric)


def _best(metric: MetricSpec) -> float:
    return 0.0 if metric == "mae" else 1.0


def _check_histogram(
    rating: RatingSystem, label_hist: Mapping[int, float]
) -> Dict[int, float]:
    histogram = {int(score): float(weight) for score, weight in label_hist.items()}
    if any(not rating.contains(score) for score in histogram):
        raise InvalidHistogram(
            f"Histogram keys must lie in {rating.min}-{rating.max}: "
            f"{sorted(histogram)}."
        )
    if any(weight < 0 for weight in histogram.values()):
        raise InvalidHistogram("Histogram weights must be non-negative.")
    if not math.isclose(math.fsum(histogram.values()), 1.0, abs_tol=1e-9):
        raise InvalidHistogram("Histogram weights must sum to 1.")
    return histogram


def random_baseline(
    metric: MetricSpec,
    rating: RatingSystem,
    label_hist: Optional[Mapping[int, float]] = None,
) -> float:
    """
    Expected metric value of a predictor guessing uniformly over the rating range.

    Computed exactly by enumerating every (predicted, labeled) cell.

    Args:
        metric: `"mae"` or an `AgrParams`.
        rating: Rating system of predictions and labels.
        label_hist: Label distribution; uniform when omitted.

    Raises:
        InvalidHistogram: If `label_hist` leaves the range or does not sum to 1.
    """
    scores = range(rating.min, rating.max + 1)
    if label_hist is None:
        histogram = {score: 1.0 / len(scores) for score in scores}
    else:
        histogram = _check_histogram(rating, label_hist)
    guess = 1.0 / len(scores)
    return math.fsum(
        histogram.get(labeled, 0.0) * guess * _metric_value(metric, predicted, labeled)
        for predicted, labeled in product(scores, scores)
    )


def normalize_metric(metric: MetricSpec, value: float, baseline: float) -> float:
    """Maps the random baseline to 0 and the ideal value to 1."""
    best = _best(metric)
    if baseline == best:
        raise DegenerateBaseline(f"Baseline {baseline} equals the ideal value.")
    return (value - baseline) / (best - baseline)


def aggregate_normalized(
    values: Sequence[Tuple[MetricSpec, float]], baselines: Sequence[float]
) -> float:
    """
    Mean of baseline-normalized metrics.

    MAE normalizes against an ideal of 0 and every Agr against 1, so lower-is-
    better metrics invert.

    Raises:
        LengthMismatch: If there is not one baseline per value.
        EmptyInput: If no values are given.
        DegenerateBaseline: If a baseline equals its metric's ideal value.
    """
    if len(values) != len(baselines):
        raise LengthMismatch(
            f"Got {len(values)} values and {len(baselines)} baselines."
        )
    if not values:
        raise EmptyInput("At least one metric value is required.")
    return math.fsum(
        normalize_metric(metric, value, baseline)
        for (metric, value), baseline in zip(values, baselines)
    ) / len(values)


def build_report(
    pairs: Sequence[ScoredPair],
    agr_params: Sequence[AgrParams],
    graded: bool = True,
    coverage: float = 1.0,
) -> MetricReport:
    """
    Computes per-scenario rows, in order of first appearance, and the overall row.

    Overall values are the count-weighted means of the scenario rows; z-values
    are computed on the first Agr metric with the overall row included.

    Args:
        pairs: Scored pairs of every usable judgment.
        agr_params: Agreement metrics to compute; the first one is primary.
        graded: False for pairwise benches, which carry no MAE or average label.
        coverage: Share of judgments the pairs were built from.

    Raises:
        EmptyInput: If `pairs` or `agr_params` is empty.
    """
    _require(pairs)
    if not agr_params:
        raise EmptyInput("At least one agreement metric is required.")
    grouped: Dict[str, List[ScoredPair]] = {}
    for pair in pairs:
        grouped.setdefault(pair.scenario, []).append(pair)

    rows = []
    for scenario, members in grouped.items():
        rows.append(
            MetricRow(
                scenario=scenario,
                count=len(members),
                mae=mae(members) if graded else None,
                agr={params.key: agr(members, params) for params in agr_params},
                avg_label=(
                    math.fsum(pair.labeled for pair in members) / len(members)
                    if graded
                    else None
                ),
            )
        )

    def overall_of(values: List[float]) -> float:
        counts = [row.count for row in rows]
        return weighted_overall(list(zip(counts, values)))

    overall = MetricRow(
        scenario=OVERALL,
        count=sum(row.count for row in rows),
        mae=overall_of([row.mae for row in rows]) if graded else None,
        agr={
            params.key: overall_of([row.agr[params.key] for row in rows])
            for params in agr_params
        },
        avg_label=overall_of([row.avg_label for row in rows]) if graded else None,
    )
    primary = agr_params[0].key
    z_values = scenario_z_values(
        [overall.agr[primary]] + [row.agr[primary] for row in rows]
    )
    overall.z_value = z_values[0]
    for row, z in zip(rows, z_values[1:]):
        row.z_value = z
    return MetricReport(rows=rows, overall=overall, primary=primary, coverage=coverage)


def attach_reference(sag: MetricReport, rgg: MetricReport) -> MetricReport:
    """Copies RGG values and deltas onto a SAG report."""
    deltas = reference_delta(sag, rgg)
    merged = sag.copy(deep=True)
    for row, delta in zip([merged.overall] + merged.rows, deltas):
        row.rgg = rgg.row(row.scenario).agr[sag.primary]
        row.delta_reference = delta
    return merged
