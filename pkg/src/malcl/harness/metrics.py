"""Run summaries, seed aggregation and the closer-to-Joint flag."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Sequence

STD_THRESHOLD = 1.0   # points; smaller spreads are not printed
STD_TOLERANCE = 1e-9  # round-off allowance so a spread of exactly 1.0 is still shown


def compute_metrics(curve: Sequence[float]) -> tuple[float, float]:
    """(mean, min) of the per-increment accuracy curve."""
    values = [float(v) for v in curve]
    if not values:
        raise ValueError("accuracy curve is empty")
    return math.fsum(values) / len(values), min(values)


@dataclass
class MetricSummary:
    """Across-seed summary of one metric, in accuracy points (0-100)."""

    mean: float
    std: float | None   # sample std; None with a single seed
    n: int

    @property
    def shows_std(self) -> bool:
        return self.std is not None and self.std >= STD_THRESHOLD - STD_TOLERANCE

    def format(self) -> str:
        text = f"{self.mean:.1f}"
        return f"{text}±{self.std:.1f}" if self.shows_std else text


def summarize(values: Sequence[float]) -> MetricSummary:
    values = [float(v) for v in values]
    if not values:
        raise ValueError("no values to summarize")
    std = statistics.stdev(values) if len(values) >= 2 else None
    return MetricSummary(math.fsum(values) / len(values), std, len(values))


@dataclass
class AggregateResult:
    config_hash: str
    strategy: str
    label: str
    family: str
    dataset: str
    scenario: str
    seeds: list[int]
    mean: MetricSummary
    min: MetricSummary


def aggregate_seeds(results) -> AggregateResult:
    """Mean and sample std of Mean/Min over runs that differ only by seed."""
    results = list(results)
    if not results:
        raise ValueError("no runs to aggregate")
    hashes = {r.config_hash for r in results}
    if len(hashes) > 1:
        raise ValueError(f"runs come from {len(hashes)} different configs: {sorted(hashes)}")
    seeds = [r.seed for r in results]
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"duplicate seeds in aggregation: {seeds}")
    first = results[0]
    return AggregateResult(
        config_hash=first.config_hash, strategy=first.strategy, label=first.label, family=first.family,
        dataset=first.dataset, scenario=first.scenario, seeds=sorted(seeds),
        mean=summarize([100.0 * r.mean for r in results]),
        min=summarize([100.0 * r.min for r in results]),
    )


def closer_to_joint(cell: float, joint: float, none: float, tol: float = 1e-9) -> bool:
    """True when the cell is strictly closer to Joint than to None.

    Ties are not flagged; ``tol`` absorbs float round-off so that a value
    printed exactly midway counts as a tie.
    """
    return abs(cell - joint) < abs(cell - none) - tol
