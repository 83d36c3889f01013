"""Cost and bullwhip metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence


class UndefinedMetricError(ValueError):
    """The metric has no defined value for this input (e.g. zero mean)."""


def coeff_variation(series: Sequence[float], ddof: int = 0) -> float:
    """Standard deviation over mean of an order series.

    ``ddof=0`` gives the population standard deviation; pass ``ddof=1`` for
    the sample estimate.
    """
    n = len(series)
    if n < 2:
        raise UndefinedMetricError(f"need at least 2 values, got {n}")
    mean = math.fsum(series) / n
    if mean <= 0:
        raise UndefinedMetricError(f"mean is {mean}; coefficient of variation undefined")
    var = math.fsum((x - mean) ** 2 for x in series) / (n - ddof)
    return math.sqrt(var) / mean


def aggregate_bullwhip(cvs: Sequence[float]) -> float:
    if not cvs:
        raise ValueError("aggregate_bullwhip needs at least one coefficient")
    out = 1.0
    for c in cvs:
        if not math.isfinite(c) or c < 0:
            raise ValueError(f"invalid coefficient of variation: {c}")
        out *= c
    return out


def cumulative_global_cost(ledger: Sequence[Sequence[float]]) -> float:
    return math.fsum(v for row in ledger for v in row)


def bullwhip_negligible(aggregate: float) -> bool:
    return aggregate < 1


@dataclass(frozen=True)
class MetricsReport:
    cumulative_global_cost: float
    per_agent_cost: tuple[float, ...]
    # None where the coefficient is undefined (e.g. an agent never ordered)
    per_agent_cv: tuple[float | None, ...]
    aggregate_bullwhip: float | None

    @property
    def bullwhip_negligible(self) -> bool | None:
        if self.aggregate_bullwhip is None:
            return None
        return bullwhip_negligible(self.aggregate_bullwhip)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_agent_cost"] = list(self.per_agent_cost)
        d["per_agent_cv"] = list(self.per_agent_cv)
        d["bullwhip_negligible"] = self.bullwhip_negligible
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            cumulative_global_cost=d["cumulative_global_cost"],
            per_agent_cost=tuple(d["per_agent_cost"]),
            per_agent_cv=tuple(d["per_agent_cv"]),
            aggregate_bullwhip=d["aggregate_bullwhip"],
        )

    def csv_row(self) -> dict:
        row = {
            "cumulative_global_cost": self.cumulative_global_cost,
            "aggregate_bullwhip": self.aggregate_bullwhip,
            "bullwhip_negligible": self.bullwhip_negligible,
        }
        for i, (c, cv) in enumerate(zip(self.per_agent_cost, self.per_agent_cv)):
            row[f"cost_agent{i}"] = c
            row[f"cv_agent{i}"] = cv
        return row

    def write_csv(self, path) -> None:
        row = self.csv_row()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row))
            writer.writeheader()
            writer.writerow(row)


def build_report(ledger: Sequence[Sequence[float]], order_histories: Sequence[Sequence[int]],
                 warmup: int = 0, ddof: int = 0) -> MetricsReport:
    """Report for one episode.

    ``ledger`` is step x agent; ``warmup`` leading steps are dropped from
    every order series before computing the coefficients of variation.
    """
    n = len(order_histories)
    per_agent_cost = tuple(math.fsum(row[i] for row in ledger) for i in range(n))
    cvs: list[float | None] = []
    for orders in order_histories:
        try:
            cvs.append(coeff_variation(list(orders)[warmup:], ddof=ddof))
        except UndefinedMetricError:
            cvs.append(None)
    agg = None if any(c is None for c in cvs) or not cvs else aggregate_bullwhip(cvs)
    total = cumulative_global_cost(ledger) if ledger else 0.0
    return MetricsReport(total, per_agent_cost, tuple(cvs), agg)
