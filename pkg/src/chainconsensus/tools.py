"""Decision-support tools: linear-regression demand forecast and EOQ."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

FORECAST = "forecast"
EOQ = "eoq"


@dataclass(frozen=True)
class ToolOutput:
    tool_id: str
    recommended_order: int
    inputs_digest: str


def _round_clamp(x, max_order: int) -> int:
    # exact half-up rounding for Fractions, then clamp to the order range
    v = math.floor(x + Fraction(1, 2)) if isinstance(x, Fraction) else math.floor(x + 0.5)
    return max(0, min(max_order, int(v)))


def forecast_demand_linreg(demand_history: Sequence[int], lookback: int = 30,
                           max_order: int = 100) -> ToolOutput:
    """Least-squares line through the recent history, evaluated one step ahead.

    Fewer than three points falls back to the most recent value (0 if none).
    Arithmetic is exact, so rounding never depends on float error.
    """
    if len(demand_history) < 3:
        last = demand_history[-1] if len(demand_history) else 0
        return ToolOutput(FORECAST, _round_clamp(Fraction(last), max_order),
                          f"fallback n={len(demand_history)} last={last}")
    ys = [Fraction(v) for v in list(demand_history)[-lookback:]]
    n = len(ys)
    sx = Fraction(n * (n - 1), 2)
    sxx = Fraction((n - 1) * n * (2 * n - 1), 6)
    sy = sum(ys)
    sxy = sum(i * y for i, y in enumerate(ys))
    slope = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    intercept = (sy - slope * sx) / n
    pred = intercept + slope * n
    return ToolOutput(FORECAST, _round_clamp(pred, max_order),
                      f"ols n={n} slope={float(slope):.4g} pred={float(pred):.4g}")


def eoq(demand_history: Sequence[int], ordering_cost: float = 1.0, holding_cost: float = 1.0,
        lookback: int = 30, max_order: int = 100) -> ToolOutput:
    """sqrt(2 * D * ordering_cost / holding_cost), D = mean recent downstream demand."""
    if holding_cost <= 0:
        raise ValueError(f"holding_cost must be > 0, got {holding_cost}")
    if ordering_cost < 0:
        raise ValueError(f"ordering_cost must be >= 0, got {ordering_cost}")
    window = list(demand_history)[-lookback:]
    mean = math.fsum(window) / len(window) if window else 0.0
    q = math.sqrt(2 * mean * ordering_cost / holding_cost)
    return ToolOutput(EOQ, _round_clamp(q, max_order),
                      f"eoq n={len(window)} mean={mean:.4g} q={q:.4g}")


@dataclass(frozen=True)
class ForecastTool:
    lookback: int = 30
    max_order: int = 100
    tool_id = FORECAST

    def __call__(self, obs) -> ToolOutput:
        return forecast_demand_linreg(obs.demand_history, self.lookback, self.max_order)


@dataclass(frozen=True)
class EOQTool:
    ordering_cost: float = 1.0
    holding_cost: float = 1.0
    lookback: int = 30
    max_order: int = 100
    tool_id = EOQ

    def __call__(self, obs) -> ToolOutput:
        return eoq(obs.demand_history, self.ordering_cost, self.holding_cost,
                   self.lookback, self.max_order)


def make_tool(tool_id: str, max_order: int = 100, lookback: int = 30,
              ordering_cost: float = 1.0, holding_cost: float = 1.0):
    if tool_id == FORECAST:
        return ForecastTool(lookback, max_order)
    if tool_id == EOQ:
        return EOQTool(ordering_cost, holding_cost, lookback, max_order)
    raise ValueError(f"unknown tool {tool_id!r}")
