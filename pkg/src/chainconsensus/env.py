"""Discrete-time sequential supply chain.

Agent 0 faces the customer; agent ``n_agents - 1`` buys from an unlimited
raw-material source. Every step runs, in order: deliver arriving pipeline
stock, receive demand, ship (backlog first), enqueue shipments downstream,
charge costs.

States are immutable; :func:`step` returns a new :class:`EnvState`.
"""

from __future__ import annotations

import csv
import numbers
from dataclasses import dataclass, field, replace
from typing import Sequence

from .demand import DemandTrace


class ConfigurationError(ValueError):
    """Invalid configuration or inconsistent inputs."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (e.g. an unclamped order)."""


@dataclass(frozen=True)
class EnvConfig:
    n_agents: int = 3
    lead_time: int = 2
    max_order: int = 100
    holding_cost: float = 1.0
    backlog_cost: float = 1.0
    variable_order_cost: float = 1.0
    fixed_order_cost: float = 1.0
    horizon: int = 100
    initial_inventory: int = 20
    memory_window: int = 10

    def __post_init__(self):
        if self.n_agents < 2:
            raise ConfigurationError(f"n_agents must be >= 2, got {self.n_agents}")
        if self.lead_time < 0:
            raise ConfigurationError(f"lead_time must be >= 0, got {self.lead_time}")
        if self.max_order < 1:
            raise ConfigurationError(f"max_order must be >= 1, got {self.max_order}")
        # horizon 0 is allowed so an episode can be empty
        if self.horizon < 0:
            raise ConfigurationError(f"horizon must be >= 0, got {self.horizon}")
        if self.initial_inventory < 0:
            raise ConfigurationError("initial_inventory must be >= 0")
        if self.memory_window < 0:
            raise ConfigurationError("memory_window must be >= 0")
        for name in ("holding_cost", "backlog_cost", "variable_order_cost", "fixed_order_cost"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class StepCosts:
    inventory_cost: float
    backlog_cost: float
    variable_order_cost: float
    fixed_order_cost: float

    @property
    def total(self) -> float:
        return (self.inventory_cost + self.backlog_cost
                + self.variable_order_cost + self.fixed_order_cost)


@dataclass(frozen=True)
class AgentState:
    inventory: int
    backlog: int = 0
    # (arrival_step, quantity) for shipments heading to this agent
    pipeline: tuple[tuple[int, int], ...] = ()
    order_history: tuple[int, ...] = ()
    received_demand_history: tuple[int, ...] = ()
    shipped_history: tuple[int, ...] = ()
    inventory_history: tuple[int, ...] = ()
    backlog_history: tuple[int, ...] = ()

    @property
    def in_transit(self) -> int:
        return sum(q for _, q in self.pipeline)


@dataclass(frozen=True)
class EnvState:
    config: EnvConfig
    step: int
    agents: tuple[AgentState, ...]
    demand_trace: DemandTrace
    costs: tuple[tuple[StepCosts, ...], ...] = ()

    @property
    def cost_ledger(self) -> list[list[float]]:
        """Step x agent matrix of total local costs."""
        return [[c.total for c in row] for row in self.costs]

    @property
    def done(self) -> bool:
        return self.step >= self.config.horizon


@dataclass(frozen=True)
class Observation:
    """One agent's local view. Carries nothing from non-adjacent echelons."""

    agent_index: int
    step: int
    inventory: int
    backlog: int
    last_order: int
    incoming_deliveries: tuple[tuple[int, int], ...]
    downstream_demand: int
    memory_window: tuple[tuple[int, int, int], ...] = ()
    demand_history: tuple[int, ...] = field(default=(), repr=False)

    @property
    def in_transit(self) -> int:
        return sum(q for _, q in self.incoming_deliveries)


def step_costs(config: EnvConfig, inventory: int, backlog: int, order: int) -> StepCosts:
    """Local cost of one agent for one step; the fixed cost applies only to orders > 0."""
    return StepCosts(
        inventory_cost=config.holding_cost * inventory,
        backlog_cost=config.backlog_cost * backlog,
        variable_order_cost=config.variable_order_cost * order,
        fixed_order_cost=config.fixed_order_cost if order > 0 else 0.0,
    )


def reset(config: EnvConfig, trace: DemandTrace) -> EnvState:
    if len(trace.values) < config.horizon:
        raise ConfigurationError(
            f"demand trace has {len(trace.values)} values, horizon needs {config.horizon}")
    agents = tuple(AgentState(inventory=config.initial_inventory)
                   for _ in range(config.n_agents))
    return EnvState(config=config, step=0, agents=agents, demand_trace=trace)


def _check_orders(config: EnvConfig, orders: Sequence) -> list[int]:
    if len(orders) != config.n_agents:
        raise ContractViolation(f"expected {config.n_agents} orders, got {len(orders)}")
    checked = []
    for i, o in enumerate(orders):
        if isinstance(o, bool) or not isinstance(o, numbers.Integral):
            raise ContractViolation(f"order for agent {i} is not an integer: {o!r}")
        if not 0 <= o <= config.max_order:
            raise ContractViolation(
                f"order for agent {i} outside [0, {config.max_order}]: {o}")
        checked.append(int(o))
    return checked


def step(state: EnvState, orders: Sequence[int]
         ) -> tuple[EnvState, list[Observation], list[StepCosts]]:
    cfg = state.config
    if state.done:
        raise ContractViolation(f"episode finished at step {state.step}")
    orders = _check_orders(cfg, orders)
    t = state.step
    n = cfg.n_agents

    # deliveries due now
    inventory, pipelines = [], []
    for a in state.agents:
        arrived = sum(q for s, q in a.pipeline if s <= t)
        inventory.append(a.inventory + arrived)
        pipelines.append([(s, q) for s, q in a.pipeline if s > t])

    demand = [state.demand_trace.values[t]] + orders[:-1]
    shipped, backlog = [], []
    for i, a in enumerate(state.agents):
        owed = demand[i] + a.backlog
        ship = min(inventory[i], owed)
        inventory[i] -= ship
        shipped.append(ship)
        backlog.append(owed - ship)

    # shipments from agent i go to agent i-1; the raw source fills the top order
    arrivals = [0] * n
    for i in range(1, n):
        arrivals[i - 1] = shipped[i]
    arrivals[n - 1] = orders[n - 1]
    for i, q in enumerate(arrivals):
        if cfg.lead_time == 0:
            inventory[i] += q
        elif q:
            pipelines[i].append((t + cfg.lead_time, q))

    costs, agents = [], []
    for i, a in enumerate(state.agents):
        costs.append(step_costs(cfg, inventory[i], backlog[i], orders[i]))
        agents.append(AgentState(
            inventory=inventory[i],
            backlog=backlog[i],
            pipeline=tuple(pipelines[i]),
            order_history=a.order_history + (orders[i],),
            received_demand_history=a.received_demand_history + (demand[i],),
            shipped_history=a.shipped_history + (shipped[i],),
            inventory_history=a.inventory_history + (inventory[i],),
            backlog_history=a.backlog_history + (backlog[i],),
        ))

    new_state = replace(state, step=t + 1, agents=tuple(agents),
                        costs=state.costs + (tuple(costs),))
    return new_state, [observe(new_state, i) for i in range(n)], costs


def observe(state: EnvState, agent_index: int) -> Observation:
    if not 0 <= agent_index < state.config.n_agents:
        raise IndexError(f"agent_index {agent_index} out of range")
    a = state.agents[agent_index]
    w = state.config.memory_window
    triples = tuple(zip(a.inventory_history, a.backlog_history, a.order_history))
    return Observation(
        agent_index=agent_index,
        step=state.step,
        inventory=a.inventory,
        backlog=a.backlog,
        last_order=a.order_history[-1] if a.order_history else 0,
        incoming_deliveries=a.pipeline,
        downstream_demand=a.received_demand_history[-1] if a.received_demand_history else 0,
        memory_window=triples[-w:] if w else (),
        demand_history=a.received_demand_history,
    )


TRAJECTORY_COLUMNS = ("step", "agent", "order", "demand", "shipped", "inventory", "backlog",
                      "cost_inventory", "cost_backlog", "cost_variable", "cost_fixed",
                      "cost_total")


def trajectory_rows(state: EnvState) -> list[dict]:
    rows = []
    for t, step_costs in enumerate(state.costs):
        for i, c in enumerate(step_costs):
            a = state.agents[i]
            rows.append({
                "step": t,
                "agent": i,
                "order": a.order_history[t],
                "demand": a.received_demand_history[t],
                "shipped": a.shipped_history[t],
                "inventory": a.inventory_history[t],
                "backlog": a.backlog_history[t],
                "cost_inventory": c.inventory_cost,
                "cost_backlog": c.backlog_cost,
                "cost_variable": c.variable_order_cost,
                "cost_fixed": c.fixed_order_cost,
                "cost_total": c.total,
            })
    return rows


def write_trajectory_csv(state: EnvState, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        writer.writeheader()
        writer.writerows(trajectory_rows(state))
