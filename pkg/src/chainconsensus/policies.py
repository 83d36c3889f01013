"""Non-LLM baseline policies: (S,s) restocking and direct tool agents."""

from __future__ import annotations

from dataclasses import dataclass

from .env import Observation
from .tools import make_tool

SS_POLICY = "ss_policy"
TOOL_AGENT = "tool_agent"


def inventory_position(obs: Observation) -> int:
    return obs.inventory + obs.in_transit - obs.backlog


def ss_policy_decide(obs: Observation, S: int = 100, s: int = 60, max_order: int = 100,
                     use_position: bool = True) -> int:
    """Order up to ``S`` when the level falls strictly below ``s``.

    With ``use_position=False`` the level is on-hand inventory only.
    """
    if not 0 <= s <= S:
        raise ValueError(f"need 0 <= s <= S, got S={S}, s={s}")
    level = inventory_position(obs) if use_position else obs.inventory
    if level >= s:
        return 0
    return max(0, min(max_order, S - level))


def tool_agent_decide(obs: Observation, tool) -> int:
    return tool(obs).recommended_order


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    S: int = 100
    s: int = 60
    tool_id: str | None = None
    use_position: bool = True
    lookback: int = 30

    def __post_init__(self):
        if self.kind not in (SS_POLICY, TOOL_AGENT):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == SS_POLICY and not 0 <= self.s <= self.S:
            raise ValueError(f"need 0 <= s <= S, got S={self.S}, s={self.s}")
        if self.kind == TOOL_AGENT and self.tool_id is None:
            raise ValueError("tool_agent needs a tool_id")

    def tool(self, env_config):
        return make_tool(self.tool_id, max_order=env_config.max_order, lookback=self.lookback,
                         ordering_cost=env_config.variable_order_cost,
                         holding_cost=env_config.holding_cost)
