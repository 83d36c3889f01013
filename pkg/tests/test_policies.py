import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from chainconsensus.demand import merton_jump_diffusion
from chainconsensus.env import EnvConfig, Observation, observe, reset, step
from chainconsensus.policies import (PolicySpec, inventory_position, ss_policy_decide,
                                     tool_agent_decide)
from chainconsensus.tools import EOQ, FORECAST, ToolOutput, make_tool


def _obs(inventory, pipeline=(), backlog=0, **kw):
    return Observation(agent_index=kw.pop("agent_index", 0), step=kw.pop("step", 5),
                       inventory=inventory, backlog=backlog, last_order=kw.pop("last_order", 0),
                       incoming_deliveries=tuple(pipeline),
                       downstream_demand=kw.pop("downstream_demand", 0), **kw)


def test_ss_examples():
    assert ss_policy_decide(_obs(55)) == 45
    assert ss_policy_decide(_obs(60)) == 0
    obs = _obs(10, pipeline=[(6, 30)], backlog=5)
    assert inventory_position(obs) == 35
    assert ss_policy_decide(obs) == 65


def test_on_hand_variant():
    obs = _obs(10, pipeline=[(6, 70)])
    assert ss_policy_decide(obs) == 0
    assert ss_policy_decide(obs, use_position=False) == 90


def test_ss_clamps_and_validates():
    assert ss_policy_decide(_obs(0, backlog=50)) == 100
    with pytest.raises(ValueError):
        ss_policy_decide(_obs(0), S=10, s=20)


@settings(max_examples=200)
@given(inv=st.integers(0, 200), back=st.integers(0, 100),
       pipe=st.lists(st.tuples(st.integers(1, 9), st.integers(0, 100)), max_size=4),
       agent=st.integers(0, 5), t=st.integers(0, 99), last=st.integers(0, 100),
       dem=st.integers(0, 100), hist=st.lists(st.integers(0, 20), max_size=10))
def test_ss_depends_only_on_position(inv, back, pipe, agent, t, last, dem, hist):
    base = _obs(inv, pipe, back)
    other = _obs(inv, pipe, back, agent_index=agent, step=t, last_order=last,
                 downstream_demand=dem, demand_history=tuple(hist),
                 memory_window=((1, 2, 3),))
    assert ss_policy_decide(base) == ss_policy_decide(other)


def test_tool_pass_through():
    class Fixed:
        def __init__(self, v):
            self.v = v

        def __call__(self, obs):
            return ToolOutput(EOQ, self.v, "")

    assert tool_agent_decide(_obs(0), Fixed(10)) == 10
    assert tool_agent_decide(_obs(0), Fixed(0)) == 0


@pytest.mark.parametrize("tool_id", [FORECAST, EOQ])
def test_tool_agent_orders_equal_tool_outputs_over_a_run(tool_id):
    cfg = EnvConfig()
    tool = make_tool(tool_id)
    state = reset(cfg, merton_jump_diffusion(seed=13))
    expected = [[] for _ in range(cfg.n_agents)]
    while not state.done:
        obs = [observe(state, i) for i in range(cfg.n_agents)]
        outs = [tool(o).recommended_order for o in obs]
        for i, v in enumerate(outs):
            expected[i].append(v)
        state, _, _ = step(state, [tool_agent_decide(o, tool) for o in obs])
    assert [list(a.order_history) for a in state.agents] == expected


def test_policy_spec():
    assert PolicySpec("tool_agent", tool_id=EOQ).tool(EnvConfig(variable_order_cost=2)) \
        .ordering_cost == 2
    with pytest.raises(ValueError):
        PolicySpec("tool_agent")
    with pytest.raises(ValueError):
        PolicySpec("base_stock")
    assert dataclasses.replace(PolicySpec("ss_policy"), S=80).S == 80
