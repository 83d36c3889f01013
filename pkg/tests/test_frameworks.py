import dataclasses
import json

import pytest

from chainconsensus.demand import constant_trace, merton_jump_diffusion
from chainconsensus.env import EnvConfig, reset
from chainconsensus.frameworks import (INFO_SHARING, INFO_SHARING_TOOL, NEGOTIATION_TOOL,
                                       STANDALONE, STANDALONE_TOOL, FrameworkError,
                                       FrameworkSpec, decide, decide_info_sharing,
                                       decide_negotiation, decide_standalone, run_episode)
from chainconsensus.llm import CannedProvider, ChatProvider, ScriptedProvider
from chainconsensus.policies import PolicySpec


def _with_demands(histories, n=None, **cfg_kw):
    """Fresh state whose agents have the given received-demand histories."""
    n = n or len(histories)
    cfg = EnvConfig(n_agents=n, **cfg_kw)
    state = reset(cfg, constant_trace(5, cfg.horizon))
    agents = tuple(dataclasses.replace(a, received_demand_history=tuple(h))
                   for a, h in zip(state.agents, histories))
    return dataclasses.replace(state, agents=agents)


class Capture(ChatProvider):
    def __init__(self, inner):
        self.inner = inner
        self.prompts = []

    def complete(self, request):
        self.prompts.append(request.text)
        return self.inner.complete(request)


class FailAfter(ChatProvider):
    def __init__(self, calls):
        self.left = calls

    def complete(self, request):
        self.left -= 1
        if self.left < 0:
            raise RuntimeError("backend went away")
        return ScriptedProvider("midpoint").complete(request)


def test_spec_validation():
    with pytest.raises(ValueError):
        FrameworkSpec("debate")
    with pytest.raises(ValueError):
        FrameworkSpec(STANDALONE, num_iter=0)
    assert FrameworkSpec(NEGOTIATION_TOOL, metric="bullwhip").tool_id == "eoq"
    assert not FrameworkSpec(INFO_SHARING).uses_tool


def test_standalone_canned_five():
    state = reset(EnvConfig(), constant_trace(5, 100))
    dec = decide_standalone(FrameworkSpec(STANDALONE), state, CannedProvider(["5"]))
    assert dec.final_orders == [5, 5, 5]
    assert dec.conversations == []
    assert dec.tool_outputs == [None, None, None]


def test_standalone_tool_echo_equals_tool():
    state = _with_demands([(2, 4, 6), (3, 3, 3), (9, 9, 9)])
    dec = decide_standalone(FrameworkSpec(STANDALONE_TOOL), state, ScriptedProvider())
    assert dec.final_orders == [8, 3, 9]
    assert dec.final_orders == [t.recommended_order for t in dec.tool_outputs]


@pytest.mark.parametrize("metric,tool", [("cost", "forecast"), ("bullwhip", "eoq")])
def test_echo_episode_equals_tool_agent_baseline(metric, tool):
    cfg = EnvConfig()
    trace = merton_jump_diffusion(seed=3)
    llm = run_episode(FrameworkSpec(STANDALONE_TOOL, metric=metric), cfg, trace,
                      ScriptedProvider("echo_tool"))
    base = run_episode(PolicySpec("tool_agent", tool_id=tool), cfg, trace)
    assert llm.trajectory == base.trajectory
    assert llm.metrics == base.metrics


@pytest.mark.parametrize("n", range(2, 7))
@pytest.mark.parametrize("kind", [INFO_SHARING, INFO_SHARING_TOOL, NEGOTIATION_TOOL])
def test_n_minus_one_conversations(n, kind):
    state = reset(EnvConfig(n_agents=n), constant_trace(5, 100))
    dec = decide(FrameworkSpec(kind), state, ScriptedProvider("midpoint"))
    assert [c.pair for c in dec.conversations] == [(i, i + 1) for i in range(n - 1)]


def test_info_sharing_locality():
    state = reset(EnvConfig(), constant_trace(5, 100))
    agents = (dataclasses.replace(state.agents[0], inventory=111),
              dataclasses.replace(state.agents[1], inventory=444),
              dataclasses.replace(state.agents[2], inventory=777))
    state = dataclasses.replace(state, agents=agents)
    caps = [Capture(ScriptedProvider()) for _ in range(3)]
    dec = decide_info_sharing(FrameworkSpec(INFO_SHARING), state, caps)
    first = dec.conversations[0].messages[0][1]
    assert "inventory 111" in first and "777" not in first
    for p in caps[0].prompts:
        assert "777" not in p
    assert any("inventory 444" in p for p in caps[2].prompts)
    assert all("111" not in p for p in caps[2].prompts)


def test_info_sharing_tool_value_embedded():
    state = _with_demands([(2, 4, 6), (3, 3, 3), (9, 9, 9)])
    dec = decide_info_sharing(FrameworkSpec(INFO_SHARING_TOOL), state, ScriptedProvider())
    assert "tool value 8" in dec.conversations[0].messages[0][1]
    assert "tool value 3" in dec.conversations[1].messages[0][1]
    plain = decide_info_sharing(FrameworkSpec(INFO_SHARING), state, ScriptedProvider())
    assert "tool value" not in plain.conversations[0].messages[0][1]


def test_negotiation_midpoint():
    state = _with_demands([(4, 4, 4), (10, 10, 10)])
    dec = decide_negotiation(FrameworkSpec(NEGOTIATION_TOOL), state,
                             ScriptedProvider("midpoint"))
    conv = dec.conversations[0]
    assert conv.bounds == (4, 10)
    assert conv.agreement == (7, 7)
    assert dec.final_orders == [7, 7]
    assert dec.bound_violations == 0


def test_negotiation_degenerate_range():
    state = _with_demands([(8, 8, 8), (8, 8, 8)])
    for strategy in ("midpoint", "stubborn", "suggestible"):
        dec = decide_negotiation(FrameworkSpec(NEGOTIATION_TOOL), state,
                                 ScriptedProvider(strategy))
        assert dec.conversations[0].bounds == (8, 8)
        assert all(v == 8 for _, _, v in dec.conversations[0].annotations)


def _hand_simulate(low, high, tool_d, tool_u, num_iter):
    """Independent replay of stubborn (downstream) vs suggestible (upstream)."""
    last_d = last_u = None
    for _ in range(num_iter):
        last_d = last_d if last_d is not None else tool_d
        last_u = last_d
    return last_d, last_u


@pytest.mark.parametrize("num_iter", [1, 3, 5])
def test_stubborn_vs_suggestible(num_iter):
    state = _with_demands([(4, 4, 4), (10, 10, 10)])
    fw = FrameworkSpec(NEGOTIATION_TOOL, num_iter=num_iter)
    provider = ScriptedProvider("stubborn", upstream_strategy="suggestible")
    dec = decide_negotiation(fw, state, provider)
    conv = dec.conversations[0]
    opening = conv.annotations[0][2]
    assert opening == 4
    assert conv.agreement == _hand_simulate(4, 10, 4, 10, num_iter)
    assert dec.final_orders[0] == opening


def test_adversarial_responses_are_clamped():
    state = _with_demands([(4, 4, 4), (10, 10, 10)])
    dec = decide_negotiation(FrameworkSpec(NEGOTIATION_TOOL), state,
                             CannedProvider(["999999"]))
    assert dec.final_orders == [10, 10]
    assert dec.bound_violations > 0
    dec = decide_negotiation(FrameworkSpec(NEGOTIATION_TOOL), state, CannedProvider(["-5"]))
    assert dec.final_orders == [4, 4]


def test_unparsable_falls_back_to_tool():
    state = _with_demands([(4, 4, 4), (10, 10, 10)])
    dec = decide_standalone(FrameworkSpec(STANDALONE_TOOL), state, CannedProvider(["hmm"]))
    assert dec.final_orders == [4, 10]


def test_provider_list_length_checked():
    state = reset(EnvConfig(), constant_trace(5, 100))
    with pytest.raises(ValueError):
        decide_standalone(FrameworkSpec(STANDALONE), state, [ScriptedProvider()] * 2)


def test_wrong_decide_function():
    state = reset(EnvConfig(), constant_trace(5, 100))
    with pytest.raises(ValueError):
        decide_negotiation(FrameworkSpec(STANDALONE), state, ScriptedProvider())
    with pytest.raises(ValueError):
        decide(FrameworkSpec(STANDALONE), state, None)


def test_horizon_zero():
    res = run_episode(FrameworkSpec(STANDALONE), EnvConfig(horizon=0), constant_trace(5, 0),
                      ScriptedProvider())
    assert res.trajectory == []
    assert res.metrics.cumulative_global_cost == 0


def test_episode_determinism():
    cfg = EnvConfig(horizon=30)
    trace = merton_jump_diffusion(seed=13, length=30)
    fw = FrameworkSpec(NEGOTIATION_TOOL, metric="bullwhip")
    a = run_episode(fw, cfg, trace, ScriptedProvider("midpoint"))
    b = run_episode(fw, cfg, trace, ScriptedProvider("midpoint"))
    assert a.metrics.to_json() == b.metrics.to_json()
    assert a.transcript == b.transcript


def test_failure_names_agent_and_flushes_transcript(tmp_path):
    path = tmp_path / "t.jsonl"
    cfg = EnvConfig(horizon=10)
    # one negotiation step on 3 agents costs 3 + 2 * (2 * 3 + 2) = 19 calls
    with pytest.raises(FrameworkError, match=r"step 1, agent \d"):
        run_episode(FrameworkSpec(NEGOTIATION_TOOL), cfg, constant_trace(5, 10),
                    FailAfter(19 + 2), transcript_path=path)
    entries = [json.loads(line) for line in path.read_text().splitlines()]
    assert entries and {e["step"] for e in entries} == {0}
    assert set(entries[0]) == {"step", "pair", "round", "stage", "speaker", "text",
                               "parsed_value"}


def test_memory_grows_over_episode():
    cap = Capture(ScriptedProvider())
    run_episode(FrameworkSpec(STANDALONE), EnvConfig(horizon=3), constant_trace(5, 3), cap)
    assert "t-1:" not in cap.prompts[0]
    assert "t-2:" in cap.prompts[-1]
