"""Consensus-seeking decision frameworks and the episode loop.

Each step: observe, tentative decision, pairwise communication along the
chain (most-downstream pair first), final decision, then one simultaneous
environment transition.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

from . import env as sim
from .agent import (BULLWHIP, COST, AgentMemory, NegotiationContext, PromptTemplate,
                    build_prompt, parse_order, read_templates, update_memory)
from .demand import DemandTrace
from .env import ConfigurationError, EnvConfig, EnvState, Observation
from .llm import ChatProvider, ChatRequest, complete_with_retry
from .metrics import MetricsReport, build_report
from .policies import SS_POLICY, PolicySpec, ss_policy_decide
from .tools import EOQ, FORECAST, ToolOutput, make_tool

logger = logging.getLogger(__name__)

STANDALONE = "standalone"
STANDALONE_TOOL = "standalone_tool"
INFO_SHARING = "info_sharing"
INFO_SHARING_TOOL = "info_sharing_tool"
NEGOTIATION_TOOL = "negotiation_tool"
FRAMEWORKS = (STANDALONE, STANDALONE_TOOL, INFO_SHARING, INFO_SHARING_TOOL, NEGOTIATION_TOOL)

METRIC_TOOL = {COST: FORECAST, BULLWHIP: EOQ}


class FrameworkError(RuntimeError):
    """A backend failure while deciding for one agent."""


@dataclass(frozen=True)
class FrameworkSpec:
    kind: str
    metric: str = COST
    num_iter: int = 3
    tool_directive: str = "standard"
    max_attempts: int = 3
    lookback: int = 30
    temperature: float = 0.1
    max_output_tokens: int = 90
    model_id: str = "scripted"

    def __post_init__(self):
        if self.kind not in FRAMEWORKS:
            raise ValueError(f"unknown framework {self.kind!r}")
        if self.metric not in METRIC_TOOL:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.num_iter < 1:
            raise ValueError("num_iter must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    @property
    def tool_id(self) -> str:
        return METRIC_TOOL[self.metric]

    @property
    def uses_tool(self) -> bool:
        return self.kind in (STANDALONE_TOOL, INFO_SHARING_TOOL, NEGOTIATION_TOOL)


@dataclass
class Conversation:
    pair: tuple[int, int]
    messages: list[tuple[int, str]] = field(default_factory=list)
    bounds: tuple[int, int] | None = None
    agreement: tuple[int, int] | None = None
    # per message: (round, stage, parsed value or None)
    annotations: list[tuple[int, str, int | None]] = field(default_factory=list)

    def add(self, speaker: int, text: str, round_: int, stage: str, value: int | None = None):
        self.messages.append((speaker, text))
        self.annotations.append((round_, stage, value))


@dataclass
class StepDecision:
    tentative_orders: list[int]
    final_orders: list[int]
    conversations: list[Conversation] = field(default_factory=list)
    tool_outputs: list[ToolOutput | None] = field(default_factory=list)
    bound_violations: int = 0


class _Context:
    """Per-step plumbing shared by the decide_* functions."""

    def __init__(self, framework: FrameworkSpec, state: EnvState, backend,
                 memories: Sequence[AgentMemory] | None, template: PromptTemplate | None):
        self.fw = framework
        self.state = state
        self.cfg = state.config
        n = self.cfg.n_agents
        if isinstance(backend, ChatProvider):
            self.providers = [backend] * n
        else:
            self.providers = list(backend)
            if len(self.providers) != n:
                raise ConfigurationError(f"need {n} providers, got {len(self.providers)}")
        self.template = template or PromptTemplate(framework.metric, framework.tool_directive)
        self.obs = [sim.observe(state, i) for i in range(n)]
        if memories is None:
            memories = [AgentMemory(self.cfg.memory_window, o.memory_window) for o in self.obs]
        self.memories = list(memories)
        self.tool_outputs: list[ToolOutput | None] = [None] * n
        if framework.uses_tool:
            tool = make_tool(framework.tool_id, max_order=self.cfg.max_order,
                             lookback=framework.lookback,
                             ordering_cost=self.cfg.variable_order_cost,
                             holding_cost=self.cfg.holding_cost)
            self.tool_outputs = [tool(o) for o in self.obs]

    def fallback(self, i: int) -> int:
        t = self.tool_outputs[i]
        return t.recommended_order if t is not None else self.obs[i].last_order

    def ask(self, i: int, shared_info=None, negotiation=None, fallback=None) -> int:
        prompt = build_prompt(self.template, self.obs[i], self.memories[i],
                              self.tool_outputs[i], shared_info, negotiation, self.cfg)
        return self.ask_prompt(i, prompt, fallback)

    def ask_prompt(self, i: int, prompt: str, fallback=None) -> int:
        request = ChatRequest(self.template.texts["system"], (("user", prompt),),
                              self.fw.temperature, self.fw.max_output_tokens, self.fw.model_id)
        return self.ask_request(i, request, fallback)[0]

    def ask_request(self, i: int, request: ChatRequest, fallback=None) -> tuple[int, str]:
        seen = []

        def parser(text):
            seen.append(text)
            return parse_order(text, self.cfg.max_order)

        try:
            value = complete_with_retry(
                self.providers[i], request, parser, self.fw.max_attempts,
                self.fallback(i) if fallback is None else fallback)
        except Exception as exc:
            raise FrameworkError(f"step {self.state.step}, agent {i}: {exc}") from exc
        return value, seen[-1] if seen else ""

    def tentative(self) -> list[int]:
        return [self.ask(i) for i in range(self.cfg.n_agents)]


def decide_standalone(framework: FrameworkSpec, state: EnvState, backend,
                      memories=None, template=None) -> StepDecision:
    if framework.kind not in (STANDALONE, STANDALONE_TOOL):
        raise ValueError(f"decide_standalone cannot run {framework.kind!r}")
    ctx = _Context(framework, state, backend, memories, template)
    orders = ctx.tentative()
    return StepDecision(orders, list(orders), [], ctx.tool_outputs)


def share_message(obs: Observation, tentative: int, tool_output: ToolOutput | None) -> str:
    """Summary an agent sends to its upstream neighbour; only its own state."""
    parts = [f"inventory {obs.inventory}", f"backlog {obs.backlog}",
             f"last order {obs.last_order}", f"demand received {obs.downstream_demand}",
             f"tentative order {tentative}"]
    if tool_output is not None:
        parts.append(f"tool value {tool_output.recommended_order}")
    return f"Echelon {obs.agent_index} reports: " + ", ".join(parts) + "."


def decide_info_sharing(framework: FrameworkSpec, state: EnvState, backend,
                        memories=None, template=None) -> StepDecision:
    if framework.kind not in (INFO_SHARING, INFO_SHARING_TOOL):
        raise ValueError(f"decide_info_sharing cannot run {framework.kind!r}")
    ctx = _Context(framework, state, backend, memories, template)
    n = ctx.cfg.n_agents
    tentative = ctx.tentative()
    shared: list[list[str]] = [[] for _ in range(n)]
    conversations = []
    for d in range(n - 1):
        u = d + 1
        msg = share_message(ctx.obs[d], tentative[d], ctx.tool_outputs[d])
        conv = Conversation((d, u))
        conv.add(d, msg, 1, "share")
        conversations.append(conv)
        shared[d].append(f"You sent to echelon {u} (upstream): {msg}")
        shared[u].append(f"Received from echelon {d} (downstream): {msg}")
    final = [ctx.ask(i, shared_info=shared[i]) for i in range(n)]
    return StepDecision(tentative, final, conversations, ctx.tool_outputs)


def _transcript_line(speaker: int, role: str, round_: int, value: int, raw: int | None,
                     text: str) -> str:
    note = f" (clamped from {raw})" if raw is not None and raw != value else ""
    return f"[round {round_}] echelon {speaker} ({role}) proposes {value}{note}: {text.strip()}"


def decide_negotiation(framework: FrameworkSpec, state: EnvState, backend,
                       memories=None, template=None) -> StepDecision:
    """Bounded negotiation around the two tool outputs of every adjacent pair.

    The downstream agent opens; ``num_iter`` back-and-forth passes follow,
    then both name a definitive amount. Out-of-range answers are clamped to
    the bounds and counted as violations. The downstream party's definitive
    amount becomes its order. The top agent, never a downstream party, orders
    its own definitive amount from the last pair.
    """
    if framework.kind != NEGOTIATION_TOOL:
        raise ValueError(f"decide_negotiation cannot run {framework.kind!r}")
    ctx = _Context(framework, state, backend, memories, template)
    n = ctx.cfg.n_agents
    tentative = ctx.tentative()
    final = list(tentative)
    conversations = []
    violations = 0
    for d in range(n - 1):
        u = d + 1
        lo_hi = sorted((ctx.tool_outputs[d].recommended_order,
                        ctx.tool_outputs[u].recommended_order))
        low, high = lo_hi
        conv = Conversation((d, u), bounds=(low, high))
        msg_d = share_message(ctx.obs[d], tentative[d], ctx.tool_outputs[d])
        msg_u = share_message(ctx.obs[u], tentative[u], ctx.tool_outputs[u])
        shared = {d: [f"Received from echelon {u} (upstream): {msg_u}"],
                  u: [f"Received from echelon {d} (downstream): {msg_d}"]}
        roles = {d: "downstream", u: "upstream"}
        transcript: list[str] = []
        last: dict[int, int | None] = {d: None, u: None}

        def speak(agent, stage, round_):
            nonlocal violations
            other = u if agent == d else d
            neg = NegotiationContext(roles[agent], stage, other, low, high,
                                     tuple(transcript), last[agent], last[other])
            prompt = build_prompt(ctx.template, ctx.obs[agent], ctx.memories[agent],
                                  ctx.tool_outputs[agent], shared[agent], neg, ctx.cfg)
            request = ChatRequest(ctx.template.texts["system"], (("user", prompt),),
                                  framework.temperature, framework.max_output_tokens,
                                  framework.model_id)
            raw, text = ctx.ask_request(agent, request)
            if not low <= raw <= high:
                violations += 1
            return raw, text

        for r in range(1, framework.num_iter + 1):
            for agent in (d, u):
                raw, text = speak(agent, "proposal", r)
                value = min(high, max(low, raw))
                last[agent] = value
                transcript.append(_transcript_line(agent, roles[agent], r, value, raw, text))
                conv.add(agent, text, r, "proposal", value)
        definitive = {}
        for agent in (d, u):
            raw, text = speak(agent, "agreement", framework.num_iter + 1)
            value = min(high, max(low, raw))
            definitive[agent] = value
            conv.add(agent, text, framework.num_iter + 1, "agreement", value)
        conv.agreement = (definitive[d], definitive[u])
        if definitive[d] != definitive[u]:
            logger.info("step %d pair (%d,%d) disagreed: %d vs %d", state.step, d, u,
                        definitive[d], definitive[u])
        final[d] = definitive[d]
        if u == n - 1:
            final[u] = definitive[u]
        conversations.append(conv)
    return StepDecision(tentative, final, conversations, ctx.tool_outputs, violations)


def decide_policy(policy: PolicySpec, state: EnvState) -> StepDecision:
    cfg = state.config
    obs = [sim.observe(state, i) for i in range(cfg.n_agents)]
    if policy.kind == SS_POLICY:
        orders = [ss_policy_decide(o, policy.S, policy.s, cfg.max_order, policy.use_position)
                  for o in obs]
        return StepDecision(orders, list(orders), [], [None] * cfg.n_agents)
    tool = policy.tool(cfg)
    outputs = [tool(o) for o in obs]
    orders = [t.recommended_order for t in outputs]
    return StepDecision(orders, list(orders), [], outputs)


def decide(framework, state: EnvState, backend=None, memories=None, template=None
           ) -> StepDecision:
    if isinstance(framework, PolicySpec):
        return decide_policy(framework, state)
    if backend is None:
        raise ConfigurationError(f"framework {framework.kind!r} needs an LLM backend")
    if framework.kind in (STANDALONE, STANDALONE_TOOL):
        return decide_standalone(framework, state, backend, memories, template)
    if framework.kind in (INFO_SHARING, INFO_SHARING_TOOL):
        return decide_info_sharing(framework, state, backend, memories, template)
    return decide_negotiation(framework, state, backend, memories, template)


@dataclass
class EpisodeResult:
    state: EnvState
    metrics: MetricsReport
    decisions: list[StepDecision]
    transcript: list[dict]

    @property
    def trajectory(self) -> list[dict]:
        return sim.trajectory_rows(self.state)

    @property
    def bound_violations(self) -> int:
        return sum(d.bound_violations for d in self.decisions)

    def write_transcript(self, path) -> None:
        _dump_jsonl(self.transcript, path)

    def decision_rows(self) -> list[dict]:
        rows = []
        for t, dec in enumerate(self.decisions):
            for i, (tent, fin) in enumerate(zip(dec.tentative_orders, dec.final_orders)):
                tool = dec.tool_outputs[i] if dec.tool_outputs else None
                rows.append({"step": t, "agent": i,
                             "tool_value": "" if tool is None else tool.recommended_order,
                             "tentative": tent, "final": fin})
        return rows


def _transcript_entries(step: int, decision: StepDecision) -> list[dict]:
    out = []
    for conv in decision.conversations:
        for (speaker, text), (round_, stage, value) in zip(conv.messages, conv.annotations):
            out.append({"step": step, "pair": list(conv.pair), "round": round_, "stage": stage,
                        "speaker": speaker, "text": text, "parsed_value": value})
    return out


def run_episode(framework, env_config: EnvConfig, trace: DemandTrace, backend=None,
                cv_warmup: int | None = None, template: PromptTemplate | None = None,
                transcript_path=None) -> EpisodeResult:
    """Run ``env_config.horizon`` decide-then-step transitions.

    ``framework`` is a :class:`FrameworkSpec` (needs ``backend``) or a baseline
    :class:`PolicySpec`. Coefficients of variation skip the first
    ``cv_warmup`` steps (default: the lead time). When ``transcript_path`` is
    given, the transcript is flushed there even if a step fails.
    """
    if isinstance(framework, FrameworkSpec) and template is None:
        template = PromptTemplate(framework.metric, framework.tool_directive, read_templates())
    state = sim.reset(env_config, trace)
    memories = [AgentMemory(env_config.memory_window) for _ in range(env_config.n_agents)]
    decisions: list[StepDecision] = []
    transcript: list[dict] = []
    try:
        while not state.done:
            dec = decide(framework, state, backend, memories, template)
            decisions.append(dec)
            transcript.extend(_transcript_entries(state.step, dec))
            state, observations, _ = sim.step(state, dec.final_orders)
            memories = [update_memory(m, o) for m, o in zip(memories, observations)]
    except Exception:
        if transcript_path is not None:
            _dump_jsonl(transcript, transcript_path)
        raise
    warmup = env_config.lead_time if cv_warmup is None else cv_warmup
    report = build_report(state.cost_ledger, [a.order_history for a in state.agents], warmup)
    result = EpisodeResult(state, report, decisions, transcript)
    if transcript_path is not None:
        result.write_transcript(transcript_path)
    return result


def _dump_jsonl(entries, path):
    with open(path, "w") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
