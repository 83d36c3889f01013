"""Prompt assembly, order parsing and per-agent observation memory."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .env import EnvConfig, Observation
from .tools import EOQ, FORECAST, ToolOutput

COST = "cost"
BULLWHIP = "bullwhip"
METRICS = (COST, BULLWHIP)
DIRECTIVES = ("standard", "emphatic")

TEMPLATE_FILES = ("system", "setting", "objective_cost", "objective_bullwhip", "observation",
                  "memory", "tool_standard", "tool_emphatic", "shared_info", "negotiation",
                  "question_cost", "question_bullwhip")

TOOL_NAMES = {FORECAST: "linear-regression demand forecast", EOQ: "economic order quantity"}

DECIDE_QUESTION = "How many units do you order from your upstream supplier this step?"

_PLACEHOLDER = re.compile(r"\{\{\s*(\w+)\s*\}\}")


class OrderParseError(ValueError):
    pass


def render(text: str, values: dict) -> str:
    def sub(m):
        key = m.group(1)
        if key not in values:
            raise KeyError(f"template placeholder {{{{{key}}}}} has no value")
        return str(values[key])
    return _PLACEHOLDER.sub(sub, text)


@dataclass(frozen=True)
class PromptTemplate:
    metric: str = COST
    tool_directive: str = "standard"
    texts: dict = field(default=None, hash=False, compare=False)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.tool_directive not in DIRECTIVES:
            raise ValueError(f"unknown tool directive {self.tool_directive!r}")
        if self.texts is None:
            object.__setattr__(self, "texts", read_templates())
        missing = set(TEMPLATE_FILES) - set(self.texts)
        if missing:
            raise ValueError(f"missing template blocks: {sorted(missing)}")

    @property
    def version(self) -> str:
        return template_version(self.texts)


def read_templates(template_dir=None) -> dict[str, str]:
    """Load template blocks from ``template_dir`` or the packaged defaults."""
    root = Path(template_dir) if template_dir else resources.files("chainconsensus") / "templates"
    return {name: (root / f"{name}.txt").read_text().rstrip("\n") for name in TEMPLATE_FILES}


def template_version(texts: dict[str, str]) -> str:
    h = hashlib.sha256()
    for name in sorted(texts):
        h.update(name.encode() + b"\0" + texts[name].encode() + b"\0")
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class AgentMemory:
    window: int = 10
    entries: tuple[tuple[int, int, int], ...] = ()

    def render(self) -> str:
        n = len(self.entries)
        return "\n".join(f"- t-{n - k}: inventory {inv}, backlog {bl}, order {o}"
                         for k, (inv, bl, o) in enumerate(self.entries))


def update_memory(memory: AgentMemory, obs: Observation) -> AgentMemory:
    if memory.window == 0:
        return memory
    entries = memory.entries + ((obs.inventory, obs.backlog, obs.last_order),)
    return AgentMemory(memory.window, entries[-memory.window:])


@dataclass(frozen=True)
class NegotiationContext:
    role: str                   # "downstream" or "upstream"
    stage: str                  # "proposal" or "agreement"
    counterpart: int
    low: int
    high: int
    transcript: tuple[str, ...] = ()
    own_last: int | None = None
    other_last: int | None = None


def _fmt_incoming(obs: Observation) -> str:
    if not obs.incoming_deliveries:
        return "none"
    return ", ".join(f"{q} units arriving at step {s}" for s, q in obs.incoming_deliveries)


def prompt_blocks(template: PromptTemplate, obs: Observation, memory: AgentMemory | None = None,
                  tool_output: ToolOutput | None = None, shared_info: Sequence[str] | None = None,
                  negotiation: NegotiationContext | None = None,
                  env_config: EnvConfig | None = None) -> list[tuple[str, str]]:
    """Ordered (name, text) blocks of one prompt.

    The five base blocks are always present; tool, shared-information and
    negotiation blocks sit between memory and the closing question.
    """
    cfg = env_config or EnvConfig()
    t = template.texts
    values = {
        "agent": obs.agent_index, "n_agents": cfg.n_agents, "top": cfg.n_agents - 1,
        "lead_time": cfg.lead_time, "max_order": cfg.max_order,
        "holding_cost": f"{cfg.holding_cost:g}", "backlog_cost": f"{cfg.backlog_cost:g}",
        "variable_order_cost": f"{cfg.variable_order_cost:g}",
        "fixed_order_cost": f"{cfg.fixed_order_cost:g}",
        "step": obs.step, "inventory": obs.inventory, "backlog": obs.backlog,
        "last_order": obs.last_order, "incoming": _fmt_incoming(obs),
        "downstream_demand": obs.downstream_demand,
    }
    memory = memory or AgentMemory()
    blocks = [
        ("setting", render(t["setting"], values)),
        ("objective", render(t[f"objective_{template.metric}"], values)),
        ("observation", render(t["observation"], values)),
        ("memory", render(t["memory"], {"rows": memory.render()}) if memory.entries else ""),
    ]
    if tool_output is not None:
        blocks.append(("tool", render(t[f"tool_{template.tool_directive}"], {
            "tool_name": TOOL_NAMES.get(tool_output.tool_id, tool_output.tool_id),
            "tool_value": int(tool_output.recommended_order)})))
    if shared_info:
        blocks.append(("shared_info", render(t["shared_info"], {
            "messages": "\n".join(f"- {m}" for m in shared_info)})))
    question = DECIDE_QUESTION
    if negotiation is not None:
        blocks.append(("negotiation", _negotiation_block(t["negotiation"], negotiation, obs)))
        question = ("What order quantity do you propose?" if negotiation.stage == "proposal"
                    else "What is your definitive order quantity for this step?")
    blocks.append(("question", render(t[f"question_{template.metric}"],
                                      {"question": question, "max_order": cfg.max_order})))
    return blocks


def _negotiation_block(text: str, ctx: NegotiationContext, obs: Observation) -> str:
    side = "upstream" if ctx.counterpart > obs.agent_index else "downstream"
    last = []
    if ctx.own_last is not None:
        last.append(f"YOUR LAST PROPOSAL: {ctx.own_last}")
    if ctx.other_last is not None:
        last.append(f"COUNTERPART LAST PROPOSAL: {ctx.other_last}")
    if ctx.stage == "proposal":
        instruction = "Make a proposal inside the range and briefly justify it."
    else:
        instruction = ("The negotiation rounds are over. Name the order quantity you "
                       "commit to; your neighbour does the same.")
    return render(text, {
        "counterpart_side": side, "counterpart": ctx.counterpart, "role": ctx.role,
        "stage": ctx.stage, "low": ctx.low, "high": ctx.high,
        "transcript": "\n".join(ctx.transcript) if ctx.transcript else "(no messages yet)",
        "last_proposals": "\n".join(last), "instruction": instruction,
    })


def build_prompt(template: PromptTemplate, obs: Observation, memory: AgentMemory | None = None,
                 tool_output: ToolOutput | None = None, shared_info: Sequence[str] | None = None,
                 negotiation: NegotiationContext | None = None,
                 env_config: EnvConfig | None = None) -> str:
    blocks = prompt_blocks(template, obs, memory, tool_output, shared_info, negotiation,
                           env_config)
    return "\n\n".join(text for _, text in blocks if text)


# first integer not glued to letters, digits or a decimal point
_INT_RE = re.compile(r"(?<![\w.])(-?)([0-9]{1,3}(?:,[0-9]{3})+|[0-9]+)(?![0-9]|\.[0-9]|[A-Za-z_])")


def parse_order(text: str, max_order: int = 100) -> int:
    """First standalone integer in ``text``, clamped to [0, max_order]."""
    m = _INT_RE.search(text or "")
    if m is None:
        raise OrderParseError(f"no integer in response {text[:60]!r}" if text
                              else "empty response")
    sign, digits = m.groups()
    digits = digits.replace(",", "")
    if sign:
        return 0
    if len(digits.lstrip("0")) > len(str(max_order)):
        return max_order
    return min(max_order, int(digits))
