"""Sequential supply-chain simulation with LLM consensus-seeking agents."""

from .agent import AgentMemory, PromptTemplate, build_prompt, parse_order, update_memory
from .demand import (DemandTrace, MjdParams, constant_trace, load_trace, merton_jump_diffusion,
                     save_trace, uniform_trace)
from .env import EnvConfig, EnvState, Observation, StepCosts, observe, reset, step
from .frameworks import (FrameworkSpec, StepDecision, decide_info_sharing, decide_negotiation,
                         decide_standalone, run_episode)
from .llm import (CannedProvider, ChatRequest, ProviderSpec, RecordingProvider, RemoteProvider,
                  ReplayProvider, ScriptedProvider, complete_with_retry)
from .metrics import (MetricsReport, aggregate_bullwhip, bullwhip_negligible, coeff_variation,
                      cumulative_global_cost)
from .policies import PolicySpec, ss_policy_decide, tool_agent_decide
from .tools import ToolOutput, eoq, forecast_demand_linreg

__version__ = "0.1.0"
