"""Experiment cells, the experiment matrix, and ordering comparisons."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import operator
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .agent import PromptTemplate, read_templates
from .demand import DemandTrace, MjdParams, constant_trace, load_trace, merton_jump_diffusion, \
    save_trace, uniform_trace
from .env import ConfigurationError, EnvConfig, write_trajectory_csv
from .frameworks import FRAMEWORKS, METRIC_TOOL, FrameworkSpec, run_episode
from .llm import ProviderSpec
from .metrics import MetricsReport
from .policies import SS_POLICY, TOOL_AGENT, PolicySpec

logger = logging.getLogger(__name__)

BASELINES = (SS_POLICY, TOOL_AGENT)


@dataclass(frozen=True)
class TraceSource:
    generator: str = "mjd"
    seed: int = 13
    length: int | None = None
    params: dict = field(default_factory=dict, hash=False)
    file: str | None = None

    def load(self, length: int) -> DemandTrace:
        if self.file:
            return load_trace(self.file)
        n = self.length or length
        if self.generator == "mjd":
            return merton_jump_diffusion(MjdParams(**self.params), self.seed, n)
        if self.generator == "uniform":
            return uniform_trace(self.params.get("low", 0), self.params.get("high", 20),
                                 self.seed, n)
        if self.generator == "constant":
            return constant_trace(self.params.get("level", 10), n)
        raise ConfigurationError(f"unknown trace generator {self.generator!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    metric: str
    framework: str
    env: EnvConfig = field(default_factory=EnvConfig)
    tool: str | None = None
    model: str = "-"
    exp_no: int | None = None
    policy: dict = field(default_factory=dict, hash=False)
    framework_params: dict = field(default_factory=dict, hash=False)
    provider: ProviderSpec | None = None
    trace: TraceSource = field(default_factory=TraceSource)
    cv_warmup: int | None = None
    repeats: int = 1
    output_dir: str = "runs"

    def __post_init__(self):
        if self.metric not in METRIC_TOOL:
            raise ConfigurationError(f"{self.name}: unknown metric {self.metric!r}")
        if self.framework not in BASELINES + FRAMEWORKS:
            raise ConfigurationError(f"{self.name}: unknown framework {self.framework!r}")
        expected = METRIC_TOOL[self.metric]
        if self.framework == SS_POLICY:
            if self.tool is not None:
                raise ConfigurationError(f"{self.name}: the (S,s) policy takes no tool")
        elif self.tool != expected:
            raise ConfigurationError(
                f"{self.name}: metric {self.metric!r} pairs with tool {expected!r}, "
                f"got {self.tool!r}")
        if self.framework in FRAMEWORKS and self.provider is None:
            raise ConfigurationError(f"{self.name}: framework {self.framework!r} needs a provider")
        if self.trace.file and not Path(self.trace.file).is_file():
            raise ConfigurationError(f"{self.name}: trace file {self.trace.file} not found")
        if self.provider and self.provider.cassette_path \
                and not Path(self.provider.cassette_path).is_file():
            raise ConfigurationError(
                f"{self.name}: cassette {self.provider.cassette_path} not found")
        if self.framework in BASELINES and self.framework_params:
            raise ConfigurationError(f"{self.name}: baselines take no framework_params")
        if self.framework in FRAMEWORKS and self.policy:
            raise ConfigurationError(f"{self.name}: LLM frameworks take no policy")
        if self.repeats < 1:
            raise ConfigurationError(f"{self.name}: repeats must be >= 1")
        # surfaces bad policy/framework parameters before any side effect
        self.agent_spec()

    @property
    def is_baseline(self) -> bool:
        return self.framework in BASELINES

    def agent_spec(self):
        try:
            if self.framework == SS_POLICY:
                return PolicySpec(SS_POLICY, **self.policy)
            if self.framework == TOOL_AGENT:
                return PolicySpec(TOOL_AGENT, tool_id=self.tool, **self.policy)
            model_id = self.provider.model_id if self.provider else "scripted"
            return FrameworkSpec(self.framework, self.metric,
                                 **{"model_id": model_id, **self.framework_params})
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{self.name}: {exc}") from None

    @property
    def provider_label(self) -> str:
        if self.provider is None:
            return "none"
        if self.provider.kind == "scripted":
            s = self.provider.strategy
            if self.provider.upstream_strategy:
                s += "/" + self.provider.upstream_strategy
            return f"scripted:{s}"
        return self.provider.kind

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("output_dir")
        return d


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_dict(d: dict, base_dir=".") -> ExperimentConfig:
    d = dict(d)
    base_dir = Path(base_dir)
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    try:
        env = EnvConfig(**d.pop("env", {}) or {})
        trace = dict(d.pop("trace", {}) or {})
        if trace.get("file"):
            trace["file"] = str(base_dir / trace["file"])
        trace = TraceSource(**trace)
        provider = d.pop("provider", None)
        if provider:
            provider = dict(provider)
            for key in ("cassette_path", "record_path"):
                if provider.get(key):
                    provider[key] = str(base_dir / provider[key])
            provider = ProviderSpec(**provider)
        return ExperimentConfig(env=env, trace=trace, provider=provider or None, **d)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from None


def load_config(path, overrides: dict | None = None, defaults: dict | None = None
                ) -> ExperimentConfig:
    path = Path(path)
    raw = yaml.safe_load(path.read_text()) or {}
    raw = _deep_merge(defaults or {}, raw)
    raw = _deep_merge(raw, overrides or {})
    raw.setdefault("name", path.stem)
    return config_from_dict(raw, path.parent)


def config_digest(config: ExperimentConfig, trace: DemandTrace, template_version: str) -> str:
    payload = json.dumps({"config": config.to_dict(), "trace": list(trace.values),
                          "trace_seed": trace.seed, "templates": template_version},
                         sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


def _short_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    name: str
    config_digest: str
    metrics: MetricsReport
    wall_time: float
    transcript_path: str
    artifact_paths: dict
    trace_digest: str
    env_digest: str
    tags: dict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metrics"] = self.metrics.to_dict()
        return d

    @classmethod
    def load(cls, run_dir) -> "RunRecord":
        d = json.loads((Path(run_dir) / "record.json").read_text())
        d["metrics"] = MetricsReport.from_dict(d["metrics"])
        return cls(**d)


def _fresh_dir(root: Path, stem: str) -> Path:
    path = root / stem
    k = 2
    while path.exists():
        path = root / f"{stem}-r{k}"
        k += 1
    path.mkdir(parents=True)
    return path


def run(config: ExperimentConfig, output_dir=None, repeat: int = 0) -> RunRecord:
    """Run one cell and write its artifacts into a fresh digest-named directory."""
    env_cfg = config.env
    if repeat:
        config = replace(config, trace=replace(config.trace, seed=config.trace.seed + repeat))
    trace = config.trace.load(env_cfg.horizon)
    if len(trace) < env_cfg.horizon:
        raise ConfigurationError(
            f"{config.name}: trace has {len(trace)} values, horizon is {env_cfg.horizon}")
    spec = config.agent_spec()
    template = None
    if isinstance(spec, FrameworkSpec):
        template = PromptTemplate(spec.metric, spec.tool_directive, read_templates())
    version = template.version if template else PromptTemplate().version
    digest = config_digest(config, trace, version)

    out = _fresh_dir(Path(output_dir or config.output_dir), f"{config.name}-{digest[:12]}")
    paths = {name: str(out / fname) for name, fname in (
        ("config", "config.json"), ("trace", "trace.txt"), ("trajectory", "trajectory.csv"),
        ("decisions", "decisions.csv"), ("transcript", "transcript.jsonl"),
        ("metrics", "metrics.json"), ("metrics_csv", "metrics.csv"),
        ("record", "record.json"))}
    Path(paths["config"]).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True,
                                                default=str) + "\n")
    save_trace(trace, paths["trace"])

    backend = config.provider.build() if config.provider and not config.is_baseline else None
    t0 = time.perf_counter()
    result = run_episode(spec, env_cfg, trace, backend, cv_warmup=config.cv_warmup,
                         template=template, transcript_path=paths["transcript"])
    wall = time.perf_counter() - t0

    write_trajectory_csv(result.state, paths["trajectory"])
    rows = result.decision_rows()
    with open(paths["decisions"], "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "agent", "tool_value", "tentative",
                                                "final"])
        writer.writeheader()
        writer.writerows(rows)
    Path(paths["metrics"]).write_text(result.metrics.to_json())
    result.metrics.write_csv(paths["metrics_csv"])

    record = RunRecord(
        name=config.name, config_digest=digest, metrics=result.metrics, wall_time=wall,
        transcript_path=paths["transcript"], artifact_paths=paths,
        trace_digest=_short_digest(list(trace.values)), env_digest=_short_digest(asdict(env_cfg)),
        tags={"exp_no": config.exp_no, "metric": config.metric, "tool": config.tool,
              "model": config.model, "framework": config.framework,
              "provider": config.provider_label, "template_version": version,
              "repeat": repeat, "bound_violations": result.bound_violations},
    )
    Path(paths["record"]).write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True)
                                     + "\n")
    logger.info("%s: cost=%s bullwhip=%s (%.2fs)", config.name,
                result.metrics.cumulative_global_cost, result.metrics.aggregate_bullwhip, wall)
    return record


# ---------------------------------------------------------------- matrix

SUMMARY_COLUMNS = ("exp_no", "cell", "metric", "tool", "model", "framework", "provider",
                   "status", "cumulative_global_cost", "aggregate_bullwhip",
                   "bullwhip_negligible", "display", "run_dir", "error")


def load_matrix(matrix_file) -> list[ExperimentConfig]:
    path = Path(matrix_file)
    raw = yaml.safe_load(path.read_text()) or {}
    defaults = raw.get("defaults", {}) or {}
    configs = []
    for entry in raw.get("cells", []):
        if isinstance(entry, str):
            configs.append(load_config(path.parent / entry, defaults=defaults))
        else:
            merged = _deep_merge(defaults, entry)
            configs.append(config_from_dict(merged, path.parent))
    if not configs:
        raise ConfigurationError(f"{matrix_file}: no cells")
    return configs


def format_value(metric: str, report: MetricsReport | None) -> str:
    if report is None:
        return ""
    bw = report.aggregate_bullwhip
    bw_s = "undefined" if bw is None else f"{bw:.5g}"
    if metric == "cost":
        return f"{report.cumulative_global_cost:,.0f} (bw={bw_s})".replace(",", "'")
    return f"{bw_s} (costs={report.cumulative_global_cost:,.0f})".replace(",", "'")


def _summary_row(config: ExperimentConfig, record: RunRecord | None, error: str = "") -> dict:
    m = record.metrics if record else None
    return {
        "exp_no": config.exp_no, "cell": config.name, "metric": config.metric,
        "tool": config.tool or "-", "model": config.model, "framework": config.framework,
        "provider": config.provider_label, "status": "ok" if record else "failed",
        "cumulative_global_cost": m.cumulative_global_cost if m else "",
        "aggregate_bullwhip": "" if m is None or m.aggregate_bullwhip is None
        else m.aggregate_bullwhip,
        "bullwhip_negligible": "" if m is None else m.bullwhip_negligible,
        "display": format_value(config.metric, m),
        "run_dir": str(Path(record.artifact_paths["record"]).parent) if record else "",
        "error": error,
    }


def run_matrix(matrix_file, output_dir="runs", jobs: int = 1
               ) -> tuple[list[dict], list[RunRecord]]:
    """Run every cell; a failing cell is recorded and the matrix continues.

    Writes ``summary.csv`` (one row per cell) and ``summary_table.csv``
    (framework x model per metric) into ``output_dir``.
    """
    configs = load_matrix(matrix_file)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(config):
        try:
            return config, run(config, out / "cells"), ""
        except Exception as exc:  # a failing cell must not stop the matrix
            logger.exception("cell %s failed", config.name)
            return config, None, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, configs))
    else:
        results = [one(c) for c in configs]

    rows = [_summary_row(c, r, e) for c, r, e in results]
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    _write_pivot(rows, out / "summary_table.csv")
    return rows, [r for _, r, _ in results if r is not None]


def _write_pivot(rows: list[dict], path: Path) -> None:
    models = sorted({r["model"] for r in rows})
    table: dict[tuple[str, str], dict] = {}
    for r in rows:
        key = (r["metric"], r["framework"])
        table.setdefault(key, {"metric": r["metric"], "framework": r["framework"]})
        table[key][r["model"]] = r["display"] or r["status"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["metric", "framework", *models])
        writer.writeheader()
        writer.writerows(table.values())


# ---------------------------------------------------------------- compare

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
        "==": operator.eq}


class MismatchedRunsError(ValueError):
    pass


@dataclass
class AssertionResult:
    description: str
    passed: bool
    lhs: float | None
    rhs: float | None


@dataclass
class CompareReport:
    results: list[AssertionResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        return [f"{'PASS' if r.passed else 'FAIL'}  {r.description}  (lhs={r.lhs}, rhs={r.rhs})"
                for r in self.results]


def _metric_value(record: RunRecord, metric: str):
    if metric not in ("cumulative_global_cost", "aggregate_bullwhip"):
        raise ValueError(f"unknown metric {metric!r} in assertion")
    return getattr(record.metrics, metric)


def compare(records: list[RunRecord], assertions: list[dict]) -> CompareReport:
    """Evaluate ordering assertions such as ``{lhs, metric, op, rhs}`` or
    ``{lhs, metric, op, value}``; cells are matched by name or experiment number."""
    if len({(r.trace_digest, r.env_digest) for r in records}) > 1:
        raise MismatchedRunsError("records were produced on different traces or env configs")
    index: dict[str, RunRecord] = {}
    for r in records:
        index[r.name] = r
        if r.tags.get("exp_no") is not None:
            index[str(r.tags["exp_no"])] = r

    results = []
    for a in assertions:
        op = a.get("op", "<")
        if op not in _OPS:
            raise ValueError(f"unknown operator {op!r}")
        lhs_rec = index.get(str(a["lhs"]))
        if lhs_rec is None:
            raise KeyError(f"no record for {a['lhs']!r}")
        lhs = _metric_value(lhs_rec, a["metric"])
        if "value" in a:
            rhs, rhs_name = a["value"], str(a["value"])
        else:
            rhs_rec = index.get(str(a["rhs"]))
            if rhs_rec is None:
                raise KeyError(f"no record for {a['rhs']!r}")
            rhs, rhs_name = _metric_value(rhs_rec, a["metric"]), str(a["rhs"])
        desc = a.get("description") or f"{a['metric']}({a['lhs']}) {op} {rhs_name}"
        ok = lhs is not None and rhs is not None and _OPS[op](lhs, rhs)
        results.append(AssertionResult(desc, bool(ok), lhs, rhs))
    return CompareReport(results)


def load_assertions(path) -> list[dict]:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    return raw.get("assertions", raw if isinstance(raw, list) else [])
