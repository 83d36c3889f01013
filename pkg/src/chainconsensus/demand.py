"""Seeded customer-demand traces and their text file format."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

DEMAND_MIN = 0
DEMAND_MAX = 20


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DemandTrace:
    values: tuple[int, ...]
    seed: int | None = None
    generator_id: str = "custom"
    params: dict = field(default_factory=dict, hash=False)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class MjdParams:
    """Per-step Merton jump diffusion on the log demand level.

    Defaults were calibrated so a 100-step trace starts around 8 units and
    usually contains one upward jump that pins demand near the cap.
    """

    drift: float = 0.0
    volatility: float = 0.05
    jump_intensity: float = 0.03
    jump_mean: float = 1.0
    jump_sd: float = 0.2
    initial_level: float = 8.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"MJD parameter {name} is not finite: {value}")
        if self.volatility < 0:
            raise ValueError("volatility must be >= 0")
        if self.jump_intensity < 0:
            raise ValueError("jump_intensity must be >= 0")
        if self.jump_sd < 0:
            raise ValueError("jump_sd must be >= 0")
        if self.initial_level <= 0:
            raise ValueError("initial_level must be > 0")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _clamp(v: int, lo: int = DEMAND_MIN, hi: int = DEMAND_MAX) -> int:
    return max(lo, min(hi, v))


def merton_jump_diffusion(params: MjdParams | None = None, seed: int = 0,
                          length: int = 100) -> DemandTrace:
    params = params or MjdParams()
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal(length)
    n_jumps = rng.poisson(params.jump_intensity, length)
    log_level = math.log(params.initial_level)
    values = []
    for z, k in zip(shocks, n_jumps):
        values.append(_clamp(round_half_up(math.exp(log_level))))
        jump = float(rng.normal(params.jump_mean, params.jump_sd, k).sum()) if k else 0.0
        log_level += (params.drift - 0.5 * params.volatility ** 2
                      + params.volatility * z + jump)
    return DemandTrace(tuple(values), seed, "mjd", asdict(params))


def _check_level(name, v):
    if not DEMAND_MIN <= v <= DEMAND_MAX:
        raise ValueError(f"{name}={v} outside [{DEMAND_MIN}, {DEMAND_MAX}]")


def constant_trace(level: int, length: int) -> DemandTrace:
    _check_level("level", level)
    return DemandTrace((int(level),) * length, None, "constant", {"level": int(level)})


def uniform_trace(low: int, high: int, seed: int, length: int) -> DemandTrace:
    _check_level("low", low)
    _check_level("high", high)
    if low > high:
        raise ValueError("low must be <= high")
    rng = np.random.default_rng(seed)
    values = tuple(int(v) for v in rng.integers(low, high + 1, size=length))
    return DemandTrace(values, seed, "uniform", {"low": low, "high": high})


def save_trace(trace: DemandTrace, path) -> None:
    lines = [
        f"# generator={trace.generator_id}",
        f"# seed={'' if trace.seed is None else trace.seed}",
        f"# params={json.dumps(trace.params, sort_keys=True)}",
        f"# length={len(trace.values)}",
    ]
    lines.extend(str(v) for v in trace.values)
    Path(path).write_text("\n".join(lines) + "\n")


def load_trace(path) -> DemandTrace:
    header: dict[str, str] = {}
    values: list[int] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                raise TraceFormatError(f"line {lineno}: malformed header {raw!r}")
            header[key.strip()] = value.strip()
            continue
        try:
            values.append(int(line))
        except ValueError:
            raise TraceFormatError(f"line {lineno}: not an integer: {raw!r}") from None

    for key in ("generator", "seed", "params", "length"):
        if key not in header:
            raise TraceFormatError(f"missing header '# {key}=...'")
    try:
        expected = int(header["length"])
        params = json.loads(header["params"])
        seed = int(header["seed"]) if header["seed"] else None
    except ValueError as exc:
        raise TraceFormatError(f"bad header value: {exc}") from None
    if len(values) != expected:
        raise TraceFormatError(f"expected {expected} values, found {len(values)} (truncated?)")
    return DemandTrace(tuple(values), seed, header["generator"], params)
