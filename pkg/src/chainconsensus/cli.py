"""Command-line entry point: ``chainconsensus run|matrix|compare|gen-trace|replay``."""

from __future__ import annotations

import json
import logging
import sys
from importlib import resources
from pathlib import Path

import click

from .demand import MjdParams, constant_trace, merton_jump_diffusion, save_trace, uniform_trace
from .env import ConfigurationError
from .experiment import (RunRecord, compare as compare_records, load_assertions, load_config,
                         run as run_cell, run_matrix)


def default_matrix() -> Path:
    return Path(str(resources.files("chainconsensus") / "configs" / "table1_matrix.yaml"))


def _provider_overrides(kind, strategy, upstream_strategy, endpoint, model_id, record):
    prov = {}
    if kind:
        prov["kind"] = kind
    if strategy:
        prov["strategy"] = strategy
    if upstream_strategy:
        prov["upstream_strategy"] = upstream_strategy
    if endpoint:
        prov["endpoint"] = endpoint
    if model_id:
        prov["model_id"] = model_id
    if record:
        prov["record_path"] = str(Path(record).resolve())
    return prov


def _echo_record(record: RunRecord):
    m = record.metrics
    click.echo(f"{record.name}: cumulative_global_cost={m.cumulative_global_cost:g} "
               f"aggregate_bullwhip={m.aggregate_bullwhip}")
    click.echo(f"  artifacts: {Path(record.artifact_paths['record']).parent}")


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose):
    """Multi-echelon supply chain with LLM consensus-seeking agents."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output_dir", type=click.Path(file_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Override the trace seed.")
@click.option("--provider", "kind", type=click.Choice(["scripted", "replay", "remote"]))
@click.option("--strategy", default=None)
@click.option("--upstream-strategy", default=None)
@click.option("--endpoint", default=None)
@click.option("--model-id", default=None)
@click.option("--record", type=click.Path(dir_okay=False), default=None,
              help="Append every model exchange to this cassette.")
def run(config, output_dir, seed, kind, strategy, upstream_strategy, endpoint, model_id, record):
    """Run one experiment cell."""
    overrides = {}
    if seed is not None:
        overrides["trace"] = {"seed": seed}
    prov = _provider_overrides(kind, strategy, upstream_strategy, endpoint, model_id, record)
    if prov:
        overrides["provider"] = prov
    try:
        cfg = load_config(config, overrides)
    except ConfigurationError as exc:
        raise click.ClickException(str(exc))
    for r in range(cfg.repeats):
        _echo_record(run_cell(cfg, output_dir, repeat=r))


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--cassette", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "output_dir", type=click.Path(file_okay=False), default=None)
def replay(config, cassette, output_dir):
    """Re-run a cell offline from a recorded cassette."""
    overrides = {"provider": {"kind": "replay", "cassette_path": str(Path(cassette).resolve()),
                              "record_path": None}}
    try:
        cfg = load_config(config, overrides)
    except ConfigurationError as exc:
        raise click.ClickException(str(exc))
    _echo_record(run_cell(cfg, output_dir))


@main.command()
@click.argument("matrix_file", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--out", "output_dir", type=click.Path(file_okay=False), default="runs")
@click.option("--jobs", type=int, default=1, show_default=True)
def matrix(matrix_file, output_dir, jobs):
    """Run every cell of a matrix (default: the shipped 24-cell table)."""
    rows, _ = run_matrix(matrix_file or default_matrix(), output_dir, jobs)
    width = max(len(r["cell"]) for r in rows)
    for r in rows:
        click.echo(f"{r['cell']:<{width}}  {r['status']:<6}  {r['display'] or r['error']}")
    click.echo(f"summary: {Path(output_dir) / 'summary.csv'}")
    if any(r["status"] != "ok" for r in rows):
        sys.exit(1)


@main.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--assertions", "assertions_file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="YAML list of ordering assertions "
                                 "(default: the shipped table assertions).")
def compare(run_dirs, assertions_file):
    """Check ordering assertions over finished runs.

    RUN_DIRS may be run directories or matrix output directories.
    """
    dirs = []
    for d in map(Path, run_dirs):
        if (d / "record.json").is_file():
            dirs.append(d)
        else:
            dirs.extend(p.parent for p in sorted(d.glob("**/record.json")))
    records = [RunRecord.load(d) for d in dirs]
    path = assertions_file or (resources.files("chainconsensus") / "configs"
                               / "table1_assertions.yaml")
    report = compare_records(records, load_assertions(path))
    for line in report.lines():
        click.echo(line)
    if not report.passed:
        sys.exit(1)


@main.command("gen-trace")
@click.option("--generator", type=click.Choice(["mjd", "uniform", "constant"]), default="mjd")
@click.option("--seed", type=int, default=13, show_default=True)
@click.option("--length", type=int, default=100, show_default=True)
@click.option("--params", "params_json", default="{}",
              help="JSON object of generator parameters.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def gen_trace(generator, seed, length, params_json, out):
    """Generate a customer-demand trace file."""
    params = json.loads(params_json)
    if generator == "mjd":
        trace = merton_jump_diffusion(MjdParams(**params), seed, length)
    elif generator == "uniform":
        trace = uniform_trace(params.get("low", 0), params.get("high", 20), seed, length)
    else:
        trace = constant_trace(params.get("level", 10), length)
    save_trace(trace, out)
    click.echo(f"wrote {len(trace)} values to {out}")


if __name__ == "__main__":
    main()
