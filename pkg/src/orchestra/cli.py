"""Command-line entry point: ``orchestra run|bench|trace show|serve|tools validate``."""

from __future__ import annotations

import hashlib
import json
import re
import sys
from pathlib import Path

import click

from . import evaluation, registry as registry_mod, trace as trace_mod
from .agents import external
from .config import ConfigError, RunConfig
from .engine import CaseResult
from .errors import BUDGET_PREFIX, MalformedRecord, OrchestraError, SchemaViolation
from .trace import Question, TraceStore

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BUDGET = 2
EXIT_FAILED = 3


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)[:80] or "case"


def run_options(f):
    options = [
        click.option("--config", "config_file", type=click.Path(), help="JSON run config; its values override flags."),
        click.option("--registry", type=click.Path(), help="Tool registry JSON."),
        click.option("--script", type=click.Path(), help="Scripted backend file (JSONL)."),
        click.option("--base-url", help="Chat-completions base URL (env ORCHESTRA_BASE_URL)."),
        click.option("--model", help="Model name for the HTTP backend."),
        click.option("--k", "k", type=int, help="Trajectories per case."),
        click.option("--strategies", type=click.Path(), help="JSON list of strategy descriptors."),
        click.option("--max-steps", type=int),
        click.option("--max-wall-seconds", type=float),
        click.option("--max-tool-failures", type=int),
        click.option("--out", type=click.Path(), help="Output directory."),
        click.option("--seed", type=int, help="Base seed; trajectory i uses seed+i."),
        click.option("--lenient", is_flag=True, default=None, help="Accept a marker-free segment as the answer."),
        click.option("--workers", type=int, help="Parallel trajectories per case."),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


def _config(opts: dict) -> RunConfig:
    budget = {
        key: opts.pop(flag)
        for flag, key in (
            ("max_steps", "max_steps"),
            ("max_wall_seconds", "max_wall_seconds"),
            ("max_tool_failures", "max_consecutive_tool_failures"),
        )
        if opts.get(flag) is not None
    }
    for flag in ("max_steps", "max_wall_seconds", "max_tool_failures"):
        opts.pop(flag, None)
    lenient = opts.pop("lenient", None)
    config_file = opts.pop("config_file", None)
    flags = dict(opts)
    if budget:
        flags["budget"] = budget
    if lenient:
        flags["strict"] = False
    return RunConfig.resolve(flags, config_file)


@click.group()
def main() -> None:
    """Tool-augmented reasoning runtime."""


@main.command("run")
@click.argument("question", required=False)
@click.option("--question-file", type=click.Path(), help="JSON file holding one question object.")
@run_options
def cmd_run(question, question_file, **opts):
    """Run k trajectories for one question and print the aggregated answer."""
    try:
        cfg = _config(opts)
        if question_file:
            path = Path(question_file)
            if not path.exists():
                raise ConfigError(f"question file not found: {path}")
            q = evaluation.parse_question(json.loads(path.read_text(encoding="utf-8")))
        elif question:
            q = Question(id="q-" + hashlib.sha1(question.encode("utf-8")).hexdigest()[:10], text=question)
        else:
            raise ConfigError("give a question or --question-file")
        engine = cfg.make_engine()
        strategies = cfg.load_strategies()
    except (ConfigError, OrchestraError, ValueError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    store = TraceStore(out / f"{_safe_name(q.id)}.jsonl")
    result = engine.run_case(q, cfg.k, strategies, cfg.seed, cfg.workers, store)
    (out / f"{_safe_name(q.id)}.summary.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")
    click.echo(result.answer if result.answer is not None else "(no answer)")
    sys.exit(_run_exit_code(result))


def _run_exit_code(result: CaseResult) -> int:
    if any(t.finalized for t in result.trajectories):
        return EXIT_OK
    if all(t.error and t.error.startswith(BUDGET_PREFIX) for t in result.trajectories):
        return EXIT_BUDGET
    return EXIT_FAILED


def run_bench(cfg: RunConfig, echo=click.echo) -> dict[str, evaluation.MetricsReport]:
    """Run every dataset question and write metrics.json / metrics.txt / cases.jsonl under ``cfg.out``."""
    questions = evaluation.load_dataset(cfg.dataset)  # fail before any generation
    engine = cfg.make_engine()
    strategies = cfg.load_strategies()
    out = Path(cfg.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    cases = []
    summaries = []
    for q in questions:
        store_path = out / "traces" / f"{_safe_name(q.id)}.jsonl"
        if store_path.exists():
            store_path.unlink()
        result = engine.run_case(q, cfg.k, strategies, cfg.seed, cfg.workers, TraceStore(store_path))
        cases.append((q, result.normalized_answers))
        summaries.append(result.to_dict())
    reports = evaluation.evaluate(cases, cfg.k)
    (out / "metrics.json").write_text(evaluation.reports_json(reports), encoding="utf-8")
    table = evaluation.format_table(reports)
    (out / "metrics.txt").write_text(table, encoding="utf-8")
    with open(out / "cases.jsonl", "w", encoding="utf-8") as fh:
        for s in summaries:
            fh.write(json.dumps(s, sort_keys=True) + "\n")
    echo(table, nl=False)
    return reports


@main.command("bench")
@click.argument("dataset", type=click.Path())
@run_options
def cmd_bench(dataset, **opts):
    """Score a dataset under best@1, majority@k and best@k."""
    opts["dataset"] = dataset
    try:
        cfg = _config(opts)
        if cfg.dataset is None:
            raise ConfigError("no dataset given")
        run_bench(cfg)
    except SchemaViolation as exc:
        click.echo(f"error: dataset {dataset}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (ConfigError, OrchestraError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


@main.group("trace")
def trace_group() -> None:
    """Inspect trace files."""


@trace_group.command("show")
@click.argument("trace_file", type=click.Path())
@click.option("--question-id", help="Only show trajectories for this question.")
@click.option("--max-result-chars", type=int, default=800, show_default=True)
def cmd_trace_show(trace_file, question_id, max_result_chars):
    """Render trajectories turn by turn."""
    path = Path(trace_file)
    if not path.exists():
        click.echo(f"error: trace file not found: {path}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        records = trace_mod.read_trace_file(path)
    except MalformedRecord as exc:
        click.echo(f"error: {path}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if question_id is not None:
        records = [r for r in records if r.question_id == question_id]
    if not records:
        click.echo("no trajectories")
        return
    click.echo("\n".join(trace_mod.render_text(r, max_result_chars) for r in records), nl=False)


@main.command("serve")
@click.option("--bind", default="127.0.0.1:8080", show_default=True, help="host:port to listen on.")
@click.option("--queue-size", type=int, default=16, show_default=True)
@click.option("--pool-size", type=int, default=None, help="Case worker threads (default: CPU count).")
@run_options
def cmd_serve(bind, queue_size, pool_size, **opts):
    """Serve the HTTP API."""
    import uvicorn

    from .service import CaseService, create_app

    try:
        cfg = _config(opts)
        engine = cfg.make_engine()
        strategies = cfg.load_strategies()
    except (ConfigError, OrchestraError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    host, _, port = bind.rpartition(":")
    service = CaseService(engine, Path(cfg.out), k=cfg.k, strategies=strategies, queue_size=queue_size, workers=pool_size)
    uvicorn.run(create_app(service), host=host or "127.0.0.1", port=int(port))


@main.group("tools")
def tools_group() -> None:
    """Registry utilities."""


@tools_group.command("validate")
@click.argument("registry_path", type=click.Path())
@click.option("--probe", is_flag=True, help="Also check that external endpoints answer.")
def cmd_tools_validate(registry_path, probe):
    """Validate a registry config."""
    path = Path(registry_path)
    if not path.exists():
        click.echo(f"error: registry file not found: {path}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        reg = registry_mod.load_file(path)
    except OrchestraError as exc:
        click.echo(f"error: {path}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    failed = []
    if probe:
        for tool in registry_mod.external_tools(reg):
            if not external.probe(tool):
                failed.append(tool)
                click.echo(f"unreachable: {tool.name} at {tool.endpoint}", err=True)
    if failed:
        sys.exit(EXIT_CONFIG)
    click.echo(f"ok: {len(reg)} tools ({', '.join(reg.names) or 'none'})")


if __name__ == "__main__":
    main()
