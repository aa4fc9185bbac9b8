"""Command-line interface: solve, edit, localize, chat, serve, replay, eval."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, solver
from .bundle import ModelStack, build_desk_stack, build_paper_stack, load_stack, save_stack
from .config import EngineConfig, load_config
from .evalsuite import SUITES, run_suite
from .llm import HTTPChatBackend
from .localizer import localize
from .schema import validate, vector_from_dict, vector_to_dict
from .session import SessionStore, handle_turn, replay_events, start_session, undo


def _load_engine(config: EngineConfig) -> ModelStack:
    if config.artifacts_dir:
        return load_stack(config.artifacts_dir)
    return build_desk_stack(seed=config.stack_seed)


def _solve_config(config: EngineConfig) -> solver.SolveConfig:
    return solver.SolveConfig(
        steps=config.steps,
        lr_continuous=config.lr_continuous,
        lr_discrete=config.lr_discrete,
        lambda_prior=config.lambda_prior,
    )


def _backend(config: EngineConfig):
    if config.backend_url:
        return HTTPChatBackend(
            config.backend_url, model=config.backend_model, api_key_env=config.backend_api_key_env
        )
    return None


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="key = value config file; env vars CHAREDIT_* override")
@click.pass_context
def main(ctx, config_path):
    """Dialogue-driven editor for game character control parameters."""
    ctx.obj = load_config(config_path)


@main.command("build-artifacts")
@click.option("--scale", type=click.Choice(["desk", "paper"]), default="desk")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def build_artifacts(scale, seed, out_dir):
    """Build and save a synthetic model stack."""
    stack = build_desk_stack(seed=seed) if scale == "desk" else build_paper_stack(seed=seed)
    path = save_stack(stack, out_dir)
    click.echo(f"saved {scale} artifacts (schema {stack.schema_hash}) to {path}")


@main.command()
@click.option("--prompt", required=True)
@click.option("--out", "out_path", type=click.Path(), default=None, help="write SolveResult JSON here")
@click.pass_obj
def solve(config: EngineConfig, prompt, out_path):
    """Solve whole-face parameters for a text prompt."""
    stack = _load_engine(config)
    result = solver.create(prompt, _solve_config(config), stack)
    doc = result.to_dict()
    doc["parameters"] = vector_to_dict(result.x_final, stack.schema)
    if out_path:
        Path(out_path).write_text(json.dumps(doc, indent=2))
        click.echo(f"wrote {out_path}")
    first, last = result.loss_trace[0], result.loss_trace[-1]
    click.echo(f"loss: clip {first[0]:.4f} -> {last[0]:.4f}, prior {first[1]:.4f} -> {last[1]:.4f}")


@main.command()
@click.option("--prompt", required=True)
@click.option("--strength", type=float, default=0.5)
@click.option("--params", "params_path", type=click.Path(exists=True), required=True,
              help="JSON parameter vector (from solve/edit --out)")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_obj
def edit(config: EngineConfig, prompt, strength, params_path, out_path):
    """Edit saved parameters under a localized channel mask."""
    stack = _load_engine(config)
    doc = json.loads(Path(params_path).read_text())
    x_prev = vector_from_dict(doc.get("parameters", doc), stack.schema)
    problems = validate(x_prev, stack.schema)
    if problems:
        raise click.ClickException(f"input parameters invalid: {problems}")
    loc = localize(prompt, stack.localizer, stack.schema)
    result = solver.edit(x_prev, prompt, strength, loc.mask, _solve_config(config), stack)
    out_doc = result.to_dict()
    out_doc["parameters"] = vector_to_dict(result.x_final, stack.schema)
    out_doc["localized_labels"] = loc.labels
    if out_path:
        Path(out_path).write_text(json.dumps(out_doc, indent=2))
        click.echo(f"wrote {out_path}")
    changed = int(np.sum(result.x_final != x_prev))
    click.echo(f"labels {loc.labels} ({loc.source}); {changed} channels changed")


@main.command("localize")
@click.option("--prompt", required=True)
@click.pass_obj
def localize_cmd(config: EngineConfig, prompt):
    """Print the labels and channel indices a prompt resolves to."""
    stack = _load_engine(config)
    loc = localize(prompt, stack.localizer, stack.schema)
    channels = np.flatnonzero(loc.mask == 1).tolist()
    click.echo(f"labels: {loc.labels} (source: {loc.source}, unlocalized: {loc.unlocalized})")
    click.echo(f"channels: {channels}")


@main.command()
@click.option("--seed", type=int, default=0)
@click.option("--describe", "initial_text", default=None, help="initial character description")
@click.pass_obj
def chat(config: EngineConfig, seed, initial_text):
    """Interactive dialogue REPL (type /undo, /memory, /quit)."""
    stack = _load_engine(config)
    store = SessionStore(config.sessions_dir) if config.sessions_dir else None
    session = start_session(
        stack, _solve_config(config), seed=seed, initial_text=initial_text,
        backend=_backend(config), store=store,
    )
    if session.rounds:
        click.echo(session.rounds[-1].feedback)
    click.echo(f"session {session.id}; {stack.schema.size} channels; attributes: "
               + ", ".join(stack.label_set.labels))
    while True:
        try:
            text = click.prompt("you", prompt_suffix="> ")
        except (EOFError, click.Abort):
            break
        if text.strip() in ("/quit", "/exit"):
            break
        if text.strip() == "/memory":
            click.echo(json.dumps(session.bank.to_dict(), indent=2))
            continue
        if text.strip() == "/undo":
            try:
                record = undo(session)
                click.echo(f"undid round {record.index}")
            except Exception as exc:
                click.echo(f"cannot undo: {exc}")
            continue
        record = handle_turn(session, text)
        click.echo(record.feedback)
        if record.solves:
            for s in record.solves:
                click.echo(f"  {s['attribute']}: clip {s['initial_loss']['clip']:.4f}"
                           f" -> {s['final_loss']['clip']:.4f} (strength {s['strength']})")


@main.command()
@click.pass_obj
def serve(config: EngineConfig):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    stack = _load_engine(config)
    store = SessionStore(config.sessions_dir) if config.sessions_dir else None
    static_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    app = create_app(stack, _solve_config(config), store=store, backend=_backend(config),
                     static_dir=static_dir if static_dir.is_dir() else None)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")


@main.command()
@click.argument("log_path", type=click.Path(exists=True))
@click.pass_obj
def replay(config: EngineConfig, log_path):
    """Rebuild a session from an event log and verify recorded parameters."""
    stack = _load_engine(config)
    events = [json.loads(line) for line in Path(log_path).read_text().splitlines() if line.strip()]
    session = replay_events(stack, events)
    recorded = [e for e in events if "x_after" in e]
    mismatches = 0
    if recorded:
        final_recorded = np.asarray(recorded[-1]["x_after"])
        if not np.array_equal(final_recorded, session.current_x):
            mismatches += 1
    click.echo(f"replayed {len(session.rounds)} rounds, parameters_version {session.parameters_version}")
    if mismatches:
        raise click.ClickException("replayed parameters do not match the recorded trajectory")
    click.echo("recorded trajectory verified bit-exact")


@main.group("eval")
def eval_group():
    """Reproducible experiment suites."""


@eval_group.command("run")
@click.argument("suite", type=click.Choice(list(SUITES)))
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.pass_obj
def eval_run(config: EngineConfig, suite, seed, out_dir):
    """Run SUITE and print its verdicts."""
    stack = _load_engine(config)
    report = run_suite(suite, seed=seed, stack=stack)
    for name, ok in report.verdicts.items():
        click.echo(f"[{'PASS' if ok else 'FAIL'}] {name}")
    if report.measurements:
        click.echo(json.dumps(report.measurements))
    if out_dir:
        report.write(out_dir)
        click.echo(f"report written to {out_dir}")
    if not report.passed:
        sys.exit(1)


if __name__ == "__main__":
    main()
