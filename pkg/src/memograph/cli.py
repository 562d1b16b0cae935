"""Operator command line: graph lifecycle, ingestion, training, retrieval,
simulation reports (CSV plus rendered figures), and the HTTP service."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import fsm as fsm_mod
from .gateway import Trajectory
from .graph import MemoryGraph
from .induction import ScriptedAnalyst, update_memory_graph
from .optimizer import OptimizerConfig, TrainingQuery, optimize_weights
from .retrieval import augment_prompt, load_template, rank_metas
from .scoring import HashedEmbedder
from .simulate import (
    build_synthetic_world,
    default_world_factory,
    run_ablations,
    run_convergence,
    run_frozen_vs_trained,
)
from .tags import Segment


@click.group()
def cli() -> None:
    """Trainable layered graph memory for tool-using agents."""


# -- graph lifecycle -----------------------------------------------------


@cli.group()
def graph() -> None:
    """Create, inspect, import and export graph files."""


@graph.command("init")
@click.option("--dim", type=int, default=8, show_default=True, help="Embedding dimension.")
@click.option("--fsm", "fsm_path", type=click.Path(exists=True), default=None,
              help="State machine JSON; the bundled machine when omitted.")
@click.argument("out", type=click.Path())
def graph_init(dim: int, fsm_path, out: str) -> None:
    """Write an empty graph file."""
    spec = fsm_mod.load_fsm(fsm_path) if fsm_path else fsm_mod.default_fsm()
    MemoryGraph(embedding_dim=dim, fsm=spec).save(out)
    click.echo(f"initialized empty graph at {out} (dim={dim})")


@graph.command("inspect")
@click.argument("graph_file", type=click.Path(exists=True))
def graph_inspect(graph_file: str) -> None:
    """Print node counts, weight stats and the stored paths."""
    g = MemoryGraph.load(graph_file)
    weights = [e.weight for e in g.edges.values()]
    click.echo(f"queries: {len(g.queries)}")
    click.echo(f"paths:   {len(g.paths)}")
    click.echo(f"metas:   {len(g.metas)}")
    click.echo(f"edges:   {len(g.edges)}")
    if weights:
        click.echo(
            f"weights: min={min(weights):.4f} max={max(weights):.4f} "
            f"mean={sum(weights) / len(weights):.4f}"
        )
    click.echo(f"weight hash: {g.weight_hash()}")
    for tid in sorted(g.paths):
        node = g.paths[tid]
        click.echo(f"{tid} [{node.outcome.value}]: {fsm_mod.format_path(node.states)}")


@graph.command("export")
@click.argument("graph_file", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None, help="Write here instead of stdout.")
def graph_export(graph_file: str, out) -> None:
    """Emit the canonical JSON document for a graph file."""
    g = MemoryGraph.load(graph_file)
    text = g.to_json() + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@graph.command("import")
@click.argument("document", type=click.Path(exists=True))
@click.argument("out", type=click.Path())
def graph_import(document: str, out: str) -> None:
    """Validate a graph document and store it as a graph file."""
    g = MemoryGraph.from_json(Path(document).read_text(encoding="utf-8"))
    g.save(out)
    click.echo(f"imported {len(g.queries)} queries, {len(g.paths)} paths, "
               f"{len(g.metas)} metas into {out}")


# -- ingestion and training ----------------------------------------------


def _trajectory_from_entry(entry: dict) -> Trajectory:
    segments = [Segment(s["kind"], s["content"]) for s in entry.get("segments", [])]
    return Trajectory(
        question=entry.get("question", ""),
        segments=segments,
        tool_calls_used=sum(1 for s in segments if s.kind == "tool_call"),
        reward=entry.get("reward"),
        ref=entry.get("ref", ""),
    )


@cli.command()
@click.option("--graph", "graph_file", type=click.Path(exists=True), required=True)
@click.argument("trajectory_file", type=click.Path(exists=True))
def ingest(graph_file: str, trajectory_file: str) -> None:
    """Ingest trajectories: one JSON object or a list of {question, trajectories}.

    Each trajectory carries tagged segments or a pre-grounded "path" string in
    the "A -> B -> C" form plus a reward.
    """
    g = MemoryGraph.load(graph_file)
    embedder = HashedEmbedder(g.embedding_dim)
    data = json.loads(Path(trajectory_file).read_text(encoding="utf-8"))
    entries = data if isinstance(data, list) else [data]
    analyst = ScriptedAnalyst()
    for entry in entries:
        question = entry["question"]
        pre_grounded = [t for t in entry["trajectories"] if "path" in t]
        tagged = [t for t in entry["trajectories"] if "path" not in t]
        if tagged:
            trajectories = [
                _trajectory_from_entry({**t, "question": question}) for t in tagged
            ]
            report = update_memory_graph(question, trajectories, g, analyst, embedder)
            click.echo(
                f"{report.query_id}: {len(report.path_ids)} paths, "
                f"{len(report.proposals)} proposals, "
                f"{len(report.speculative_metas)} speculative"
            )
        if pre_grounded:
            qid = g.add_query(question, embedder.embed(question))
            for t in pre_grounded:
                states = fsm_mod.parse_path(t["path"])
                outcome = "success" if t.get("reward") == 1 else "failure"
                tid = g.attach_path(qid, states, outcome)
                click.echo(f"{qid}: attached {tid} ({outcome})")
    g.save(graph_file)


@cli.command("train-weights")
@click.option("--graph", "graph_file", type=click.Path(exists=True), required=True)
@click.option("--queries", "query_file", type=click.Path(exists=True), required=True,
              help="JSON list of query texts.")
@click.option("--oracle", "oracle_file", type=click.Path(exists=True), required=True,
              help="JSON map of meta id -> utility realized when that meta guides.")
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--temperature", type=float, default=1.0, show_default=True)
@click.option("--top-n", type=int, default=3, show_default=True)
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--frozen", is_flag=True, help="Record steps but never move weights.")
@click.option("--trace", "trace_file", type=click.Path(), default=None)
def train_weights(graph_file, query_file, oracle_file, alpha, temperature, top_n,
                  epochs, seed, frozen, trace_file) -> None:
    """Run the reward-gap weight learner over a query file."""
    g = MemoryGraph.load(graph_file)
    embedder = HashedEmbedder(g.embedding_dim)
    texts = json.loads(Path(query_file).read_text(encoding="utf-8"))
    utilities = json.loads(Path(oracle_file).read_text(encoding="utf-8"))
    queries = [
        TrainingQuery(text=t, embedding=embedder.embed(t), query_id=f"train-{i}")
        for i, t in enumerate(texts)
    ]

    def agent(query, guidance):
        return None if guidance is None else guidance.id

    def reward_fn(response, query):
        return 0.0 if response is None else float(utilities.get(response, 0.0))

    config = OptimizerConfig(
        learning_rate=alpha, temperature=temperature, top_n=top_n,
        epochs=epochs, seed=seed, frozen=frozen,
    )
    sink = None
    handle = None
    if trace_file:
        handle = open(trace_file, "w", encoding="utf-8")

        def sink(record):
            handle.write(record.as_line() + "\n")
            handle.flush()

    try:
        trace = optimize_weights(g, queries, agent, reward_fn, config, trace_sink=sink)
    finally:
        if handle:
            handle.close()
    g.save(graph_file)
    applied = sum(1 for r in trace.records if not r.skipped)
    click.echo(f"ran {len(trace.records)} steps ({applied} applied), "
               f"weight hash {g.weight_hash()}")


# -- retrieval -------------------------------------------------------------


@cli.command()
@click.option("--graph", "graph_file", type=click.Path(exists=True), required=True)
@click.option("--k", type=int, default=3, show_default=True)
@click.option("--query", "query_text", required=True)
@click.option("--top-n", type=int, default=3, show_default=True)
@click.option("--template", "template_file", type=click.Path(exists=True), default=None)
@click.option("--show-prompt", is_flag=True, help="Also print the augmented prompt.")
def retrieve(graph_file, k, query_text, top_n, template_file, show_prompt) -> None:
    """Rank strategy notes for a query; tab-separated rank, score, id, summary."""
    g = MemoryGraph.load(graph_file)
    ranked = rank_metas(query_text, g, top_n_queries=top_n, k=k)
    for item in ranked:
        summary = g.metas[item.meta].summary
        click.echo(f"{item.rank}\t{item.score:.6f}\t{item.meta}\t{summary}")
    if show_prompt or not ranked:
        template = load_template(template_file) if template_file else None
        prompt = augment_prompt(ranked, query_text, g, template=template)
        click.echo(prompt.rendered)


# -- simulation -------------------------------------------------------------


@cli.command()
@click.option("--scenario", type=click.Choice(["convergence", "frozen", "ksweep"]),
              required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--steps", type=int, default=500, show_default=True)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--ks", default="0,1,3,5", show_default=True,
              help="Comma-separated k values for the ksweep scenario.")
@click.option("--out", "out_dir", type=click.Path(), default="simout", show_default=True)
def simulate(scenario, seed, steps, alpha, noise, ks, out_dir) -> None:
    """Run a synthetic-world experiment; write CSV, summary and figures."""
    from . import plotting

    config = OptimizerConfig(learning_rate=alpha, epochs=steps, seed=seed)
    factory = default_world_factory(seed, noise_std=noise)
    if scenario == "convergence":
        result = run_convergence(factory(), config)
    elif scenario == "frozen":
        result = run_frozen_vs_trained(factory, config)
    else:
        world = build_synthetic_world(
            4, 8, 3, {"m1": 1.0, "m2": 0.0, "m3": -1.0}, seed, noise_std=noise
        )
        k_values = [int(x) for x in ks.split(",") if x.strip() != ""]
        result = run_ablations(world, k_values, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{scenario}_results.csv"
    csv_path.write_text(result.to_csv(), encoding="utf-8")
    (out / f"{scenario}_summary.json").write_text(
        json.dumps(result.summary, indent=2) + "\n", encoding="utf-8"
    )
    figures = plotting.render_report(result, out)
    click.echo(f"wrote {csv_path}")
    for fig in figures:
        click.echo(f"wrote {fig}")
    for key, value in result.summary.items():
        click.echo(f"{key}: {value}")


# -- service ----------------------------------------------------------------


@cli.command()
@click.option("--graph", "graph_file", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--token", default=None, help="Require this bearer token on every call.")
@click.option("--read-only", is_flag=True)
def serve(graph_file, host, port, token, read_only) -> None:
    """Serve the graph over HTTP."""
    from .service import ServiceConfig, serve as run_service

    run_service(
        ServiceConfig(
            graph_path=graph_file, host=host, port=port,
            auth_token=token, read_only=read_only,
        )
    )


def main() -> int:
    try:
        cli.main(args=sys.argv[1:], standalone_mode=False)
        return 0
    except click.exceptions.UsageError as exc:
        exc.show(file=sys.stderr)
        return 2
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    except click.exceptions.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures exit 1 with a plain message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
