"""Command line surface.

Exit codes: 0 success, 1 validation failure, 2 backend failure, 3 usage.
With model.name=mock (the default when MODEL_API_BASE is unset) everything
runs against the deterministic playbook backend.
"""

from __future__ import annotations

import json
import os
import sys

import click

from . import evaluation
from .agents import GenerationRequest, PipelineError
from .config import build_pipeline, load_config
from .gateway import BackendUnavailable
from .memory import MemoryStore, RetrievalQuery, load_corpus, run_evolution_round
from .render import render
from .schema import (
    ManifestSyntaxError,
    SchemaError,
    parse_manifest,
    serialize_manifest,
    validate,
)
from .taxonomy import DIAGRAM_TYPES

EXIT_VALIDATION = 1
EXIT_BACKEND = 2
EXIT_USAGE = 3


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Config file (key = value lines); EVO_CONFIG works too.")
@click.pass_context
def cli(ctx, config_path):
    ctx.obj = load_config(config_path)


def _load_manifest(path: str):
    with open(path, "rb") as fh:
        return parse_manifest(fh.read())


@cli.command()
@click.option("--content", "content_path", required=True, type=click.Path(exists=True),
              help="UTF-8 text file with the source content.")
@click.option("--require", "requirement", default=None, help="Optional user requirement.")
@click.option("--type", "diagram_type", default=None,
              type=click.Choice(DIAGRAM_TYPES), help="Force a diagram type.")
@click.option("--iterations", default=None, type=int, help="Refinement iterations.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.pass_obj
def generate(config, content_path, requirement, diagram_type, iterations, out_dir):
    """Generate manifest.json, diagram.svg, and trace.jsonl from content."""
    with open(content_path, encoding="utf-8") as fh:
        content = fh.read()
    request = GenerationRequest(
        content=content,
        requirements=requirement,
        diagram_type_override=diagram_type,
        refine_iterations=config.refine_iterations if iterations is None else iterations,
    )
    memory = MemoryStore(config.memory_path) if os.path.exists(config.memory_path) else None
    pipeline = build_pipeline(config, memory=memory)
    manifest, trace = pipeline.generate(request)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(serialize_manifest(manifest))
    with open(os.path.join(out_dir, "diagram.svg"), "w", encoding="utf-8") as fh:
        fh.write(render(manifest).svg)
    with open(os.path.join(out_dir, "trace.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(trace.to_jsonl())
    click.echo(f"wrote {out_dir}/manifest.json, diagram.svg, trace.jsonl "
               f"({len(manifest.shapes)} shapes)")


@cli.command("render")
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--png", is_flag=True, help="Also write a PNG next to the SVG.")
@click.option("--scale", default=1.0, type=float, help="PNG raster scale.")
def render_cmd(manifest_path, out_path, png, scale):
    """Render a manifest to SVG (and optionally PNG)."""
    manifest = _load_manifest(manifest_path)
    artifact = render(manifest)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(artifact.svg)
    click.echo(f"wrote {out_path}")
    if png:
        from .raster import render_to_image

        png_path = os.path.splitext(out_path)[0] + ".png"
        with open(png_path, "wb") as fh:
            fh.write(render_to_image(manifest, scale))
        click.echo(f"wrote {png_path}")


@cli.command("validate")
@click.argument("manifest_path", type=click.Path(exists=True))
def validate_cmd(manifest_path):
    """Exit 0 silently when valid; print violations and exit 1 otherwise."""
    with open(manifest_path, "rb") as fh:
        data = fh.read()
    try:
        manifest = parse_manifest(data)
    except SchemaError as exc:
        for v in exc.violations:
            click.echo(f"{v.shape_id}.{v.field}: [{v.rule}] {v.message}", err=True)
        sys.exit(EXIT_VALIDATION)
    except ManifestSyntaxError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)
    violations = validate(manifest)
    if violations:
        for v in violations:
            click.echo(f"{v.shape_id}.{v.field}: [{v.rule}] {v.message}", err=True)
        sys.exit(EXIT_VALIDATION)


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--rounds", default=None, type=int)
@click.pass_obj
def evolve(config, corpus_path, rounds):
    """Run evolution rounds over a JSONL corpus, printing one report per round."""
    corpus = load_corpus(corpus_path)
    memory = MemoryStore(config.memory_path)
    pipeline = build_pipeline(config, memory=memory)
    for round_no in range(1, (rounds or config.rounds) + 1):
        report = run_evolution_round(
            pipeline, memory, corpus, round_no, cycles=config.cycles,
            extra_requirements=config.extra_requirements,
            max_guidelines=config.guidelines_per_bucket)
        click.echo(json.dumps(report.to_obj(), sort_keys=True))


@cli.group()
def bench():
    """Benchmark harness commands."""


@bench.command("run")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--split", default=None, type=click.Choice(["test"]))
@click.option("--judge", "judge_model", default="mock",
              help="'mock' or a model name served by the configured backend.")
@click.option("--out", "out_dir", default="bench-out", type=click.Path())
@click.pass_obj
def bench_run(config, dataset_path, split, judge_model, out_dir):
    """Generate + judge each sample; write results.csv, results.json, and
    metrics.png."""
    samples = evaluation.load_dataset(dataset_path, split=split)
    memory = MemoryStore(config.memory_path) if os.path.exists(config.memory_path) else None
    pipeline = build_pipeline(config, memory=memory)
    if judge_model == "mock":
        from .gateway import Gateway
        from .playbook import PlaybookBackend

        judge_gateway = Gateway(PlaybookBackend())
    else:
        judge_gateway = pipeline.gateway
    reports = []
    for sample in samples:
        request = GenerationRequest(
            content=sample.content,
            requirements=sample.query or None,
            diagram_type_override=sample.diagram_type,
            refine_iterations=config.refine_iterations,
            domain=sample.domain,
        )
        manifest, _ = pipeline.generate(request)
        artifact = render(manifest)
        reports.append(evaluation.judge(judge_gateway, sample, artifact, sample.content,
                                        judge_model=judge_model))
    summary = evaluation.aggregate(reports)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w", encoding="utf-8") as fh:
        fh.write(evaluation.reports_to_csv(reports, summary))
    with open(os.path.join(out_dir, "results.json"), "w", encoding="utf-8") as fh:
        json.dump({"summary": summary, "reports": [r.to_obj() for r in reports]},
                  fh, sort_keys=True, indent=2)
    evaluation.save_metrics_figure(summary, os.path.join(out_dir, "metrics.png"))
    click.echo(f"judged {len(reports)} samples; wrote {out_dir}/results.csv, "
               f"results.json, metrics.png")


@cli.group()
def memory():
    """Design-knowledge store commands."""


@memory.command("search")
@click.option("--role", required=True)
@click.option("--type", "diagram_type", default="universal")
@click.option("--domain", default="universal")
@click.option("--q", "query_text", default="")
@click.option("--k", default=5, type=int)
@click.pass_obj
def memory_search(config, role, diagram_type, domain, query_text, k):
    store = MemoryStore(config.memory_path)
    result = store.retrieve(RetrievalQuery(agent_role=role, diagram_type=diagram_type,
                                           domain=domain, query_text=query_text, k=k))
    for tier, entries in result.items():
        for entry in entries:
            click.echo(f"[{tier}] {entry.entry_id}: {entry.title} "
                       f"({entry.diagram_type}/{entry.domain})")


@memory.command("export")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
def memory_export(config, out_path):
    store = MemoryStore(config.memory_path)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(store.export_jsonl())
    click.echo(f"exported {len(store)} entries")


@memory.command("import")
@click.argument("in_path", type=click.Path(exists=True))
@click.pass_obj
def memory_import(config, in_path):
    store = MemoryStore(config.memory_path)
    with open(in_path, encoding="utf-8") as fh:
        count = store.import_jsonl(fh.read())
    click.echo(f"imported {count} entries")


@cli.command()
@click.pass_obj
def serve(config):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(config), host=config.listen_host, port=config.listen_port)


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.exceptions.Abort:
        sys.exit(EXIT_USAGE)
    except (SchemaError, ManifestSyntaxError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)
    except BackendUnavailable as exc:
        click.echo(f"backend failure: {exc}", err=True)
        sys.exit(EXIT_BACKEND)
    except PipelineError as exc:
        if isinstance(exc.cause, BackendUnavailable):
            click.echo(f"backend failure: {exc}", err=True)
            sys.exit(EXIT_BACKEND)
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)
    except SystemExit:
        raise


if __name__ == "__main__":
    main()
