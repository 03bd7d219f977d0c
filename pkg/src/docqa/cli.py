"""Operator command line.

Commands are thin compositions of the library modules:

    docqa ingest MANIFEST OUT_DIR     build the corpus directory
    docqa index --config CFG          build/load both retrieval indexes
    docqa ask QUESTION --config CFG   answer one question, print the answer
    docqa bench DATASET --config CFG  run and score a benchmark
    docqa ablate DATASET --config CFG run all four pipeline variants

Exit codes: 0 ok, 2 config error, 3 ingest error, 4 network error,
5 evaluation error.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from . import defaults, evalharness, ingest, retrieval
from .config import RunConfig, load_config
from .errors import (
    ApiError,
    ConfigInvalid,
    DocQAError,
    DuplicateDocId,
    EmbedderUnreachable,
    EmptyCompletion,
    IngestError,
    JudgeParseFailure,
    NoPages,
    OcrUnavailable,
    RenderFailure,
    ShapeError,
    TransportError,
    UnreadablePdf,
)
from .pipeline import answer_question

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_NETWORK = 4
EXIT_EVAL = 5

_INGEST_ERRORS = (UnreadablePdf, NoPages, OcrUnavailable, RenderFailure, DuplicateDocId, IngestError)
_NETWORK_ERRORS = (TransportError, ApiError, EmbedderUnreachable, EmptyCompletion, ShapeError)


def _exit_code_for(exc: Exception) -> int:
    if isinstance(exc, ConfigInvalid):
        return EXIT_CONFIG
    if isinstance(exc, _INGEST_ERRORS):
        return EXIT_INGEST
    if isinstance(exc, _NETWORK_ERRORS):
        return EXIT_NETWORK
    if isinstance(exc, (JudgeParseFailure,)):
        return EXIT_EVAL
    return 1


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(_exit_code_for(exc))


def _emit(payload: dict, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True, ensure_ascii=False))
    else:
        for key, value in payload.items():
            click.echo(f"{key}: {value}")


def _load(config_path: str) -> RunConfig:
    try:
        return load_config(config_path)
    except ConfigInvalid as exc:
        _fail(exc)


@click.group()
def main() -> None:
    """Multi-agent document question answering."""


@main.command("ingest")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--dpi", default=defaults.DEFAULT_RENDER_DPI, show_default=True, type=int)
@click.option("--ocr-url", default=None, help="Sidecar base URL for OCR of image-only pages.")
@click.option("--json", "as_json", is_flag=True)
def cmd_ingest(manifest: str, out_dir: str, dpi: int, ocr_url: str | None, as_json: bool) -> None:
    """Ingest the PDFs listed in MANIFEST into OUT_DIR."""
    from .gateway import SidecarClient

    ocr = SidecarClient(ocr_url) if ocr_url else None
    try:
        corpus = ingest.build_corpus(manifest, out_dir, dpi=dpi, ocr=ocr)
    except DocQAError as exc:
        _fail(exc)
    _emit(
        {
            "documents": len(corpus.documents),
            "pages": sum(len(d.pages) for d in corpus.documents),
            "segments": sum(1 for _ in corpus.iter_segments()),
            "corpus_dir": str(corpus.root),
        },
        as_json,
    )


@main.command("index")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
def cmd_index(config_path: str, as_json: bool) -> None:
    """Build (or load from cache) the text and image indexes."""
    cfg = _load(config_path)
    try:
        corpus = ingest.load_corpus(cfg.corpus_dir)
        embedder = cfg.sidecar_client()
        text_index = retrieval.build_text_index(corpus, embedder, cache_dir=cfg.index_dir)
        image_index = retrieval.build_image_index(corpus, embedder, cache_dir=cfg.index_dir)
    except DocQAError as exc:
        _fail(exc)
    _emit(
        {
            "text_entries": len(text_index),
            "image_entries": len(image_index),
            "text_embedder": text_index.embedder_id,
            "image_embedder": image_index.embedder_id,
            "index_dir": cfg.index_dir,
        },
        as_json,
    )


def _load_indexes(cfg: RunConfig, embedder) -> tuple:
    corpus = ingest.load_corpus(cfg.corpus_dir)
    text_index = retrieval.build_text_index(corpus, embedder, cache_dir=cfg.index_dir)
    image_index = retrieval.build_image_index(corpus, embedder, cache_dir=cfg.index_dir)
    return corpus, text_index, image_index


@main.command("ask")
@click.argument("question")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--transcript", "transcript_path", default=None, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@click.option("--dry-run", is_flag=True, help="Validate config and plan; no network calls.")
def cmd_ask(
    question: str, config_path: str, transcript_path: str | None, as_json: bool, dry_run: bool
) -> None:
    """Answer QUESTION over the configured corpus and print the final answer."""
    cfg = _load(config_path)
    try:
        pipeline_cfg = cfg.pipeline_config()
    except ConfigInvalid as exc:
        _fail(exc)
    if dry_run:
        _emit(
            {
                "dry_run": True,
                "k": pipeline_cfg.k,
                "agents": [r.value for r in pipeline_cfg.enabled_roles()],
                "corpus_dir": cfg.corpus_dir,
            },
            as_json,
        )
        return
    try:
        embedder = cfg.sidecar_client()
        corpus, text_index, image_index = _load_indexes(cfg, embedder)
        transcript = answer_question(
            cfg.chat_gateway(), embedder, question, corpus, text_index, image_index, pipeline_cfg
        )
    except DocQAError as exc:
        _fail(exc)
    if transcript_path:
        with open(transcript_path, "a", encoding="utf-8") as fh:
            fh.write(transcript.to_json() + "\n")
    if transcript.failure:
        _fail(TransportError(transcript.failure))
    _emit({"answer": transcript.final}, as_json)


@main.command("bench")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", default="bench_out", show_default=True)
@click.option("--run-id", default="run", show_default=True)
@click.option("--json", "as_json", is_flag=True)
@click.option("--dry-run", is_flag=True)
def cmd_bench(
    dataset: str, config_path: str, out_dir: str, run_id: str, as_json: bool, dry_run: bool
) -> None:
    """Run the benchmark in DATASET and write a scored report."""
    cfg = _load(config_path)
    try:
        items = evalharness.load_benchmark_items(dataset)
        pipeline_cfg = cfg.pipeline_config()
    except (DocQAError, ValueError, KeyError) as exc:
        _fail(ConfigInvalid("dataset", str(exc)) if not isinstance(exc, DocQAError) else exc)
    if dry_run:
        _emit({"dry_run": True, "items": len(items), "run_id": run_id}, as_json)
        return
    try:
        embedder = cfg.sidecar_client()
        corpus, text_index, image_index = _load_indexes(cfg, embedder)
        report = evalharness.run_benchmark(
            cfg.chat_gateway(), embedder, items, corpus, text_index, image_index,
            pipeline_cfg, cfg.judge.endpoint(), out_dir, run_id=run_id,
            judge_params=cfg.judge.params(), concurrency=cfg.concurrency,
        )
    except DocQAError as exc:
        _fail(exc)
    if as_json:
        click.echo(report.to_json())
    else:
        click.echo(f"run {report.run_id}: accuracy {report.accuracy:.3f} "
                   f"({report.judged} judged, {report.failed} failed, "
                   f"{report.unevaluated} unevaluated)")
        for tag, (acc, n) in report.per_category().items():
            click.echo(f"  {tag}: {acc:.3f} (n={n})")
    if report.failed:
        sys.exit(EXIT_EVAL)


_VARIANTS = {
    "full": {"enable_general_critical": True, "enable_text_agent": True, "enable_image_agent": True},
    "no_text": {"enable_general_critical": True, "enable_text_agent": False, "enable_image_agent": True},
    "no_image": {"enable_general_critical": True, "enable_text_agent": True, "enable_image_agent": False},
    "specialized_only": {"enable_general_critical": False, "enable_text_agent": True, "enable_image_agent": True},
}


@main.command("ablate")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", default="ablate_out", show_default=True)
@click.option("--json", "as_json", is_flag=True)
@click.option("--dry-run", is_flag=True)
def cmd_ablate(dataset: str, config_path: str, out_dir: str, as_json: bool, dry_run: bool) -> None:
    """Run all four pipeline variants over DATASET and compare accuracies."""
    cfg = _load(config_path)
    try:
        items = evalharness.load_benchmark_items(dataset)
        base = cfg.pipeline_config()
    except (DocQAError, ValueError, KeyError) as exc:
        _fail(ConfigInvalid("dataset", str(exc)) if not isinstance(exc, DocQAError) else exc)
    if dry_run:
        _emit({"dry_run": True, "variants": list(_VARIANTS), "items": len(items)}, as_json)
        return
    try:
        embedder = cfg.sidecar_client()
        corpus, text_index, image_index = _load_indexes(cfg, embedder)
        reports = []
        for name, flags in _VARIANTS.items():
            variant_cfg = dataclasses.replace(base, **flags)
            reports.append(
                evalharness.run_benchmark(
                    cfg.chat_gateway(), embedder, items, corpus, text_index, image_index,
                    variant_cfg, cfg.judge.endpoint(), Path(out_dir) / name, run_id=name,
                    judge_params=cfg.judge.params(), concurrency=cfg.concurrency,
                )
            )
        comparison = evalharness.compare_runs(reports)
    except DocQAError as exc:
        _fail(exc)
    if as_json:
        click.echo(
            json.dumps(
                {
                    "accuracies": comparison.accuracies,
                    "deltas": {f"{a}->{b}": d for (a, b), d in comparison.deltas.items()},
                    "config_differences": comparison.config_differences,
                    "warnings": comparison.warnings,
                },
                sort_keys=True,
            )
        )
    else:
        for run_idx in comparison.run_ids:
            click.echo(f"{run_idx}: {comparison.accuracies[run_idx]:.3f}")
        for (a, b), d in comparison.deltas.items():
            click.echo(f"  {a} -> {b}: {d:+.3f}")
    if any(rep.failed for rep in reports):
        sys.exit(EXIT_EVAL)


if __name__ == "__main__":
    main()
