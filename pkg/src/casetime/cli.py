"""Command-line interface: one subcommand per pipeline stage.

filter -> sample -> phenotype -> annotate -> align -> evaluate/report.
Stages communicate through files (manifest JSONL, .bsv annotation tables,
alignment JSONs), so any stage can be rerun or swapped out.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .annotations import (
    Annotation,
    PromptVariant,
    parse_annotation_table,
    write_annotation_file,
)
from .corpus import (
    SCREEN_NAMES,
    extract_body,
    filter_corpus,
    open_corpus,
    read_manifest,
    write_manifest,
)
from .errors import CasetimeError, ConfigError, EmptyAnnotationError
from .llm import ChatRequest, Endpoint, complete, complete_many
from .metrics import MetricConfig
from .prompts import (
    PhenotypeVerdict,
    build_annotation_prompt,
    build_demographics_prompt,
    build_phenotype_prompt,
    parse_boxed_binary,
    parse_demographics_response,
    phenotype_consensus,
)

logger = logging.getLogger(__name__)


def _safe_annotator_id(model: str) -> str:
    return model.replace(".", "-").replace("/", "_")


def _load_bodies(corpus: str, doc_ids: set[str]) -> dict[str, str]:
    bodies: dict[str, str] = {}
    for doc_id, raw in open_corpus(corpus):
        if doc_id not in doc_ids or raw is None:
            continue
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError:
                continue
        try:
            bodies[doc_id] = extract_body(raw)
        except CasetimeError:
            continue
    return bodies


@click.group()
@click.option("--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Screen case reports, annotate timelines, and score temporal fidelity."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@main.command("filter")
@click.option("--input", "input_path", required=True, help="Corpus directory or .jsonl archive.")
@click.option("--out", required=True, help="Manifest JSONL to write.")
@click.option(
    "--screens",
    default=",".join(SCREEN_NAMES),
    show_default=True,
    help="Comma-separated subset of screens to run.",
)
def filter_cmd(input_path: str, out: str, screens: str):
    """Screen a corpus into a cohort manifest."""
    names = tuple(s.strip() for s in screens.split(",") if s.strip())
    manifest = filter_corpus(open_corpus(input_path), screens=names)
    write_manifest(manifest, out)
    included = len(manifest.included_ids())
    click.echo(
        f"{len(manifest.records)} documents screened, {included} included, "
        f"{len(manifest.failures)} failures"
    )


@main.command("sample")
@click.option("--manifest", required=True, help="Manifest JSONL from filter/phenotype.")
@click.option("--n", required=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=None, help="File for sampled doc_ids (default stdout).")
def sample_cmd(manifest: str, n: int, seed: int, out: str | None):
    """Sample included documents uniformly without replacement."""
    ids = pipeline.sample_cohort(read_manifest(manifest), n, seed)
    text = "\n".join(ids) + ("\n" if ids else "")
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {len(ids)} doc_ids to {out}")
    else:
        click.echo(text, nl=False)


@main.command("phenotype")
@click.option("--manifest", "manifest_path", required=True)
@click.option("--corpus", required=True, help="Corpus directory or .jsonl archive.")
@click.option("--models", required=True, help="Comma-separated model ids to query.")
@click.option("--endpoint", "endpoint_url", required=True, help="Chat completions base URL.")
@click.option("--cache", default=None, help="Response cache directory.")
@click.option("--out", default=None, help="Updated manifest path (default: in place).")
@click.option("--api-key-env", default="CASETIME_API_KEY", show_default=True)
@click.option("--workers", default=4, show_default=True, type=int)
def phenotype_cmd(
    manifest_path: str,
    corpus: str,
    models: str,
    endpoint_url: str,
    cache: str | None,
    out: str | None,
    api_key_env: str,
    workers: int,
):
    """Run the sepsis and demographics queries and update the manifest."""
    manifest = read_manifest(manifest_path)
    endpoint = Endpoint(base_url=endpoint_url, api_key_env=api_key_env)
    model_ids = [m.strip() for m in models.split(",") if m.strip()]
    candidates = [r for r in manifest.records if r.included]
    bodies = _load_bodies(corpus, {r.doc_id for r in candidates})

    for record in candidates:
        body = bodies.get(record.doc_id)
        if body is None:
            logger.warning("no body for %s; leaving record as is", record.doc_id)
            continue
        verdicts = []
        requests_ = [
            build_phenotype_prompt(body, model_id=m) for m in model_ids
        ]
        results = complete_many(
            requests_, endpoint, cache_dir=cache, max_workers=workers
        )
        phenotypes: dict[str, int] = {}
        for model_id, result in zip(model_ids, results):
            if isinstance(result, Exception):
                logger.warning("phenotype %s/%s failed: %s", record.doc_id, model_id, result)
                continue
            try:
                label = parse_boxed_binary(result)
            except CasetimeError as e:
                logger.warning("phenotype %s/%s unparseable: %s", record.doc_id, model_id, e)
                continue
            phenotypes[model_id] = label
            verdicts.append(
                PhenotypeVerdict(
                    doc_id=record.doc_id, model_id=model_id, label=label, raw_response=result
                )
            )
        record.phenotypes = phenotypes or None
        try:
            demo = complete(
                build_demographics_prompt(body, model_id=model_ids[0]),
                endpoint,
                cache_dir=cache,
            )
            n_cases, age, gender = parse_demographics_response(demo)
            record.n_cases, record.age, record.gender = n_cases, age, gender
        except CasetimeError as e:
            logger.warning("demographics %s failed: %s", record.doc_id, e)
        keep = bool(verdicts) and phenotype_consensus(verdicts)
        if record.n_cases is not None and record.n_cases != 1:
            keep = False
        record.included = record.included and keep

    write_manifest(manifest, out or manifest_path)
    included = len(manifest.included_ids())
    click.echo(f"{included} of {len(manifest.records)} documents included after phenotyping")


@main.command("annotate")
@click.option("--manifest", "manifest_path", default=None, help="Annotate included docs.")
@click.option("--docs", "docs_path", default=None, help="File of doc_ids, one per line.")
@click.option("--corpus", required=True)
@click.option("--model", required=True, help="Model id to query.")
@click.option(
    "--variant",
    default="main",
    show_default=True,
    type=click.Choice([v.value for v in PromptVariant]),
)
@click.option("--endpoint", "endpoint_url", required=True)
@click.option("--cache", default=None)
@click.option("--out", required=True, help="Directory for .bsv annotation files.")
@click.option("--annotator-id", default=None, help="Filename label (default from model).")
@click.option("--api-key-env", default="CASETIME_API_KEY", show_default=True)
@click.option("--workers", default=4, show_default=True, type=int)
def annotate_cmd(
    manifest_path: str | None,
    docs_path: str | None,
    corpus: str,
    model: str,
    variant: str,
    endpoint_url: str,
    cache: str | None,
    out: str,
    annotator_id: str | None,
    api_key_env: str,
    workers: int,
):
    """Query a model for finding/timestamp tables and write .bsv files."""
    if not manifest_path and not docs_path:
        raise click.UsageError("need --manifest or --docs")
    if docs_path:
        doc_ids = [
            line.strip()
            for line in Path(docs_path).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    else:
        doc_ids = read_manifest(manifest_path).included_ids()
    pvariant = PromptVariant(variant)
    label = annotator_id or _safe_annotator_id(model)
    endpoint = Endpoint(base_url=endpoint_url, api_key_env=api_key_env)
    bodies = _load_bodies(corpus, set(doc_ids))

    present = [d for d in doc_ids if d in bodies]
    for missing in sorted(set(doc_ids) - set(present)):
        logger.warning("no body for %s; skipping", missing)
    requests_ = [
        build_annotation_prompt(bodies[d], pvariant, model_id=model) for d in present
    ]
    results = complete_many(requests_, endpoint, cache_dir=cache, max_workers=workers)

    written = 0
    failures = 0
    for doc_id, result in zip(present, results):
        if isinstance(result, Exception):
            logger.warning("annotate %s failed: %s", doc_id, result)
            failures += 1
            continue
        try:
            annotation = parse_annotation_table(result, pvariant, doc_id, label)
        except EmptyAnnotationError as e:
            logger.warning("annotate %s: %s", doc_id, e)
            failures += 1
            continue
        write_annotation_file(annotation, out)
        written += 1
    click.echo(f"wrote {written} annotations to {out}, {failures} failures")
    if written == 0:
        sys.exit(1)


@main.command("align")
@click.option("--reference", required=True, help="Directory of reference .bsv files.")
@click.option("--predicted", required=True, help="Directory of predicted .bsv files.")
@click.option("--out", required=True, help="Directory for alignment JSONs.")
@click.option(
    "--distance",
    default="levenshtein",
    show_default=True,
    type=click.Choice(["levenshtein", "cosine"]),
)
@click.option("--embed-url", default=None, help="Embedding provider base URL.")
@click.option("--embed-dim", default=256, show_default=True, type=int)
@click.option("--reference-annotator", default="manual", show_default=True)
def align_cmd(
    reference: str,
    predicted: str,
    out: str,
    distance: str,
    embed_url: str | None,
    embed_dim: int,
    reference_annotator: str,
):
    """Align predicted annotations against references, one JSON per document."""
    cfg = pipeline.RunConfig(
        reference_dir=Path(reference),
        predicted_dir=Path(predicted),
        out_dir=Path(out),
        distance=distance,
        embed_url=embed_url,
        embed_dim=embed_dim,
    )
    failures = pipeline.align_directories(
        Path(reference), Path(predicted), Path(out), cfg.distance_spec(),
        reference_annotator=reference_annotator,
    )
    for doc_id, model, variant, reason in failures:
        logger.warning("%s (%s/%s): %s", doc_id, model, variant, reason)
    click.echo(f"alignment done, {len(failures)} failures")


@main.command("evaluate")
@click.option("--config", "config_path", required=True, help="Run config JSON.")
def evaluate_cmd(config_path: str):
    """Run the full evaluation described by a config file."""
    try:
        config = pipeline.RunConfig.from_json(config_path)
        result = pipeline.run_evaluation(config)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)
    click.echo(
        f"evaluated {result.n_documents} documents "
        f"({result.n_alignments} alignments, {len(result.failures)} failures) "
        f"-> {result.out_dir}"
    )
    sys.exit(result.exit_code)


@main.command("report")
@click.option("--alignments", required=True, help="Directory of alignment JSONs.")
@click.option("--out", required=True)
@click.option("--dataset", default="dataset", show_default=True)
@click.option("--model", default="model", show_default=True)
@click.option("--variant", default="main", show_default=True)
@click.option("--s-max", default=8760.0, show_default=True, type=float)
@click.option("--cutoff", default=0.1, show_default=True, type=float)
def report_cmd(
    alignments: str,
    out: str,
    dataset: str,
    model: str,
    variant: str,
    s_max: float,
    cutoff: float,
):
    """Recompute metrics and CDF curves from stored alignments."""
    config = MetricConfig(s_max_hours=s_max, cosine_cutoff=cutoff)
    try:
        report = pipeline.report_from_alignments(
            Path(alignments), Path(out), config,
            dataset=dataset, model=model, variant=variant,
        )
    except ConfigError as e:
        click.echo(str(e), err=True)
        sys.exit(2)
    click.echo(json.dumps(report.to_json_dict(), sort_keys=True))


if __name__ == "__main__":
    main()
