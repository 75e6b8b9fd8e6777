"""End-to-end evaluation runs and cohort utilities.

run_evaluation turns a config into a fixed output tree:

    out/
      manifest.jsonl                  (when a corpus is screened)
      run.json                        (seed, config hash, failures, exit code)
      <dataset>/<model>/<variant>/
        alignments/<doc_id>.json
        metrics.csv
        metrics.json
        cdf/event_match.csv
        cdf/log_time.csv
        cdf/log_time_<bucket>.csv

Outputs are deterministic: rerunning with the same config, seed, and inputs
writes byte-identical files (sorted keys, fixed column orders, no
timestamps). Per-document failures are recorded and never abort the run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .align import (
    AlignmentResult,
    DistanceSpec,
    HashingEmbedder,
    HttpEmbedder,
    MatchedPair,
    best_match,
)
from .annotations import (
    Annotation,
    parse_annotation_filename,
    read_annotation_file,
)
from .corpus import CohortManifest, filter_corpus, open_corpus, write_manifest
from .errors import CasetimeError, ConfigError, UndefinedMetricError
from .metrics import (
    DiscrepancySeries,
    MetricConfig,
    MetricsReport,
    bucketed_discrepancy_cdfs,
    log_time_cdf,
    summarize_alignments,
)

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "splitmix64-fisher-yates"


class SplitMix64:
    """Tiny portable 64-bit generator; one multiply-xor-shift pipeline per draw."""

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_uint64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)


def sample_without_replacement(items: Sequence[str], n: int, seed: int) -> list[str]:
    """Partial Fisher-Yates over a copy, indices from SplitMix64 modulo range.

    Deterministic for a given (items order, n, seed) and reimplementable in
    any language from the algorithm name alone.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n > len(items):
        raise ValueError(f"cannot sample {n} from {len(items)} items")
    pool = list(items)
    rng = SplitMix64(seed)
    for i in range(n):
        j = i + rng.next_uint64() % (len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:n]


def sample_cohort(manifest: CohortManifest, n: int, seed: int) -> list[str]:
    """Uniform sample of included doc_ids, returned sorted."""
    candidates = sorted(manifest.included_ids())
    return sorted(sample_without_replacement(candidates, n, seed))


@dataclass(frozen=True)
class DemographicsSummary:
    percent_male: float
    percent_female: float
    age_mean: float
    age_q1: float
    age_median: float
    age_q3: float
    age_min: float
    age_max: float
    n_with_gender: int
    n_with_age: int


def demographics_summary(manifest: CohortManifest) -> DemographicsSummary:
    """Gender split and age distribution over records that carry the data."""
    genders = [
        r.gender.lower()
        for r in manifest.records
        if r.gender and r.gender.lower() in ("male", "female")
    ]
    ages = [float(r.age) for r in manifest.records if r.age is not None]
    if not genders or not ages:
        raise UndefinedMetricError("manifest carries no demographic data")
    male = sum(1 for g in genders if g == "male")
    arr = np.array(ages)
    q1, med, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    return DemographicsSummary(
        percent_male=100.0 * male / len(genders),
        percent_female=100.0 * (len(genders) - male) / len(genders),
        age_mean=float(arr.mean()),
        age_q1=float(q1),
        age_median=float(med),
        age_q3=float(q3),
        age_min=float(arr.min()),
        age_max=float(arr.max()),
        n_with_gender=len(genders),
        n_with_age=len(ages),
    )


# ---------------------------------------------------------------------------
# Run configuration

@dataclass
class RunConfig:
    """Everything one evaluation run needs; loadable from a JSON file."""

    reference_dir: Path
    predicted_dir: Path
    out_dir: Path
    corpus: Path | None = None
    dataset: str = "dataset"
    reference_annotator: str = "manual"
    distance: str = "levenshtein"
    embed_url: str | None = None
    embed_dim: int = 256
    s_max_hours: float = 8760.0
    cosine_cutoff: float = 0.1
    aggregation: str = "pooled"
    aultc_weighting: str = "exact"
    seed: int = 0
    sample_n: int | None = None

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"reference_dir", "predicted_dir", "out_dir"} - set(raw)
        if missing:
            raise ConfigError(f"config missing required keys: {sorted(missing)}")
        base = path.parent
        def respath(v):
            p = Path(v)
            return p if p.is_absolute() else base / p
        kwargs = dict(raw)
        for key in ("reference_dir", "predicted_dir", "out_dir", "corpus"):
            if kwargs.get(key) is not None:
                kwargs[key] = respath(kwargs[key])
        return cls(**kwargs)

    def metric_config(self) -> MetricConfig:
        return MetricConfig(
            s_max_hours=self.s_max_hours,
            cosine_cutoff=self.cosine_cutoff,
            aggregation=self.aggregation,
            aultc_weighting=self.aultc_weighting,
        )

    def distance_spec(self) -> DistanceSpec:
        if self.distance == "levenshtein":
            return DistanceSpec(kind="levenshtein")
        if self.distance == "cosine":
            embedder = (
                HttpEmbedder(self.embed_url)
                if self.embed_url
                else HashingEmbedder(self.embed_dim)
            )
            return DistanceSpec(kind="cosine", embedder=embedder)
        raise ConfigError(f"unknown distance {self.distance!r}")

    def canonical_dict(self) -> dict:
        d = dict(vars(self))
        for key in ("reference_dir", "predicted_dir", "out_dir", "corpus"):
            if d[key] is not None:
                d[key] = str(d[key])
        return d

    def config_hash(self) -> str:
        canon = json.dumps(self.canonical_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def validate(self) -> None:
        """Resolve and check every referenced input before any work starts."""
        self.metric_config()
        self.distance_spec()
        if not Path(self.reference_dir).is_dir():
            raise ConfigError(f"reference_dir does not exist: {self.reference_dir}")
        if not Path(self.predicted_dir).is_dir():
            raise ConfigError(f"predicted_dir does not exist: {self.predicted_dir}")
        if self.corpus is not None and not Path(self.corpus).exists():
            raise ConfigError(f"corpus does not exist: {self.corpus}")
        if self.sample_n is not None and self.sample_n < 0:
            raise ConfigError("sample_n must be >= 0")


# ---------------------------------------------------------------------------
# Serialization helpers (deterministic by construction)

def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def alignment_to_dict(a: AlignmentResult) -> dict:
    return {
        "doc_id": a.doc_id,
        "n_ref": a.n_ref,
        "n_pred": a.n_pred,
        "pairs": [
            {
                "ref_index": p.ref_index,
                "pred_index": p.pred_index,
                "distance": p.distance,
                "t_ref": p.t_ref,
                "t_pred": p.t_pred,
                "ref_text": p.ref_text,
                "pred_text": p.pred_text,
            }
            for p in a.pairs
        ],
        "unmatched_ref": a.unmatched_ref,
        "unmatched_pred": a.unmatched_pred,
    }


def alignment_from_dict(d: dict) -> AlignmentResult:
    return AlignmentResult(
        doc_id=d["doc_id"],
        pairs=[
            MatchedPair(
                ref_index=p["ref_index"],
                pred_index=p["pred_index"],
                distance=p["distance"],
                t_ref=p["t_ref"],
                t_pred=p["t_pred"],
                ref_text=p.get("ref_text", ""),
                pred_text=p.get("pred_text", ""),
            )
            for p in d["pairs"]
        ],
        unmatched_ref=d["unmatched_ref"],
        unmatched_pred=d["unmatched_pred"],
        n_ref=d["n_ref"],
        n_pred=d["n_pred"],
    )


METRICS_CSV_COLUMNS = [
    "dataset",
    "model",
    "variant",
    "event_match_rate",
    "event_match_rate_pooled",
    "event_match_rate_mean",
    "adjusted_match_rate",
    "c_median",
    "mae_hours",
    "aultc",
    "s_max_hours",
    "time_unit",
    "n_reports",
    "n_ref_events",
    "n_matched",
    "seed",
    "config_hash",
]


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_files(
    report: MetricsReport, out_dir: Path, seed: int, config_hash: str
) -> None:
    record = report.to_json_dict()
    record["seed"] = seed
    record["config_hash"] = config_hash
    _dump_json(record, out_dir / "metrics.json")
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "metrics.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_COLUMNS)
        writer.writerow([_format_cell(record[c]) for c in METRICS_CSV_COLUMNS])


def _write_curve(path: Path, header: tuple[str, str], points) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for x, y in points:
            writer.writerow([repr(float(x)), repr(float(y))])


def write_cdf_files(
    alignments: Sequence[AlignmentResult], config: MetricConfig, cdf_dir: Path
) -> None:
    all_pairs = [p for a in alignments for p in a.pairs]
    n_ref_total = sum(a.n_ref for a in alignments)
    # pooled event-match curve at each distinct observed distance
    points = []
    if n_ref_total and all_pairs:
        dists = sorted(p.distance for p in all_pairs)
        seen = 0
        for i, d in enumerate(dists, start=1):
            seen = i
            if i == len(dists) or dists[i] != d:
                points.append((d, seen / n_ref_total))
    _write_curve(cdf_dir / "event_match.csv", ("distance", "match_rate"), points)

    if all_pairs:
        series = DiscrepancySeries.from_pairs(all_pairs, config.s_max_hours)
        _write_curve(
            cdf_dir / "log_time.csv", ("log1p_hours", "fraction"), log_time_cdf(series)
        )
    else:
        _write_curve(cdf_dir / "log_time.csv", ("log1p_hours", "fraction"), [])
    for name, pts in bucketed_discrepancy_cdfs(all_pairs, config).items():
        _write_curve(
            cdf_dir / f"log_time_{name}.csv", ("log1p_hours", "fraction"), pts
        )


# ---------------------------------------------------------------------------
# Directory discovery and the run itself

def discover_annotations(directory: Path) -> dict[tuple[str, str], dict[str, Path]]:
    """Map (annotator_id, variant token) to {doc_id: file path} for a directory."""
    out: dict[tuple[str, str], dict[str, Path]] = {}
    for path in sorted(Path(directory).glob("*.bsv")):
        try:
            doc_id, annotator, variant = parse_annotation_filename(path.name)
        except ValueError:
            logger.warning("ignoring unrecognized annotation filename %s", path.name)
            continue
        out.setdefault((annotator, variant.value), {})[doc_id] = path
    return out


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    n_documents: int
    n_alignments: int
    failures: list[tuple[str, str, str, str]] = field(default_factory=list)


def run_evaluation(config: RunConfig) -> RunResult:
    """Execute one full evaluation run; see module docstring for the tree."""
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metric_config = config.metric_config()
    spec = config.distance_spec()
    config_hash = config.config_hash()

    manifest: CohortManifest | None = None
    if config.corpus is not None:
        manifest = filter_corpus(open_corpus(config.corpus))
        write_manifest(manifest, out_dir / "manifest.jsonl")

    reference_sets = discover_annotations(Path(config.reference_dir))
    predicted_sets = discover_annotations(Path(config.predicted_dir))

    references: dict[str, dict[str, Path]] = {}
    for (annotator, variant), docs in reference_sets.items():
        if annotator == config.reference_annotator:
            references.setdefault(variant, {}).update(docs)
    if not references:
        raise ConfigError(
            f"no reference annotations by {config.reference_annotator!r} "
            f"in {config.reference_dir}"
        )

    failures: list[tuple[str, str, str, str]] = []
    evaluated_docs: set[str] = set()
    n_alignments = 0

    for (model, variant), pred_docs in sorted(predicted_sets.items()):
        if model == config.reference_annotator:
            continue
        ref_docs = references.get(variant)
        if ref_docs is None:
            failures.append(("*", model, variant, "no reference files for variant"))
            continue
        alignments: list[AlignmentResult] = []
        target_dir = out_dir / config.dataset / model / variant
        for doc_id in sorted(ref_docs):
            pred_path = pred_docs.get(doc_id)
            if pred_path is None:
                failures.append((doc_id, model, variant, "missing prediction"))
                continue
            try:
                reference = read_annotation_file(ref_docs[doc_id])
                predicted = read_annotation_file(pred_path)
                alignment = best_match(reference, predicted, spec)
            except CasetimeError as e:
                failures.append((doc_id, model, variant, str(e)))
                logger.warning("skipping %s (%s/%s): %s", doc_id, model, variant, e)
                continue
            alignments.append(alignment)
            evaluated_docs.add(doc_id)
            _dump_json(
                alignment_to_dict(alignment),
                target_dir / "alignments" / f"{doc_id}.json",
            )
        if not alignments:
            continue
        n_alignments += len(alignments)
        report = summarize_alignments(
            alignments,
            metric_config,
            dataset=config.dataset,
            model=model,
            variant=variant,
        )
        write_metrics_files(report, target_dir, config.seed, config_hash)
        write_cdf_files(alignments, metric_config, target_dir / "cdf")

    exit_code = 0 if n_alignments > 0 else 1
    run_record = {
        "seed": config.seed,
        "config_hash": config_hash,
        "rng_algorithm": RNG_ALGORITHM,
        "s_max_hours": metric_config.s_max_hours,
        "time_unit": metric_config.time_unit,
        "dataset": config.dataset,
        "n_documents": len(evaluated_docs),
        "n_alignments": n_alignments,
        "failures": [list(f) for f in sorted(failures)],
        "exit_code": exit_code,
    }
    _dump_json(run_record, out_dir / "run.json")
    return RunResult(
        exit_code=exit_code,
        out_dir=out_dir,
        n_documents=len(evaluated_docs),
        n_alignments=n_alignments,
        failures=failures,
    )


def align_directories(
    reference_dir: Path,
    predicted_dir: Path,
    out_dir: Path,
    spec: DistanceSpec,
    reference_annotator: str = "manual",
) -> list[tuple[str, str, str, str]]:
    """Standalone alignment pass: write alignment JSONs, return failures."""
    reference_sets = discover_annotations(Path(reference_dir))
    predicted_sets = discover_annotations(Path(predicted_dir))
    failures: list[tuple[str, str, str, str]] = []
    references: dict[str, dict[str, Path]] = {}
    for (annotator, variant), docs in reference_sets.items():
        if annotator == reference_annotator:
            references.setdefault(variant, {}).update(docs)
    for (model, variant), pred_docs in sorted(predicted_sets.items()):
        if model == reference_annotator:
            continue
        ref_docs = references.get(variant, {})
        for doc_id in sorted(pred_docs):
            if doc_id not in ref_docs:
                failures.append((doc_id, model, variant, "missing reference"))
                continue
            try:
                alignment = best_match(
                    read_annotation_file(ref_docs[doc_id]),
                    read_annotation_file(pred_docs[doc_id]),
                    spec,
                )
            except CasetimeError as e:
                failures.append((doc_id, model, variant, str(e)))
                continue
            _dump_json(
                alignment_to_dict(alignment),
                Path(out_dir) / model / variant / f"{doc_id}.json",
            )
    return failures


def report_from_alignments(
    alignments_dir: Path,
    out_dir: Path,
    config: MetricConfig,
    dataset: str = "dataset",
    model: str = "model",
    variant: str = "main",
    seed: int = 0,
    config_hash: str = "",
) -> MetricsReport:
    """Recompute the metrics row and CDF files from stored alignment JSONs."""
    paths = sorted(Path(alignments_dir).glob("*.json"))
    if not paths:
        raise ConfigError(f"no alignment files in {alignments_dir}")
    alignments = [
        alignment_from_dict(json.loads(p.read_text(encoding="utf-8"))) for p in paths
    ]
    report = summarize_alignments(
        alignments, config, dataset=dataset, model=model, variant=variant
    )
    out = Path(out_dir)
    write_metrics_files(report, out, seed, config_hash)
    write_cdf_files(alignments, config, out / "cdf")
    return report
