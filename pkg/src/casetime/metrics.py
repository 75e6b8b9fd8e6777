"""Temporal fidelity metrics over aligned finding pairs.

Covers: event match rates at a distance cutoff, concordance of predicted vs
reference time ordering, median absolute time error, the log-time discrepancy
CDF and the area under it (AULTC), per-|t| bucket CDFs, IQR outlier
filtering, 2x2 confusion agreement, event-category agreement rates, and
expert review ranking statistics.

Time discrepancies enter the log domain as log(1 + min(|dt|, s_max)), so an
AULTC value only means something alongside its saturation horizon and time
unit; every report record carries both.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .align import AlignmentResult, MatchedPair
from .errors import UndefinedMetricError

logger = logging.getLogger(__name__)

DEFAULT_S_MAX_HOURS = 8760.0  # one year
DEFAULT_COSINE_CUTOFF = 0.1
TIME_UNIT = "hours"

AGGREGATIONS = ("pooled", "per-report-median", "per-report-mean")
AULTC_WEIGHTINGS = ("exact", "upper")

# |t_ref| bucket edges: within an hour, an hour to a day, a day to a year, beyond.
TIME_BUCKETS = (
    ("le_1h", 0.0, 1.0),
    ("1h_to_1d", 1.0, 24.0),
    ("1d_to_1y", 24.0, 8760.0),
    ("gt_1y", 8760.0, math.inf),
)


@dataclass(frozen=True)
class MetricConfig:
    s_max_hours: float = DEFAULT_S_MAX_HOURS
    cosine_cutoff: float = DEFAULT_COSINE_CUTOFF
    time_unit: str = TIME_UNIT
    aggregation: str = "pooled"
    aultc_weighting: str = "exact"

    def __post_init__(self):
        if self.s_max_hours <= 0:
            raise ValueError("s_max_hours must be positive")
        if self.cosine_cutoff < 0:
            raise ValueError("cosine_cutoff must be >= 0")
        if self.time_unit != TIME_UNIT:
            raise ValueError(f"time_unit is fixed to {TIME_UNIT!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.aultc_weighting not in AULTC_WEIGHTINGS:
            raise ValueError(f"aultc_weighting must be one of {AULTC_WEIGHTINGS}")


# ---------------------------------------------------------------------------
# Match rates

def event_match_rate(alignment: AlignmentResult, cutoff: float = DEFAULT_COSINE_CUTOFF) -> float:
    """Matched-within-cutoff pairs over all reference findings."""
    if alignment.n_ref == 0:
        raise UndefinedMetricError("match rate undefined with no reference findings")
    matched = sum(1 for p in alignment.pairs if p.distance <= cutoff)
    return matched / alignment.n_ref


def adjusted_match_rate(alignment: AlignmentResult, cutoff: float = DEFAULT_COSINE_CUTOFF) -> float:
    """Matched-within-cutoff pairs over aligned pairs only.

    Denominator excludes reference findings the shorter predicted list never
    reached, so this is always >= the raw rate.
    """
    if not alignment.pairs:
        raise UndefinedMetricError("adjusted match rate undefined with no pairs")
    matched = sum(1 for p in alignment.pairs if p.distance <= cutoff)
    return matched / len(alignment.pairs)


# ---------------------------------------------------------------------------
# Time ordering and discrepancy

def concordance(pairs: Sequence[MatchedPair]) -> float:
    """Probability of correctly ordering a random comparable pair (c-index).

    Pairs with tied reference times are not comparable and leave the
    denominator; tied predicted times score 0.5.
    """
    if len(pairs) < 2:
        raise UndefinedMetricError("concordance needs at least two pairs")
    t_ref = np.array([p.t_ref for p in pairs], dtype=np.float64)
    t_pred = np.array([p.t_pred for p in pairs], dtype=np.float64)
    ref_sign = np.sign(t_ref[:, None] - t_ref[None, :])
    pred_sign = np.sign(t_pred[:, None] - t_pred[None, :])
    iu = np.triu_indices(len(pairs), k=1)
    rs = ref_sign[iu]
    ps = pred_sign[iu]
    comparable = rs != 0
    total = int(comparable.sum())
    if total == 0:
        raise UndefinedMetricError("all reference times tied; concordance undefined")
    agree = (ps[comparable] == rs[comparable]).astype(np.float64)
    tied = (ps[comparable] == 0).astype(np.float64)
    return float((agree + 0.5 * tied).sum() / total)


def median_abs_error(pairs: Sequence[MatchedPair]) -> float:
    """Median |t_pred - t_ref|; even counts average the two middle values."""
    if not pairs:
        raise UndefinedMetricError("median absolute error undefined with no pairs")
    return float(statistics.median(abs(p.t_pred - p.t_ref) for p in pairs))


def avg_log_discrepancy(
    t_pred: Sequence[float], t_ref: Sequence[float], s_max: float = DEFAULT_S_MAX_HOURS
) -> float:
    """Mean log(1 + min(|dt|, s_max)). Lengths must match and be non-empty."""
    if len(t_pred) != len(t_ref):
        raise ValueError("t_pred and t_ref must have equal length")
    if not t_pred:
        raise ValueError("need at least one time pair")
    total = 0.0
    for tp, tr in zip(t_pred, t_ref):
        total += math.log1p(min(abs(tp - tr), s_max))
    return total / len(t_pred)


@dataclass(frozen=True)
class DiscrepancySeries:
    """Sorted log-domain discrepancies x_i = log(1 + min(|dt|, s_max))."""

    x_sorted: tuple[float, ...]
    s_max_hours: float

    def __post_init__(self):
        if not self.x_sorted:
            raise ValueError("series needs at least one discrepancy")
        if self.s_max_hours <= 0:
            raise ValueError("s_max_hours must be positive")
        limit = math.log1p(self.s_max_hours)
        prev = 0.0
        for x in self.x_sorted:
            if x < prev:
                raise ValueError("x_sorted must be non-decreasing")
            if x < 0 or x > limit:
                raise ValueError("x values must lie in [0, log(1+s_max)]")
            prev = x

    @property
    def k(self) -> int:
        return len(self.x_sorted)

    @classmethod
    def from_discrepancies(
        cls, deltas: Iterable[float], s_max_hours: float = DEFAULT_S_MAX_HOURS
    ) -> "DiscrepancySeries":
        xs = sorted(math.log1p(min(abs(d), s_max_hours)) for d in deltas)
        return cls(x_sorted=tuple(xs), s_max_hours=s_max_hours)

    @classmethod
    def from_pairs(
        cls, pairs: Sequence[MatchedPair], s_max_hours: float = DEFAULT_S_MAX_HOURS
    ) -> "DiscrepancySeries":
        return cls.from_discrepancies(
            (p.t_pred - p.t_ref for p in pairs), s_max_hours=s_max_hours
        )


def log_time_cdf(series: DiscrepancySeries) -> list[tuple[float, float]]:
    """Right-continuous empirical CDF as (x, F(x)) at each distinct x."""
    points: list[tuple[float, float]] = []
    k = series.k
    for i, x in enumerate(series.x_sorted, start=1):
        frac = i / k
        if points and points[-1][0] == x:
            points[-1] = (x, frac)
        else:
            points.append((x, frac))
    return points


def aultc(series: DiscrepancySeries, weighting: str = "exact") -> float:
    """Area under the log-time CDF over [0, log(1+s_max)], normalized to [0, 1].

    "exact" integrates the right-continuous step function exactly, which
    reduces to 1 - mean(x)/L. "upper" instead weights each inter-sample gap by
    the post-jump level i/k (an alternative convention kept for comparison; it
    rewards the largest sample's position and cannot reach 0).
    """
    if weighting not in AULTC_WEIGHTINGS:
        raise ValueError(f"weighting must be one of {AULTC_WEIGHTINGS}")
    L = math.log1p(series.s_max_hours)
    xs = series.x_sorted
    k = series.k
    if weighting == "exact":
        return 1.0 - (sum(xs) / k) / L
    area = 0.0
    prev = 0.0
    for i, x in enumerate(xs, start=1):
        area += (x - prev) * (i / k)
        prev = x
    area += L - xs[-1]
    return area / L


def bucketed_discrepancy_cdfs(
    pairs: Sequence[MatchedPair], config: MetricConfig = MetricConfig()
) -> dict[str, list[tuple[float, float]]]:
    """Log-time CDF per |t_ref| horizon bucket; empty buckets give []."""
    grouped: dict[str, list[float]] = {name: [] for name, _, _ in TIME_BUCKETS}
    for p in pairs:
        horizon = abs(p.t_ref)
        for name, lo, hi in TIME_BUCKETS:
            # first bucket includes its lower edge, the rest are (lo, hi]
            if (lo < horizon <= hi) or (lo == 0.0 and horizon == 0.0):
                grouped[name].append(p.t_pred - p.t_ref)
                break
    out: dict[str, list[tuple[float, float]]] = {}
    for name, _, _ in TIME_BUCKETS:
        deltas = grouped[name]
        if not deltas:
            out[name] = []
            continue
        series = DiscrepancySeries.from_discrepancies(deltas, config.s_max_hours)
        out[name] = log_time_cdf(series)
    return out


# ---------------------------------------------------------------------------
# Outlier handling

def iqr_filter(pairs: Sequence[MatchedPair]) -> list[MatchedPair]:
    """Drop pairs whose signed error lies outside the Tukey fences.

    Fences are Q1 - 1.5*IQR and Q3 + 1.5*IQR with quartiles at linearly
    interpolated positions (n-1)*p. Fewer than 4 pairs: returned unchanged
    (quartiles would be meaningless), with a logged warning.
    """
    pairs = list(pairs)
    if len(pairs) < 4:
        logger.warning("iqr_filter: only %d pairs, returning input unchanged", len(pairs))
        return pairs
    d = np.array([p.t_pred - p.t_ref for p in pairs], dtype=np.float64)
    q1, q3 = np.percentile(d, [25.0, 75.0])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return [p for p, v in zip(pairs, d) if lo <= v <= hi]


# ---------------------------------------------------------------------------
# Agreement

@dataclass(frozen=True)
class ConfusionMatrix2x2:
    """Counts for two annotators' yes/no verdicts on the same documents."""

    yes_yes: int
    yes_no: int
    no_yes: int
    no_no: int

    def __post_init__(self):
        for v in (self.yes_yes, self.yes_no, self.no_yes, self.no_no):
            if v < 0:
                raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.yes_yes + self.yes_no + self.no_yes + self.no_no


def confusion_agreement(m: ConfusionMatrix2x2) -> tuple[float, float]:
    """(observed agreement, accuracy treating the column annotator as truth).

    Both are (yes_yes + no_no) / total; returning the pair keeps call sites
    explicit about which reading they report.
    """
    if m.total == 0:
        raise UndefinedMetricError("agreement undefined for an empty matrix")
    value = (m.yes_yes + m.no_no) / m.total
    return value, value


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    arr = np.array(values, dtype=np.float64)
    # population SD so a single report yields exactly 0.0
    return float(arr.mean()), float(arr.std())


def category_alignment_rate(
    reports: Sequence[Sequence[tuple[int, int]]],
) -> tuple[float, float]:
    """Mean and SD across reports of the same-category fraction of aligned pairs.

    Each report is a list of (reference category, predicted category) pairs
    for its aligned findings; reports with no categorized pairs are skipped.
    """
    rates = []
    for pairs in reports:
        if not pairs:
            continue
        rates.append(sum(1 for r, p in pairs if r == p) / len(pairs))
    if not rates:
        raise UndefinedMetricError("no report has a categorized pair")
    return _mean_sd(rates)


def per_category_match_rate(
    reports: Sequence[tuple[AlignmentResult, Sequence[int]]],
    cutoff: float = DEFAULT_COSINE_CUTOFF,
) -> dict[int, tuple[float, float]]:
    """Match rate restricted to reference findings of each category.

    reports pairs each alignment with the category of every reference finding
    (parallel to the reference findings list). Per category: per-report rates
    first, then mean and SD across the reports that have that category at all.
    Categories nobody uses are absent from the result.
    """
    per_cat: dict[int, list[float]] = {}
    for alignment, ref_categories in reports:
        if len(ref_categories) != alignment.n_ref:
            raise ValueError("need one category per reference finding")
        matched_by_ref = {
            p.ref_index for p in alignment.pairs if p.distance <= cutoff
        }
        totals: dict[int, int] = {}
        hits: dict[int, int] = {}
        for idx, cat in enumerate(ref_categories):
            totals[cat] = totals.get(cat, 0) + 1
            if idx in matched_by_ref:
                hits[cat] = hits.get(cat, 0) + 1
        for cat, total in totals.items():
            per_cat.setdefault(cat, []).append(hits.get(cat, 0) / total)
    return {cat: _mean_sd(rates) for cat, rates in sorted(per_cat.items())}


# ---------------------------------------------------------------------------
# Expert review rankings

QUALITY_LEVELS = ("Excellent", "Good", "Acceptable", "Poor")


@dataclass(frozen=True)
class ReviewStats:
    """Per-annotator summary of expert review rankings."""

    annotator_id: str
    mean_rank: float
    top1: float
    top1_llm: float | None
    excellent: float
    good_or_better: float
    acceptable_or_better: float


def review_stats(
    reports: Sequence[Sequence[tuple[str, int, str]]],
    manual_annotator_id: str | None = "manual",
) -> dict[str, ReviewStats]:
    """Aggregate per-report (annotator, rank, quality) rows.

    Tied annotators share the lower (better) rank, so several can hold rank 1
    in one report. top1 is the fraction of reports at rank 1; top1_llm ranks
    only the non-manual annotators against each other (None for the manual
    annotator itself). Quality fractions are cumulative.
    """
    if not reports:
        raise UndefinedMetricError("no review reports")
    annotators = sorted({a for report in reports for a, _, _ in report})
    ranks: dict[str, list[int]] = {a: [] for a in annotators}
    qualities: dict[str, list[str]] = {a: [] for a in annotators}
    top1_counts: dict[str, int] = {a: 0 for a in annotators}
    top1_llm_counts: dict[str, int] = {a: 0 for a in annotators}

    for report in reports:
        seen = {a for a, _, _ in report}
        missing = set(annotators) - seen
        if missing:
            raise ValueError(f"report is missing annotators: {sorted(missing)}")
        if len(seen) != len(report):
            raise ValueError("an annotator appears twice in one report")
        llm_best = None
        for a, rank, quality in report:
            if rank < 1:
                raise ValueError("ranks start at 1")
            if quality not in QUALITY_LEVELS:
                raise ValueError(f"unknown quality {quality!r}")
            if a != manual_annotator_id:
                llm_best = rank if llm_best is None else min(llm_best, rank)
        for a, rank, quality in report:
            ranks[a].append(rank)
            qualities[a].append(quality)
            if rank == 1:
                top1_counts[a] += 1
            if a != manual_annotator_id and llm_best is not None and rank == llm_best:
                top1_llm_counts[a] += 1

    n = len(reports)
    out: dict[str, ReviewStats] = {}
    for a in annotators:
        qs = qualities[a]
        excellent = sum(1 for q in qs if q == "Excellent") / n
        good = sum(1 for q in qs if q in ("Excellent", "Good")) / n
        acceptable = sum(1 for q in qs if q != "Poor") / n
        out[a] = ReviewStats(
            annotator_id=a,
            mean_rank=sum(ranks[a]) / n,
            top1=top1_counts[a] / n,
            top1_llm=None if a == manual_annotator_id else top1_llm_counts[a] / n,
            excellent=excellent,
            good_or_better=good,
            acceptable_or_better=acceptable,
        )
    return out


# ---------------------------------------------------------------------------
# Per-run summary

@dataclass
class MetricsReport:
    """One (dataset, model, variant) row of the metrics table."""

    dataset: str
    model: str
    variant: str
    event_match_rate: float | None
    event_match_rate_pooled: float | None
    event_match_rate_mean: float | None
    adjusted_match_rate: float | None
    c_median: float | None
    mae_hours: float | None
    aultc: float | None
    s_max_hours: float
    time_unit: str
    n_reports: int
    n_ref_events: int
    n_matched: int

    def to_json_dict(self) -> dict:
        return dict(vars(self))


def summarize_alignments(
    alignments: Sequence[AlignmentResult],
    config: MetricConfig = MetricConfig(),
    dataset: str = "",
    model: str = "",
    variant: str = "",
) -> MetricsReport:
    """Aggregate per-document alignments into one metrics row.

    Match rate: pooled over all reference findings, with the per-report mean
    alongside (the headline field follows config.aggregation). Concordance:
    per report, median across reports that have it defined. MAE and AULTC:
    pooled over all matched pairs.
    """
    if not alignments:
        raise UndefinedMetricError("no alignments to summarize")
    all_pairs: list[MatchedPair] = []
    per_report_rates: list[float] = []
    c_values: list[float] = []
    n_ref_total = 0
    matched_total = 0
    min_side_total = 0
    for a in alignments:
        all_pairs.extend(a.pairs)
        n_ref_total += a.n_ref
        min_side_total += min(a.n_ref, a.n_pred)
        matched_total += sum(1 for p in a.pairs if p.distance <= config.cosine_cutoff)
        if a.n_ref > 0:
            per_report_rates.append(event_match_rate(a, config.cosine_cutoff))
        try:
            c_values.append(concordance(a.pairs))
        except UndefinedMetricError:
            pass

    pooled = matched_total / n_ref_total if n_ref_total else None
    adjusted = matched_total / min_side_total if min_side_total else None
    mean_rate = (
        sum(per_report_rates) / len(per_report_rates) if per_report_rates else None
    )
    if config.aggregation == "per-report-mean":
        headline = mean_rate
    elif config.aggregation == "per-report-median":
        headline = float(statistics.median(per_report_rates)) if per_report_rates else None
    else:
        headline = pooled

    c_median = float(statistics.median(c_values)) if c_values else None
    mae = median_abs_error(all_pairs) if all_pairs else None
    area = None
    if all_pairs:
        series = DiscrepancySeries.from_pairs(all_pairs, config.s_max_hours)
        area = aultc(series, weighting=config.aultc_weighting)

    return MetricsReport(
        dataset=dataset,
        model=model,
        variant=variant,
        event_match_rate=headline,
        event_match_rate_pooled=pooled,
        event_match_rate_mean=mean_rate,
        adjusted_match_rate=adjusted,
        c_median=c_median,
        mae_hours=mae,
        aultc=area,
        s_max_hours=config.s_max_hours,
        time_unit=config.time_unit,
        n_reports=len(alignments),
        n_ref_events=n_ref_total,
        n_matched=matched_total,
    )
