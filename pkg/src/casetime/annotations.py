"""Domain types and the bar-separated annotation table format.

An annotation is an ordered list of clinical findings, each a text span paired
with a timestamp in hours relative to presentation: hour 0 is admission,
negative values precede it. Annotators (human or LLM) exchange these as
bar-separated tables, one finding per row::

    fever | -72
    admitted to the hospital | 0
    discharged | 24

LLM responses arrive wrapped in code fences, headers, and stray prose, so
parsing is salvage-oriented: junk lines are skipped or warned about
individually and never discard the rest of the table.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .errors import EmptyAnnotationError

# i2b2-style event type vocabulary, index is the stored code.
EVENT_TYPES = (
    "Factual",
    "Possible",
    "Hypothetical",
    "Conditional",
    "Negated",
    "Historical",
    "Uncertain",
)


class PromptVariant(enum.Enum):
    """Annotation prompt variants; the value doubles as the CLI/filename token."""

    MAIN = "main"
    NO_ROLE = "norole"
    ZERO_SHOT = "zeroshot"
    NO_EXPANSION = "noexpand"
    INTERVAL = "interval"
    INTERVAL_TYPE = "intervaltype"

    @property
    def table_columns(self) -> int:
        """Expected column count of a well-formed table row for this variant."""
        if self is PromptVariant.INTERVAL:
            return 3
        if self is PromptVariant.INTERVAL_TYPE:
            return 4
        return 2


@dataclass(frozen=True)
class Finding:
    """One clinical finding: a text span plus its time in hours.

    interval_end_hours is populated by the interval variants and must not
    precede time_hours. event_type is an index into EVENT_TYPES.
    """

    text: str
    time_hours: float
    interval_end_hours: float | None = None
    event_type: int | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("finding text must be non-empty")
        if not math.isfinite(self.time_hours):
            raise ValueError("time_hours must be finite")
        if self.interval_end_hours is not None:
            if not math.isfinite(self.interval_end_hours):
                raise ValueError("interval_end_hours must be finite")
            if self.interval_end_hours < self.time_hours:
                raise ValueError("interval_end_hours must be >= time_hours")
        if self.event_type is not None and not 0 <= self.event_type < len(EVENT_TYPES):
            raise ValueError(f"event_type must be in 0..{len(EVENT_TYPES) - 1}")


@dataclass
class Annotation:
    """An ordered set of findings for one document by one annotator."""

    doc_id: str
    findings: list[Finding]
    annotator_id: str
    variant: PromptVariant
    parse_warnings: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")


_NUMBER_RE = re.compile(r"[+-]?\d+(\.\d+)?")


def _parse_number(cell: str) -> float | None:
    """Parse a timestamp cell; None if it is not a plain signed decimal.

    Thousands-separator commas are stripped. Ranges ("24-48"), words, and
    scientific notation are rejected rather than guessed at.
    """
    s = cell.strip().replace(",", "")
    if not _NUMBER_RE.fullmatch(s):
        return None
    value = float(s)
    if not math.isfinite(value):  # overflow from an absurd digit string
        return None
    return value


def _parse_event_type(cell: str) -> int | None:
    s = cell.strip()
    for idx, name in enumerate(EVENT_TYPES):
        if s.lower() == name.lower():
            return idx
    if s.isdigit() and int(s) < len(EVENT_TYPES):
        return int(s)
    return None


def _looks_like_header(cells: list[str]) -> bool:
    # "event | timestamp" style rows: named first column, non-numeric second.
    return (
        len(cells) >= 2
        and "event" in cells[0].lower()
        and _parse_number(cells[1]) is None
    )


def parse_annotation_table(
    raw: str, variant: PromptVariant, doc_id: str, annotator_id: str
) -> Annotation:
    """Parse a bar-separated findings table out of a raw model response.

    Code fences, blank lines, and header rows are skipped silently; any other
    line that does not yield a well-formed finding is recorded in
    parse_warnings as (1-based line number, reason) and skipped. Raises
    EmptyAnnotationError when no line yields a finding, which callers treat
    as a failed response.
    """
    arity = variant.table_columns
    findings: list[Finding] = []
    warnings: list[tuple[int, str]] = []

    for lineno, line in enumerate(raw.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("```"):
            continue
        cells = [c.strip() for c in stripped.split("|")]
        if _looks_like_header(cells):
            continue
        if len(cells) != arity:
            warnings.append((lineno, f"expected {arity} columns, got {len(cells)}"))
            continue
        text = cells[0]
        if not text:
            warnings.append((lineno, "empty finding text"))
            continue
        time_hours = _parse_number(cells[1])
        if time_hours is None:
            warnings.append((lineno, f"unparseable timestamp {cells[1]!r}"))
            continue
        interval_end = None
        event_type = None
        if arity >= 3:
            interval_end = _parse_number(cells[2])
            if interval_end is None:
                warnings.append((lineno, f"unparseable interval end {cells[2]!r}"))
                continue
            if interval_end < time_hours:
                warnings.append((lineno, "interval ends before it starts"))
                continue
        if arity == 4:
            event_type = _parse_event_type(cells[3])
            if event_type is None:
                warnings.append((lineno, f"unknown event type {cells[3]!r}"))
                continue
        findings.append(
            Finding(
                text=text,
                time_hours=time_hours,
                interval_end_hours=interval_end,
                event_type=event_type,
            )
        )

    if not findings:
        raise EmptyAnnotationError(
            f"no well-formed finding rows for {doc_id!r} by {annotator_id!r}"
        )
    return Annotation(
        doc_id=doc_id,
        findings=findings,
        annotator_id=annotator_id,
        variant=variant,
        parse_warnings=warnings,
    )


def format_hours(value: float) -> str:
    """Shortest exact decimal form, no exponent, so a reparse is identity."""
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    s = repr(value)
    if "e" in s or "E" in s:
        s = format(Decimal(s), "f")
    return s


def serialize_annotation(annotation: Annotation) -> str:
    """Render findings back to the canonical bar-separated form.

    Inverse of parse_annotation_table up to whitespace normalization:
    parse(serialize(a)) reproduces a.findings exactly.
    """
    rows = []
    for f in annotation.findings:
        cells = [f.text, format_hours(f.time_hours)]
        if f.interval_end_hours is not None:
            cells.append(format_hours(f.interval_end_hours))
        if f.event_type is not None:
            cells.append(EVENT_TYPES[f.event_type])
        rows.append(" | ".join(cells))
    return "\n".join(rows)


def annotation_filename(doc_id: str, annotator_id: str, variant: PromptVariant) -> str:
    """File naming convention: <doc_id>.<annotator_id>.<variant>.bsv.

    annotator_id and the variant token must not contain dots; doc_id may.
    """
    if "." in annotator_id:
        raise ValueError("annotator_id must not contain '.'")
    return f"{doc_id}.{annotator_id}.{variant.value}.bsv"


def parse_annotation_filename(name: str) -> tuple[str, str, PromptVariant]:
    """Split a .bsv filename into (doc_id, annotator_id, variant)."""
    if not name.endswith(".bsv"):
        raise ValueError(f"not an annotation file: {name!r}")
    parts = name[: -len(".bsv")].rsplit(".", 2)
    if len(parts) != 3:
        raise ValueError(f"annotation filename needs doc.annotator.variant: {name!r}")
    doc_id, annotator_id, token = parts
    try:
        variant = PromptVariant(token)
    except ValueError:
        raise ValueError(f"unknown variant token {token!r} in {name!r}") from None
    return doc_id, annotator_id, variant


def read_annotation_file(path: str | Path) -> Annotation:
    path = Path(path)
    doc_id, annotator_id, variant = parse_annotation_filename(path.name)
    return parse_annotation_table(
        path.read_text(encoding="utf-8"), variant, doc_id, annotator_id
    )


def write_annotation_file(annotation: Annotation, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / annotation_filename(
        annotation.doc_id, annotation.annotator_id, annotation.variant
    )
    path.write_text(serialize_annotation(annotation) + "\n", encoding="utf-8")
    return path
