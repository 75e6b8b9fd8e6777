"""Screen free-text article dumps for single-patient sepsis case reports.

Documents arrive as plain-text dumps whose sections are delimited by lines
starting with "==== " (e.g. "==== Front", "==== Body", "==== Ref"). Only the
body is screened. Screens are deliberately cheap regexes so millions of
documents stream through in one pass; LLM phenotyping later prunes the
survivors.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from .errors import NoBodySectionError

logger = logging.getLogger(__name__)

SECTION_PREFIX = "==== "
BODY_MARKER = "==== Body"

# Both patterns of a screen must hit somewhere in the body (case-insensitive).
CASE_REPORT_PATTERNS = (
    re.compile(r"case (report|presenta)", re.IGNORECASE),
    re.compile(r"year-? ?old", re.IGNORECASE),
)
SEPSIS_PATTERNS = (
    re.compile(r"(sepsi|septic)", re.IGNORECASE),
    re.compile(r"(critical|intensive) care", re.IGNORECASE),
)

SCREEN_NAMES = ("case_report", "sepsis")


def extract_body(raw: str) -> str:
    """Text between the "==== Body" line and the next "==== " line (or EOF).

    Leading/trailing blank lines are trimmed. Raises NoBodySectionError when
    the marker is absent.
    """
    lines = raw.splitlines()
    start = None
    for i, line in enumerate(lines):
        if line.rstrip() == BODY_MARKER:
            start = i + 1
            break
    if start is None:
        raise NoBodySectionError("document has no body section marker")
    end = len(lines)
    for j in range(start, len(lines)):
        if lines[j].startswith(SECTION_PREFIX):
            end = j
            break
    body = lines[start:end]
    while body and not body[0].strip():
        body.pop(0)
    while body and not body[-1].strip():
        body.pop()
    return "\n".join(body)


def screen_case_report(body: str) -> bool:
    """True when the body mentions a case report/presentation and an age phrase.

    The age pattern tolerates "year-old", "year old", and the OCR-ish
    "yearold" form.
    """
    return all(p.search(body) for p in CASE_REPORT_PATTERNS)


def screen_sepsis_candidate(body: str) -> bool:
    """True when the body mentions sepsis/septic plus critical or intensive care."""
    return all(p.search(body) for p in SEPSIS_PATTERNS)


@dataclass
class CohortRecord:
    """Per-document manifest row.

    Screen flags are None when the screen was not run. phenotypes maps
    model_id to a 0/1 verdict once LLM phenotyping has run; n_cases/age/gender
    come from the demographics query. included means the document survives
    every check that has produced data so far.
    """

    doc_id: str
    is_case_report: bool | None
    is_sepsis_candidate: bool | None
    phenotypes: dict[str, int] | None = None
    n_cases: int | None = None
    age: int | None = None
    gender: str | None = None
    included: bool = False

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if self.included:
            if self.is_case_report is False or self.is_sepsis_candidate is False:
                raise ValueError("included record failed a screen")
            if self.n_cases is not None and self.n_cases != 1:
                raise ValueError("included record must describe exactly one case")

    def to_json_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "is_case_report": self.is_case_report,
            "is_sepsis_candidate": self.is_sepsis_candidate,
            "phenotypes": self.phenotypes,
            "n_cases": self.n_cases,
            "age": self.age,
            "gender": self.gender,
            "included": self.included,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CohortRecord":
        return cls(
            doc_id=d["doc_id"],
            is_case_report=d["is_case_report"],
            is_sepsis_candidate=d["is_sepsis_candidate"],
            phenotypes=d.get("phenotypes"),
            n_cases=d.get("n_cases"),
            age=d.get("age"),
            gender=d.get("gender"),
            included=d.get("included", False),
        )


@dataclass
class CohortManifest:
    """Ordered manifest of screened documents plus a failure log."""

    records: list[CohortRecord]
    failures: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.records.sort(key=lambda r: r.doc_id)

    def record_for(self, doc_id: str) -> CohortRecord | None:
        for r in self.records:
            if r.doc_id == doc_id:
                return r
        return None

    def included_ids(self) -> list[str]:
        return [r.doc_id for r in self.records if r.included]


def filter_corpus(
    source: Iterable[tuple[str, str | bytes | None]],
    screens: Iterable[str] = SCREEN_NAMES,
) -> CohortManifest:
    """Screen a stream of (doc_id, raw) documents into a manifest.

    raw may be str, bytes (decoded here as UTF-8), or None for a document the
    source could not load. Per-document failures (undecodable bytes, missing
    body) are logged and counted without stopping the stream; memory holds one
    document's text at a time. Records come back sorted by doc_id.
    """
    screens = tuple(screens)
    for name in screens:
        if name not in SCREEN_NAMES:
            raise ValueError(f"unknown screen {name!r}")
    records: list[CohortRecord] = []
    failures: list[tuple[str, str]] = []

    for doc_id, raw in source:
        if raw is None:
            failures.append((doc_id, "unreadable document"))
            logger.warning("skipping %s: unreadable document", doc_id)
            continue
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                failures.append((doc_id, f"decode error: {e}"))
                logger.warning("skipping %s: %s", doc_id, e)
                continue
        try:
            body = extract_body(raw)
        except NoBodySectionError:
            failures.append((doc_id, "no body section"))
            logger.warning("skipping %s: no body section", doc_id)
            continue
        is_case = screen_case_report(body) if "case_report" in screens else None
        is_sepsis = screen_sepsis_candidate(body) if "sepsis" in screens else None
        included = (is_case is not False) and (is_sepsis is not False)
        records.append(
            CohortRecord(
                doc_id=doc_id,
                is_case_report=is_case,
                is_sepsis_candidate=is_sepsis,
                included=included,
            )
        )

    return CohortManifest(records=records, failures=failures)


def iter_directory(path: str | Path) -> Iterator[tuple[str, bytes | None]]:
    """Yield (doc_id, raw bytes) for every *.txt under a directory, sorted."""
    path = Path(path)
    for f in sorted(path.glob("*.txt")):
        try:
            yield f.stem, f.read_bytes()
        except OSError:
            yield f.stem, None


def iter_jsonl(path: str | Path) -> Iterator[tuple[str, str | None]]:
    """Yield (doc_id, text) from a line-delimited JSON archive.

    Each line must be an object with "doc_id" and "text" fields; malformed
    lines yield a positional doc_id with None text so they count as failures.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield str(obj["doc_id"]), obj["text"]
            except (json.JSONDecodeError, KeyError, TypeError):
                yield f"line-{n}", None


def open_corpus(path: str | Path) -> Iterator[tuple[str, str | bytes | None]]:
    """Dispatch a corpus path to the right reader (directory or .jsonl file)."""
    path = Path(path)
    if path.is_dir():
        return iter_directory(path)
    if path.suffix == ".jsonl":
        return iter_jsonl(path)
    raise ValueError(f"corpus must be a directory or a .jsonl file: {path}")


def write_manifest(manifest: CohortManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in manifest.records:
            fh.write(json.dumps(r.to_json_dict(), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> CohortManifest:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(CohortRecord.from_json_dict(json.loads(line)))
    return CohortManifest(records=records)


def load_packaged_doc_ids(name: str = "sepsis10") -> list[str]:
    """Return the document ids of a cohort list shipped with the package."""
    data = resources.files("casetime").joinpath("data", f"{name}_doc_ids.txt")
    text = data.read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]
