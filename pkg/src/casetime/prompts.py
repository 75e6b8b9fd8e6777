"""Prompt construction and response parsing for the annotation pipeline.

Four query families: sepsis phenotyping (boxed 0/1 verdict), demographics
(n_cases | age | gender row), finding/timestamp annotation (bar-separated
table, six variants), and event category assignment (integer 0..5).

Builders are pure: same inputs, same ChatRequest. The annotation prompt is
assembled from fixed segments so each ablation variant differs from the main
prompt by exactly one removed span.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .annotations import EVENT_TYPES, PromptVariant
from .errors import (
    UnparseableCategoryError,
    UnparseableDemographicsError,
    UnparseableVerdictError,
)
from .llm import ChatRequest

# ---------------------------------------------------------------------------
# Sepsis phenotyping

PHENOTYPE_PROMPT_PREFIX = (
    "You are an expert physician.  Determine if the patient described in the "
    "following case report has either sepsis or septic shock, as defined by the "
    "Sepsis-3 criteria, which correspond to having a (1) suspected or confirmed "
    "infection and (2) blood pressure/respiratory rate/mental status abnormalities. "
    "If the information is not present, use your best judgment based on the "
    "information available. Reply 1 for sepsis, 0 otherwise. Reply with the number "
    "0 or 1 only in \\boxed{\\n TEXT HERE \\n}with no explanation."
    "\n\nHere is the case: "
)


def build_phenotype_prompt(case_text: str, model_id: str = "") -> ChatRequest:
    if not case_text:
        raise ValueError("case_text must be non-empty")
    return ChatRequest(user_text=PHENOTYPE_PROMPT_PREFIX + case_text, model_id=model_id)


_BOXED_RE = re.compile(r"\\boxed\{\s*([01])\s*\}")


def parse_boxed_binary(response: str) -> int:
    """Extract a 0/1 verdict from a model response.

    Takes the last \\boxed{...} occurrence (models often restate the box while
    reasoning); tolerates whitespace inside the braces. Falls back to a lone
    trailing 0/1 token on the final non-empty line. Anything else raises
    UnparseableVerdictError.
    """
    hits = _BOXED_RE.findall(response)
    if hits:
        return int(hits[-1])
    lines = [ln for ln in response.splitlines() if ln.strip()]
    if lines:
        tokens = lines[-1].split()
        if tokens and tokens[-1] in ("0", "1"):
            return int(tokens[-1])
    raise UnparseableVerdictError("no boxed or trailing 0/1 verdict in response")


@dataclass(frozen=True)
class PhenotypeVerdict:
    doc_id: str
    model_id: str
    label: int
    raw_response: str

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def phenotype_consensus(verdicts: list[PhenotypeVerdict]) -> bool:
    """Inclusive OR vote: any model saying 1 keeps the document."""
    if not verdicts:
        raise ValueError("need at least one verdict")
    return any(v.label == 1 for v in verdicts)


# ---------------------------------------------------------------------------
# Demographics extraction

DEMOGRAPHICS_PROMPT_PREFIX = (
    "You are an expert physician. Read the following case report and determine "
    "how many individual patient cases it describes, and the age in years and "
    "gender of the patient. Reply with a single row with three columns separated "
    "by a pipe '|' as a bar-separated file: the number of cases, the age in years "
    "(or unknown), and the gender male or female (or unknown). For example: "
    "1 | 63 | female. Reply with the row only."
    "\n\nHere is the case: "
)


def build_demographics_prompt(case_text: str, model_id: str = "") -> ChatRequest:
    if not case_text:
        raise ValueError("case_text must be non-empty")
    return ChatRequest(
        user_text=DEMOGRAPHICS_PROMPT_PREFIX + case_text, model_id=model_id
    )


def parse_demographics_response(
    response: str,
) -> tuple[int | None, int | None, str | None]:
    """Parse (n_cases, age, gender) from the first usable 3-column row.

    "unknown" (or any non-numeric age / non-male/female gender) maps to None
    for that slot; a row only counts if n_cases parses as an integer.
    """
    for line in response.splitlines():
        cells = [c.strip() for c in line.strip().strip("`").split("|")]
        if len(cells) != 3:
            continue
        try:
            n_cases = int(cells[0])
        except ValueError:
            continue
        try:
            age = int(float(cells[1]))
        except ValueError:
            age = None
        gender = cells[2].lower()
        if gender not in ("male", "female"):
            gender = None
        return n_cases, age, gender
    raise UnparseableDemographicsError("no n_cases | age | gender row in response")


# ---------------------------------------------------------------------------
# Finding/timestamp annotation

ANNOTATION_ROLE = "You are a physician. "

ANNOTATION_INSTRUCTIONS = (
    "Extract the clinical events and the related time stamp from the case report. "
    "The admission event has timestamp 0. If the event is not available, we treat "
    "the event, e.g. current main clinical diagnosis or treatment with timestamp 0. "
    "The events happened before event with 0 timestamp have negative time, the ones "
    "after the event with 0 timestamp have positive time. The timestamp are in "
    "hours. The unit will be omitted when output the result. If there is no "
    "temporal information of the event, please use your knowledge and events with "
    "temporal expression before and after the events to provide an approximation. "
    "We want to predict the future events given the events happened in history. "
)

EXAMPLE_CASE = (
    "An 18-year-old male was admitted to the hospital with a 3-day history of "
    "fever and rash. Four weeks ago, he was diagnosed with acne and received the "
    "treatment with minocycline, 100 mg daily, for 3 weeks. With increased WBC "
    "count, eosinophilia, and systemic involvement, this patient was diagnosed "
    "with DRESS syndrome. The fever and rash persisted through admission, and "
    "diffuse erythematous or maculopapular eruption with pruritus was present. "
    "One day later the patient was discharged."
)

EXAMPLE_WALKTHROUGH = (
    "Let's find the locations of event in the case report, it shows that four "
    "weeks ago of fever and rash, four weeks ago, he was diagnosed with acne and "
    "receive treatment. So the event of fever and rash happen four weeks ago, 672 "
    "hours, it is before admitted to the hospital, so the time stamp is -672. "
    "diffuse erythematous or maculopapular eruption with pruritus was documented "
    "on the admission exam, so the time stamp is 0 hours, since it happens right "
    "at admission. DRESS syndrome has no specific time, but it should happen soon "
    "after admission to the hospital, so we use our clinical judgment to give the "
    "diagnosis of DRESS syndrome the timestamp 0. Then the output should look like"
)

# The worked example table, spacing quirks and all.
EXAMPLE_TABLE = """18 years old | 0
male | 0
admitted to the hospital | 0
fever | -72
rash | -72
acne |  -672
minocycline |  -672
increased WBC count | 0
eosinophilia| 0
systemic involvement| 0
diffuse erythematous or maculopapular eruption| 0
pruritis | 0
DRESS syndrome | 0
fever persisted | 0
rash persisted | 0
discharged | 24"""

# Interval/interval+type tables extend each row with the interval end (start
# repeated when instantaneous) and the event type.
EXAMPLE_TABLE_INTERVAL = """18 years old | 0 | 0
male | 0 | 0
admitted to the hospital | 0 | 0
fever | -72 | 0
rash | -72 | 0
acne | -672 | -672
minocycline | -672 | -168
increased WBC count | 0 | 0
eosinophilia | 0 | 0
systemic involvement | 0 | 0
diffuse erythematous or maculopapular eruption | 0 | 0
pruritis | 0 | 0
DRESS syndrome | 0 | 0
fever persisted | 0 | 24
rash persisted | 0 | 24
discharged | 24 | 24"""

EXAMPLE_TABLE_INTERVAL_TYPE = "\n".join(
    line + " | Factual" for line in EXAMPLE_TABLE_INTERVAL.splitlines()
)

CONJUNCTION_INSTRUCTION = (
    "Separate conjunctive phrases into its component events and assign them the "
    "same timestamp (for example, the separation of 'fever and rash' into 2 "
    "events: 'fever' and 'rash'). "
)

_TAIL_COMMON_HEAD = (
    "If the event has duration, assign the event time as the start of the time "
    "interval. Attempt to use the text span without modifications except 'history "
    "of' where applicable. Include all patient events, even if they appear in the "
    "discussion; do not omit any events; include termination/discontinuation "
    "events; include the pertinent negative findings, like 'no shortness of "
    "breath' and 'denies chest pain'.  "
)

_TAIL_COMMON_FOOT = (
    "Skip the title of the table. Reply with the table only. Create a table from "
    "the following case: "
)

_COLUMNS_TWO = (
    "Show the events and timestamps in rows, each row has two columns: one column "
    "for the event, the other column for the timestamp.  The time is a numeric "
    "value in hour unit. The two columns are separated by a pipe '|' as a "
    "bar-separated file. "
)

_COLUMNS_INTERVAL = (
    "Show the events and timestamps in rows, each row has three columns: one "
    "column for the event, one column for the start of the time interval, and one "
    "column for the end of the time interval. If the event is instantaneous or "
    "the end is not known, repeat the start timestamp in the third column.  The "
    "times are numeric values in hour unit. The three columns are separated by a "
    "pipe '|' as a bar-separated file. "
)

_COLUMNS_INTERVAL_TYPE = (
    "Show the events and timestamps in rows, each row has four columns: one "
    "column for the event, one column for the start of the time interval, one "
    "column for the end of the time interval, and one column for the event type. "
    "The event type is one of: " + ", ".join(EVENT_TYPES) + ". If the event is "
    "instantaneous or the end is not known, repeat the start timestamp in the "
    "third column.  The times are numeric values in hour unit. The four columns "
    "are separated by a pipe '|' as a bar-separated file. "
)


def _few_shot_block(table: str) -> str:
    return (
        "For example, here is the case report.\n\n"
        + EXAMPLE_CASE
        + "\n\n"
        + EXAMPLE_WALKTHROUGH
        + "\n\n"
        + table
        + "\n\n"
    )


def _assemble(role: bool, few_shot: str | None, conjunction: bool, columns: str) -> str:
    parts = []
    if role:
        parts.append(ANNOTATION_ROLE)
    parts.append(ANNOTATION_INSTRUCTIONS)
    if few_shot is not None:
        parts.append(_few_shot_block(few_shot))
    if conjunction:
        parts.append(CONJUNCTION_INSTRUCTION)
    parts.append(_TAIL_COMMON_HEAD + columns + _TAIL_COMMON_FOOT)
    return "".join(parts)


ANNOTATION_PROMPT_PREFIXES: dict[PromptVariant, str] = {
    PromptVariant.MAIN: _assemble(True, EXAMPLE_TABLE, True, _COLUMNS_TWO),
    PromptVariant.NO_ROLE: _assemble(False, EXAMPLE_TABLE, True, _COLUMNS_TWO),
    PromptVariant.ZERO_SHOT: _assemble(True, None, True, _COLUMNS_TWO),
    PromptVariant.NO_EXPANSION: _assemble(True, EXAMPLE_TABLE, False, _COLUMNS_TWO),
    PromptVariant.INTERVAL: _assemble(
        True, EXAMPLE_TABLE_INTERVAL, True, _COLUMNS_INTERVAL
    ),
    PromptVariant.INTERVAL_TYPE: _assemble(
        True, EXAMPLE_TABLE_INTERVAL_TYPE, True, _COLUMNS_INTERVAL_TYPE
    ),
}


def build_annotation_prompt(
    case_text: str, variant: PromptVariant, model_id: str = ""
) -> ChatRequest:
    """Annotation query for one case; the case text is appended to the prefix."""
    if not case_text:
        raise ValueError("case_text must be non-empty")
    return ChatRequest(
        user_text=ANNOTATION_PROMPT_PREFIXES[variant] + case_text, model_id=model_id
    )


# ---------------------------------------------------------------------------
# Event category assignment

class CategoryLabel(enum.IntEnum):
    PATIENT_BACKGROUND = 0
    CLINICAL_PRESENTATION = 1
    DIAGNOSTIC_TESTING = 2
    CLINICAL_MANAGEMENT = 3
    CLINICAL_COURSE = 4
    OTHER_UNKNOWN = 5


CATEGORY_NAMES = {
    CategoryLabel.PATIENT_BACKGROUND: "Patient Background and Medical History",
    CategoryLabel.CLINICAL_PRESENTATION: "Clinical Presentation and Examination Findings",
    CategoryLabel.DIAGNOSTIC_TESTING: "Diagnostic Testing and Results",
    CategoryLabel.CLINICAL_MANAGEMENT: "Clinical Management and Interventions",
    CategoryLabel.CLINICAL_COURSE: "Clinical Course, Outcomes, and Follow-up",
    CategoryLabel.OTHER_UNKNOWN: "Other or Unknown",
}

CATEGORY_PROMPT_TEMPLATE = """You are a medical professional. You are tasked with categorizing clinical events extracted from case reports.

Assign the following clinical event to one of these categories.

The categories are:

Patient Background and Medical History: 0,

Clinical Presentation and Examination Findings: 1,

Diagnostic Testing and Results: 2,

Clinical Management and Interventions: 3,

Clinical Course, Outcomes, and Follow-up: 4,

Other or Unknown: 5

The categories are defined as follows:

Patient Background and Medical History: (Includes demographic details, prior medical diagnoses, past surgical histories, medication use as part of chronic history, and other baseline background information.),

Clinical Presentation and Examination Findings: (Includes symptoms at presentation, physical exam findings\u2014including vital signs, neurological scores that reflect exam observations\u2014and other immediate clinical observations.),

Diagnostic Testing and Results: (Includes all imaging studies, laboratory tests, diagnostic procedures and their reported findings, and formal diagnostic conclusions reached via workup.),

Clinical Management and Interventions: (Includes all treatments, procedures, medications administered acutely, operations, supportive care measures, and decisions/interventions intended to alter the patient's condition.),

Clinical Course, Outcomes, and Follow-up: (Includes statements about change in clinical status, response to treatment, complications, transitions in care, recovery, discharge, and long-term outcomes.),

Other or Unknown: (For events that do not clearly fit into any of the above five categories.)

For example, here is a list of clinical event text and the corresponding category:

Examples:

"60-year-old female" \u2192 0

"history of atrial fibrillation" \u2192 0

"weighed 95 kg" \u2192 0

"Impaired consciousness" \u2192 1

"high-grade fever" \u2192 1

"persistently high-temperature spikes" \u2192 1

"Head CT" \u2192 2

"no hepatitis A" \u2192 2

"stage IV lymphoma" \u2192 2

"successfully treated with fidaxomicin" \u2192 3

"shifted to cefepime" \u2192 3

"intravenous immunoglobulins for 5 days" \u2192 3

"follow-up evaluations were recommended" \u2192 4

"transferred to a geriatric medicine unit" \u2192 4

"Discharge" \u2192 4

"he" \u2192 5

"confined" \u2192 5

"other symptoms" \u2192 5

Event: "{event_text}"

Respond with only the corresponding integer (0-5) from the list above.
You have to pick only one category for each event.
If there is no clear category, choose the category 5 that corresponds to "Other or Unknown" category.
If there is more than one category, choose the category that you think is most relevant one.
Do NOT include any extra text in your response. Do NOT show your thought process.
Only provide the integer corresponding to the category and nothing else.

Format your response as:

Response: <integer>
"""


def build_category_prompt(event_text: str, model_id: str = "") -> ChatRequest:
    if not event_text:
        raise ValueError("event_text must be non-empty")
    return ChatRequest(
        user_text=CATEGORY_PROMPT_TEMPLATE.format(event_text=event_text),
        model_id=model_id,
    )


_RESPONSE_RE = re.compile(r"Response:\s*(-?\d+)")


def parse_category_response(response: str) -> CategoryLabel:
    """Extract the 0..5 label after "Response:", or a lone integer response."""
    m = _RESPONSE_RE.search(response)
    if m:
        value = int(m.group(1))
        if 0 <= value <= 5:
            return CategoryLabel(value)
        raise UnparseableCategoryError(f"category {value} out of range 0..5")
    stripped = response.strip()
    if re.fullmatch(r"[0-5]", stripped):
        return CategoryLabel(int(stripped))
    raise UnparseableCategoryError("no category label in response")
