import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from casetime.annotations import (
    EVENT_TYPES,
    Annotation,
    Finding,
    PromptVariant,
    annotation_filename,
    format_hours,
    parse_annotation_filename,
    parse_annotation_table,
    read_annotation_file,
    serialize_annotation,
    write_annotation_file,
)
from casetime.errors import EmptyAnnotationError


def parse_main(raw: str) -> Annotation:
    return parse_annotation_table(raw, PromptVariant.MAIN, "DOC1", "tester")


class TestFinding:
    def test_minimal(self):
        f = Finding(text="fever", time_hours=-72.0)
        assert f.interval_end_hours is None
        assert f.event_type is None

    def test_rejects_blank_text(self):
        with pytest.raises(ValueError):
            Finding(text="   ", time_hours=0.0)

    def test_rejects_nonfinite_time(self):
        with pytest.raises(ValueError):
            Finding(text="fever", time_hours=math.nan)
        with pytest.raises(ValueError):
            Finding(text="fever", time_hours=math.inf)

    def test_rejects_backwards_interval(self):
        with pytest.raises(ValueError):
            Finding(text="fever", time_hours=0.0, interval_end_hours=-1.0)

    def test_rejects_bad_event_type(self):
        with pytest.raises(ValueError):
            Finding(text="fever", time_hours=0.0, event_type=7)
        with pytest.raises(ValueError):
            Finding(text="fever", time_hours=0.0, event_type=-1)


class TestParseTable:
    def test_basic_rows(self):
        ann = parse_main("fever | -72\nadmitted to the hospital | 0\ndischarged | 24")
        assert [(f.text, f.time_hours) for f in ann.findings] == [
            ("fever", -72.0),
            ("admitted to the hospital", 0.0),
            ("discharged", 24.0),
        ]
        assert ann.parse_warnings == []

    def test_code_fences_and_blanks_skipped_silently(self):
        raw = "```\n\nfever | -72\n\n```bsv\ndischarged | 24\n```\n"
        ann = parse_main(raw)
        assert len(ann.findings) == 2
        assert ann.parse_warnings == []

    def test_header_row_skipped_silently(self):
        ann = parse_main("Event | Timestamp\nfever | -72")
        assert len(ann.findings) == 1
        assert ann.parse_warnings == []

    def test_header_detection_requires_nonnumeric_second_cell(self):
        # "event onset | 5" is a real finding, not a header
        ann = parse_main("event onset | 5")
        assert ann.findings[0].text == "event onset"
        assert ann.findings[0].time_hours == 5.0

    def test_header_row_any_arity(self):
        raw = "Event | Start | End\nfever | -72"
        ann = parse_main(raw)
        assert len(ann.findings) == 1
        assert ann.parse_warnings == []

    def test_wrong_arity_warned(self):
        ann = parse_main("fever | -72 | 0\ndischarged | 24")
        assert len(ann.findings) == 1
        assert ann.parse_warnings == [(1, "expected 2 columns, got 3")]

    def test_prose_line_warned(self):
        ann = parse_main("Here is the table you asked for:\nfever | -72")
        assert len(ann.findings) == 1
        (lineno, reason) = ann.parse_warnings[0]
        assert lineno == 1
        assert "columns" in reason

    def test_empty_text_warned(self):
        ann = parse_main(" | -72\nfever | -72")
        assert len(ann.findings) == 1
        assert ann.parse_warnings[0] == (1, "empty finding text")

    def test_bad_timestamp_warned(self):
        for cell in ("24-48", "unknown", "1e3", "6 hours", "--5"):
            ann = parse_main(f"fever | {cell}\nrash | 0")
            assert len(ann.findings) == 1, cell
            assert ann.parse_warnings[0][0] == 1

    def test_comma_thousands_separator_stripped(self):
        ann = parse_main("remote surgery | -8,760")
        assert ann.findings[0].time_hours == -8760.0

    def test_signs_and_decimals(self):
        ann = parse_main("a | +1.5\nb | -0.25\nc | 3")
        assert [f.time_hours for f in ann.findings] == [1.5, -0.25, 3.0]

    def test_empty_response_raises(self):
        with pytest.raises(EmptyAnnotationError):
            parse_main("")

    def test_all_junk_raises(self):
        with pytest.raises(EmptyAnnotationError):
            parse_main("I could not find any events.\nSorry!")

    def test_line_numbers_are_original(self):
        raw = "```\njunk line\nfever | -72\n"
        ann = parse_main(raw)
        assert ann.parse_warnings[0][0] == 2

    def test_every_line_accounted_for(self):
        # each input line is a finding, a warning, or a silent skip
        raw = "```\nEvent | Time\nfever | -72\nnot a row\n\nrash | bad\n"
        ann = parse_main(raw)
        lines = raw.splitlines()
        warned = {ln for ln, _ in ann.parse_warnings}
        silent = {
            i
            for i, line in enumerate(lines, start=1)
            if not line.strip() or line.strip().startswith("```")
        }
        header = {2}
        parsed = len(lines) - len(warned) - len(silent) - len(header)
        assert parsed == len(ann.findings)
        assert warned == {4, 6}

    def test_interval_variant(self):
        ann = parse_annotation_table(
            "fever | -72 | 0\nacne | -672 | -672",
            PromptVariant.INTERVAL,
            "DOC1",
            "tester",
        )
        assert ann.findings[0].interval_end_hours == 0.0
        assert ann.findings[1].interval_end_hours == -672.0

    def test_interval_backwards_warned(self):
        ann = parse_annotation_table(
            "fever | 0 | -72\nrash | 0 | 0",
            PromptVariant.INTERVAL,
            "DOC1",
            "tester",
        )
        assert len(ann.findings) == 1
        assert ann.parse_warnings[0] == (1, "interval ends before it starts")

    def test_interval_type_variant(self):
        ann = parse_annotation_table(
            "fever | -72 | 0 | Factual\nrash | 0 | 0 | Possible",
            PromptVariant.INTERVAL_TYPE,
            "DOC1",
            "tester",
        )
        assert ann.findings[0].event_type == 0
        assert ann.findings[1].event_type == 1

    def test_event_type_numeric_and_case_insensitive(self):
        ann = parse_annotation_table(
            "a | 0 | 0 | 6\nb | 0 | 0 | negated",
            PromptVariant.INTERVAL_TYPE,
            "DOC1",
            "tester",
        )
        assert ann.findings[0].event_type == 6
        assert ann.findings[1].event_type == EVENT_TYPES.index("Negated")

    def test_unknown_event_type_warned(self):
        ann = parse_annotation_table(
            "a | 0 | 0 | Speculative\nb | 0 | 0 | Factual",
            PromptVariant.INTERVAL_TYPE,
            "DOC1",
            "tester",
        )
        assert len(ann.findings) == 1
        assert "Speculative" in ann.parse_warnings[0][1]


class TestFormatHours:
    def test_integers_have_no_point(self):
        assert format_hours(0.0) == "0"
        assert format_hours(-672.0) == "-672"
        assert format_hours(24.0) == "24"

    def test_fractions_keep_shortest_repr(self):
        assert format_hours(0.5) == "0.5"
        assert format_hours(-0.25) == "-0.25"
        assert format_hours(1.1) == "1.1"

    def test_no_exponent_for_tiny_values(self):
        s = format_hours(1e-07)
        assert "e" not in s and "E" not in s
        assert float(s) == 1e-07

    def test_reparse_is_identity(self):
        for v in (0.0, -672.0, 0.5, 1.1, 1e-07, 123456.789, -8760.0):
            assert float(format_hours(v)) == v


class TestSerializeRoundTrip:
    def test_serialize_two_column(self):
        ann = Annotation(
            doc_id="D",
            findings=[Finding("fever", -72.0), Finding("discharged", 24.0)],
            annotator_id="tester",
            variant=PromptVariant.MAIN,
        )
        assert serialize_annotation(ann) == "fever | -72\ndischarged | 24"

    def test_serialize_interval_type(self):
        ann = Annotation(
            doc_id="D",
            findings=[Finding("fever", -72.0, 0.0, 0)],
            annotator_id="tester",
            variant=PromptVariant.INTERVAL_TYPE,
        )
        assert serialize_annotation(ann) == "fever | -72 | 0 | Factual"

    def test_round_trip_literal(self):
        raw = "fever | -72\nacne | -672\ndischarged | 24"
        ann = parse_main(raw)
        assert serialize_annotation(ann) == raw

    @given(
        st.lists(
            st.tuples(
                st.text(
                    alphabet=st.characters(
                        whitelist_categories=("Lu", "Ll", "Nd"), max_codepoint=0x2FF
                    ),
                    min_size=1,
                    max_size=12,
                ),
                st.floats(
                    min_value=-1e6,
                    max_value=1e6,
                    allow_nan=False,
                    allow_infinity=False,
                ),
            ),
            min_size=1,
            max_size=8,
        )
    )
    def test_round_trip_property(self, rows):
        ann = Annotation(
            doc_id="D",
            findings=[Finding(text, hours) for text, hours in rows],
            annotator_id="tester",
            variant=PromptVariant.MAIN,
        )
        back = parse_main(serialize_annotation(ann))
        assert [(f.text, f.time_hours) for f in back.findings] == [
            (f.text, f.time_hours) for f in ann.findings
        ]
        assert back.parse_warnings == []


class TestFilenames:
    def test_filename_round_trip(self):
        name = annotation_filename("PMC10629858", "llama-3-1-8b", PromptVariant.MAIN)
        assert name == "PMC10629858.llama-3-1-8b.main.bsv"
        assert parse_annotation_filename(name) == (
            "PMC10629858",
            "llama-3-1-8b",
            PromptVariant.MAIN,
        )

    def test_doc_id_may_contain_dots(self):
        name = annotation_filename("study.v2.001", "manual", PromptVariant.INTERVAL)
        assert parse_annotation_filename(name) == (
            "study.v2.001",
            "manual",
            PromptVariant.INTERVAL,
        )

    def test_annotator_with_dot_rejected(self):
        with pytest.raises(ValueError):
            annotation_filename("D", "gpt-4.1", PromptVariant.MAIN)

    def test_bad_extension_rejected(self):
        with pytest.raises(ValueError):
            parse_annotation_filename("D.manual.main.csv")

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            parse_annotation_filename("D.manual.super.bsv")


class TestFileIO:
    def test_write_then_read(self, tmp_path):
        ann = Annotation(
            doc_id="CASE7",
            findings=[Finding("fever", -72.0), Finding("admitted", 0.0)],
            annotator_id="manual",
            variant=PromptVariant.MAIN,
        )
        path = write_annotation_file(ann, tmp_path)
        assert path.name == "CASE7.manual.main.bsv"
        assert path.read_text(encoding="utf-8").endswith("\n")
        back = read_annotation_file(path)
        assert back.doc_id == "CASE7"
        assert back.annotator_id == "manual"
        assert back.variant is PromptVariant.MAIN
        assert [(f.text, f.time_hours) for f in back.findings] == [
            ("fever", -72.0),
            ("admitted", 0.0),
        ]
