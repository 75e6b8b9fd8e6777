import json
import math
from pathlib import Path

import pytest
from click.testing import CliRunner

from casetime.align import DistanceSpec, MatchedPair
from casetime.annotations import Annotation, Finding, PromptVariant, write_annotation_file
from casetime.cli import main as cli_main
from casetime.corpus import CohortManifest, CohortRecord, read_manifest
from casetime.errors import ConfigError, UndefinedMetricError
from casetime.metrics import MetricConfig
from casetime.pipeline import (
    RNG_ALGORITHM,
    RunConfig,
    SplitMix64,
    alignment_from_dict,
    alignment_to_dict,
    demographics_summary,
    discover_annotations,
    report_from_alignments,
    run_evaluation,
    sample_cohort,
    sample_without_replacement,
)


class TestSplitMix64:
    def test_published_vector_seed_zero(self):
        g = SplitMix64(0)
        assert [g.next_uint64() for _ in range(3)] == [
            0xE220A8397B1DCDAF,
            0x6E789E6AA1B965F4,
            0x06C45D188009454F,
        ]

    def test_state_wraps_to_64_bits(self):
        g = SplitMix64(2**64 - 1)
        v = g.next_uint64()
        assert 0 <= v < 2**64


class TestSampling:
    ITEMS = [f"PMC{i:04d}" for i in range(20)]

    def test_pinned_sample(self):
        assert sample_without_replacement(self.ITEMS, 5, 42) == [
            "PMC0013", "PMC0016", "PMC0002", "PMC0008", "PMC0006",
        ]

    def test_deterministic_and_seed_sensitive(self):
        a = sample_without_replacement(self.ITEMS, 5, 42)
        b = sample_without_replacement(self.ITEMS, 5, 42)
        c = sample_without_replacement(self.ITEMS, 5, 43)
        assert a == b
        assert a != c

    def test_sample_is_subset_without_duplicates(self):
        out = sample_without_replacement(self.ITEMS, 12, 7)
        assert len(out) == 12
        assert len(set(out)) == 12
        assert set(out) <= set(self.ITEMS)

    def test_n_edge_cases(self):
        assert sample_without_replacement(self.ITEMS, 0, 1) == []
        full = sample_without_replacement(self.ITEMS, 20, 1)
        assert sorted(full) == self.ITEMS
        with pytest.raises(ValueError):
            sample_without_replacement(self.ITEMS, 21, 1)
        with pytest.raises(ValueError):
            sample_without_replacement(self.ITEMS, -1, 1)

    def test_sample_cohort_sorted_and_included_only(self):
        records = [
            CohortRecord(f"D{i}", True, True, included=(i % 2 == 0)) for i in range(10)
        ]
        manifest = CohortManifest(records=records)
        out = sample_cohort(manifest, 3, 5)
        assert out == sorted(out)
        assert all(manifest.record_for(d).included for d in out)


class TestDemographics:
    def mk(self, rows):
        return CohortManifest(
            records=[
                CohortRecord(f"D{i}", True, True, age=age, gender=gender, included=True)
                for i, (age, gender) in enumerate(rows)
            ]
        )

    def test_even_split(self):
        m = self.mk([(30, "male"), (40, "male"), (50, "female"), (60, "female")])
        s = demographics_summary(m)
        assert s.percent_male == 50.0
        assert s.percent_female == 50.0
        assert s.age_mean == 45.0
        assert s.age_q1 == 37.5
        assert s.age_q3 == 52.5

    def test_single_record(self):
        s = demographics_summary(self.mk([(49, "male")]))
        assert s.percent_male == 100.0
        assert s.percent_female == 0.0
        assert s.age_mean == 49.0
        assert s.age_median == 49.0

    def test_range(self):
        s = demographics_summary(self.mk([(0, "male"), (111, "female")]))
        assert s.age_min == 0.0
        assert s.age_max == 111.0

    def test_partial_data_counted(self):
        m = self.mk([(30, "male"), (None, "female"), (50, None)])
        s = demographics_summary(m)
        assert s.n_with_gender == 2
        assert s.n_with_age == 2

    def test_no_data_undefined(self):
        with pytest.raises(UndefinedMetricError):
            demographics_summary(self.mk([(None, None)]))


class TestRunConfig:
    def test_from_json_resolves_relative_paths(self, eval3_dir):
        cfg = RunConfig.from_json(eval3_dir / "config.json")
        assert cfg.reference_dir == eval3_dir / "reference"
        assert cfg.predicted_dir == eval3_dir / "predicted"
        assert cfg.corpus == eval3_dir / "corpus"
        assert cfg.dataset == "fixture3"
        assert cfg.distance == "cosine"
        assert cfg.seed == 7

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(
            json.dumps(
                {"reference_dir": "r", "predicted_dir": "p", "out_dir": "o", "zap": 1}
            )
        )
        with pytest.raises(ConfigError):
            RunConfig.from_json(p)

    def test_missing_required_key_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"reference_dir": "r"}))
        with pytest.raises(ConfigError):
            RunConfig.from_json(p)

    def test_unreadable_config_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.from_json(p)

    def test_hash_stable_and_sensitive(self, tmp_path):
        kwargs = dict(
            reference_dir=tmp_path / "r",
            predicted_dir=tmp_path / "p",
            out_dir=tmp_path / "o",
        )
        a = RunConfig(**kwargs)
        b = RunConfig(**kwargs)
        assert a.config_hash() == b.config_hash()
        c = RunConfig(**{**kwargs, "seed": 1})
        assert a.config_hash() != c.config_hash()

    def test_validate_checks_directories(self, tmp_path):
        cfg = RunConfig(
            reference_dir=tmp_path / "missing",
            predicted_dir=tmp_path,
            out_dir=tmp_path / "out",
        )
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_unknown_distance_rejected(self, tmp_path):
        cfg = RunConfig(
            reference_dir=tmp_path,
            predicted_dir=tmp_path,
            out_dir=tmp_path / "out",
            distance="hamming",
        )
        with pytest.raises(ConfigError):
            cfg.distance_spec()


class TestAlignmentSerialization:
    def test_round_trip(self):
        from casetime.align import AlignmentResult

        a = AlignmentResult(
            doc_id="D",
            pairs=[
                MatchedPair(0, 1, 0.25, -72.0, -48.0, "fever", "fevers"),
                MatchedPair(2, 0, 0.0, 0.0, 0.0, "admitted", "admitted"),
            ],
            unmatched_ref=[1],
            unmatched_pred=[],
            n_ref=3,
            n_pred=2,
        )
        assert alignment_from_dict(alignment_to_dict(a)) == a


class TestDiscovery:
    def test_grouping(self, tmp_path):
        for doc, annot, variant in [
            ("A", "manual", PromptVariant.MAIN),
            ("B", "manual", PromptVariant.MAIN),
            ("A", "llm-x", PromptVariant.MAIN),
            ("A", "manual", PromptVariant.INTERVAL),
        ]:
            write_annotation_file(
                Annotation(doc, [Finding("fever", 0.0)], annot, variant), tmp_path
            )
        (tmp_path / "stray.txt").write_text("not an annotation")
        (tmp_path / "bad.name.bsv").write_text("x | 1")
        out = discover_annotations(tmp_path)
        assert set(out) == {
            ("manual", "main"),
            ("llm-x", "main"),
            ("manual", "interval"),
        }
        assert set(out[("manual", "main")]) == {"A", "B"}


class TestRunEvaluation:
    def test_fixture_run_layout(self, eval3_copy):
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        result = run_evaluation(cfg)
        assert result.exit_code == 0
        assert result.n_documents == 3
        assert result.n_alignments == 3
        assert result.failures == []
        base = eval3_copy / "out"
        combo = base / "fixture3" / "llm-small" / "main"
        expected = [
            base / "manifest.jsonl",
            base / "run.json",
            combo / "metrics.csv",
            combo / "metrics.json",
            combo / "alignments" / "CR0001.json",
            combo / "alignments" / "CR0002.json",
            combo / "alignments" / "CR0003.json",
            combo / "cdf" / "event_match.csv",
            combo / "cdf" / "log_time.csv",
            combo / "cdf" / "log_time_le_1h.csv",
            combo / "cdf" / "log_time_1h_to_1d.csv",
            combo / "cdf" / "log_time_1d_to_1y.csv",
            combo / "cdf" / "log_time_gt_1y.csv",
        ]
        for path in expected:
            assert path.is_file(), path
        all_files = {p for p in base.rglob("*") if p.is_file()}
        assert all_files == set(expected)

    def test_run_record_contents(self, eval3_copy):
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        run_evaluation(cfg)
        record = json.loads((eval3_copy / "out" / "run.json").read_text())
        assert record["rng_algorithm"] == RNG_ALGORITHM
        assert record["seed"] == 7
        assert record["s_max_hours"] == 8760.0
        assert record["time_unit"] == "hours"
        assert record["config_hash"] == cfg.config_hash()
        assert record["exit_code"] == 0

    def test_metrics_record_carries_provenance(self, eval3_copy):
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        run_evaluation(cfg)
        combo = eval3_copy / "out" / "fixture3" / "llm-small" / "main"
        record = json.loads((combo / "metrics.json").read_text())
        for key in ("s_max_hours", "time_unit", "seed", "config_hash"):
            assert key in record, key
        header, row = (combo / "metrics.csv").read_text().splitlines()
        assert header.split(",")[:3] == ["dataset", "model", "variant"]
        assert row.split(",")[0] == "fixture3"

    def test_manifest_screens_fixture_corpus(self, eval3_copy):
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        run_evaluation(cfg)
        manifest = read_manifest(eval3_copy / "out" / "manifest.jsonl")
        assert manifest.included_ids() == ["CR0001", "CR0002", "CR0003"]

    def test_missing_prediction_is_isolated(self, eval3_copy):
        (eval3_copy / "predicted" / "CR0002.llm-small.main.bsv").unlink()
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        result = run_evaluation(cfg)
        assert result.exit_code == 0
        assert result.n_alignments == 2
        assert ("CR0002", "llm-small", "main", "missing prediction") in result.failures

    def test_unparseable_prediction_is_isolated(self, eval3_copy):
        bad = eval3_copy / "predicted" / "CR0003.llm-small.main.bsv"
        bad.write_text("no table at all\n", encoding="utf-8")
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        result = run_evaluation(cfg)
        assert result.exit_code == 0
        assert result.n_alignments == 2
        assert any(f[0] == "CR0003" for f in result.failures)

    def test_no_alignments_exit_1(self, eval3_copy):
        for p in (eval3_copy / "predicted").glob("*.bsv"):
            p.unlink()
        (eval3_copy / "predicted" / "keep").mkdir()
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        result = run_evaluation(cfg)
        assert result.exit_code == 1
        assert result.n_alignments == 0

    def test_missing_reference_annotator_is_config_error(self, eval3_copy):
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        cfg.reference_annotator = "nobody"
        with pytest.raises(ConfigError):
            run_evaluation(cfg)

    def test_byte_identical_reruns(self, eval3_copy):
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        run_evaluation(cfg)
        base = eval3_copy / "out"
        snapshot = {
            p.relative_to(base).as_posix(): p.read_bytes()
            for p in base.rglob("*")
            if p.is_file()
        }
        run_evaluation(RunConfig.from_json(eval3_copy / "config.json"))
        again = {
            p.relative_to(base).as_posix(): p.read_bytes()
            for p in base.rglob("*")
            if p.is_file()
        }
        assert snapshot == again

    def test_levenshtein_distance_config(self, eval3_copy):
        raw = json.loads((eval3_copy / "config.json").read_text())
        raw["distance"] = "levenshtein"
        (eval3_copy / "config.json").write_text(json.dumps(raw))
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        result = run_evaluation(cfg)
        assert result.exit_code == 0


class TestReportFromAlignments:
    def test_recompute_matches_run(self, eval3_copy, tmp_path):
        cfg = RunConfig.from_json(eval3_copy / "config.json")
        run_evaluation(cfg)
        combo = eval3_copy / "out" / "fixture3" / "llm-small" / "main"
        original = json.loads((combo / "metrics.json").read_text())
        report = report_from_alignments(
            combo / "alignments",
            tmp_path / "redo",
            cfg.metric_config(),
            dataset="fixture3",
            model="llm-small",
            variant="main",
            seed=cfg.seed,
            config_hash=cfg.config_hash(),
        )
        redone = json.loads((tmp_path / "redo" / "metrics.json").read_text())
        assert redone == original
        assert report.event_match_rate == original["event_match_rate"]

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            report_from_alignments(tmp_path, tmp_path / "out", MetricConfig())


class TestCli:
    def test_filter_and_sample(self, corpus6_dir, tmp_path):
        runner = CliRunner()
        manifest_path = tmp_path / "manifest.jsonl"
        result = runner.invoke(
            cli_main,
            ["filter", "--input", str(corpus6_dir), "--out", str(manifest_path)],
        )
        assert result.exit_code == 0, result.output
        assert "6 documents screened, 2 included" in result.output
        result = runner.invoke(
            cli_main,
            ["sample", "--manifest", str(manifest_path), "--n", "1", "--seed", "3"],
        )
        assert result.exit_code == 0, result.output
        assert result.output.strip() in ("P0001", "P0003")

    def test_filter_single_screen(self, corpus6_dir, tmp_path):
        runner = CliRunner()
        manifest_path = tmp_path / "m.jsonl"
        result = runner.invoke(
            cli_main,
            [
                "filter", "--input", str(corpus6_dir),
                "--out", str(manifest_path), "--screens", "case_report",
            ],
        )
        assert result.exit_code == 0, result.output
        manifest = read_manifest(manifest_path)
        assert manifest.record_for("P0004").included  # sepsis screen not run

    def test_evaluate_command(self, eval3_copy):
        runner = CliRunner()
        result = runner.invoke(
            cli_main, ["evaluate", "--config", str(eval3_copy / "config.json")]
        )
        assert result.exit_code == 0, result.output
        assert "evaluated 3 documents" in result.output

    def test_evaluate_bad_config_exits_2(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"reference_dir": "nope"}))
        runner = CliRunner()
        result = runner.invoke(cli_main, ["evaluate", "--config", str(p)])
        assert result.exit_code == 2
        assert "config error" in result.output

    def test_align_and_report_commands(self, eval3_dir, tmp_path):
        runner = CliRunner()
        align_dir = tmp_path / "alignments"
        result = runner.invoke(
            cli_main,
            [
                "align",
                "--reference", str(eval3_dir / "reference"),
                "--predicted", str(eval3_dir / "predicted"),
                "--out", str(align_dir),
            ],
        )
        assert result.exit_code == 0, result.output
        produced = sorted(p.name for p in (align_dir / "llm-small" / "main").glob("*.json"))
        assert produced == ["CR0001.json", "CR0002.json", "CR0003.json"]
        result = runner.invoke(
            cli_main,
            [
                "report",
                "--alignments", str(align_dir / "llm-small" / "main"),
                "--out", str(tmp_path / "report"),
                "--model", "llm-small",
            ],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert payload["n_reports"] == 3
        assert (tmp_path / "report" / "metrics.csv").is_file()

    def test_annotate_command(self, eval3_dir, tmp_path, stub_server):
        table = "fever | -72\nadmitted to the hospital | 0\ndischarged | 24"
        _, endpoint = stub_server([{"status": 200, "text": f"```\n{table}\n```"}])
        docs = tmp_path / "docs.txt"
        docs.write_text("CR0001\nCR0002\n", encoding="utf-8")
        runner = CliRunner()
        result = runner.invoke(
            cli_main,
            [
                "annotate",
                "--docs", str(docs),
                "--corpus", str(eval3_dir / "corpus"),
                "--model", "test.model",
                "--endpoint", endpoint.base_url,
                "--out", str(tmp_path / "ann"),
                "--cache", str(tmp_path / "cache"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "wrote 2 annotations" in result.output
        files = sorted(p.name for p in (tmp_path / "ann").glob("*.bsv"))
        # model id dots sanitized for the filename convention
        assert files == [
            "CR0001.test-model.main.bsv",
            "CR0002.test-model.main.bsv",
        ]
        body = (tmp_path / "ann" / files[0]).read_text(encoding="utf-8")
        assert body == table + "\n"

    def test_annotate_all_failures_exit_1(self, eval3_dir, tmp_path, stub_server):
        _, endpoint = stub_server([{"status": 200, "text": "nothing tabular"}])
        docs = tmp_path / "docs.txt"
        docs.write_text("CR0001\n", encoding="utf-8")
        runner = CliRunner()
        result = runner.invoke(
            cli_main,
            [
                "annotate",
                "--docs", str(docs),
                "--corpus", str(eval3_dir / "corpus"),
                "--model", "m",
                "--endpoint", endpoint.base_url,
                "--out", str(tmp_path / "ann"),
            ],
        )
        assert result.exit_code == 1

    def test_phenotype_command(self, eval3_dir, tmp_path, stub_server):
        def respond(prompt: str) -> str:
            if "Reply 1 for sepsis" in prompt:
                return r"\boxed{1}"
            return "1 | 63 | female"

        _, endpoint = stub_server([{"status": 200, "respond": respond}])
        runner = CliRunner()
        manifest_path = tmp_path / "manifest.jsonl"
        result = runner.invoke(
            cli_main,
            ["filter", "--input", str(eval3_dir / "corpus"), "--out", str(manifest_path)],
        )
        assert result.exit_code == 0, result.output
        result = runner.invoke(
            cli_main,
            [
                "phenotype",
                "--manifest", str(manifest_path),
                "--corpus", str(eval3_dir / "corpus"),
                "--models", "model-a,model-b",
                "--endpoint", endpoint.base_url,
                "--cache", str(tmp_path / "cache"),
            ],
        )
        assert result.exit_code == 0, result.output
        manifest = read_manifest(manifest_path)
        rec = manifest.record_for("CR0001")
        assert rec.phenotypes == {"model-a": 1, "model-b": 1}
        assert rec.n_cases == 1
        assert rec.age == 63
        assert rec.gender == "female"
        assert rec.included
