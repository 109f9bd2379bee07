"""Eval harness: manifest validation, accuracy math, aggregation, report files.

The accuracy oracle here is arithmetic done by hand in the test bodies
(counts picked so the expected percentages are exact floats).
"""

import dataclasses
import json
import random

import pytest

from lmmclassify.embedding import ReferenceHashBackend
from lmmclassify.errors import ConfigError, ManifestError
from lmmclassify.evalharness import (
    SUMMARY_HEADER,
    AverageRow,
    EvalReport,
    RecordResult,
    SplitCounts,
    aggregate,
    evaluate,
    format_pct,
    harmonic_mean,
    load_manifest,
    parse_report,
    render_base_novel_table,
    render_summary_csv,
    write_report,
)
from lmmclassify.gateway import (
    LmmGateway,
    LmmRequest,
    ProviderConfig,
    make_record,
    write_fixture_file,
)
from lmmclassify.labels import load_class_list
from lmmclassify.pipeline import PipelineConfig, build_stage1_prompt

from conftest import tiny_png

CLASSES = "alpha\nbeta\ngamma\n"


def write_classes(tmp_path, text=CLASSES, dataset_id="synth"):
    path = tmp_path / "classes.txt"
    path.write_text(text)
    return load_class_list(path, dataset_id=dataset_id)


def make_eval_setup(tmp_path, rows, jobs=4):
    """Build a manifest plus a replay fixture answering each row's request.

    rows: list of (split, ground_truth, scripted_answer). Runs in lmm-only
    mode so correctness is exact-match and fully scriptable.
    """
    root = tmp_path / "ds"
    root.mkdir()
    (root / "classes.txt").write_text(CLASSES)
    class_set = load_class_list(root / "classes.txt", dataset_id="synth")
    config = PipelineConfig(mode="lmm-only", jobs=jobs)
    prompt = build_stage1_prompt(
        dataclasses.replace(config, include_classes_in_stage1=True), class_set
    )
    records = []
    manifest_lines = []
    for i, (split, truth, answer) in enumerate(rows):
        image = root / f"img{i}.png"
        image.write_bytes(tiny_png((i, 2 * i, 3 * i)))
        request = LmmRequest.for_image(config.stage1_model_id, prompt, image)
        records.append(make_record(request, answer))
        manifest_lines.append(
            json.dumps({"image": image.name, "label": truth, "split": split,
                        "dataset": "synth"})
        )
    manifest_path = root / "manifest.ndjson"
    manifest_path.write_text("\n".join(manifest_lines) + "\n")
    write_fixture_file(root / "fx.ndjson", records)
    gateway = LmmGateway(
        ProviderConfig(kind="replay-fixture", fixture_path=str(root / "fx.ndjson"))
    )
    manifest = load_manifest(manifest_path, class_set)
    return manifest, class_set, config, gateway


TEN_ROWS = [
    ("base", "alpha", "alpha"),
    ("base", "alpha", "alpha"),
    ("base", "beta", "beta"),
    ("base", "beta", "no idea"),
    ("novel", "gamma", "gamma"),
    ("novel", "gamma", "gamma"),
    ("novel", "alpha", "alpha"),
    ("novel", "beta", "beta"),
    ("novel", "alpha", "something else"),
    ("novel", "beta", "gamma"),
]


class TestLoadManifest:
    def write_manifest(self, tmp_path, lines):
        path = tmp_path / "manifest.ndjson"
        path.write_text("\n".join(lines) + "\n")
        return path

    def row(self, **overrides):
        obj = {"image": "img.png", "label": "alpha", "split": "base", "dataset": "d"}
        obj.update(overrides)
        return json.dumps(obj)

    def test_missing_file(self, tmp_path):
        class_set = write_classes(tmp_path)
        with pytest.raises(ManifestError, match="not found"):
            load_manifest(tmp_path / "nope.ndjson", class_set)

    def test_invalid_json_names_line(self, tmp_path):
        class_set = write_classes(tmp_path)
        path = self.write_manifest(tmp_path, [self.row(), "{broken"])
        with pytest.raises(ManifestError, match=r":2:"):
            load_manifest(path, class_set)

    def test_missing_fields_named(self, tmp_path):
        class_set = write_classes(tmp_path)
        path = self.write_manifest(
            tmp_path, [json.dumps({"image": "img.png", "label": "alpha"})]
        )
        with pytest.raises(ManifestError, match=r":1:.*split.*dataset"):
            load_manifest(path, class_set)

    def test_bad_split(self, tmp_path):
        class_set = write_classes(tmp_path)
        path = self.write_manifest(tmp_path, [self.row(split="test")])
        with pytest.raises(ManifestError, match="split"):
            load_manifest(path, class_set)

    def test_unknown_label(self, tmp_path):
        class_set = write_classes(tmp_path)
        path = self.write_manifest(tmp_path, [self.row(label="delta")])
        with pytest.raises(ManifestError, match="'delta'"):
            load_manifest(path, class_set)

    def test_label_canonicalized_before_lookup(self, tmp_path):
        class_set = write_classes(tmp_path)
        (tmp_path / "img.png").write_bytes(tiny_png())
        path = self.write_manifest(tmp_path, [self.row(label="  ALPHA ")])
        records = load_manifest(path, class_set)
        assert records[0].ground_truth == "alpha"

    def test_mixed_datasets_rejected(self, tmp_path):
        class_set = write_classes(tmp_path)
        (tmp_path / "img.png").write_bytes(tiny_png())
        path = self.write_manifest(
            tmp_path, [self.row(dataset="d1"), self.row(dataset="d2")]
        )
        with pytest.raises(ManifestError, match="one manifest per dataset"):
            load_manifest(path, class_set)

    def test_empty_manifest_rejected(self, tmp_path):
        class_set = write_classes(tmp_path)
        path = self.write_manifest(tmp_path, ["", "   "])
        with pytest.raises(ManifestError, match="no records"):
            load_manifest(path, class_set)

    def test_relative_paths_resolve_against_manifest_dir(self, tmp_path):
        sub = tmp_path / "bundle"
        sub.mkdir()
        class_set = write_classes(tmp_path)
        (sub / "img.png").write_bytes(tiny_png())
        path = sub / "manifest.ndjson"
        path.write_text(self.row(image="img.png") + "\n")
        records = load_manifest(path, class_set)
        assert records[0].image_ref == str(sub / "img.png")

    def test_absolute_paths_kept(self, tmp_path):
        class_set = write_classes(tmp_path)
        image = tmp_path / "elsewhere.png"
        image.write_bytes(tiny_png())
        path = self.write_manifest(tmp_path, [self.row(image=str(image))])
        records = load_manifest(path, class_set)
        assert records[0].image_ref == str(image)

    def test_unreadable_image_is_only_a_warning(self, tmp_path, caplog):
        class_set = write_classes(tmp_path)
        path = self.write_manifest(tmp_path, [self.row(image="ghost.png")])
        with caplog.at_level("WARNING"):
            records = load_manifest(path, class_set)
        assert len(records) == 1
        assert any("not readable" in m for m in caplog.messages)

    def test_blank_lines_skipped(self, tmp_path):
        class_set = write_classes(tmp_path)
        (tmp_path / "img.png").write_bytes(tiny_png())
        path = self.write_manifest(tmp_path, [self.row(), "", self.row()])
        assert len(load_manifest(path, class_set)) == 2


class TestEvaluate:
    def test_seven_of_ten_is_exactly_seventy(self, tmp_path):
        manifest, class_set, config, gateway = make_eval_setup(tmp_path, TEN_ROWS)
        report = evaluate(manifest, class_set, config, gateway, None)
        assert report.accuracy_overall == 70.0
        assert report.accuracy_base == 75.0
        assert report.accuracy_novel == pytest.approx(200.0 / 3.0)
        assert report.counts["base"] == SplitCounts(total=4, correct=3, refusals=0)
        assert report.counts["novel"] == SplitCounts(total=6, correct=4, refusals=0)

    def test_per_record_keeps_manifest_order(self, tmp_path):
        manifest, class_set, config, gateway = make_eval_setup(tmp_path, TEN_ROWS, jobs=4)
        report = evaluate(manifest, class_set, config, gateway, None)
        assert [r.image_ref for r in report.per_record] == [m.image_ref for m in manifest]

    def test_record_order_never_affects_figures(self, tmp_path):
        manifest, class_set, config, gateway = make_eval_setup(tmp_path, TEN_ROWS)
        shuffled = list(manifest)
        random.Random(7).shuffle(shuffled)
        a = evaluate(manifest, class_set, config, gateway, None)
        b = evaluate(shuffled, class_set, config, gateway, None)
        assert a.counts == b.counts
        assert a.accuracy_overall == b.accuracy_overall

    def test_wrong_label_and_no_match_both_incorrect(self, tmp_path):
        manifest, class_set, config, gateway = make_eval_setup(tmp_path, TEN_ROWS)
        report = evaluate(manifest, class_set, config, gateway, None)
        by_ref = {r.image_ref: r for r in report.per_record}
        no_match = by_ref[manifest[3].image_ref]
        assert no_match.predicted is None and not no_match.correct
        assert no_match.outcome == "no-match"
        wrong = by_ref[manifest[9].image_ref]
        assert wrong.predicted == "gamma" and not wrong.correct

    def test_missing_image_scores_incorrect_and_run_continues(self, tmp_path):
        rows = [("base", "alpha", "alpha"), ("base", "beta", "beta")]
        manifest, class_set, config, gateway = make_eval_setup(tmp_path, rows)
        ghost = dataclasses.replace(
            manifest[0], image_ref=str(tmp_path / "ds" / "ghost.png")
        )
        report = evaluate([ghost, manifest[1]], class_set, config, gateway, None)
        assert report.counts["base"] == SplitCounts(total=2, correct=1, refusals=0)
        failed = report.per_record[0]
        assert failed.outcome == "error"
        assert failed.matched_by == "error"
        assert failed.note.startswith("ConfigError:")
        assert report.per_record[1].correct

    def test_refusals_counted_and_still_incorrect(self, fake_server, tmp_path):
        class_set = write_classes(tmp_path, "alpha\nbeta\n")
        images = []
        lines = []
        for i, truth in enumerate(["beta", "beta", "alpha"]):
            image = tmp_path / f"img{i}.png"
            image.write_bytes(tiny_png((40 + i, 0, 0)))
            images.append(image)
            lines.append(
                json.dumps({"image": image.name, "label": truth, "split": "base",
                            "dataset": "synth"})
            )
        manifest_path = tmp_path / "manifest.ndjson"
        manifest_path.write_text("\n".join(lines) + "\n")
        manifest = load_manifest(manifest_path, class_set)
        fake_server.script.append({"refusal": True})
        fake_server.default_answer = "beta"
        config = PipelineConfig(mode="slac", jobs=1)
        gateway = LmmGateway(fake_server.provider_config())
        report = evaluate(manifest, class_set, config, gateway, ReferenceHashBackend())
        counts = report.counts["base"]
        assert counts == SplitCounts(total=3, correct=1, refusals=1)
        assert counts.refusals <= counts.total - counts.correct
        refused = report.per_record[0]
        assert refused.outcome == "refusal"
        assert refused.matched_by == "refusal-fallback"
        assert refused.note == "stage1-refusal"

    def test_empty_split_has_no_accuracy(self, tmp_path):
        rows = [("novel", "alpha", "alpha")]
        manifest, class_set, config, gateway = make_eval_setup(tmp_path, rows)
        report = evaluate(manifest, class_set, config, gateway, None)
        assert report.accuracy_base is None
        assert report.accuracy_novel == 100.0
        assert report.accuracy_overall == 100.0

    def test_backend_required_for_similarity_modes(self, tmp_path):
        manifest, class_set, _, gateway = make_eval_setup(tmp_path, TEN_ROWS[:1])
        with pytest.raises(ConfigError):
            evaluate(manifest, class_set, PipelineConfig(mode="slac"), gateway, None)

    def test_empty_manifest_rejected(self, tmp_path):
        _, class_set, config, gateway = make_eval_setup(tmp_path, TEN_ROWS[:1])
        with pytest.raises(ManifestError):
            evaluate([], class_set, config, gateway, None)


def make_report(dataset_id, base=None, novel=None):
    """Hand-build an EvalReport from (total, correct[, refusals]) pairs."""
    counts = {}
    for split, pair in (("base", base), ("novel", novel)):
        if pair is None:
            counts[split] = SplitCounts(total=0, correct=0, refusals=0)
        else:
            total, correct = pair[0], pair[1]
            refusals = pair[2] if len(pair) > 2 else 0
            counts[split] = SplitCounts(total=total, correct=correct, refusals=refusals)
    total = counts["base"].total + counts["novel"].total
    correct = counts["base"].correct + counts["novel"].correct
    return EvalReport(
        dataset_id=dataset_id,
        counts=counts,
        accuracy_base=100.0 * counts["base"].correct / counts["base"].total
        if counts["base"].total else None,
        accuracy_novel=100.0 * counts["novel"].correct / counts["novel"].total
        if counts["novel"].total else None,
        accuracy_overall=100.0 * correct / total if total else None,
        per_record=(),
    )


class TestAggregate:
    def test_unweighted_mean(self):
        merged = aggregate(
            [make_report("a", base=(10, 8)), make_report("b", base=(1000, 900))]
        )
        assert merged.average_row.accuracy_base == 85.0
        assert merged.average_row.accuracy_overall == 85.0

    def test_single_report_identity(self):
        report = make_report("a", base=(10, 8), novel=(10, 9))
        merged = aggregate([report])
        assert merged.average_row.accuracy_base == report.accuracy_base
        assert merged.average_row.accuracy_novel == report.accuracy_novel

    def test_absent_splits_excluded_from_mean(self):
        merged = aggregate(
            [make_report("a", base=(10, 8)), make_report("b", novel=(10, 6))]
        )
        assert merged.average_row.accuracy_base == 80.0
        assert merged.average_row.accuracy_novel == 60.0

    def test_duplicate_dataset_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            aggregate([make_report("a", base=(10, 8)), make_report("a", base=(10, 9))])

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            aggregate([])

    def test_group_sub_averages(self):
        merged = aggregate(
            [
                make_report("a", base=(10, 8)),
                make_report("b", base=(10, 6)),
                make_report("c", base=(10, 4)),
            ],
            groups={"a": "flowers", "b": "flowers", "c": "vehicles"},
        )
        assert merged.group_rows["flowers"].accuracy_base == 70.0
        assert merged.group_rows["vehicles"].accuracy_base == 40.0
        assert merged.average_row.accuracy_base == 60.0  # groups never reweight


class TestHarmonicMean:
    def test_equal_inputs_fixed_point(self):
        assert harmonic_mean(80.0, 80.0) == 80.0

    def test_skew_punished(self):
        assert harmonic_mean(80.0, 20.0) == 32.0

    def test_reference_pair(self):
        assert harmonic_mean(76.81, 83.44) == pytest.approx(79.99, abs=0.01)

    def test_commutative(self):
        assert harmonic_mean(76.81, 83.44) == harmonic_mean(83.44, 76.81)

    @pytest.mark.parametrize("base,novel", [(0.0, 50.0), (50.0, 0.0), (-1.0, 50.0)])
    def test_nonpositive_rejected(self, base, novel):
        with pytest.raises(ValueError):
            harmonic_mean(base, novel)


class TestReportFiles:
    def test_write_report_emits_three_files(self, tmp_path):
        manifest, class_set, config, gateway = make_eval_setup(tmp_path, TEN_ROWS)
        report = evaluate(manifest, class_set, config, gateway, None)
        paths = write_report(report, tmp_path / "out")
        assert sorted(paths) == ["csv", "json", "txt"]
        for path in paths.values():
            assert path.is_file()

    def test_json_round_trip_is_lossless(self, tmp_path):
        manifest, class_set, config, gateway = make_eval_setup(tmp_path, TEN_ROWS)
        report = evaluate(manifest, class_set, config, gateway, None)
        paths = write_report(report, tmp_path / "out")
        assert parse_report(paths["json"]) == report

    def test_csv_header_and_rows(self, tmp_path):
        manifest, class_set, config, gateway = make_eval_setup(tmp_path, TEN_ROWS)
        report = evaluate(manifest, class_set, config, gateway, None)
        lines = render_summary_csv(report).splitlines()
        assert lines[0] == "dataset,split,total,correct,refusals,accuracy"
        assert lines[0] == ",".join(SUMMARY_HEADER)
        assert lines[1] == "synth,base,4,3,0,75.00"
        assert lines[2] == "synth,novel,6,4,0,66.67"
        assert lines[3] == "synth,overall,10,7,0,70.00"

    def test_csv_shows_refusal_counts(self):
        report = make_report("d", base=(10, 7, 2))
        lines = render_summary_csv(report).splitlines()
        assert lines[1] == "d,base,10,7,2,70.00"

    def test_aggregate_csv_has_average_row(self):
        merged = aggregate(
            [make_report("a", base=(10, 8)), make_report("b", base=(10, 9))]
        )
        lines = render_summary_csv(merged).splitlines()
        assert lines[-1] == "average,overall,,,,85.00"

    def test_text_table_shape(self):
        report = make_report("imagenet-ish", novel=(10, 9))
        text = render_base_novel_table(report)
        lines = text.splitlines()
        assert lines[0].split() == ["Dataset", "Base", "Novel"]
        assert lines[1].split() == ["imagenet-ish", "--", "90.00"]

    def test_text_table_average_row_for_aggregates(self):
        merged = aggregate(
            [make_report("a", base=(10, 8), novel=(10, 6)),
             make_report("b", base=(10, 4), novel=(10, 8))]
        )
        lines = render_base_novel_table(merged).splitlines()
        assert lines[-1].split() == ["Average", "60.00", "70.00"]

    def test_aggregate_json_round_trip(self, tmp_path):
        merged = aggregate(
            [make_report("a", base=(10, 8)), make_report("b", novel=(10, 6))],
            groups={"a": "g1", "b": "g2"},
        )
        paths = write_report(merged, tmp_path / "out")
        parsed = parse_report(paths["json"])
        assert parsed == merged

    def test_format_pct(self):
        assert format_pct(66.666666) == "66.67"
        assert format_pct(100.0) == "100.00"
        assert format_pct(None) == ""
        assert format_pct(None, "--") == "--"
