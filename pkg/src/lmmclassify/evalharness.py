"""Manifest-driven evaluation: per-split accuracy, aggregation, report files.

A manifest is one dataset's worth of newline-delimited records
``{image, label, split, dataset}`` with split "base" or "novel".
Accuracies are carried at full precision and rounded only when rendered.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .embedding import EmbeddingBackend
from .errors import ConfigError, LmmClassifyError, ManifestError
from .gateway import LmmGateway
from .labels import ClassLabelSet, canonicalize
from .pipeline import PipelineConfig, classify_image

logger = logging.getLogger(__name__)

SPLITS = ("base", "novel")
SUMMARY_HEADER = ["dataset", "split", "total", "correct", "refusals", "accuracy"]


@dataclass(frozen=True)
class ManifestRecord:
    image_ref: str
    ground_truth: str
    split: str
    dataset_id: str


@dataclass(frozen=True)
class RecordResult:
    image_ref: str
    ground_truth: str
    predicted: str | None
    correct: bool
    matched_by: str
    outcome: str
    split: str
    note: str | None = None


@dataclass(frozen=True)
class SplitCounts:
    total: int
    correct: int
    refusals: int


@dataclass(frozen=True)
class EvalReport:
    dataset_id: str
    counts: Mapping[str, SplitCounts]
    accuracy_base: float | None
    accuracy_novel: float | None
    accuracy_overall: float | None
    per_record: tuple[RecordResult, ...]


@dataclass(frozen=True)
class AverageRow:
    accuracy_base: float | None
    accuracy_novel: float | None
    accuracy_overall: float | None


@dataclass(frozen=True)
class AggregateReport:
    rows: tuple[EvalReport, ...]
    average_row: AverageRow
    group_tags: Mapping[str, str]
    group_rows: Mapping[str, AverageRow]


def load_manifest(path: str | Path, class_set: ClassLabelSet) -> list[ManifestRecord]:
    """Read and validate a manifest against the dataset's class list.

    Every ground-truth label must canonicalize to a known class; split tags
    are mandatory; all records must belong to one dataset. Unreadable image
    paths are only warnings here (they become per-record errors at run time).
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records: list[ManifestRecord] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
        missing = [k for k in ("image", "label", "split", "dataset") if k not in obj]
        if missing:
            raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
        if obj["split"] not in SPLITS:
            raise ManifestError(
                f"{path}:{lineno}: split must be one of {SPLITS}, got {obj['split']!r}"
            )
        canonical = canonicalize(obj["label"])
        if class_set.find(canonical) is None:
            raise ManifestError(
                f"{path}:{lineno}: label {obj['label']!r} not in class list "
                f"for dataset {class_set.dataset_id!r}"
            )
        # Relative image paths resolve against the manifest's own directory,
        # so a manifest plus its images form a relocatable bundle.
        image_ref = Path(obj["image"])
        if not image_ref.is_absolute():
            image_ref = path.parent / image_ref
        if not image_ref.is_file():
            logger.warning("%s:%d: image not readable: %s", path, lineno, image_ref)
        records.append(
            ManifestRecord(
                image_ref=str(image_ref),
                ground_truth=canonical,
                split=obj["split"],
                dataset_id=obj["dataset"],
            )
        )
    if not records:
        raise ManifestError(f"manifest has no records: {path}")
    dataset_ids = sorted({r.dataset_id for r in records})
    if len(dataset_ids) > 1:
        raise ManifestError(
            f"manifest mixes datasets {dataset_ids}; one manifest per dataset"
        )
    return records


def _accuracy(correct: int, total: int) -> float | None:
    if total == 0:
        return None
    return 100.0 * correct / total


def _build_report(dataset_id: str, results: Sequence[RecordResult]) -> EvalReport:
    counts = {}
    for split in SPLITS:
        in_split = [r for r in results if r.split == split]
        counts[split] = SplitCounts(
            total=len(in_split),
            correct=sum(r.correct for r in in_split),
            refusals=sum(r.outcome == "refusal" for r in in_split),
        )
    total = sum(c.total for c in counts.values())
    correct = sum(c.correct for c in counts.values())
    return EvalReport(
        dataset_id=dataset_id,
        counts=counts,
        accuracy_base=_accuracy(counts["base"].correct, counts["base"].total),
        accuracy_novel=_accuracy(counts["novel"].correct, counts["novel"].total),
        accuracy_overall=_accuracy(correct, total),
        per_record=tuple(results),
    )


def evaluate(
    manifest: Sequence[ManifestRecord],
    class_set: ClassLabelSet,
    pipeline_config: PipelineConfig,
    gateway: LmmGateway,
    backend: EmbeddingBackend | None,
) -> EvalReport:
    """Classify every manifest record and tabulate per-split accuracy.

    Records fan out to a worker pool sized by pipeline_config.jobs; results
    are merged back in manifest order, so scheduling never affects figures.
    Per-record failures score as incorrect with a note; only configuration
    errors abort the run.
    """
    if not manifest:
        raise ManifestError("empty manifest")
    if pipeline_config.mode in ("slac", "tlac") and backend is None:
        raise ConfigError(f"{pipeline_config.mode} mode requires an embedding backend")

    def run_one(record: ManifestRecord) -> RecordResult:
        try:
            prediction, trace = classify_image(
                record.image_ref, class_set, pipeline_config, gateway, backend
            )
        except (LmmClassifyError, OSError) as exc:
            logger.warning("record %s failed: %s", record.image_ref, exc)
            return RecordResult(
                image_ref=record.image_ref,
                ground_truth=record.ground_truth,
                predicted=None,
                correct=False,
                matched_by="error",
                outcome="error",
                split=record.split,
                note=f"{type(exc).__name__}: {exc}",
            )
        predicted = (
            prediction.predicted_label.canonical_text if prediction.is_label() else None
        )
        return RecordResult(
            image_ref=record.image_ref,
            ground_truth=record.ground_truth,
            predicted=predicted,
            correct=predicted == record.ground_truth,
            matched_by=trace.matched_by,
            outcome=prediction.outcome,
            split=record.split,
            note=trace.fallback_reason,
        )

    with ThreadPoolExecutor(max_workers=pipeline_config.jobs) as pool:
        results = list(pool.map(run_one, manifest))
    return _build_report(manifest[0].dataset_id, results)


def _mean(values: Sequence[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return sum(present) / len(present)


def _average_row(reports: Sequence[EvalReport]) -> AverageRow:
    return AverageRow(
        accuracy_base=_mean([r.accuracy_base for r in reports]),
        accuracy_novel=_mean([r.accuracy_novel for r in reports]),
        accuracy_overall=_mean([r.accuracy_overall for r in reports]),
    )


def aggregate(
    reports: Sequence[EvalReport], groups: Mapping[str, str] | None = None
) -> AggregateReport:
    """Unweighted cross-dataset averages, with optional group sub-averages."""
    if not reports:
        raise ConfigError("aggregate requires at least one report")
    seen = set()
    for report in reports:
        if report.dataset_id in seen:
            raise ConfigError(f"duplicate dataset_id in aggregate: {report.dataset_id!r}")
        seen.add(report.dataset_id)
    groups = dict(groups or {})
    group_rows = {}
    for group in sorted(set(groups.values())):
        members = [r for r in reports if groups.get(r.dataset_id) == group]
        if members:
            group_rows[group] = _average_row(members)
    return AggregateReport(
        rows=tuple(reports),
        average_row=_average_row(reports),
        group_tags=groups,
        group_rows=group_rows,
    )


def harmonic_mean(base: float, novel: float) -> float:
    if base <= 0 or novel <= 0:
        raise ValueError(f"harmonic_mean requires positive inputs, got {base}, {novel}")
    return 2.0 * base * novel / (base + novel)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def _counts_to_dict(counts: Mapping[str, SplitCounts]) -> dict:
    return {
        split: {"total": c.total, "correct": c.correct, "refusals": c.refusals}
        for split, c in counts.items()
    }


def report_to_dict(report: EvalReport) -> dict:
    return {
        "kind": "eval-report",
        "dataset_id": report.dataset_id,
        "counts": _counts_to_dict(report.counts),
        "accuracy_base": report.accuracy_base,
        "accuracy_novel": report.accuracy_novel,
        "accuracy_overall": report.accuracy_overall,
        "per_record": [vars(r).copy() for r in report.per_record],
    }


def report_from_dict(obj: Mapping) -> EvalReport:
    return EvalReport(
        dataset_id=obj["dataset_id"],
        counts={
            split: SplitCounts(**counts) for split, counts in obj["counts"].items()
        },
        accuracy_base=obj["accuracy_base"],
        accuracy_novel=obj["accuracy_novel"],
        accuracy_overall=obj["accuracy_overall"],
        per_record=tuple(RecordResult(**r) for r in obj["per_record"]),
    )


def _row_to_dict(row: AverageRow) -> dict:
    return {
        "accuracy_base": row.accuracy_base,
        "accuracy_novel": row.accuracy_novel,
        "accuracy_overall": row.accuracy_overall,
    }


def aggregate_to_dict(report: AggregateReport) -> dict:
    return {
        "kind": "aggregate-report",
        "rows": [report_to_dict(r) for r in report.rows],
        "average_row": _row_to_dict(report.average_row),
        "group_tags": dict(report.group_tags),
        "group_rows": {g: _row_to_dict(r) for g, r in report.group_rows.items()},
    }


def aggregate_from_dict(obj: Mapping) -> AggregateReport:
    return AggregateReport(
        rows=tuple(report_from_dict(r) for r in obj["rows"]),
        average_row=AverageRow(**obj["average_row"]),
        group_tags=dict(obj["group_tags"]),
        group_rows={g: AverageRow(**r) for g, r in obj["group_rows"].items()},
    )


def parse_report(path: str | Path) -> EvalReport | AggregateReport:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("kind") == "aggregate-report":
        return aggregate_from_dict(obj)
    return report_from_dict(obj)


def format_pct(value: float | None, absent: str = "") -> str:
    """Display-boundary rounding: 2 decimals, or the absent marker."""
    return absent if value is None else f"{value:.2f}"


def _summary_rows(report: EvalReport | AggregateReport) -> list[list[str]]:
    rows = []
    if isinstance(report, EvalReport):
        for split in SPLITS:
            counts = report.counts[split]
            accuracy = report.accuracy_base if split == "base" else report.accuracy_novel
            rows.append(
                [report.dataset_id, split, str(counts.total), str(counts.correct),
                 str(counts.refusals), format_pct(accuracy)]
            )
        total = sum(c.total for c in report.counts.values())
        correct = sum(c.correct for c in report.counts.values())
        refusals = sum(c.refusals for c in report.counts.values())
        rows.append(
            [report.dataset_id, "overall", str(total), str(correct), str(refusals),
             format_pct(report.accuracy_overall)]
        )
    else:
        for row in report.rows:
            total = sum(c.total for c in row.counts.values())
            correct = sum(c.correct for c in row.counts.values())
            refusals = sum(c.refusals for c in row.counts.values())
            rows.append(
                [row.dataset_id, "overall", str(total), str(correct), str(refusals),
                 format_pct(row.accuracy_overall)]
            )
        rows.append(
            ["average", "overall", "", "", "", format_pct(report.average_row.accuracy_overall)]
        )
    return rows


def render_summary_csv(report: EvalReport | AggregateReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    writer.writerows(_summary_rows(report))
    return buffer.getvalue()


def render_base_novel_table(report: EvalReport | AggregateReport) -> str:
    """Plain-text table of Base/Novel accuracy pairs, one dataset per row."""
    rows = report.rows if isinstance(report, AggregateReport) else (report,)
    lines = [f"{'Dataset':<24} {'Base':>8} {'Novel':>8}"]
    for row in rows:
        lines.append(
            f"{row.dataset_id:<24} {format_pct(row.accuracy_base, '--'):>8} "
            f"{format_pct(row.accuracy_novel, '--'):>8}"
        )
    if isinstance(report, AggregateReport):
        average = report.average_row
        lines.append(
            f"{'Average':<24} {format_pct(average.accuracy_base, '--'):>8} "
            f"{format_pct(average.accuracy_novel, '--'):>8}"
        )
    return "\n".join(lines) + "\n"


def write_report(
    report: EvalReport | AggregateReport, out_dir: str | Path
) -> dict[str, Path]:
    """Emit the three report artifacts; returns their paths by kind."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(report, EvalReport):
        payload = report_to_dict(report)
    else:
        payload = aggregate_to_dict(report)
    paths = {
        "json": out_dir / "report.json",
        "csv": out_dir / "summary.csv",
        "txt": out_dir / "report.txt",
    }
    paths["json"].write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    paths["csv"].write_text(render_summary_csv(report), encoding="utf-8")
    paths["txt"].write_text(render_base_novel_table(report), encoding="utf-8")
    return paths
