"""Command-line entry point.

Subcommands: classify one image, eval a manifest, record live exchanges
into a replay fixture, inspect the cache, and aggregate reports. All
configuration keys are overridable with ``--set key=value``; a few common
ones have dedicated flags. Exit codes: 0 success, 2 configuration or input
error, 3 provider error, 4 replay fixture miss.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import (
    CONFIG_SCHEMA,
    build_backend,
    build_gateway,
    build_pipeline_config,
    resolve_config,
    schema_help_lines,
)
from .errors import (
    ConfigError,
    FixtureMissError,
    LmmClassifyError,
    ProviderError,
)
from .evalharness import (
    aggregate,
    evaluate,
    format_pct,
    load_manifest,
    parse_report,
    render_base_novel_table,
    write_report,
)
from .gateway import CacheStore, GenerationParams, LmmRequest
from .labels import load_class_list
from .pipeline import classify_image

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_FIXTURE_MISS = 4


def build_parser() -> argparse.ArgumentParser:
    epilog = "\n".join(
        [
            "configuration keys (set in the YAML config file or with --set key=value):",
            *schema_help_lines(),
            "",
            "environment:",
            "  the live-API credential is read from the environment variable named",
            "  by provider.credential_ref; NO_NETWORK=1 forces replay-only operation.",
        ]
    )
    parser = argparse.ArgumentParser(
        prog="lmmclassify",
        description="Training-free image classification through a multimodal model.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )
    parser.add_argument(
        "--provider",
        choices=("live", "replay"),
        help="shorthand for provider.kind (live-api / replay-fixture)",
    )
    parser.add_argument("--fixtures", help="shorthand for provider.fixture_path")
    parser.add_argument("--out", help="output directory or file, per subcommand")
    parser.add_argument("--jobs", type=int, help="shorthand for pipeline.jobs")
    parser.add_argument("--seed", type=int, help="shorthand for run.seed")

    sub = parser.add_subparsers(dest="command", required=True)

    p_classify = sub.add_parser("classify", help="classify a single image")
    p_classify.add_argument("--image", required=True, help="image file to classify")
    p_classify.add_argument("--class-list", required=True, help="candidate label file")
    p_classify.add_argument("--dataset", help="dataset id (defaults to class-list stem)")

    p_eval = sub.add_parser("eval", help="evaluate a dataset manifest")
    p_eval.add_argument("--manifest", required=True, help="newline-delimited manifest")
    p_eval.add_argument("--class-list", required=True, help="candidate label file")

    p_record = sub.add_parser("record", help="record live exchanges into a fixture file")
    p_record.add_argument(
        "--requests",
        required=True,
        help="newline-delimited requests: {prompt_text, image?, model_id?}",
    )

    p_cache = sub.add_parser("cache", help="inspect or clear the exchange cache")
    p_cache.add_argument("action", choices=("stats", "verify", "clear"))
    p_cache.add_argument("--cache-dir", help="cache directory (defaults to cache.dir)")
    p_cache.add_argument("--yes", action="store_true", help="confirm destructive clear")

    p_report = sub.add_parser("report", help="aggregate per-dataset report files")
    p_report.add_argument("inputs", nargs="+", help="report.json files to aggregate")
    p_report.add_argument(
        "--group",
        action="append",
        default=[],
        metavar="DATASET=GROUP",
        help="tag a dataset with a group for sub-averages (repeatable)",
    )
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    overrides = list(args.overrides)
    if args.provider:
        kind = "live-api" if args.provider == "live" else "replay-fixture"
        overrides.append(f"provider.kind={kind}")
    if args.fixtures:
        overrides.append(f"provider.fixture_path={args.fixtures}")
    if args.jobs is not None:
        overrides.append(f"pipeline.jobs={args.jobs}")
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    return resolve_config(args.config, overrides)


def cmd_classify(args: argparse.Namespace, cfg: dict) -> int:
    class_set = load_class_list(args.class_list, dataset_id=args.dataset)
    prediction, trace = classify_image(
        args.image,
        class_set,
        build_pipeline_config(cfg),
        build_gateway(cfg),
        build_backend(cfg),
    )
    if trace.stage1_exchange is not None:
        print(f"stage1: {trace.stage1_exchange.answer_text}")
    if trace.stage2_exchange is not None:
        print(f"stage2: {trace.stage2_exchange.answer_text}")
    if prediction.is_label():
        print(f"predicted: {prediction.predicted_label.canonical_text}")
    else:
        print(f"predicted: <{prediction.outcome}>")
    if prediction.score is not None:
        print(f"score: {prediction.score:.6f}")
    print(f"matched_by: {trace.matched_by}")
    if trace.fallback_reason:
        print(f"fallback: {trace.fallback_reason}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, cfg: dict) -> int:
    class_set = load_class_list(args.class_list)
    records = load_manifest(args.manifest, class_set)
    report = evaluate(
        records,
        class_set,
        build_pipeline_config(cfg),
        build_gateway(cfg),
        build_backend(cfg),
    )
    out_dir = args.out or "reports"
    paths = write_report(report, out_dir)
    total = sum(c.total for c in report.counts.values())
    correct = sum(c.correct for c in report.counts.values())
    refusals = sum(c.refusals for c in report.counts.values())
    print(f"dataset {report.dataset_id}: {correct}/{total} correct, {refusals} refusals")
    for split, accuracy in (
        ("base", report.accuracy_base),
        ("novel", report.accuracy_novel),
        ("overall", report.accuracy_overall),
    ):
        if accuracy is not None:
            print(f"accuracy_{split} {format_pct(accuracy)}")
    print(f"reports written to {Path(out_dir).resolve()}")
    return EXIT_OK


def _load_requests(path: str, cfg: dict) -> list[LmmRequest]:
    source = Path(path)
    if not source.is_file():
        raise ConfigError(f"requests file not found: {source}")
    generation = GenerationParams(
        temperature=cfg["pipeline.temperature"],
        max_output_tokens=cfg["pipeline.max_output_tokens"],
    )
    requests = []
    for lineno, line in enumerate(source.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            prompt = obj["prompt_text"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad request record: {exc}") from exc
        model_id = obj.get("model_id") or cfg["pipeline.stage1_model_id"]
        if obj.get("image"):
            requests.append(
                LmmRequest.for_image(model_id, prompt, obj["image"], generation)
            )
        else:
            requests.append(LmmRequest.text_only(model_id, prompt, generation))
    if not requests:
        raise ConfigError(f"requests file has no records: {source}")
    return requests


def cmd_record(args: argparse.Namespace, cfg: dict) -> int:
    if not args.out:
        raise ConfigError("record requires --out FIXTURE_PATH")
    requests = _load_requests(args.requests, cfg)
    result = build_gateway(cfg).record_fixtures(requests, args.out)
    print(f"recorded {len(result.written_keys)} exchanges to {result.out_path}")
    if result.failures:
        print(
            f"{len(result.failures)} request(s) failed; see {result.failures_path}",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_cache(args: argparse.Namespace, cfg: dict) -> int:
    cache_dir = args.cache_dir or cfg["cache.dir"]
    if not cache_dir:
        raise ConfigError("no cache directory; pass --cache-dir or set cache.dir")
    if args.action in ("stats", "verify") and not Path(cache_dir).is_dir():
        raise ConfigError(f"cache directory does not exist: {cache_dir}")
    store = CacheStore(cache_dir)
    if args.action == "stats":
        stats = store.stats()
        print(f"{stats['records']} records, {stats['bytes']} bytes")
    elif args.action == "verify":
        corrupt = store.verify()
        for key in corrupt:
            print(f"corrupt: {key}")
        print(f"{len(corrupt)} corrupt record(s) of {store.stats()['records']}")
    else:
        if not args.yes:
            raise ConfigError("cache clear is destructive; re-run with --yes")
        print(f"removed {store.clear()} records")
    return EXIT_OK


def cmd_report(args: argparse.Namespace, cfg: dict) -> int:
    reports = []
    for source in args.inputs:
        report = parse_report(source)
        if not hasattr(report, "dataset_id"):
            raise ConfigError(f"{source}: expected a per-dataset report")
        reports.append(report)
    groups = {}
    for item in args.group:
        dataset, sep, group = item.partition("=")
        if not sep:
            raise ConfigError(f"--group must look like DATASET=GROUP, got {item!r}")
        groups[dataset] = group
    result = aggregate(reports, groups)
    print(render_base_novel_table(result), end="")
    for group, row in result.group_rows.items():
        print(f"group {group}: overall {format_pct(row.accuracy_overall, '--')}")
    if args.out:
        write_report(result, args.out)
        print(f"reports written to {Path(args.out).resolve()}")
    return EXIT_OK


_COMMANDS = {
    "classify": cmd_classify,
    "eval": cmd_eval,
    "record": cmd_record,
    "cache": cmd_cache,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        return _COMMANDS[args.command](args, cfg)
    except FixtureMissError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIXTURE_MISS
    except ProviderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (LmmClassifyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
