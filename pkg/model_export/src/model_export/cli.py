"""Command-line entry point.

Subcommands:
    export  write encoder.onnx + tokenizer files + manifest to a directory
    golden  write a golden-fixture NDJSON file
    bundle  write tokenizer files + manifest + golden fixtures (no model file)

`bundle` is the offline variant of `export`: everything a consumer needs to
check a tokenizer and compare embeddings, without the ONNX serialization step
or its optional dependencies.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoder import TEST_ENCODER_SOURCE, load_encoder
from .errors import DependencyError, ExportError
from .export import GOLDEN_FILE, export_encoder, verify_model_file, write_manifest
from .golden import DEFAULT_GOLDEN_TEXTS, emit_golden

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_MISSING_DEPENDENCY = 3


def _add_source_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--source",
        default=TEST_ENCODER_SOURCE,
        help="encoder to load: a hub checkpoint id, or the built-in "
        f"'{TEST_ENCODER_SOURCE}' (default)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=0,
        help=f"weight seed, only used by '{TEST_ENCODER_SOURCE}' (default 0)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="model-export",
        description="Export a text encoder to a portable inference bundle.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_export = sub.add_parser("export", help="write an ONNX model directory")
    p_export.add_argument("--out", required=True, help="output directory")
    p_export.add_argument(
        "--skip-verify",
        action="store_true",
        help="do not run the exported graph against the source model",
    )
    _add_source_args(p_export)

    p_golden = sub.add_parser("golden", help="write a golden-fixture file")
    p_golden.add_argument("--out", required=True, help="output NDJSON path")
    p_golden.add_argument(
        "--texts",
        help="newline-delimited file of texts to embed (default: built-in set)",
    )
    _add_source_args(p_golden)

    p_bundle = sub.add_parser(
        "bundle", help="write tokenizer files, manifest and golden fixtures"
    )
    p_bundle.add_argument("--out", required=True, help="output directory")
    _add_source_args(p_bundle)

    return parser


def _read_texts(path: str) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise ExportError(f"texts file not found: {p}")
    return [line for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def _cmd_export(args: argparse.Namespace) -> int:
    encoder = load_encoder(args.source, seed=args.seed)
    model_path = export_encoder(encoder, args.out)
    print(f"exported {encoder.encoder_id} to {model_path}")
    if not args.skip_verify:
        verify_model_file(encoder, model_path)
        print("verified exported graph against source model")
    return EXIT_OK


def _cmd_golden(args: argparse.Namespace) -> int:
    encoder = load_encoder(args.source, seed=args.seed)
    texts = _read_texts(args.texts) if args.texts else list(DEFAULT_GOLDEN_TEXTS)
    count = emit_golden(encoder, texts, args.out)
    print(f"wrote {count} golden records to {args.out}")
    return EXIT_OK


def _cmd_bundle(args: argparse.Namespace) -> int:
    encoder = load_encoder(args.source, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    encoder.write_tokenizer_files(out_dir)
    write_manifest(encoder, out_dir, model_file=None)
    count = emit_golden(encoder, DEFAULT_GOLDEN_TEXTS, out_dir / GOLDEN_FILE)
    print(f"wrote bundle for {encoder.encoder_id} to {out_dir} ({count} golden records)")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"export": _cmd_export, "golden": _cmd_golden, "bundle": _cmd_bundle}
    try:
        return handlers[args.command](args)
    except DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_DEPENDENCY
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
