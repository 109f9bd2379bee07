#!/usr/bin/env python3
"""Regenerate the committed demo fixtures under fixtures/demo/.

Two replayable bundles:

* ``fixtures/demo`` — the four-image flower/bed set whose stage-1 answers
  miss the class vocabulary and whose stage-2 answers land on it, plus a
  manifest for evaluation runs.
* ``fixtures/demo/redcar`` — a single-image set whose description resolves
  to "red car" by similarity alone.

Output is deterministic: images are fixed bytes and recorded_at is pinned,
so re-running this script leaves a clean git tree.
"""

from __future__ import annotations

import struct
import sys
import zlib
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT / "src"))

from lmmclassify.gateway import (  # noqa: E402
    GenerationParams,
    LmmRequest,
    make_record,
    write_fixture_file,
)
from lmmclassify.labels import load_class_list  # noqa: E402
from lmmclassify.pipeline import (  # noqa: E402
    DEFAULT_STAGE1_MODEL,
    DEFAULT_STAGE2_MODEL,
    DEFAULT_STAGE1_PROMPT,
    PipelineConfig,
    build_stage1_prompt,
    build_stage2_prompt,
)

RECORDED_AT = "2026-08-19T00:00:00Z"
GENERATION = GenerationParams()


def tiny_png(rgb: tuple[int, int, int]) -> bytes:
    """A minimal valid 1x1 PNG with the given pixel color."""

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload))
        )

    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 2, 0, 0, 0)
    idat = zlib.compress(b"\x00" + bytes(rgb))
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", idat)
        + chunk(b"IEND", b"")
    )


def stage1_records(class_set, config, image_answers):
    records = []
    for image_path, answer in image_answers:
        request = LmmRequest.for_image(
            config.stage1_model_id,
            build_stage1_prompt(config, class_set),
            image_path,
            GENERATION,
        )
        records.append(make_record(request, answer, recorded_at=RECORDED_AT))
    return records


def stage2_records(class_set, stage1_to_stage2):
    records = []
    for stage1_answer, stage2_answer in stage1_to_stage2:
        request = LmmRequest.text_only(
            DEFAULT_STAGE2_MODEL,
            build_stage2_prompt(stage1_answer, class_set),
            GENERATION,
        )
        records.append(make_record(request, stage2_answer, recorded_at=RECORDED_AT))
    return records


def build_mismatch_demo(root: Path) -> None:
    demo = root / "fixtures" / "demo"
    demo.mkdir(parents=True, exist_ok=True)
    (demo / "classes.txt").write_text(
        "Blanket Flower\nMexican Petunia\nInfant Bed\n", encoding="utf-8"
    )
    class_set = load_class_list(demo / "classes.txt", dataset_id="mismatch-demo")

    images = {
        "flower1.png": (220, 120, 40),
        "flower2.png": (120, 60, 160),
        "bed1.png": (200, 200, 210),
        "bed2.png": (150, 140, 130),
    }
    for name, rgb in images.items():
        (demo / name).write_bytes(tiny_png(rgb))

    truth = ["Blanket Flower", "Mexican Petunia", "Infant Bed", "Infant Bed"]
    stage1 = ["Gaillardia", "Ruellia", "Cradle", "Crib"]
    names = list(images)

    manifest_lines = [
        f'{{"image": "{name}", "label": "{label}", "split": "novel", "dataset": "mismatch-demo"}}'
        for name, label in zip(names, truth)
    ]
    (demo / "manifest.ndjson").write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")

    plain = PipelineConfig(mode="tlac")
    with_classes = PipelineConfig(mode="tlac", include_classes_in_stage1=True)
    records = []
    records += stage1_records(
        class_set, plain, [(demo / n, a) for n, a in zip(names, stage1)]
    )
    records += stage2_records(class_set, list(zip(stage1, truth)))
    # lmm-only sends the class list with the prompt; same answers, new keys.
    records += stage1_records(
        class_set, with_classes, [(demo / n, a) for n, a in zip(names, stage1)]
    )
    write_fixture_file(demo / "exchanges.ndjson", records)
    print(f"wrote {demo / 'exchanges.ndjson'} ({len(records)} records)")


def build_redcar_demo(root: Path) -> None:
    demo = root / "fixtures" / "demo" / "redcar"
    demo.mkdir(parents=True, exist_ok=True)
    (demo / "classes.txt").write_text("Red Car\nOld Car\nRed Apple\n", encoding="utf-8")
    class_set = load_class_list(demo / "classes.txt", dataset_id="redcar-demo")
    (demo / "image.png").write_bytes(tiny_png((200, 30, 30)))
    (demo / "manifest.ndjson").write_text(
        '{"image": "image.png", "label": "Red Car", "split": "base", "dataset": "redcar-demo"}\n',
        encoding="utf-8",
    )

    answer = "The image shows red sports car"
    config = PipelineConfig(mode="slac", stage1_prompt=DEFAULT_STAGE1_PROMPT)
    records = stage1_records(class_set, config, [(demo / "image.png", answer)])
    records += stage2_records(class_set, [(answer, "Red Car")])
    write_fixture_file(demo / "exchanges.ndjson", records)
    print(f"wrote {demo / 'exchanges.ndjson'} ({len(records)} records)")


def main() -> None:
    assert DEFAULT_STAGE1_MODEL and DEFAULT_STAGE2_MODEL
    build_mismatch_demo(REPO_ROOT)
    build_redcar_demo(REPO_ROOT)


if __name__ == "__main__":
    main()
