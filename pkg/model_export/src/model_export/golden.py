"""Golden-fixture emission.

A golden file is newline-delimited JSON, one record per embedded text:

    {"text": ..., "vector": [...], "encoder_id": ..., "token_ids": [...],
     "truncated": false}

``vector`` is the unit-norm embedding at full float precision, so a consumer
can check its own inference stack against ours with a plain cosine. The token
ids and truncation flag pin the tokenizer's behaviour as well, letting an
independent BPE implementation be checked record by record without running
the model at all.
"""

from __future__ import annotations

import json
from collections.abc import Iterable
from pathlib import Path

from .encoder import TextEncoder

# Plain ASCII letters, digits and spaces only, so every tokenizer that covers
# that range can consume the file. The last entry overruns the context window
# on purpose to pin truncation behaviour.
DEFAULT_GOLDEN_TEXTS: tuple[str, ...] = (
    "red car",
    "old car",
    "red apple",
    "The image shows red sports car",
    "a red car parked on the street",
    "an old car in a field",
    "blanket flower",
    "mexican petunia",
    "gaillardia",
    "ruellia",
    "infant bed",
    "cradle",
    "crib",
    "a photo of a blanket flower",
    "a photo of an infant bed",
    "sports car",
    "red sports car",
    "old red car",
    "car",
    "red",
    "old",
    "apple",
    "green apple",
    "red apple on a table",
    "the red car is old",
    "the old car is red",
    "a car",
    "an apple",
    "the flower in the garden",
    "a bed in the corner of the room",
    "owl in the old tree",
    "yellow flower with red center",
    "a small red car toy",
    "large old wooden bed",
    "the car the apple and the flower",
    "he said the car was red",
    "she sells sea shells",
    "in an old red car",
    "route 66 sign",
    "3 red cars",
    "speed limit 55",
    "apartment 4b",
    "2 apples and 1 flower",
    "the year 1999",
    "zero 0 one 1 two 2",
    "x y z",
    "q w e r t y",
    "deterministic encoder check",
    "embedding fixture record",
    " ".join(["a"] * 80),
)


def emit_golden(
    encoder: TextEncoder, texts: Iterable[str], out_path: str | Path
) -> int:
    """Write one golden record per text; returns the record count."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for text in texts:
        vector, ids, truncated = encoder.embed_with_meta(text)
        lines.append(
            json.dumps(
                {
                    "text": text,
                    "vector": [float(x) for x in vector],
                    "encoder_id": encoder.encoder_id,
                    "token_ids": ids,
                    "truncated": truncated,
                },
                sort_keys=True,
            )
        )
    out_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return len(lines)
