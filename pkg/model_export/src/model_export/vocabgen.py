"""The scaled-down test vocabulary shipped with the seeded test encoder.

Single letters and word-final letters guarantee every ASCII-alphanumeric
text tokenizes without an unknown-token fallback; a handful of merges
exercises the rank machinery on common fragments.
"""

from __future__ import annotations

import json
import string
from pathlib import Path

from .bpe import BOS_TOKEN, EOS_TOKEN

TEST_MERGES = [
    "r e",
    "re d</w>",
    "c a",
    "ca r</w>",
    "o l",
    "ol d</w>",
    "s p",
    "o r",
    "t s</w>",
    "e r",
    "i n",
    "a n",
    "t h",
    "h e</w>",
    "o w",
    "e l",
    "l e</w>",
]


def test_vocab() -> dict[str, int]:
    tokens = [BOS_TOKEN, EOS_TOKEN]
    tokens += list(string.ascii_lowercase)
    tokens += [c + "</w>" for c in string.ascii_lowercase]
    tokens += [d + "</w>" for d in "0123456789"]
    tokens += [merge.replace(" ", "") for merge in TEST_MERGES]
    return {token: i for i, token in enumerate(tokens)}


def write_tokenizer_files(
    vocab: dict[str, int], merges: list[str], out_dir: str | Path
) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab_path = out_dir / "vocab.json"
    vocab_path.write_text(json.dumps(vocab, indent=0, sort_keys=False) + "\n",
                          encoding="utf-8")
    merges_path = out_dir / "merges.txt"
    merges_path.write_text("#version: 0.2\n" + "\n".join(merges) + "\n",
                           encoding="utf-8")
    return vocab_path, merges_path
