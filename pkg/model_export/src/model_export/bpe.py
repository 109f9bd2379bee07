"""Byte-level BPE encoding over a vocab.json + merges.txt pair.

This is the reference tokenization consumed downstream: lowercased,
whitespace-collapsed text is split by the fixed pattern, bytes are mapped
through the printable-character table, merges apply lowest rank first, and
the final piece of every word carries the end-of-word marker.
"""

from __future__ import annotations

import functools
import json
from pathlib import Path

import regex

from .errors import ExportError

BOS_TOKEN = "<|startoftext|>"
EOS_TOKEN = "<|endoftext|>"
WORD_END = "</w>"
DEFAULT_CONTEXT_WINDOW = 77

_PATTERN = regex.compile(
    r"<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|"
    r"[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+",
    regex.IGNORECASE,
)


@functools.lru_cache(maxsize=1)
def byte_table() -> dict[int, str]:
    """The GPT-2 byte-to-printable-character table."""
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, (chr(c) for c in cs)))


def _pairs(word: tuple[str, ...]) -> set[tuple[str, str]]:
    return set(zip(word[:-1], word[1:]))


class BpeEncoder:
    def __init__(self, vocab: dict[str, int], merges: list[tuple[str, str]]):
        for token in (BOS_TOKEN, EOS_TOKEN):
            if token not in vocab:
                raise ExportError(f"vocabulary is missing the special token {token!r}")
        self.vocab = dict(vocab)
        self.ranks = {pair: rank for rank, pair in enumerate(merges)}
        self.bos_id = vocab[BOS_TOKEN]
        self.eos_id = vocab[EOS_TOKEN]
        self._cache: dict[str, tuple[str, ...]] = {}

    @classmethod
    def from_files(cls, vocab_path: str | Path, merges_path: str | Path) -> "BpeEncoder":
        vocab_path, merges_path = Path(vocab_path), Path(merges_path)
        for path in (vocab_path, merges_path):
            if not path.is_file():
                raise ExportError(f"tokenizer file not found: {path}")
        vocab = json.loads(vocab_path.read_text(encoding="utf-8"))
        merges = []
        for line in merges_path.read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.startswith("#version"):
                continue
            first, _, second = line.partition(" ")
            merges.append((first, second))
        return cls(vocab, merges)

    def _bpe(self, token: str) -> tuple[str, ...]:
        cached = self._cache.get(token)
        if cached is not None:
            return cached
        word = tuple(token[:-1]) + (token[-1] + WORD_END,)
        pairs = _pairs(word)
        while pairs:
            best = min(pairs, key=lambda pair: self.ranks.get(pair, float("inf")))
            if best not in self.ranks:
                break
            first, second = best
            merged: list[str] = []
            i = 0
            while i < len(word):
                if i < len(word) - 1 and word[i] == first and word[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(word[i])
                    i += 1
            word = tuple(merged)
            if len(word) == 1:
                break
            pairs = _pairs(word)
        self._cache[token] = word
        return word

    def encode(self, text: str) -> list[int]:
        """Token ids for cleaned, lowercased text, without special tokens."""
        text = " ".join(text.split()).lower()
        table = byte_table()
        ids: list[int] = []
        for chunk in _PATTERN.findall(text):
            mapped = "".join(table[b] for b in chunk.encode("utf-8"))
            for piece in self._bpe(mapped):
                piece_id = self.vocab.get(piece)
                if piece_id is None:
                    raise ExportError(
                        f"token piece {piece!r} is not in the vocabulary "
                        f"(text chunk {chunk!r})"
                    )
                ids.append(piece_id)
        return ids

    def encode_for_model(
        self, text: str, context_window: int = DEFAULT_CONTEXT_WINDOW
    ) -> tuple[list[int], bool]:
        """BOS + content + EOS, truncated to the context window."""
        content = self.encode(text)
        budget = context_window - 2
        truncated = len(content) > budget
        if truncated:
            content = content[:budget]
        return [self.bos_id] + content + [self.eos_id], truncated
