"""Optional embedding backend that runs a real text encoder from an ONNX file.

Feature-gated behind the ``model`` extra (onnxruntime + regex); importing
this module is cheap, but constructing the backend without those packages
installed raises a configuration error pointing at the extra. The byte-pair
tokenizer reproduces the reference CLIP text tokenizer: byte-level BPE with
an end-of-word marker, a 77-token context window, and lowercased,
whitespace-collapsed input.
"""

from __future__ import annotations

import functools
import json
import logging
from pathlib import Path

import numpy as np

from .embedding import EmbeddingBackend, EmbeddingVector
from .errors import ConfigError, DegenerateEmbeddingError, EmbeddingError

logger = logging.getLogger(__name__)

_MISSING_EXTRA = (
    "the model-file backend needs the optional [model] extra; "
    'install with: pip install "lmmclassify[model]"'
)

_TOKEN_PATTERN = (
    r"<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|"
    r"[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+"
)

BOS_TOKEN = "<|startoftext|>"
EOS_TOKEN = "<|endoftext|>"
DEFAULT_CONTEXT_WINDOW = 77
WORD_END = "</w>"


@functools.lru_cache(maxsize=1)
def bytes_to_unicode() -> dict[int, str]:
    """GPT-2 byte-to-printable-character table used by byte-level BPE."""
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


def whitespace_clean(text: str) -> str:
    return " ".join(text.split())


def _get_pairs(word: tuple[str, ...]) -> set[tuple[str, str]]:
    return set(zip(word[:-1], word[1:]))


class ClipBpeTokenizer:
    """Byte-level BPE tokenizer over a vocab.json + merges.txt pair."""

    def __init__(self, vocab_path: str | Path, merges_path: str | Path):
        try:
            import regex
        except ImportError as exc:
            raise ConfigError(_MISSING_EXTRA) from exc
        vocab_path, merges_path = Path(vocab_path), Path(merges_path)
        for path in (vocab_path, merges_path):
            if not path.is_file():
                raise ConfigError(f"tokenizer file not found: {path}")
        self.encoder: dict[str, int] = json.loads(vocab_path.read_text(encoding="utf-8"))
        merges: list[tuple[str, str]] = []
        for line in merges_path.read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.startswith("#version"):
                continue
            first, _, second = line.partition(" ")
            merges.append((first, second))
        self.bpe_ranks = {pair: rank for rank, pair in enumerate(merges)}
        self.byte_encoder = bytes_to_unicode()
        self._pattern = regex.compile(_TOKEN_PATTERN, regex.IGNORECASE)
        self._bpe_cache: dict[str, tuple[str, ...]] = {}
        for token in (BOS_TOKEN, EOS_TOKEN):
            if token not in self.encoder:
                raise ConfigError(f"vocabulary is missing the special token {token!r}")
        self.bos_id = self.encoder[BOS_TOKEN]
        self.eos_id = self.encoder[EOS_TOKEN]

    def _bpe(self, token: str) -> tuple[str, ...]:
        cached = self._bpe_cache.get(token)
        if cached is not None:
            return cached
        word = tuple(token[:-1]) + (token[-1] + WORD_END,)
        pairs = _get_pairs(word)
        while pairs:
            best = min(pairs, key=lambda pair: self.bpe_ranks.get(pair, float("inf")))
            if best not in self.bpe_ranks:
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
            pairs = _get_pairs(word)
        self._bpe_cache[token] = word
        return word

    def encode(self, text: str) -> list[int]:
        """Token ids for the cleaned, lowercased text (no special tokens)."""
        text = whitespace_clean(text).lower()
        ids: list[int] = []
        for chunk in self._pattern.findall(text):
            mapped = "".join(self.byte_encoder[b] for b in chunk.encode("utf-8"))
            for piece in self._bpe(mapped):
                piece_id = self.encoder.get(piece)
                if piece_id is None:
                    raise EmbeddingError(
                        f"token piece {piece!r} is not in the vocabulary "
                        f"(text chunk {chunk!r})"
                    )
                ids.append(piece_id)
        return ids

    def encode_for_model(
        self, text: str, context_window: int = DEFAULT_CONTEXT_WINDOW
    ) -> tuple[list[int], bool]:
        """BOS + tokens + EOS, truncated to the context window with a warning."""
        content = self.encode(text)
        budget = context_window - 2
        truncated = len(content) > budget
        if truncated:
            tail = content[budget:]
            logger.warning(
                "text exceeds the %d-token window; truncating %d trailing tokens: %r",
                context_window,
                len(tail),
                text[-60:],
            )
            content = content[:budget]
        return [self.bos_id] + content + [self.eos_id], truncated


class OnnxTextEncoderBackend(EmbeddingBackend):
    """Text encoder loaded from an ONNX interchange file.

    The model must map int64 ``input_ids`` (and, if declared,
    ``attention_mask``) of shape [1, n] to a single embedding row; output
    vectors are L2-normalized here, so stored weights need not be.
    """

    kind = "model-file"
    concurrent_safe = True

    def __init__(
        self,
        model_path: str | Path,
        vocab_path: str | Path,
        merges_path: str | Path,
        context_window: int = DEFAULT_CONTEXT_WINDOW,
    ):
        try:
            import onnxruntime
        except ImportError as exc:
            raise ConfigError(_MISSING_EXTRA) from exc
        model_path = Path(model_path)
        if not model_path.is_file():
            raise ConfigError(f"model file not found: {model_path}")
        if context_window < 3:
            raise ConfigError(f"context_window must be >= 3, got {context_window}")
        self.context_window = context_window
        self.tokenizer = ClipBpeTokenizer(vocab_path, merges_path)
        self._session = onnxruntime.InferenceSession(
            str(model_path), providers=["CPUExecutionProvider"]
        )
        self._input_names = {i.name for i in self._session.get_inputs()}
        if "input_ids" not in self._input_names:
            raise ConfigError(
                f"model {model_path} does not declare an input_ids input"
            )
        self.backend_id = f"model-file:{model_path.name}"
        out_dim = self._session.get_outputs()[0].shape[-1]
        if isinstance(out_dim, int):
            self.dim = out_dim
        else:
            self.dim = int(self._run([self.tokenizer.bos_id, self.tokenizer.eos_id]).shape[0])
        super().__init__()

    def _run(self, ids: list[int]) -> np.ndarray:
        feed = {"input_ids": np.asarray([ids], dtype=np.int64)}
        if "attention_mask" in self._input_names:
            feed["attention_mask"] = np.ones((1, len(ids)), dtype=np.int64)
        return np.asarray(self._session.run(None, feed)[0][0], dtype=np.float64)

    def _embed(self, text: str) -> EmbeddingVector:
        ids, _ = self.tokenizer.encode_for_model(text, self.context_window)
        raw = self._run(ids)
        norm = float(np.linalg.norm(raw))
        if norm == 0.0:
            raise DegenerateEmbeddingError(f"encoder returned a zero vector for {text!r}")
        return EmbeddingVector(values=raw / norm, dim=self.dim)
