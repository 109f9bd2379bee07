"""Text-embedding backends, cosine similarity, and the similarity-argmax classifier.

Every vector leaving a backend is L2-normalized, so the dot product used by
the classifier is cosine similarity. The reference-hash backend is a
deterministic trigram feature hash that stands in for a real text encoder in
tests; the optional model-file backend (see ``clip_onnx``) runs a real
encoder from an ONNX file.
"""

from __future__ import annotations

import abc
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateEmbeddingError,
    DimensionMismatchError,
    EmbeddingError,
)
from .labels import (
    IDENTITY_TEMPLATE,
    ClassLabel,
    ClassLabelSet,
    PromptTemplate,
    apply_template,
    canonicalize,
)

UNIT_NORM_TOL = 1e-6

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF
_MSB64 = 1 << 63


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """Fixed-dimension, unit-norm float64 vector."""

    values: np.ndarray
    dim: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"vector has shape {values.shape}, expected ({self.dim},)"
            )
        norm = float(np.linalg.norm(values))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise EmbeddingError(f"vector norm {norm} is not 1.0 within {UNIT_NORM_TOL}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity of two unit vectors (their dot product)."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.dot(a.values, b.values))


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64_MASK
    return h


def reference_hash_embed(text: str, dim: int) -> EmbeddingVector:
    """Deterministic trigram feature-hash embedding (normative procedure).

    The canonicalized text is framed with the 0x23 boundary byte, every
    3-byte window of the UTF-8 bytes is hashed with 64-bit FNV-1a, and each
    hash adds +/-1 (sign from the hash MSB) to bucket ``hash % dim``. The
    accumulator is L2-normalized.
    """
    if dim < 8:
        raise EmbeddingError(f"reference-hash dim must be >= 8, got {dim}")
    framed = b"\x23" + canonicalize(text).encode("utf-8") + b"\x23"
    acc = np.zeros(dim, dtype=np.float64)
    for i in range(len(framed) - 2):
        h = _fnv1a64(framed[i : i + 3])
        acc[h % dim] += 1.0 if h < _MSB64 else -1.0
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:
        raise DegenerateEmbeddingError(
            f"all trigram contributions cancelled for text {text!r}"
        )
    return EmbeddingVector(values=acc / norm, dim=dim)


class EmbeddingBackend(abc.ABC):
    """A text encoder with a fixed output dimension.

    Backends that are not safe for concurrent use set ``concurrent_safe``
    False; ``embed`` then serializes calls through an internal lock.
    """

    backend_id: str
    dim: int
    kind: str
    concurrent_safe: bool = True

    def __init__(self):
        self._lock = threading.Lock() if not self.concurrent_safe else None

    def embed(self, text: str) -> EmbeddingVector:
        if self._lock is not None:
            with self._lock:
                return self._embed(text)
        return self._embed(text)

    @abc.abstractmethod
    def _embed(self, text: str) -> EmbeddingVector: ...


class ReferenceHashBackend(EmbeddingBackend):
    """Model-free deterministic backend used for tests and offline runs."""

    kind = "reference-hash"
    concurrent_safe = True

    DEFAULT_DIM = 256

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self.backend_id = f"reference-hash-{dim}"
        super().__init__()

    def _embed(self, text: str) -> EmbeddingVector:
        return reference_hash_embed(text, self.dim)


def embed_text(backend: EmbeddingBackend, text: str) -> EmbeddingVector:
    """Embed text, enforcing the non-empty precondition and unit-norm postcondition."""
    canonicalize(text)  # raises EmptyTextError on degenerate input
    vector = backend.embed(text)
    if vector.dim != backend.dim:
        raise EmbeddingError(
            f"backend {backend.backend_id} emitted dim {vector.dim}, declared {backend.dim}"
        )
    return vector


@dataclass(frozen=True)
class Prediction:
    """Classifier outcome for one image.

    ``outcome`` distinguishes a real label ("label") from the reserved
    non-label results: "no-match" (exact-string mode found nothing) and
    "refusal" (the provider declined and policy scored it wrong). The
    reserved outcomes carry ``predicted_label=None`` and are never
    represented as a fake label.
    """

    predicted_label: ClassLabel | None
    score: float | None
    scores: tuple[float, ...]
    stage_trace: tuple[str, ...]
    outcome: str = "label"

    def is_label(self) -> bool:
        return self.outcome == "label" and self.predicted_label is not None


def select_winner(scores: Sequence[float]) -> int:
    """Index of the maximum score; ties break to the smallest index."""
    if len(scores) == 0:
        raise ValueError("empty score vector")
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


def classify_by_similarity(
    z_text: str,
    labels: ClassLabelSet,
    backend: EmbeddingBackend,
    template: PromptTemplate = IDENTITY_TEMPLATE,
) -> Prediction:
    """Similarity-argmax classification of a free-text answer.

    Embeds ``z_text`` and every (templated) label, scores each label by
    cosine, and picks the smallest-index maximizer.
    """
    z_vector = embed_text(backend, z_text)
    scores = tuple(
        cosine(z_vector, embed_text(backend, apply_template(template, label)))
        for label in labels
    )
    winner = select_winner(scores)
    return Prediction(
        predicted_label=labels.labels[winner],
        score=scores[winner],
        scores=scores,
        stage_trace=(z_text,),
        outcome="label",
    )


@dataclass(frozen=True)
class GoldenRecord:
    """One entry of a golden-fixture file: a text and its expected vector."""

    text: str
    vector: np.ndarray
    encoder_id: str


def load_golden_fixtures(path: str | Path) -> list[GoldenRecord]:
    """Read a newline-delimited golden-fixture file ({text, vector, encoder_id})."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"golden fixture file not found: {path}")
    records: list[GoldenRecord] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(
                GoldenRecord(
                    text=obj["text"],
                    vector=np.asarray(obj["vector"], dtype=np.float64),
                    encoder_id=obj.get("encoder_id", ""),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad golden record: {exc}") from exc
    return records


def _make_reference_backend(descriptor: dict) -> EmbeddingBackend:
    return ReferenceHashBackend(dim=int(descriptor.get("dim", ReferenceHashBackend.DEFAULT_DIM)))


def _make_model_file_backend(descriptor: dict) -> EmbeddingBackend:
    from . import clip_onnx  # deferred: needs the optional [model] extra

    return clip_onnx.OnnxTextEncoderBackend(
        model_path=descriptor["model_path"],
        vocab_path=descriptor["vocab_path"],
        merges_path=descriptor["merges_path"],
        context_window=int(descriptor.get("context_window", 77)),
    )


BACKEND_FACTORIES: dict[str, Callable[[dict], EmbeddingBackend]] = {
    "reference-hash": _make_reference_backend,
    "model-file": _make_model_file_backend,
}


def register_backend(kind: str, factory: Callable[[dict], EmbeddingBackend]) -> None:
    BACKEND_FACTORIES[kind] = factory


def make_backend(descriptor: dict) -> EmbeddingBackend:
    """Build a backend from its config descriptor ({kind, dim, paths...})."""
    if "kind" not in descriptor:
        raise ConfigError("backend descriptor must declare a kind")
    kind = descriptor["kind"]
    factory = BACKEND_FACTORIES.get(kind)
    if factory is None:
        raise ConfigError(
            f"unknown embedding backend kind {kind!r}; registered: {sorted(BACKEND_FACTORIES)}"
        )
    try:
        return factory(descriptor)
    except KeyError as exc:
        raise ConfigError(f"backend descriptor missing field: {exc}") from exc
