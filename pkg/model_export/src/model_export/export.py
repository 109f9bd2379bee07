"""Serialize an encoder to a portable inference bundle and verify it.

The exported directory holds everything a consumer needs to reproduce the
encoder's embeddings without this package: the ONNX graph, the BPE vocabulary
and merge list, and a manifest naming them. Verification runs the exported
graph side by side with the source model over a fixed probe set.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .encoder import TextEncoder
from .errors import DependencyError, VerificationError

MODEL_FILE = "encoder.onnx"
VOCAB_FILE = "vocab.json"
MERGES_FILE = "merges.txt"
MANIFEST_FILE = "manifest.json"
GOLDEN_FILE = "golden.ndjson"

# Short phrases with distinct token patterns; enough to catch a graph that
# loads but computes the wrong thing.
PROBE_TEXTS = (
    "red car",
    "old car",
    "red apple",
    "the image shows red sports car",
)


class _ProjectionWrapper(torch.nn.Module):
    """Flattens the model output struct to a single tensor for ONNX export."""

    def __init__(self, model: torch.nn.Module):
        super().__init__()
        self.model = model

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor):
        out = self.model(input_ids=input_ids, attention_mask=attention_mask)
        return out.text_embeds


def write_manifest(
    encoder: TextEncoder, out_dir: Path, model_file: str | None
) -> Path:
    manifest = {
        "encoder_id": encoder.encoder_id,
        "dim": encoder.dim,
        "context_window": encoder.context_window,
        "model_file": model_file,
        "vocab_file": VOCAB_FILE,
        "merges_file": MERGES_FILE,
        "golden_file": GOLDEN_FILE,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def export_encoder(encoder: TextEncoder, out_dir: str | Path) -> Path:
    """Write encoder.onnx plus tokenizer files and manifest; returns the model path."""
    try:
        import onnx  # noqa: F401  (the torch exporter serializes through it)
    except ImportError as exc:
        raise DependencyError(
            "ONNX export requires the optional dependencies; "
            "install model-export[onnx]"
        ) from exc

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    encoder.write_tokenizer_files(out_dir)

    ids, _ = encoder.encode_ids("red car")
    input_ids = torch.tensor([ids], dtype=torch.long)
    attention_mask = torch.ones_like(input_ids)
    model_path = out_dir / MODEL_FILE
    torch.onnx.export(
        _ProjectionWrapper(encoder.model),
        (input_ids, attention_mask),
        str(model_path),
        input_names=["input_ids", "attention_mask"],
        output_names=["text_embeds"],
        dynamic_axes={
            "input_ids": {0: "batch", 1: "sequence"},
            "attention_mask": {0: "batch", 1: "sequence"},
            "text_embeds": {0: "batch"},
        },
        dynamo=False,
    )
    write_manifest(encoder, out_dir, MODEL_FILE)
    return model_path


def verify_model_file(
    encoder: TextEncoder, model_path: str | Path, tolerance: float = 1e-5
) -> None:
    """Check the exported graph reproduces the source model on the probe set."""
    try:
        import onnxruntime
    except ImportError as exc:
        raise DependencyError(
            "verification requires the optional dependencies; "
            "install model-export[onnx]"
        ) from exc

    try:
        session = onnxruntime.InferenceSession(
            str(model_path), providers=["CPUExecutionProvider"]
        )
    except Exception as exc:
        raise VerificationError(f"could not load {model_path}: {exc}") from exc

    for text in PROBE_TEXTS:
        expected, ids, _ = encoder.embed_with_meta(text)
        feeds = {
            "input_ids": np.asarray([ids], dtype=np.int64),
            "attention_mask": np.ones((1, len(ids)), dtype=np.int64),
        }
        (raw,) = session.run(["text_embeds"], feeds)
        got = np.asarray(raw[0], dtype=np.float64)
        norm = float(np.linalg.norm(got))
        if norm == 0.0:
            raise VerificationError(f"exported graph emitted a zero vector for {text!r}")
        cosine = float(np.dot(expected, got / norm))
        if cosine < 1.0 - tolerance:
            raise VerificationError(
                f"embedding mismatch for {text!r}: cosine {cosine:.8f} "
                f"below 1 - {tolerance}"
            )
