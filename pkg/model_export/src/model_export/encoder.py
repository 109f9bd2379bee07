"""Text encoders the export tool can operate on.

Two sources: a published checkpoint (pulled from the model hub, the normal
case) and ``test-encoder``, a tiny deterministically seeded model used to
exercise the full export path offline. Both present the same surface: a
projection-head text model plus the BPE vocabulary it was tokenized with.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .bpe import DEFAULT_CONTEXT_WINDOW, BpeEncoder
from .errors import ExportError, WeightsError
from .vocabgen import TEST_MERGES, test_vocab, write_tokenizer_files

TEST_ENCODER_SOURCE = "test-encoder"
REFERENCE_ENCODER_SOURCE = "openai/clip-vit-base-patch16"


class TextEncoder:
    def __init__(
        self,
        encoder_id: str,
        model: torch.nn.Module,
        bpe: BpeEncoder,
        vocab: dict[str, int],
        merges: list[str],
        context_window: int = DEFAULT_CONTEXT_WINDOW,
    ):
        self.encoder_id = encoder_id
        self.model = model.eval()
        self.bpe = bpe
        self.vocab = vocab
        self.merges = merges
        self.context_window = context_window
        self.dim = int(model.config.projection_dim)

    def encode_ids(self, text: str) -> tuple[list[int], bool]:
        return self.bpe.encode_for_model(text, self.context_window)

    def _raw_embed(self, ids: list[int]) -> np.ndarray:
        input_ids = torch.tensor([ids], dtype=torch.long)
        attention_mask = torch.ones_like(input_ids)
        with torch.no_grad():
            out = self.model(input_ids=input_ids, attention_mask=attention_mask)
        return np.asarray(out.text_embeds[0], dtype=np.float64)

    def embed_with_meta(self, text: str) -> tuple[np.ndarray, list[int], bool]:
        """Unit-norm embedding plus the token ids and truncation flag."""
        ids, truncated = self.encode_ids(text)
        raw = self._raw_embed(ids)
        norm = float(np.linalg.norm(raw))
        if norm == 0.0:
            raise ExportError(f"encoder produced a zero vector for {text!r}")
        return raw / norm, ids, truncated

    def embed(self, text: str) -> np.ndarray:
        return self.embed_with_meta(text)[0]

    def write_tokenizer_files(self, out_dir: str | Path) -> tuple[Path, Path]:
        return write_tokenizer_files(self.vocab, self.merges, out_dir)


def _build_test_encoder(seed: int) -> TextEncoder:
    from transformers import CLIPTextConfig, CLIPTextModelWithProjection

    vocab = test_vocab()
    config = CLIPTextConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        intermediate_size=64,
        num_hidden_layers=2,
        num_attention_heads=4,
        projection_dim=16,
        max_position_embeddings=DEFAULT_CONTEXT_WINDOW,
        bos_token_id=vocab["<|startoftext|>"],
        eos_token_id=vocab["<|endoftext|>"],
    )
    torch.manual_seed(seed)
    model = CLIPTextModelWithProjection(config)
    merges = list(TEST_MERGES)
    bpe = BpeEncoder(vocab, [tuple(m.split(" ", 1)) for m in merges])
    return TextEncoder(
        encoder_id=f"test-clip-tiny-seed{seed}",
        model=model,
        bpe=bpe,
        vocab=vocab,
        merges=merges,
    )


def _load_published_encoder(source: str) -> TextEncoder:
    from transformers import CLIPTextModelWithProjection

    try:
        from huggingface_hub import hf_hub_download

        vocab_path = hf_hub_download(repo_id=source, filename="vocab.json")
        merges_path = hf_hub_download(repo_id=source, filename="merges.txt")
        model = CLIPTextModelWithProjection.from_pretrained(source)
    except Exception as exc:
        raise WeightsError(
            f"could not obtain encoder weights for {source!r}: {exc}"
        ) from exc
    vocab = json.loads(Path(vocab_path).read_text(encoding="utf-8"))
    merge_lines = [
        line
        for line in Path(merges_path).read_text(encoding="utf-8").splitlines()
        if line.strip() and not line.startswith("#version")
    ]
    bpe = BpeEncoder(vocab, [tuple(m.split(" ", 1)) for m in merge_lines])
    return TextEncoder(
        encoder_id=source, model=model, bpe=bpe, vocab=vocab, merges=merge_lines
    )


def load_encoder(source: str = TEST_ENCODER_SOURCE, seed: int = 0) -> TextEncoder:
    if source == TEST_ENCODER_SOURCE:
        return _build_test_encoder(seed)
    return _load_published_encoder(source)
