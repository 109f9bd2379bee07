"""Configuration schema and wiring.

All knobs live in one flat dotted-key schema. A YAML file supplies nested
sections (``pipeline:``, ``provider:``, ...); ``--set key=value`` overrides
individual keys; convenience flags map onto the same keys. Builders below
turn a resolved mapping into the concrete pipeline/provider/backend objects.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .embedding import EmbeddingBackend, make_backend
from .errors import ConfigError, ProviderError
from .gateway import CacheStore, GenerationParams, LmmGateway, ProviderConfig
from .labels import PromptTemplate
from .pipeline import (
    DEFAULT_STAGE1_MODEL,
    DEFAULT_STAGE1_PROMPT,
    DEFAULT_STAGE2_MODEL,
    MODES,
    REFUSAL_POLICIES,
    PipelineConfig,
)


@dataclass(frozen=True)
class ConfigKey:
    key: str
    value_type: str
    default: object
    help: str
    choices: tuple[str, ...] | None = None


_KEYS = [
    ConfigKey("pipeline.mode", "str", "tlac", "classification mode", MODES),
    ConfigKey("pipeline.stage1_model_id", "str", DEFAULT_STAGE1_MODEL,
              "model queried for the image description"),
    ConfigKey("pipeline.stage2_model_id", "str", DEFAULT_STAGE2_MODEL,
              "model queried for the two-stage refinement"),
    ConfigKey("pipeline.stage1_prompt", "str", DEFAULT_STAGE1_PROMPT,
              "stage-1 prompt text"),
    ConfigKey("pipeline.include_classes_in_stage1", "bool", False,
              "append the class list to the stage-1 prompt"),
    ConfigKey("pipeline.label_template", "str", "{}",
              "template applied to labels before embedding; must contain one {}"),
    ConfigKey("pipeline.refusal_policy", "str", "count-wrong",
              "how provider refusals are scored", REFUSAL_POLICIES),
    ConfigKey("pipeline.stage2_send_image", "bool", False,
              "re-send the image with the stage-2 prompt"),
    ConfigKey("pipeline.temperature", "float", 0.0, "sampling temperature"),
    ConfigKey("pipeline.max_output_tokens", "int", 256, "answer length cap"),
    ConfigKey("pipeline.jobs", "int", 4, "classification worker pool size"),
    ConfigKey("backend.kind", "str", "reference-hash", "embedding backend kind",
              ("reference-hash", "model-file")),
    ConfigKey("backend.dim", "int", 256, "reference-hash embedding dimension (>= 8)"),
    ConfigKey("backend.model_path", "str", "", "model file path (model-file backend)"),
    ConfigKey("backend.vocab_path", "str", "", "tokenizer vocabulary path (model-file backend)"),
    ConfigKey("backend.merges_path", "str", "", "tokenizer merges path (model-file backend)"),
    ConfigKey("backend.context_window", "int", 77, "token context window (model-file backend)"),
    ConfigKey("provider.kind", "str", "replay-fixture", "LMM provider kind",
              ("live-api", "replay-fixture")),
    ConfigKey("provider.endpoint", "str", "https://generativelanguage.googleapis.com",
              "live API base URL"),
    ConfigKey("provider.credential_ref", "str", "GEMINI_API_KEY",
              "environment variable holding the API credential"),
    ConfigKey("provider.fixture_path", "str", "", "exchange fixture file (replay provider)"),
    ConfigKey("provider.adapter", "str", "gemini", "request/response adapter name"),
    ConfigKey("provider.rate_limit_rps", "float", 1.0, "live request admission rate"),
    ConfigKey("provider.max_retries", "int", 3, "retries after the initial attempt"),
    ConfigKey("provider.backoff_base_ms", "int", 250, "base retry backoff in milliseconds"),
    ConfigKey("provider.max_inflight", "int", 4, "concurrent in-flight request cap"),
    ConfigKey("cache.dir", "str", "", "exchange cache directory; empty disables caching"),
    ConfigKey("run.seed", "int", 0, "seed for retry jitter randomness"),
]

CONFIG_SCHEMA: dict[str, ConfigKey] = {k.key: k for k in _KEYS}


def parse_value(schema: ConfigKey, raw) -> object:
    """Coerce a raw file/flag value to the key's declared type."""
    try:
        if schema.value_type == "bool":
            if isinstance(raw, bool):
                value = raw
            elif str(raw).strip().lower() in ("true", "1", "yes", "on"):
                value = True
            elif str(raw).strip().lower() in ("false", "0", "no", "off"):
                value = False
            else:
                raise ValueError(f"not a boolean: {raw!r}")
        elif schema.value_type == "int":
            value = int(raw)
        elif schema.value_type == "float":
            value = float(raw)
        else:
            value = str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{schema.key}: expected {schema.value_type}, got {raw!r}") from exc
    if schema.choices and value not in schema.choices:
        raise ConfigError(
            f"{schema.key}: must be one of {', '.join(schema.choices)}, got {value!r}"
        )
    return value


def _flatten(prefix: str, node, out: dict) -> None:
    if isinstance(node, dict):
        for key, value in node.items():
            _flatten(f"{prefix}.{key}" if prefix else str(key), value, out)
    else:
        out[prefix] = node


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    flat: dict = {}
    _flatten("", data, flat)
    return flat


def resolve_config(
    config_path: str | Path | None = None, overrides: Sequence[str] = ()
) -> dict:
    """Defaults, then file values, then --set overrides; unknown keys fail."""
    resolved = {k.key: k.default for k in CONFIG_SCHEMA.values()}
    if config_path is not None:
        for key, value in load_config_file(config_path).items():
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"{config_path}: unknown config key {key!r}")
            resolved[key] = parse_value(CONFIG_SCHEMA[key], value)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key = key.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        resolved[key] = parse_value(CONFIG_SCHEMA[key], value)
    return resolved


def schema_help_lines() -> list[str]:
    lines = []
    for schema in CONFIG_SCHEMA.values():
        choice = f" one of {'|'.join(schema.choices)};" if schema.choices else ""
        lines.append(
            f"  {schema.key} ({schema.value_type}, default {schema.default!r}):{choice} {schema.help}"
        )
    return lines


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def backend_descriptor(cfg: Mapping) -> dict:
    kind = cfg["backend.kind"]
    if kind == "reference-hash":
        return {"kind": kind, "dim": cfg["backend.dim"]}
    return {
        "kind": kind,
        "model_path": cfg["backend.model_path"],
        "vocab_path": cfg["backend.vocab_path"],
        "merges_path": cfg["backend.merges_path"],
        "context_window": cfg["backend.context_window"],
    }


def build_backend(cfg: Mapping) -> EmbeddingBackend | None:
    """The configured embedding backend; None for the lmm-only ablation."""
    if cfg["pipeline.mode"] == "lmm-only":
        return None
    return make_backend(backend_descriptor(cfg))


def build_pipeline_config(cfg: Mapping) -> PipelineConfig:
    return PipelineConfig(
        mode=cfg["pipeline.mode"],
        stage1_model_id=cfg["pipeline.stage1_model_id"],
        stage2_model_id=cfg["pipeline.stage2_model_id"],
        stage1_prompt=cfg["pipeline.stage1_prompt"],
        include_classes_in_stage1=cfg["pipeline.include_classes_in_stage1"],
        label_template=PromptTemplate("label-template", cfg["pipeline.label_template"]),
        refusal_policy=cfg["pipeline.refusal_policy"],
        stage2_send_image=cfg["pipeline.stage2_send_image"],
        generation=GenerationParams(
            temperature=cfg["pipeline.temperature"],
            max_output_tokens=cfg["pipeline.max_output_tokens"],
        ),
        jobs=cfg["pipeline.jobs"],
        backend_descriptor=backend_descriptor(cfg),
    )


def build_provider_config(cfg: Mapping) -> ProviderConfig:
    return ProviderConfig(
        kind=cfg["provider.kind"],
        endpoint=cfg["provider.endpoint"] or None,
        credential_ref=cfg["provider.credential_ref"] or None,
        fixture_path=cfg["provider.fixture_path"] or None,
        rate_limit_rps=cfg["provider.rate_limit_rps"],
        max_retries=cfg["provider.max_retries"],
        backoff_base_ms=cfg["provider.backoff_base_ms"],
        adapter=cfg["provider.adapter"],
    )


def build_gateway(cfg: Mapping) -> LmmGateway:
    provider = build_provider_config(cfg)
    if provider.kind == "live-api" and os.environ.get("NO_NETWORK") == "1":
        raise ProviderError("NO_NETWORK=1 forces replay-only; live provider is disabled")
    cache = CacheStore(cfg["cache.dir"]) if cfg["cache.dir"] else None
    return LmmGateway(
        provider,
        cache=cache,
        seed=cfg["run.seed"],
        max_inflight=cfg["provider.max_inflight"],
    )
