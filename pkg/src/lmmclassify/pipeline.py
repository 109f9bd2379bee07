"""Single-stage and two-stage classification over an LMM plus text embeddings.

Three modes share one shape, (Prediction, StageTrace):

* ``slac``: one describe-the-image exchange, then similarity argmax over the
  candidate labels.
* ``tlac``: a second text-only exchange asks the model to map its own
  stage-1 answer onto the class list before the similarity match.
* ``lmm-only``: ablation with no embedding step; the answer must equal a
  label verbatim (after canonicalization) to count.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .embedding import EmbeddingBackend, Prediction, classify_by_similarity
from .errors import ConfigError, EmptyTextError, SafetyRefusalError
from .gateway import GenerationParams, LmmExchange, LmmGateway, LmmRequest
from .labels import IDENTITY_TEMPLATE, ClassLabelSet, PromptTemplate, canonicalize

logger = logging.getLogger(__name__)

MODES = ("slac", "tlac", "lmm-only")
REFUSAL_POLICIES = ("count-wrong", "retry-once-then-wrong")

MATCHED_BY_SIMILARITY = "similarity-argmax"
MATCHED_BY_EXACT = "exact-string"
MATCHED_BY_REFUSAL = "refusal-fallback"

DEFAULT_STAGE1_PROMPT = "Which object is present in the image? Also tell its attribute."
DEFAULT_STAGE1_MODEL = "gemini-1.5-pro-002"
DEFAULT_STAGE2_MODEL = "gemini-1.5-flash-002"

_CLASS_SUFFIX_LEAD = "\n\nChoose from the following classes: "


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "tlac"
    stage1_model_id: str = DEFAULT_STAGE1_MODEL
    stage2_model_id: str = DEFAULT_STAGE2_MODEL
    stage1_prompt: str = DEFAULT_STAGE1_PROMPT
    include_classes_in_stage1: bool = False
    label_template: PromptTemplate = IDENTITY_TEMPLATE
    refusal_policy: str = "count-wrong"
    stage2_send_image: bool = False
    generation: GenerationParams = field(default_factory=GenerationParams)
    jobs: int = 4
    backend_descriptor: Mapping | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.stage1_prompt:
            raise ConfigError("stage1_prompt must be non-empty")
        if self.mode == "tlac" and not self.stage2_model_id:
            raise ConfigError("tlac mode requires stage2_model_id")
        if self.refusal_policy not in REFUSAL_POLICIES:
            raise ConfigError(
                f"refusal_policy must be one of {REFUSAL_POLICIES}, got {self.refusal_policy!r}"
            )
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")


@dataclass(frozen=True)
class StageTrace:
    """Per-image audit record: the raw exchanges and how the label was picked.

    stage2_exchange is populated only by a completed tlac stage 2;
    stage1_exchange is absent only when the provider refused stage 1.
    fallback_reason says why a fallback path produced the prediction.
    """

    stage1_exchange: LmmExchange | None
    stage2_exchange: LmmExchange | None
    matched_by: str
    fallback_reason: str | None = None


def build_stage1_prompt(config: PipelineConfig, class_set: ClassLabelSet) -> str:
    """Stage-1 prompt, optionally suffixed with the candidate class list."""
    if not config.include_classes_in_stage1:
        return config.stage1_prompt
    return config.stage1_prompt + _CLASS_SUFFIX_LEAD + ", ".join(class_set.canonical_texts())


def build_stage2_prompt(stage1_answer: str, class_set: ClassLabelSet) -> str:
    """Refinement prompt: map the stage-1 identification onto the class list."""
    if not stage1_answer:
        raise ConfigError("stage1_answer must be non-empty")
    return (
        f"You previously identified: {stage1_answer}\n"
        "From the following list of classes, answer with the single class most "
        "relevant to that identification. Reply with the class name only.\n"
        f"Classes: {', '.join(class_set.canonical_texts())}"
    )


def _refusal_prediction(reason: str) -> tuple[Prediction, StageTrace]:
    prediction = Prediction(
        predicted_label=None, score=None, scores=(), stage_trace=(), outcome="refusal"
    )
    trace = StageTrace(
        stage1_exchange=None,
        stage2_exchange=None,
        matched_by=MATCHED_BY_REFUSAL,
        fallback_reason=reason,
    )
    return prediction, trace


def _query_with_policy(
    gateway: LmmGateway, request: LmmRequest, policy: str
) -> LmmExchange | None:
    """Run one exchange; None means the provider refused under this policy.

    Refusals are never written to the cache store, so the retry path
    always reaches the provider again.
    """
    try:
        return gateway.query_cached(request)
    except SafetyRefusalError:
        if policy != "retry-once-then-wrong":
            return None
        logger.info("provider refused; retrying once (policy %s)", policy)
        try:
            return gateway.query_cached(request)
        except SafetyRefusalError:
            return None


def _stage1_request(
    image_ref: str | Path, config: PipelineConfig, class_set: ClassLabelSet
) -> LmmRequest:
    return LmmRequest.for_image(
        model_id=config.stage1_model_id,
        prompt_text=build_stage1_prompt(config, class_set),
        image_path=image_ref,
        generation_params=config.generation,
    )


def slac_classify(
    image_ref: str | Path,
    class_set: ClassLabelSet,
    config: PipelineConfig,
    gateway: LmmGateway,
    backend: EmbeddingBackend,
) -> tuple[Prediction, StageTrace]:
    """One describe-the-image exchange, then similarity argmax."""
    if config.mode != "slac":
        raise ConfigError(f"slac_classify requires mode slac, got {config.mode!r}")
    exchange = _query_with_policy(gateway, _stage1_request(image_ref, config, class_set),
                                  config.refusal_policy)
    if exchange is None:
        return _refusal_prediction("stage1-refusal")
    prediction = classify_by_similarity(
        exchange.answer_text, class_set, backend, config.label_template
    )
    trace = StageTrace(
        stage1_exchange=exchange, stage2_exchange=None, matched_by=MATCHED_BY_SIMILARITY
    )
    return prediction, trace


def tlac_classify(
    image_ref: str | Path,
    class_set: ClassLabelSet,
    config: PipelineConfig,
    gateway: LmmGateway,
    backend: EmbeddingBackend,
) -> tuple[Prediction, StageTrace]:
    """Stage 1 as in slac, then a refinement exchange against the class list.

    A stage-2 refusal falls back to the stage-1 similarity prediction; the
    trace flags the fallback and the prediction is scored normally.
    """
    if config.mode != "tlac":
        raise ConfigError(f"tlac_classify requires mode tlac, got {config.mode!r}")
    stage1 = _query_with_policy(gateway, _stage1_request(image_ref, config, class_set),
                                config.refusal_policy)
    if stage1 is None:
        return _refusal_prediction("stage1-refusal")

    stage2_prompt = build_stage2_prompt(stage1.answer_text, class_set)
    if config.stage2_send_image:
        stage2_request = LmmRequest.for_image(
            model_id=config.stage2_model_id,
            prompt_text=stage2_prompt,
            image_path=image_ref,
            generation_params=config.generation,
        )
    else:
        stage2_request = LmmRequest.text_only(
            model_id=config.stage2_model_id,
            prompt_text=stage2_prompt,
            generation_params=config.generation,
        )
    stage2 = _query_with_policy(gateway, stage2_request, config.refusal_policy)
    if stage2 is None:
        prediction = classify_by_similarity(
            stage1.answer_text, class_set, backend, config.label_template
        )
        trace = StageTrace(
            stage1_exchange=stage1,
            stage2_exchange=None,
            matched_by=MATCHED_BY_REFUSAL,
            fallback_reason="stage2-refusal",
        )
        return prediction, trace

    prediction = classify_by_similarity(
        stage2.answer_text, class_set, backend, config.label_template
    )
    prediction = dataclasses.replace(
        prediction, stage_trace=(stage1.answer_text, stage2.answer_text)
    )
    trace = StageTrace(
        stage1_exchange=stage1, stage2_exchange=stage2, matched_by=MATCHED_BY_SIMILARITY
    )
    return prediction, trace


def lmm_only_classify(
    image_ref: str | Path,
    class_set: ClassLabelSet,
    config: PipelineConfig,
    gateway: LmmGateway,
) -> tuple[Prediction, StageTrace]:
    """Ablation without the embedding step: exact canonical-string matching.

    The class list is always included in the prompt (the model cannot name
    an unseen label otherwise). A non-matching answer is the reserved
    no-match outcome, never a substitute label.
    """
    if config.mode != "lmm-only":
        raise ConfigError(f"lmm_only_classify requires mode lmm-only, got {config.mode!r}")
    with_classes = dataclasses.replace(config, include_classes_in_stage1=True)
    exchange = _query_with_policy(
        gateway, _stage1_request(image_ref, with_classes, class_set), config.refusal_policy
    )
    if exchange is None:
        return _refusal_prediction("stage1-refusal")
    try:
        canonical = canonicalize(exchange.answer_text)
    except EmptyTextError:
        canonical = None
    label = class_set.find(canonical) if canonical else None
    if label is None:
        prediction = Prediction(
            predicted_label=None,
            score=None,
            scores=(),
            stage_trace=(exchange.answer_text,),
            outcome="no-match",
        )
    else:
        prediction = Prediction(
            predicted_label=label,
            score=1.0,
            scores=(),
            stage_trace=(exchange.answer_text,),
            outcome="label",
        )
    trace = StageTrace(
        stage1_exchange=exchange, stage2_exchange=None, matched_by=MATCHED_BY_EXACT
    )
    return prediction, trace


def classify_image(
    image_ref: str | Path,
    class_set: ClassLabelSet,
    config: PipelineConfig,
    gateway: LmmGateway,
    backend: EmbeddingBackend | None,
) -> tuple[Prediction, StageTrace]:
    """Dispatch on config.mode; the single entry point used by eval and CLI."""
    if config.mode == "slac":
        if backend is None:
            raise ConfigError("slac mode requires an embedding backend")
        return slac_classify(image_ref, class_set, config, gateway, backend)
    if config.mode == "tlac":
        if backend is None:
            raise ConfigError("tlac mode requires an embedding backend")
        return tlac_classify(image_ref, class_set, config, gateway, backend)
    return lmm_only_classify(image_ref, class_set, config, gateway)
