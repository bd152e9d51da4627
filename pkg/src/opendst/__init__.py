"""Zero-shot dialogue state tracking with a pluggable LLM gateway.

The package tracks per-turn dialogue state over a fixed slot schema
without task-specific training: each user turn is classified into
active domains, then slot values are extracted either through entity
grounded multiple-choice questions or through one structured tracking
prompt per active domain.
"""

from __future__ import annotations

from .budget import QaTraceCounts, Strategy, StrategyCount, comparison_rows, count_requests, reduction_percent
from .classifier import TurnDomainPrediction, classify_turn
from .core import (
    DONTCARE,
    EMPTY_STATE,
    REQUESTED,
    Dialogue,
    DialogueState,
    EntityType,
    Schema,
    SlotSpec,
    SlotValue,
    Speaker,
    Turn,
    UnknownSlot,
    ValueKind,
    apply_turn_update,
    cumulative_domains,
    informed,
    normalize_slot_value,
    normalize_time,
    normalize_value,
    state_diff,
)
from .datasets import (
    Corpus,
    CorpusStats,
    FormatError,
    MissingGold,
    SchemaMismatch,
    corpus_stats,
    dump_corpus,
    load_corpus_dump,
    load_multiwoz,
    load_sgd,
    multiwoz_schema,
    sgd_schema,
)
from .evaluator import EvalReport, aga, build_report, domain_accuracy, jga, states_match, values_match
from .gateway import (
    ABSENT,
    BackendRefusal,
    FreeText,
    GatewayError,
    JsonArray,
    JsonObject,
    MockBackend,
    OpenAIChatBackend,
    PromptSpec,
    RateLimited,
    RequestLedger,
    RetryPolicy,
    SamplingParams,
    TransportError,
    UnparseableResponse,
    complete,
    complete_structured,
    default_sampling,
    register_mock,
    repair_json,
)
from .goldmock import GoldScriptedBackend
from .pipeline import RunConfig, load_config, run_pipeline, score_predictions
from .prompts import MissingAsset, PromptAsset, PromptLibrary, PromptStage, load_assets
from .qa import McqQuestion, build_mcq, cross_reference_values, extract_entities, qa_track_turn
from .refinery import RefinementTrace, RefusalLoop, StopReason, refine_prompt, should_stop
from .similarity import FUZZY_THRESHOLD, fuzzy_match, levenshtein, normalized_similarity
from .srp import MissingOntology, build_srp_prompt, parse_srp_response, srp_track_turn

__version__ = "0.1.0"

__all__ = [
    "ABSENT",
    "BackendRefusal",
    "Corpus",
    "CorpusStats",
    "DONTCARE",
    "Dialogue",
    "DialogueState",
    "EMPTY_STATE",
    "EntityType",
    "EvalReport",
    "FormatError",
    "FreeText",
    "FUZZY_THRESHOLD",
    "GatewayError",
    "GoldScriptedBackend",
    "JsonArray",
    "JsonObject",
    "McqQuestion",
    "MissingAsset",
    "MissingGold",
    "MissingOntology",
    "MockBackend",
    "OpenAIChatBackend",
    "PromptAsset",
    "PromptLibrary",
    "PromptSpec",
    "PromptStage",
    "QaTraceCounts",
    "RateLimited",
    "RefinementTrace",
    "RefusalLoop",
    "RequestLedger",
    "REQUESTED",
    "RetryPolicy",
    "RunConfig",
    "SamplingParams",
    "Schema",
    "SchemaMismatch",
    "SlotSpec",
    "SlotValue",
    "Speaker",
    "StopReason",
    "Strategy",
    "StrategyCount",
    "TransportError",
    "Turn",
    "TurnDomainPrediction",
    "UnknownSlot",
    "UnparseableResponse",
    "ValueKind",
    "aga",
    "apply_turn_update",
    "build_mcq",
    "build_report",
    "build_srp_prompt",
    "classify_turn",
    "comparison_rows",
    "complete",
    "complete_structured",
    "corpus_stats",
    "count_requests",
    "cross_reference_values",
    "cumulative_domains",
    "default_sampling",
    "domain_accuracy",
    "dump_corpus",
    "extract_entities",
    "fuzzy_match",
    "informed",
    "jga",
    "levenshtein",
    "load_assets",
    "load_config",
    "load_corpus_dump",
    "load_multiwoz",
    "load_sgd",
    "multiwoz_schema",
    "normalize_slot_value",
    "normalize_time",
    "normalize_value",
    "normalized_similarity",
    "parse_srp_response",
    "qa_track_turn",
    "reduction_percent",
    "refine_prompt",
    "register_mock",
    "repair_json",
    "run_pipeline",
    "score_predictions",
    "sgd_schema",
    "should_stop",
    "srp_track_turn",
    "state_diff",
    "states_match",
    "values_match",
]
