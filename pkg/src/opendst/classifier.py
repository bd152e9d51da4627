"""Per-turn multi-label domain classification.

Each user turn is classified independently against the schema's domain
inventory, given the dialogue history for context. The prediction is the
set of domains the user is asking service for in that specific turn, which
is empty for chit-chat and closing turns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .core import Schema, Speaker, Turn
from .gateway import (
    Backend,
    JsonArray,
    PromptSpec,
    RequestLedger,
    RetryPolicy,
    SamplingParams,
    UnparseableResponse,
    complete_structured,
    default_sampling,
    repair_json,
)
from .prompts import PromptLibrary

log = logging.getLogger(__name__)

STAGE = "domain-classification"


@dataclass(frozen=True)
class TurnDomainPrediction:
    turn_index: int
    domains: frozenset[str]
    via_fallback: bool = False


def render_history(turns: Sequence[Turn], max_chars: int | None = None) -> str:
    """Dialogue lines in speaker-prefixed form. When over budget, whole
    oldest user/system pairs are dropped, never partial ones."""
    lines = [f"{'USER' if t.speaker is Speaker.USER else 'SYSTEM'}: {t.utterance}" for t in turns]
    if max_chars is None:
        return "\n".join(lines)
    text = "\n".join(lines)
    start = 0
    while len(text) > max_chars and start + 2 < len(lines):
        start += 2
        text = "\n".join(lines[start:])
    return text


def _interpret_domains(value, schema: Schema) -> frozenset[str]:
    if value is None:
        return frozenset()
    if isinstance(value, str):
        if value.strip().lower() in ("none", ""):
            return frozenset()
        value = [part.strip() for part in value.split(",")]
    if not isinstance(value, list):
        raise ValueError(f"domains value has unusable type {type(value).__name__}")
    picked = set()
    for item in value:
        if not isinstance(item, str):
            continue
        name = item.strip().lower()
        if not name or name == "none":
            continue
        if name in schema.domains:
            picked.add(name)
        else:
            log.debug("dropping unknown predicted domain %r", name)
    return frozenset(picked)


def parse_domain_response(raw: str, schema: Schema) -> frozenset[str]:
    """Interpret a raw classification reply. Accepts the documented JSON
    array form plus the model drift seen in practice (bare list, bare
    "None", comma-joined string); unknown domains are dropped."""
    try:
        payload = repair_json(raw)
    except ValueError as exc:
        if raw.strip().lower() in ("none", ""):
            return frozenset()
        raise UnparseableResponse(f"domain reply is not JSON: {exc}", raw=raw) from exc
    if isinstance(payload, dict):
        for key, value in payload.items():
            if isinstance(key, str) and key.lower() == "domains":
                break
        else:
            raise UnparseableResponse("domain reply lacks 'domains' key", raw=raw)
    else:
        value = payload
    try:
        return _interpret_domains(value, schema)
    except ValueError as exc:
        raise UnparseableResponse(str(exc), raw=raw) from exc


def build_classification_prompt(
    turn: Turn,
    history: Sequence[Turn],
    schema: Schema,
    library: PromptLibrary,
    params: SamplingParams,
    max_history_chars: int | None = None,
) -> PromptSpec:
    template = library.domain_classification()
    rendered = template.render({"domains": ", ".join(sorted(schema.domains))})
    dialogue = render_history([*history, turn], max_chars=max_history_chars)
    text = f"{rendered}\n\nDialogue turns:\n{dialogue}"
    return PromptSpec(text=text, params=params, shape=JsonArray("domains"), stage=STAGE)


def classify_turn(
    turn: Turn,
    history: Sequence[Turn],
    schema: Schema,
    backend: Backend,
    *,
    library: PromptLibrary,
    ledger: RequestLedger | None = None,
    params: SamplingParams | None = None,
    previous: TurnDomainPrediction | None = None,
    retry: RetryPolicy | None = None,
    audit=None,
    max_history_chars: int | None = None,
) -> TurnDomainPrediction:
    """Classify one user turn. An unparseable reply falls back to the
    previous user turn's prediction (empty set at the dialogue start)."""
    if params is None:
        params = default_sampling(backend.name, STAGE)
    spec = build_classification_prompt(turn, history, schema, library, params, max_history_chars)
    try:
        value = complete_structured(spec, backend, ledger, retry, audit)
        domains = _interpret_domains(value, schema)
    except (UnparseableResponse, ValueError) as exc:
        fallback = previous.domains if previous is not None else frozenset()
        log.warning("turn %d: unusable domain reply (%s), falling back to %s", turn.index, exc, sorted(fallback))
        return TurnDomainPrediction(turn_index=turn.index, domains=fallback, via_fallback=True)
    return TurnDomainPrediction(turn_index=turn.index, domains=domains)
