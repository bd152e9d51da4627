"""State tracking with one structured prompt per active domain.

Each request carries the domain's full slot inventory (optionally with
ontology value lists), the dialogue so far, and model-specific instructions.
The reply is a JSON object of slot values for that domain; "?" marks a slot
the user asked about and "*" marks an explicit no-preference.
"""

from __future__ import annotations

import logging
from typing import Iterable, Mapping, Sequence

from .classifier import render_history
from .core import (
    DONTCARE,
    REQUESTED,
    DialogueState,
    Schema,
    SlotValue,
    Turn,
    informed,
    normalize_slot_value,
)
from .gateway import (
    ABSENT,
    Backend,
    JsonObject,
    PromptSpec,
    RequestLedger,
    RetryPolicy,
    SamplingParams,
    UnparseableResponse,
    complete_structured,
    default_sampling,
    extract_shape,
    repair_json,
)
from .prompts import PromptLibrary

log = logging.getLogger(__name__)

STAGE = "srp-tracking"

_ABSENT_VALUES = {"", "none", "null", "not mentioned", "unknown", "not given"}
_DONTCARE_VALUES = {"*", "dontcare", "dont care", "don't care", "no preference"}


class MissingOntology(ValueError):
    """Ontology-augmented prompts were requested but the schema carries no
    value lists for the domain."""


def render_slot_lines(schema: Schema, domain: str, with_ontology: bool = False) -> str:
    lines = []
    for spec in schema.domain_slots(domain):
        line = f"- {spec.name}: {spec.description}"
        if with_ontology and spec.values is not None:
            line += f" (possible values: [{', '.join(spec.values)}])"
        lines.append(line)
    return "\n".join(lines)


def _known_values_block(prior_state: DialogueState, domain: str) -> str:
    lines = [
        f"- {key}: {value.text}"
        for key, value in sorted(prior_state.entries.items())
        if value.is_informed and key.partition(".")[0] != domain
    ]
    if not lines:
        return ""
    return "Known values from other domains:\n" + "\n".join(lines)


_FOCUS_LINE = (
    "Track only the new or changed slot values from the last pair of turns above; earlier turns are context."
)


def build_srp_prompt(
    domain: str,
    schema: Schema,
    model_key: str,
    dialogue_text: str,
    *,
    library: PromptLibrary,
    params: SamplingParams | None = None,
    with_ontology: bool = False,
    prior_state: DialogueState | None = None,
) -> PromptSpec:
    """Assemble the tracking request for one domain.

    The template is the model-tuned asset verbatim; dialogue, slot
    inventory, the carry-over value block and the last-pair focus line are
    attached around it at request time.
    """
    if domain not in schema.domains:
        raise KeyError(domain)
    if with_ontology and all(s.values is None for s in schema.domain_slots(domain)):
        raise MissingOntology(f"domain {domain!r} has no ontology value lists")
    if params is None:
        params = default_sampling(model_key, STAGE)
    asset = library.srp(model_key)
    names = [s.name for s in schema.domain_slots(domain)]
    slot_lines = render_slot_lines(schema, domain, with_ontology)
    bindings = {"slots": slot_lines, "domain": domain}
    if "slotsnames" in asset.placeholders:
        bindings["slotsnames"] = ", ".join(names)
    rendered = asset.render(bindings)

    parts = [rendered, f"Dialogue turns:\n{dialogue_text}"]
    if prior_state is not None and asset.model_key == "llama-3":
        block = _known_values_block(prior_state, domain)
        if block:
            parts.append(block)
    parts.append(_FOCUS_LINE)
    return PromptSpec(text="\n\n".join(parts), params=params, shape=JsonObject(tuple(names)), stage=STAGE)


def _resolution_map(expected_slots: Iterable[str]) -> dict[str, str]:
    table: dict[str, str] = {}
    for key in expected_slots:
        domain, _, name = key.partition(".")
        for alias in (key, key.replace(".", "-"), name, f"{domain} {name}"):
            table.setdefault(alias.lower(), key)
    return table


def _coerce_value(raw, slot_key: str, schema: Schema | None) -> SlotValue | None:
    if raw is ABSENT or raw is None:
        return None
    if isinstance(raw, list):
        raw = raw[0] if raw else None
        if raw is None:
            return None
    if isinstance(raw, bool):
        raw = "true" if raw else "false"
    if isinstance(raw, (int, float)):
        raw = str(raw)
    if not isinstance(raw, str):
        log.debug("%s: dropping value of type %s", slot_key, type(raw).__name__)
        return None
    stripped = raw.strip()
    if stripped == "?":
        return REQUESTED
    if stripped.lower() in _DONTCARE_VALUES:
        return DONTCARE
    etype = None
    if schema is not None and schema.has_slot(slot_key):
        etype = schema.slot_spec(slot_key).entity_type
    normalized = normalize_slot_value(stripped, etype)
    if normalized in _ABSENT_VALUES:
        return None
    if normalized in _DONTCARE_VALUES:
        return DONTCARE
    return informed(normalized)


def _interpret_payload(
    payload: Mapping,
    expected_slots: Iterable[str],
    schema: Schema | None,
) -> DialogueState:
    table = _resolution_map(expected_slots)
    entries: dict[str, SlotValue] = {}
    for key, raw in payload.items():
        if not isinstance(key, str):
            continue
        resolved = table.get(key.strip().lower().replace("_", "-").replace(" ", "-")) or table.get(key.strip().lower())
        if resolved is None:
            log.debug("dropping reply key %r: not an expected slot", key)
            continue
        value = _coerce_value(raw, resolved, schema)
        if value is not None:
            entries[resolved] = value
    return DialogueState(entries)


def parse_srp_response(
    raw: str,
    expected_slots: Iterable[str],
    schema: Schema | None = None,
) -> DialogueState:
    """Interpret one raw tracking reply as a per-turn delta for the expected
    slots. Raises UnparseableResponse when no JSON object can be recovered."""
    expected = list(expected_slots)
    names = tuple(k.partition(".")[2] or k for k in expected)
    try:
        payload = extract_shape(repair_json(raw), JsonObject(names))
    except ValueError as exc:
        raise UnparseableResponse(f"tracking reply is not a JSON object: {exc}", raw=raw) from exc
    return _interpret_payload(payload, expected, schema)


def srp_track_turn(
    turn: Turn,
    history: Sequence[Turn],
    active_domains: Iterable[str],
    prior_state: DialogueState,
    schema: Schema,
    backend: Backend,
    *,
    library: PromptLibrary,
    model_key: str | None = None,
    ledger: RequestLedger | None = None,
    params: SamplingParams | None = None,
    with_ontology: bool = False,
    retry: RetryPolicy | None = None,
    audit=None,
    max_history_chars: int | None = None,
) -> DialogueState:
    """Track one user turn: exactly one request per active domain. A domain
    whose reply stays unusable contributes an empty delta (logged)."""
    model_key = model_key or backend.name
    dialogue_text = render_history([*history, turn], max_chars=max_history_chars)
    merged: dict[str, SlotValue] = {}
    for domain in sorted(set(active_domains)):
        expected = schema.slot_keys([domain])
        spec = build_srp_prompt(
            domain,
            schema,
            model_key,
            dialogue_text,
            library=library,
            params=params,
            with_ontology=with_ontology,
            prior_state=prior_state,
        )
        try:
            payload = complete_structured(spec, backend, ledger, retry, audit)
        except UnparseableResponse as exc:
            log.warning("turn %d, domain %s: %s", turn.index, domain, exc)
            continue
        delta = _interpret_payload(payload, expected, schema)
        merged.update(delta.entries)
    return DialogueState(merged)
