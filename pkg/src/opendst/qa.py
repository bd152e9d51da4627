"""State tracking as question answering.

Per user turn: one entity-extraction request, an optional no-preference
scan, then one multiple-choice question per slot that the extracted
entities (or cross-referenced earlier values) make a candidate. Answers are
constrained to the offered options, so the model can only pick values that
are actually on the table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .classifier import render_history
from .core import (
    DONTCARE,
    DialogueState,
    EntityType,
    Schema,
    SlotValue,
    Turn,
    informed,
    normalize_slot_value,
    normalize_value,
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
    complete,
    complete_structured,
    default_sampling,
    extract_shape,
    repair_json,
    _FORMAT_REMINDER,
)
from .prompts import PromptLibrary

log = logging.getLogger(__name__)

STAGE_EXTRACTION = "entity-extraction"
STAGE_DONTCARE = "dontcare-scan"
STAGE_MCQ = "mcq-answering"

CORE_ENTITY_TYPES: tuple[EntityType, ...] = (
    EntityType.TIME,
    EntityType.NUMBER,
    EntityType.PRICE,
    EntityType.LOCATION,
    EntityType.NAME,
    EntityType.CODE,
    EntityType.BOOLEAN,
)
EXTENDED_ENTITY_TYPES: tuple[EntityType, ...] = CORE_ENTITY_TYPES + (
    EntityType.DAY,
    EntityType.TYPE,
    EntityType.RANGE,
)

_ABSENT_ANSWERS = {"", "none", "null", "not mentioned"}
_DONTCARE_ANSWERS = {"dontcare", "dont care", "don't care", "*"}


@dataclass(frozen=True, slots=True)
class ExtractedEntity:
    entity_type: EntityType
    value: str
    turn_index: int


@dataclass(frozen=True, slots=True)
class EntitySlotMatch:
    entity: ExtractedEntity
    candidate_slots: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class McqQuestion:
    slot_key: str
    options: tuple[str, ...]
    turn_index: int

    def __post_init__(self) -> None:
        if self.options.count("None") != 1 or self.options[-1] != "None":
            raise ValueError("option list must end with exactly one 'None'")
        if len(set(self.options)) != len(self.options):
            raise ValueError("duplicate options")


def extract_entities(
    turn: Turn,
    backend: Backend,
    *,
    library: PromptLibrary,
    ledger: RequestLedger | None = None,
    params: SamplingParams | None = None,
    extended: bool = True,
    retry: RetryPolicy | None = None,
    audit=None,
) -> list[ExtractedEntity]:
    """One extraction request for the turn. Unusable replies degrade to an
    empty extraction rather than failing the turn."""
    if params is None:
        params = default_sampling(backend.name, STAGE_EXTRACTION)
    types = EXTENDED_ENTITY_TYPES if extended else CORE_ENTITY_TYPES
    names = tuple(t.value for t in types)
    asset = library.entity_extraction(extended=extended)
    text = asset.render({"entities": ", ".join(f'"{n}"' for n in names), "turn": turn.utterance})
    spec = PromptSpec(text=text, params=params, shape=JsonObject(names), stage=STAGE_EXTRACTION)
    try:
        payload = complete_structured(spec, backend, ledger, retry, audit)
    except UnparseableResponse as exc:
        log.warning("turn %d: extraction reply unusable (%s)", turn.index, exc)
        return []
    by_type = {t.value: t for t in types}
    out: list[ExtractedEntity] = []
    seen: set[tuple[EntityType, str]] = set()
    for key, raw_values in payload.items():
        if not isinstance(key, str) or key.upper() not in by_type:
            continue
        etype = by_type[key.upper()]
        if raw_values is ABSENT or raw_values is None:
            continue
        if not isinstance(raw_values, list):
            raw_values = [raw_values]
        for raw in raw_values:
            if isinstance(raw, bool):
                raw = "true" if raw else "false"
            if not isinstance(raw, (str, int, float)):
                continue
            value = normalize_slot_value(str(raw), etype)
            if not value or value in _ABSENT_ANSWERS:
                continue
            if (etype, value) in seen:
                continue
            seen.add((etype, value))
            out.append(ExtractedEntity(entity_type=etype, value=value, turn_index=turn.index))
    return out


def match_entities_to_slots(
    entities: Sequence[ExtractedEntity],
    active_domains: Iterable[str],
    schema: Schema,
) -> list[EntitySlotMatch]:
    """Route each entity to every active-domain slot of its type. Entities
    with no candidate slot are dropped (logged): nothing can be asked."""
    domains = set(active_domains)
    matches = []
    for entity in entities:
        candidates = tuple(schema.slots_of_type(entity.entity_type, domains))
        if not candidates:
            log.debug("no candidate slot for %s %r in %s", entity.entity_type.value, entity.value, sorted(domains))
            continue
        matches.append(EntitySlotMatch(entity=entity, candidate_slots=candidates))
    return matches


_DONTCARE_PROMPT = """Consider this dialogue turn from a USER:

{turn}

From the tracked slots listed below, list the ones for which the user explicitly indicates no preference (wordings like "any", "either", "doesn't matter", "don't care"):

{slotkeys}

Return the answer in JSON with 'dontcare' as key and a json array of slot names as value. Return an empty array if there are none.
"""


def detect_dontcare(
    turn: Turn,
    candidate_slots: Sequence[str],
    backend: Backend,
    *,
    ledger: RequestLedger | None = None,
    params: SamplingParams | None = None,
    retry: RetryPolicy | None = None,
    audit=None,
) -> frozenset[str]:
    """One request asking which of the candidate slots the user waved off.

    Open-vocabulary extraction cannot produce "don't care" (there is no
    value to extract), so this scan is the only source of those marks.
    """
    if not candidate_slots:
        return frozenset()
    if params is None:
        params = default_sampling(backend.name, STAGE_DONTCARE)
    text = _DONTCARE_PROMPT.format(turn=turn.utterance, slotkeys="\n".join(f"- {s}" for s in candidate_slots))
    spec = PromptSpec(text=text, params=params, shape=JsonObject(("dontcare",)), stage=STAGE_DONTCARE)
    try:
        payload = complete_structured(spec, backend, ledger, retry, audit)
    except UnparseableResponse as exc:
        log.warning("turn %d: no-preference scan unusable (%s)", turn.index, exc)
        return frozenset()
    raw = payload.get("dontcare")
    if raw is ABSENT or raw is None:
        return frozenset()
    if isinstance(raw, str):
        raw = [raw]
    if not isinstance(raw, list):
        return frozenset()
    by_alias = {}
    for key in candidate_slots:
        by_alias[key] = key
        by_alias[key.replace(".", "-")] = key
    flagged = set()
    for item in raw:
        if not isinstance(item, str):
            continue
        resolved = by_alias.get(item.strip().lower())
        if resolved is not None:
            flagged.add(resolved)
        else:
            log.debug("ignoring no-preference mark for unknown slot %r", item)
    return frozenset(flagged)


def cross_reference_values(slot_key: str, prior_state: DialogueState, schema: Schema) -> list[str]:
    """Earlier informed values whose source slot shares this slot's entity
    type. Lets a question offer e.g. the booked hotel as a taxi destination."""
    etype = schema.slot_spec(slot_key).entity_type
    values = []
    for key in sorted(prior_state.entries):
        if key == slot_key:
            continue
        value = prior_state.entries[key]
        if not value.is_informed:
            continue
        if schema.has_slot(key) and schema.slot_spec(key).entity_type is etype:
            values.append(value.text)
    return values


def build_mcq(
    slot_key: str,
    entity_values: Sequence[str],
    prior_state: DialogueState,
    dontcare_flagged: bool,
    schema: Schema,
    turn_index: int = 0,
) -> McqQuestion:
    """Assemble the option list: values extracted this turn, then earlier
    same-type values, then 'dontcare' when flagged, closed by 'None'.
    Duplicates keep their first occurrence."""
    options: list[str] = []
    for value in list(entity_values) + cross_reference_values(slot_key, prior_state, schema):
        if value not in options and value != "None":
            options.append(value)
    if dontcare_flagged and "dontcare" not in options:
        options.append("dontcare")
    options.append("None")
    return McqQuestion(slot_key=slot_key, options=tuple(options), turn_index=turn_index)


def _is_bare_absent(raw: str) -> bool:
    return raw.strip().strip("\"'`.").lower() in _ABSENT_ANSWERS


def render_mcq_prompt(question: McqQuestion, dialogue_text: str, library: PromptLibrary) -> str:
    domain, _, slot = question.slot_key.partition(".")
    return library.mcq().render(
        {
            "dialgoue": dialogue_text,
            "slotname": f"{domain} {slot}",
            "turnindex": str(question.turn_index),
            "slotvalues": "\n".join(f"- {o}" for o in question.options),
            "slotkey": question.slot_key.replace(".", "-"),
        }
    )


def answer_mcq(
    question: McqQuestion,
    dialogue_text: str,
    backend: Backend,
    *,
    library: PromptLibrary,
    schema: Schema,
    ledger: RequestLedger | None = None,
    params: SamplingParams | None = None,
    retry: RetryPolicy | None = None,
    audit=None,
) -> SlotValue | None:
    """Ask one multiple-choice question. Returns None for absence. Answers
    outside the option list are rejected and count as absence."""
    if params is None:
        params = default_sampling(backend.name, STAGE_MCQ)
    answer_key = question.slot_key.replace(".", "-")
    text = render_mcq_prompt(question, dialogue_text, library)
    spec = PromptSpec(text=text, params=params, shape=JsonObject((answer_key,)), stage=STAGE_MCQ)

    raw = complete(spec, backend, ledger, retry, audit)
    if _is_bare_absent(raw):
        return None
    payload = None
    try:
        payload = extract_shape(repair_json(raw), spec.shape)
    except ValueError:
        if ledger is not None:
            ledger.record_failure(spec.stage, backend.name)
        raw = complete(replace(spec, text=spec.text + _FORMAT_REMINDER), backend, ledger, retry, audit)
        if _is_bare_absent(raw):
            return None
        try:
            payload = extract_shape(repair_json(raw), spec.shape)
        except ValueError as exc:
            if ledger is not None:
                ledger.record_failure(spec.stage, backend.name)
            raise UnparseableResponse(f"unusable answer for {question.slot_key}: {exc}", raw=raw) from exc

    value = payload.get(answer_key)
    if value is ABSENT:
        # tolerate the qualified spelling or any single-entry object
        for k, v in payload.items():
            if isinstance(k, str) and k.lower().replace(".", "-") == answer_key:
                value = v
                break
        else:
            real = {k: v for k, v in payload.items() if v is not ABSENT}
            if len(real) == 1:
                value = next(iter(real.values()))
    if value is ABSENT or value is None:
        return None
    if isinstance(value, list):
        value = value[0] if value else None
    if isinstance(value, bool):
        value = "true" if value else "false"
    if value is None or not isinstance(value, (str, int, float)):
        return None
    lowered = str(value).strip().lower()
    if lowered in _ABSENT_ANSWERS:
        return None
    if lowered in _DONTCARE_ANSWERS:
        if "dontcare" in question.options:
            return DONTCARE
        log.debug("%s: rejected unoffered dontcare answer", question.slot_key)
        return None
    etype = schema.slot_spec(question.slot_key).entity_type
    normalized = normalize_slot_value(str(value), etype)
    option_set = {normalize_value(o) for o in question.options if o not in ("None", "dontcare")}
    if normalized not in option_set:
        log.debug("%s: rejected answer %r outside options %s", question.slot_key, normalized, sorted(option_set))
        return None
    return informed(normalized)


def qa_track_turn(
    turn: Turn,
    history: Sequence[Turn],
    active_domains: Iterable[str],
    prior_state: DialogueState,
    schema: Schema,
    backend: Backend,
    *,
    library: PromptLibrary,
    ledger: RequestLedger | None = None,
    params: SamplingParams | None = None,
    extended: bool = True,
    dontcare_scan: bool = True,
    retry: RetryPolicy | None = None,
    audit=None,
    max_history_chars: int | None = None,
) -> DialogueState:
    """Track one user turn, returning the per-turn state delta.

    Individual question failures are logged and skipped; the turn itself
    never aborts. Slots of domains that just became active also get a
    question when an earlier same-type value could carry over, so values
    can move across domains without being re-said.
    """
    domains = set(active_domains)
    entities = extract_entities(
        turn, backend, library=library, ledger=ledger, params=params, extended=extended, retry=retry, audit=audit
    )
    matches = match_entities_to_slots(entities, domains, schema)

    flagged: frozenset[str] = frozenset()
    if dontcare_scan:
        flagged = detect_dontcare(
            turn, schema.slot_keys(domains), backend, ledger=ledger, params=params, retry=retry, audit=audit
        )

    slot_values: dict[str, list[str]] = {}
    for match in matches:
        for slot in match.candidate_slots:
            bucket = slot_values.setdefault(slot, [])
            if match.entity.value not in bucket:
                bucket.append(match.entity.value)

    crossref_only: set[str] = set()
    for domain in sorted(domains - prior_state.domains()):
        for slot in schema.slot_keys([domain]):
            if slot in slot_values or slot in prior_state.entries:
                continue
            if cross_reference_values(slot, prior_state, schema):
                crossref_only.add(slot)

    question_slots = sorted(set(slot_values) | set(flagged) | crossref_only)
    dialogue_text = render_history([*history, turn], max_chars=max_history_chars)
    delta: dict[str, SlotValue] = {}
    for slot in question_slots:
        question = build_mcq(slot, slot_values.get(slot, ()), prior_state, slot in flagged, schema, turn.index)
        if question.options == ("None",):
            continue
        try:
            answer = answer_mcq(
                question,
                dialogue_text,
                backend,
                library=library,
                schema=schema,
                ledger=ledger,
                params=params,
                retry=retry,
                audit=audit,
            )
        except UnparseableResponse as exc:
            log.warning("turn %d: %s", turn.index, exc)
            continue
        if answer is not None:
            delta[slot] = answer
    return DialogueState(delta)
