"""MultiWOZ adapter (2.1 / 2.4 classic layout).

Input is the ``data.json`` mapping of dialogue id to ``{goal, log}``, where
``log`` alternates user and system turns and every system turn carries the
cumulative belief state in ``metadata``. Raw annotation slot names are
folded to one canonical spelling here, so the rest of the pipeline never
sees dataset-specific naming.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Mapping

from ..core import (
    Dialogue,
    DialogueState,
    EntityType,
    Schema,
    SlotSpec,
    Speaker,
    Turn,
    slot_value_from_raw,
    state_diff,
)
from .corpus import Corpus, FormatError, SchemaMismatch

log = logging.getLogger(__name__)

_E = EntityType

# Canonical schema. Slot spellings are normalized (hyphenated, lowercase);
# booking slots are prefixed with "book-". The hotel domain books by party
# size and stay length while restaurant and train book a seat count, hence
# the two people spellings.
MULTIWOZ_SLOTS: tuple[tuple[str, str, EntityType, str], ...] = (
    ("restaurant", "name", _E.NAME, "name of the restaurant"),
    ("restaurant", "food", _E.TYPE, "cuisine served by the restaurant"),
    ("restaurant", "price-range", _E.RANGE, "price bracket of the restaurant"),
    ("restaurant", "area", _E.LOCATION, "part of town the restaurant is in"),
    ("restaurant", "address", _E.LOCATION, "street address of the restaurant"),
    ("restaurant", "phone", _E.NUMBER, "phone number of the restaurant"),
    ("restaurant", "post-code", _E.CODE, "postcode of the restaurant"),
    ("restaurant", "book-day", _E.DAY, "day of the restaurant booking"),
    ("restaurant", "book-time", _E.TIME, "time of the restaurant booking"),
    ("restaurant", "book-people-count", _E.NUMBER, "number of people the table is for"),
    ("restaurant", "reference-code", _E.CODE, "reference code of the restaurant booking"),
    ("hotel", "name", _E.NAME, "name of the hotel"),
    ("hotel", "type", _E.TYPE, "kind of lodging, for example hotel or guest house"),
    ("hotel", "price-range", _E.RANGE, "price bracket of the hotel"),
    ("hotel", "area", _E.LOCATION, "part of town the hotel is in"),
    ("hotel", "address", _E.LOCATION, "street address of the hotel"),
    ("hotel", "phone", _E.NUMBER, "phone number of the hotel"),
    ("hotel", "post-code", _E.CODE, "postcode of the hotel"),
    ("hotel", "stars", _E.NUMBER, "star rating of the hotel"),
    ("hotel", "parking", _E.BOOLEAN, "whether the hotel offers parking"),
    ("hotel", "internet", _E.BOOLEAN, "whether the hotel offers internet access"),
    ("hotel", "book-day", _E.DAY, "first day of the hotel stay"),
    ("hotel", "book-stay", _E.NUMBER, "length of the hotel stay in nights"),
    ("hotel", "book-people", _E.NUMBER, "number of guests the room is for"),
    ("hotel", "reference-code", _E.CODE, "reference code of the hotel booking"),
    ("attraction", "name", _E.NAME, "name of the attraction"),
    ("attraction", "type", _E.TYPE, "category of the attraction"),
    ("attraction", "area", _E.LOCATION, "part of town the attraction is in"),
    ("attraction", "address", _E.LOCATION, "street address of the attraction"),
    ("attraction", "phone", _E.NUMBER, "phone number of the attraction"),
    ("attraction", "post-code", _E.CODE, "postcode of the attraction"),
    ("attraction", "entrance-fee", _E.PRICE, "entrance fee of the attraction"),
    ("attraction", "open-hours", _E.TIME, "opening hours of the attraction"),
    ("train", "train-id", _E.NAME, "identifier of the train"),
    ("train", "day", _E.DAY, "day of the train journey"),
    ("train", "departure", _E.LOCATION, "station the train leaves from"),
    ("train", "destination", _E.LOCATION, "station the train goes to"),
    ("train", "leave-at", _E.TIME, "earliest departure time of the train"),
    ("train", "arrive-by", _E.TIME, "latest arrival time of the train"),
    ("train", "duration", _E.NUMBER, "travel time of the train journey"),
    ("train", "price", _E.PRICE, "ticket price of the train"),
    ("train", "book-people-count", _E.NUMBER, "number of train tickets to book"),
    ("train", "reference-code", _E.CODE, "reference code of the train booking"),
    ("taxi", "departure", _E.NAME, "place the taxi picks up from"),
    ("taxi", "destination", _E.NAME, "place the taxi goes to"),
    ("taxi", "leave-at", _E.TIME, "pickup time of the taxi"),
    ("taxi", "arrive-by", _E.TIME, "latest arrival time of the taxi"),
    ("taxi", "type", _E.TYPE, "car type of the taxi"),
    ("taxi", "phone", _E.NUMBER, "contact number of the taxi"),
    ("bus", "day", _E.DAY, "day of the bus journey"),
    ("bus", "departure", _E.LOCATION, "stop the bus leaves from"),
    ("bus", "destination", _E.LOCATION, "stop the bus goes to"),
    ("bus", "leave-at", _E.TIME, "departure time of the bus"),
    ("hospital", "department", _E.NAME, "hospital department the user needs"),
    ("hospital", "address", _E.LOCATION, "street address of the hospital"),
    ("hospital", "phone", _E.NUMBER, "phone number of the hospital"),
    ("police", "name", _E.NAME, "name of the police station"),
    ("police", "address", _E.LOCATION, "street address of the police station"),
    ("police", "phone", _E.NUMBER, "phone number of the police station"),
    ("police", "post-code", _E.CODE, "postcode of the police station"),
)

# Raw annotation spellings folded to the canonical slot names above.
_SEMI_ALIASES: Mapping[str, str] = {
    "pricerange": "price-range",
    "price range": "price-range",
    "leaveat": "leave-at",
    "leave at": "leave-at",
    "arriveby": "arrive-by",
    "arrive by": "arrive-by",
    "trainid": "train-id",
    "train id": "train-id",
    "entrance fee": "entrance-fee",
    "fee": "entrance-fee",
    "postcode": "post-code",
    "post code": "post-code",
    "ref": "reference-code",
    "reference": "reference-code",
    "addr": "address",
    "depart": "departure",
    "dest": "destination",
    "open hours": "open-hours",
    "openhours": "open-hours",
    "car type": "type",
    "car": "type",
}
_BOOK_ALIASES: Mapping[str, str] = {
    "day": "book-day",
    "time": "book-time",
    "stay": "book-stay",
}
# These appear under "book" but are bookkeeping, not tracked slots.
_IGNORED_BOOK_KEYS = frozenset({"booked", "ticket"})


def multiwoz_schema(ontology: Mapping[str, list[str]] | None = None) -> Schema:
    values_by_key: dict[str, tuple[str, ...]] = {}
    if ontology:
        values_by_key = _canonical_ontology(ontology)
    slots: dict[str, list[SlotSpec]] = {}
    for domain, name, etype, description in MULTIWOZ_SLOTS:
        slots.setdefault(domain, []).append(
            SlotSpec(
                name=name,
                description=description,
                entity_type=etype,
                values=values_by_key.get(f"{domain}.{name}"),
            )
        )
    return Schema(name="multiwoz", slots={d: tuple(v) for d, v in slots.items()})


def canonical_slot(domain: str, raw: str, in_book: bool = False) -> str:
    """Map one raw annotation slot spelling to its canonical name."""
    key = raw.strip().lower()
    if in_book:
        if key == "people":
            return "book-people" if domain == "hotel" else "book-people-count"
        if key in _BOOK_ALIASES:
            return _BOOK_ALIASES[key]
        return _SEMI_ALIASES.get(key, key)
    return _SEMI_ALIASES.get(key, key)


def _canonical_ontology(ontology: Mapping[str, list[str]]) -> dict[str, tuple[str, ...]]:
    out: dict[str, tuple[str, ...]] = {}
    for raw_key, values in ontology.items():
        domain, _, rest = raw_key.partition("-")
        rest = rest.strip().lower()
        in_book = rest.startswith("book ")
        slot = canonical_slot(domain, rest[5:] if in_book else rest, in_book=in_book)
        cleaned = sorted({v for v in (value.strip().lower() for value in values) if v and v != "dontcare"})
        if cleaned:
            out[f"{domain}.{slot}"] = tuple(cleaned)
    return out


def _first_value(raw) -> str:
    """Annotations store a string, sometimes with '|' alternatives, sometimes
    a list. One value per slot is kept; the first alternative wins."""
    if isinstance(raw, list):
        raw = raw[0] if raw else ""
    if not isinstance(raw, str):
        return str(raw)
    return raw.split("|", 1)[0]


def _state_from_metadata(metadata: Mapping, schema: Schema, dialogue_id: str) -> DialogueState:
    entries = {}
    for domain, sections in metadata.items():
        if domain not in schema.domains:
            raise SchemaMismatch(f"{dialogue_id}: unknown domain {domain!r} in belief state")
        for section, in_book in (("semi", False), ("book", True)):
            for raw_slot, raw_value in sections.get(section, {}).items():
                if in_book and raw_slot.strip().lower() in _IGNORED_BOOK_KEYS:
                    continue
                slot = canonical_slot(domain, raw_slot, in_book=in_book)
                key = f"{domain}.{slot}"
                if not schema.has_slot(key):
                    raise SchemaMismatch(f"{dialogue_id}: unknown slot {domain}.{raw_slot!r}")
                value = slot_value_from_raw(_first_value(raw_value), schema.slot_spec(key).entity_type)
                if value is not None:
                    entries[key] = value
    return DialogueState(entries)


def _check_monotone(dialogue_id: str, states: list[DialogueState]) -> None:
    for k in range(1, len(states)):
        dropped = set(states[k - 1].entries) - set(states[k].entries)
        if dropped:
            log.warning("%s: gold state drops slots at user turn %d: %s", dialogue_id, k, sorted(dropped))


def load_multiwoz(
    path: str | Path,
    version: str = "2.4",
    id_list: Iterable[str] | None = None,
) -> Corpus:
    """Load a MultiWOZ-style corpus.

    ``path`` is either the data JSON file itself or a directory holding
    ``data.json`` plus optionally ``ontology.json`` (attaches value lists to
    the schema) and ``testListFile`` (restricts to the listed dialogues,
    unless ``id_list`` is given explicitly).
    """
    path = Path(path)
    ontology = None
    if path.is_dir():
        data_file = path / "data.json"
        onto_file = path / "ontology.json"
        if onto_file.exists():
            ontology = json.loads(onto_file.read_text(encoding="utf-8"))
        if id_list is None:
            for candidate in ("testListFile.json", "testListFile.txt", "testListFile"):
                list_file = path / candidate
                if list_file.exists():
                    id_list = [line.strip() for line in list_file.read_text(encoding="utf-8").splitlines() if line.strip()]
                    break
    else:
        data_file = path
    if not data_file.exists():
        raise FormatError(f"no data file at {data_file}")
    data = json.loads(data_file.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise FormatError(f"{data_file}: expected an object mapping dialogue ids to dialogues")

    schema = multiwoz_schema(ontology)
    wanted = None if id_list is None else set(id_list)
    dialogues = []
    for dialogue_id in sorted(data):
        if wanted is not None and dialogue_id not in wanted:
            continue
        record = data[dialogue_id]
        logs = record.get("log")
        if not isinstance(logs, list) or not logs:
            raise FormatError(f"{dialogue_id}: missing or empty log")
        turns = []
        states: list[DialogueState] = []
        for i, entry in enumerate(logs):
            speaker = Speaker.USER if i % 2 == 0 else Speaker.SYSTEM
            text = entry.get("text")
            if not isinstance(text, str):
                raise FormatError(f"{dialogue_id}: turn {i} has no text")
            turns.append(Turn(index=i, speaker=speaker, utterance=text.strip()))
            if speaker is Speaker.SYSTEM:
                states.append(_state_from_metadata(entry.get("metadata", {}), schema, dialogue_id))
        n_user = sum(1 for t in turns if t.speaker is Speaker.USER)
        while len(states) < n_user:
            # dialogue ends on a user turn: the state cannot have advanced
            states.append(states[-1] if states else DialogueState({}))
        _check_monotone(dialogue_id, states)
        turn_domains = []
        prev = DialogueState({})
        for state in states:
            turn_domains.append(state_diff(prev, state).domains())
            prev = state
        dialogues.append(
            Dialogue(
                id=dialogue_id,
                turns=tuple(turns),
                gold_turn_domains=tuple(turn_domains),
                gold_states=tuple(states),
            )
        )
    if wanted is not None and len(dialogues) != len(wanted):
        missing = sorted(wanted - {d.id for d in dialogues})
        raise FormatError(f"dialogue ids not found in data: {missing[:5]}")
    return Corpus(name="multiwoz", version=version, dialogues=tuple(dialogues), schema=schema)
