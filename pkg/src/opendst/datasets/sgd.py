"""Schema-Guided Dialogue adapter.

Reads a directory with ``schema.json`` and ``dialogues_*.json``. Service
names are folded to domain names (``RideSharing_2`` -> ``ride-sharing``)
and same-domain services are merged. SGD schemas carry no entity-type tags,
so types are inferred from slot names and value inventories.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from typing import Mapping

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
from .corpus import Corpus, FormatError

log = logging.getLogger(__name__)

_CAMEL_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_SERVICE_INDEX_RE = re.compile(r"_\d+$")


def service_to_domain(service: str) -> str:
    """"RideSharing_2" -> "ride-sharing", "Hotels_1" -> "hotels"."""
    base = _SERVICE_INDEX_RE.sub("", service)
    return _CAMEL_RE.sub("-", base).lower()


def canonical_sgd_slot(raw: str) -> str:
    return raw.strip().lower().replace("_", "-").replace(" ", "-")


_TRUE_FALSE = {"true", "false"}

# Keyword routing for entity types, checked in order. SGD slot names are
# descriptive enough that this covers the released services; anything
# unmatched falls back on whether the slot is categorical.
_TYPE_RULES: tuple[tuple[EntityType, tuple[str, ...]], ...] = (
    (EntityType.TIME, ("time", "hour")),
    (EntityType.DAY, ("date", "day")),
    (EntityType.RANGE, ("range", "rating", "star")),
    (EntityType.PRICE, ("price", "fare", "cost", "rent", "balance", "amount")),
    (EntityType.CODE, ("code", "reference", "account", "id")),
    (EntityType.NUMBER, ("number", "count", "people", "seats", "size", "phone", "passengers", "riders", "adults", "guests", "tickets", "stops", "year", "quantity", "duration")),
    (EntityType.LOCATION, ("city", "location", "address", "area", "destination", "origin", "departure", "arrival", "where", "street", "airport", "station", "neighborhood", "pickup", "dropoff")),
    (EntityType.TYPE, ("type", "category", "genre", "cuisine", "style", "class", "format")),
    (EntityType.NAME, ("name", "venue", "artist", "movie", "song", "album", "title", "event", "doctor", "dentist", "stylist", "therapist", "hotel", "restaurant", "attraction", "show", "track", "director", "actor", "airline", "account-holder")),
)
_BOOLEAN_HINTS = ("has-", "is-", "free-", "wifi", "parking", "laundry", "pets", "smoking", "refundable", "nonstop", "private", "shared", "unisex", "insurance", "subtitles", "garage", "alarm")


def infer_entity_type(slot_name: str, is_categorical: bool, possible_values: list[str]) -> EntityType:
    name = canonical_sgd_slot(slot_name)
    lowered_values = {v.strip().lower() for v in possible_values}
    if lowered_values and lowered_values <= _TRUE_FALSE:
        return EntityType.BOOLEAN
    for hint in _BOOLEAN_HINTS:
        if hint in name:
            return EntityType.BOOLEAN
    parts = set(name.split("-")) | {name}
    for etype, keywords in _TYPE_RULES:
        for kw in keywords:
            # short keywords ("id", "day") only match whole name parts,
            # otherwise "id" would claim "ride" and the like
            if kw in parts or (len(kw) >= 4 and any(kw in p for p in parts)):
                return etype
    return EntityType.TYPE if is_categorical else EntityType.NAME


def sgd_schema(schema_rows: list[dict], with_values: bool = True) -> Schema:
    slots: dict[str, dict[str, SlotSpec]] = {}
    for service in schema_rows:
        domain = service_to_domain(service["service_name"])
        bucket = slots.setdefault(domain, {})
        for slot in service.get("slots", []):
            name = canonical_sgd_slot(slot["name"])
            if name in bucket:
                continue  # first service wins on merged domains
            possible = [str(v) for v in slot.get("possible_values", []) or []]
            is_cat = bool(slot.get("is_categorical"))
            values = None
            if with_values and is_cat and possible:
                cleaned = sorted({v.strip().lower() for v in possible if v.strip() and v.strip().lower() != "dontcare"})
                values = tuple(cleaned) or None
            bucket[name] = SlotSpec(
                name=name,
                description=slot.get("description", name),
                entity_type=infer_entity_type(slot["name"], is_cat, possible),
                values=values,
            )
    return Schema(name="sgd", slots={d: tuple(b.values()) for d, b in sorted(slots.items())})


def _frame_entries(frame: Mapping, schema: Schema) -> dict:
    domain = service_to_domain(frame["service"])
    entries = {}
    for raw_slot, values in frame.get("state", {}).get("slot_values", {}).items():
        if not values:
            continue
        slot = canonical_sgd_slot(raw_slot)
        key = f"{domain}.{slot}"
        etype = schema.slot_spec(key).entity_type if schema.has_slot(key) else None
        if etype is None:
            log.warning("dropping unannotated slot %s", key)
            continue
        value = slot_value_from_raw(str(values[0]), etype)
        if value is not None:
            entries[key] = value
    return entries


def load_sgd(path: str | Path, with_values: bool = True) -> Corpus:
    path = Path(path)
    if not path.is_dir():
        raise FormatError(f"{path}: SGD loader expects a split directory")
    schema_file = path / "schema.json"
    if not schema_file.exists():
        raise FormatError(f"{path}: missing schema.json")
    schema = sgd_schema(json.loads(schema_file.read_text(encoding="utf-8")), with_values=with_values)

    dialogue_files = sorted(path.glob("dialogues_*.json"))
    if not dialogue_files:
        raise FormatError(f"{path}: no dialogues_*.json files")
    dialogues = []
    for file in dialogue_files:
        for record in json.loads(file.read_text(encoding="utf-8")):
            dialogue_id = record["dialogue_id"]
            turns = []
            states: list[DialogueState] = []
            turn_domains: list[frozenset[str]] = []
            running: dict = {}
            prev_state = DialogueState({})
            for i, raw_turn in enumerate(record["turns"]):
                speaker = Speaker.USER if raw_turn["speaker"].upper() == "USER" else Speaker.SYSTEM
                expected = Speaker.USER if i % 2 == 0 else Speaker.SYSTEM
                if speaker is not expected:
                    raise FormatError(f"{dialogue_id}: speaker order breaks at turn {i}")
                turns.append(Turn(index=i, speaker=speaker, utterance=raw_turn["utterance"].strip()))
                if speaker is not Speaker.USER:
                    continue
                intent_domains = set()
                for frame in raw_turn.get("frames", []):
                    running.update(_frame_entries(frame, schema))
                    if frame.get("state", {}).get("active_intent", "NONE") != "NONE":
                        intent_domains.add(service_to_domain(frame["service"]))
                state = DialogueState(dict(running))
                changed = state_diff(prev_state, state).domains()
                turn_domains.append(frozenset(intent_domains | set(changed)))
                states.append(state)
                prev_state = state
            dialogues.append(
                Dialogue(
                    id=dialogue_id,
                    turns=tuple(turns),
                    gold_turn_domains=tuple(turn_domains),
                    gold_states=tuple(states),
                )
            )
    return Corpus(name="sgd", version="1.0", dialogues=tuple(dialogues), schema=schema)
