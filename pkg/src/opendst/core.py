"""Core value types for dialogue state tracking.

Everything here is an immutable value: turns, dialogues, slot values,
cumulative dialogue states and schemas. State updates never mutate; they
return new states.
"""

from __future__ import annotations

import enum
import re
import string
from dataclasses import dataclass, field
from typing import Iterable, Mapping


class UnknownSlot(KeyError):
    """A state update referenced a slot key the schema does not define."""


class Speaker(enum.Enum):
    USER = "user"
    SYSTEM = "system"


class EntityType(enum.Enum):
    """Coarse value categories used to route extracted values to slots."""

    TIME = "TIME"
    NUMBER = "NUMBER"
    PRICE = "PRICE"
    LOCATION = "LOCATION"
    NAME = "NAME"
    CODE = "CODE"
    BOOLEAN = "BOOLEAN"
    DAY = "DAY"
    TYPE = "TYPE"
    RANGE = "RANGE"
    DONTCARE = "DONTCARE"


class ValueKind(enum.Enum):
    INFORMED = "informed"
    DONTCARE = "dontcare"
    REQUESTED = "requested"


@dataclass(frozen=True, slots=True)
class SlotValue:
    """Value of one slot: a concrete informed string, "don't care", or a
    value the user asked the system for.

    ``text`` is non-empty exactly when ``kind`` is INFORMED.
    """

    kind: ValueKind
    text: str = ""

    def __post_init__(self) -> None:
        if self.kind is ValueKind.INFORMED and not self.text:
            raise ValueError("informed slot value requires non-empty text")
        if self.kind is not ValueKind.INFORMED and self.text:
            raise ValueError(f"{self.kind.value} slot value carries no text")

    @property
    def is_informed(self) -> bool:
        return self.kind is ValueKind.INFORMED

    def serialize(self) -> str:
        if self.kind is ValueKind.DONTCARE:
            return "*"
        if self.kind is ValueKind.REQUESTED:
            return "?"
        return self.text


DONTCARE = SlotValue(ValueKind.DONTCARE)
REQUESTED = SlotValue(ValueKind.REQUESTED)

# Surface spellings that mean "don't care" when they appear as a value.
_DONTCARE_SPELLINGS = {"*", "dontcare", "dont care", "don't care", "do not care", "any"}
# Surface spellings that mean the value is absent rather than tracked.
_ABSENT_SPELLINGS = {"", "none", "not mentioned", "null", "not given", "unknown"}


def informed(text: str) -> SlotValue:
    return SlotValue(ValueKind.INFORMED, text)


def deserialize_slot_value(raw: str) -> SlotValue:
    """Inverse of :meth:`SlotValue.serialize`. Raises on the empty string."""
    if raw == "*":
        return DONTCARE
    if raw == "?":
        return REQUESTED
    return informed(raw)


_WS_RE = re.compile(r"\s+")
_EDGE_CHARS = string.punctuation + string.whitespace


def normalize_value(raw: str) -> str:
    """Lowercase, collapse internal whitespace and strip edge punctuation."""
    s = _WS_RE.sub(" ", raw.lower()).strip()
    return s.strip(_EDGE_CHARS)


# Hour with optional minutes and optional am/pm marker. A "." separator is
# only trusted when a marker is present, otherwise "2.30" (a price, a rating)
# would turn into a clock time.
_TIME_RE = re.compile(
    r"^\s*(\d{1,2})(?:([:.])(\d{2}))?\s*(?:([ap])\.?m\.?)?\s*$",
    re.IGNORECASE,
)


def normalize_time(raw: str) -> str:
    """Map recognizable clock times to 24-hour ``HH:MM``.

    "5:45 pm" -> "17:45", "11:00" -> "11:00", "12:30 am" -> "00:30".
    Strings that do not look like a clock time (bare numbers, invalid
    hours/minutes) pass through unchanged, so the function is idempotent.
    """
    m = _TIME_RE.match(raw)
    if not m:
        return raw
    hour_s, sep, minute_s, meridiem = m.groups()
    hour = int(hour_s)
    minute = int(minute_s) if minute_s is not None else 0
    if minute_s is None and meridiem is None:
        return raw  # bare number, not a time
    if sep == "." and meridiem is None:
        return raw
    if minute > 59:
        return raw
    if meridiem is not None:
        if not 1 <= hour <= 12:
            return raw
        if meridiem.lower() == "p" and hour != 12:
            hour += 12
        elif meridiem.lower() == "a" and hour == 12:
            hour = 0
    elif hour > 23:
        return raw
    return f"{hour:02d}:{minute:02d}"


def normalize_slot_value(raw: str, entity_type: EntityType | None = None) -> str:
    s = normalize_value(raw)
    if entity_type is EntityType.TIME:
        s = normalize_time(s)
    return s


def slot_value_from_raw(raw: str, entity_type: EntityType | None = None) -> SlotValue | None:
    """Interpret a raw surface string as a slot value.

    Returns None when the string denotes absence ("", "none", ...), DONTCARE
    for the family of "don't care" spellings, and a normalized informed value
    otherwise.
    """
    if raw == "?":
        return REQUESTED
    lowered = raw.strip().lower()
    if lowered in _DONTCARE_SPELLINGS:
        return DONTCARE
    s = normalize_slot_value(raw, entity_type)
    if s in _ABSENT_SPELLINGS:
        return None
    if s in _DONTCARE_SPELLINGS:
        return DONTCARE
    return informed(s)


@dataclass(frozen=True, slots=True)
class Turn:
    index: int
    speaker: Speaker
    utterance: str


@dataclass(frozen=True, slots=True)
class SlotSpec:
    """One schema slot: bare name, human description, entity type tag and an
    optional closed list of ontology values (None when open)."""

    name: str
    description: str
    entity_type: EntityType
    values: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.values is not None and not self.values:
            raise ValueError(f"slot {self.name}: ontology value list must be non-empty")


@dataclass(frozen=True)
class Schema:
    """Domains and their slots. Slot keys are qualified as "domain.slot"."""

    name: str
    slots: Mapping[str, tuple[SlotSpec, ...]]

    def __post_init__(self) -> None:
        for domain, specs in self.slots.items():
            names = [s.name for s in specs]
            if len(names) != len(set(names)):
                raise ValueError(f"duplicate slot names in domain {domain!r}")

    @property
    def domains(self) -> frozenset[str]:
        return frozenset(self.slots)

    def domain_slots(self, domain: str) -> tuple[SlotSpec, ...]:
        return self.slots[domain]

    def slot_keys(self, domains: Iterable[str] | None = None) -> tuple[str, ...]:
        picked = self.slots if domains is None else set(domains) & set(self.slots)
        return tuple(sorted(f"{d}.{s.name}" for d in picked for s in self.slots[d]))

    def has_slot(self, key: str) -> bool:
        try:
            self.slot_spec(key)
        except UnknownSlot:
            return False
        return True

    def slot_spec(self, key: str) -> SlotSpec:
        domain, _, name = key.partition(".")
        for spec in self.slots.get(domain, ()):
            if spec.name == name:
                return spec
        raise UnknownSlot(key)

    def slots_of_type(self, entity_type: EntityType, domains: Iterable[str] | None = None) -> tuple[str, ...]:
        """Qualified keys of slots tagged with ``entity_type``, restricted to
        ``domains`` when given. DONTCARE matches every slot."""
        keys = []
        picked = self.slots if domains is None else set(domains) & set(self.slots)
        for d in picked:
            for spec in self.slots[d]:
                if entity_type is EntityType.DONTCARE or spec.entity_type is entity_type:
                    keys.append(f"{d}.{spec.name}")
        return tuple(sorted(keys))

    def slots_per_domain(self) -> dict[str, int]:
        return {d: len(specs) for d, specs in self.slots.items()}


@dataclass(frozen=True)
class DialogueState:
    """Cumulative dialogue state: qualified slot key -> SlotValue.

    Treated as immutable; use apply_turn_update / state_diff to derive new
    states rather than mutating ``entries``.
    """

    entries: Mapping[str, SlotValue] = field(default_factory=dict)

    def get(self, key: str) -> SlotValue | None:
        return self.entries.get(key)

    def keys(self) -> frozenset[str]:
        return frozenset(self.entries)

    def domains(self) -> frozenset[str]:
        return frozenset(k.partition(".")[0] for k in self.entries)

    def scoring_entries(self) -> dict[str, SlotValue]:
        """Entries that participate in state comparison. Requested markers
        are conversational signals, not goal values, so they are excluded."""
        return {k: v for k, v in self.entries.items() if v.kind is not ValueKind.REQUESTED}

    def restrict(self, domains: Iterable[str]) -> "DialogueState":
        wanted = set(domains)
        return DialogueState({k: v for k, v in self.entries.items() if k.partition(".")[0] in wanted})

    def serialize(self) -> dict[str, str]:
        return {k: self.entries[k].serialize() for k in sorted(self.entries)}

    @classmethod
    def deserialize(cls, data: Mapping[str, str]) -> "DialogueState":
        return cls({k: deserialize_slot_value(v) for k, v in data.items()})

    def __len__(self) -> int:
        return len(self.entries)


EMPTY_STATE = DialogueState({})


def apply_turn_update(state: DialogueState, delta: DialogueState, schema: Schema | None = None) -> DialogueState:
    """Overlay ``delta`` onto ``state``; delta wins on key collisions.

    With a schema, every delta key must be defined (UnknownSlot otherwise).
    """
    if schema is not None:
        for key in delta.entries:
            if not schema.has_slot(key):
                raise UnknownSlot(key)
    merged = dict(state.entries)
    merged.update(delta.entries)
    return DialogueState(merged)


def state_diff(prev: DialogueState, new: DialogueState) -> DialogueState:
    """Entries of ``new`` that are absent from ``prev`` or changed exactly."""
    return DialogueState({k: v for k, v in new.entries.items() if prev.entries.get(k) != v})


@dataclass(frozen=True)
class Dialogue:
    """A dialogue plus optional gold annotations.

    ``gold_turn_domains`` and ``gold_states`` align with user turns in order,
    not with raw turn indices. Gold turn domains are the domains the user is
    acting in at that specific turn; gold states are cumulative.
    """

    id: str
    turns: tuple[Turn, ...]
    gold_turn_domains: tuple[frozenset[str], ...] | None = None
    gold_states: tuple[DialogueState, ...] | None = None

    def __post_init__(self) -> None:
        for pos, turn in enumerate(self.turns):
            if turn.index != pos:
                raise ValueError(f"dialogue {self.id}: turn index {turn.index} at position {pos}")
        n_user = sum(1 for t in self.turns if t.speaker is Speaker.USER)
        for name in ("gold_turn_domains", "gold_states"):
            gold = getattr(self, name)
            if gold is not None and len(gold) != n_user:
                raise ValueError(f"dialogue {self.id}: {name} has {len(gold)} rows for {n_user} user turns")

    def user_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.speaker is Speaker.USER]


def cumulative_domains(turn_domains: Iterable[frozenset[str]]) -> list[frozenset[str]]:
    """Running union of per-turn domain sets: the domains active so far."""
    out: list[frozenset[str]] = []
    seen: frozenset[str] = frozenset()
    for doms in turn_domains:
        seen = seen | doms
        out.append(seen)
    return out
