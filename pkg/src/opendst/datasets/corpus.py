"""Corpus container plus a line-oriented dump format.

The dump is JSONL with a schema header line, so a loaded corpus can be
round-tripped byte for byte regardless of which adapter produced it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..core import Dialogue, DialogueState, EntityType, Schema, SlotSpec, Speaker, Turn


class FormatError(ValueError):
    """Input file does not follow the expected dataset layout."""


class SchemaMismatch(ValueError):
    """An annotation referenced a slot the canonical schema does not define."""


class MissingGold(ValueError):
    """The requested computation needs gold annotations the corpus lacks."""


@dataclass(frozen=True)
class Corpus:
    name: str
    version: str
    dialogues: tuple[Dialogue, ...]
    schema: Schema

    def __post_init__(self) -> None:
        ids = [d.id for d in self.dialogues]
        if len(ids) != len(set(ids)):
            raise FormatError("duplicate dialogue ids in corpus")

    def __len__(self) -> int:
        return len(self.dialogues)

    def dialogue(self, dialogue_id: str) -> Dialogue:
        for d in self.dialogues:
            if d.id == dialogue_id:
                return d
        raise KeyError(dialogue_id)


def schema_to_dict(schema: Schema) -> dict:
    return {
        "name": schema.name,
        "domains": {
            domain: [
                {
                    "name": s.name,
                    "description": s.description,
                    "entity_type": s.entity_type.value,
                    "values": list(s.values) if s.values is not None else None,
                }
                for s in schema.slots[domain]
            ]
            for domain in sorted(schema.slots)
        },
    }


def schema_from_dict(data: dict) -> Schema:
    slots = {
        domain: tuple(
            SlotSpec(
                name=row["name"],
                description=row["description"],
                entity_type=EntityType(row["entity_type"]),
                values=tuple(row["values"]) if row.get("values") else None,
            )
            for row in rows
        )
        for domain, rows in data["domains"].items()
    }
    return Schema(name=data["name"], slots=slots)


def _dialogue_to_dict(d: Dialogue) -> dict:
    return {
        "id": d.id,
        "turns": [{"index": t.index, "speaker": t.speaker.value, "utterance": t.utterance} for t in d.turns],
        "gold_turn_domains": None if d.gold_turn_domains is None else [sorted(s) for s in d.gold_turn_domains],
        "gold_states": None if d.gold_states is None else [s.serialize() for s in d.gold_states],
    }


def _dialogue_from_dict(row: dict) -> Dialogue:
    return Dialogue(
        id=row["id"],
        turns=tuple(Turn(t["index"], Speaker(t["speaker"]), t["utterance"]) for t in row["turns"]),
        gold_turn_domains=(
            None
            if row["gold_turn_domains"] is None
            else tuple(frozenset(s) for s in row["gold_turn_domains"])
        ),
        gold_states=(
            None
            if row["gold_states"] is None
            else tuple(DialogueState.deserialize(s) for s in row["gold_states"])
        ),
    )


def dump_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "record": "corpus",
            "name": corpus.name,
            "version": corpus.version,
            "schema": schema_to_dict(corpus.schema),
        }
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
        for d in corpus.dialogues:
            fh.write(json.dumps(_dialogue_to_dict(d), sort_keys=True, ensure_ascii=False) + "\n")


def load_corpus_dump(path: str | Path) -> Corpus:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise FormatError(f"{path}: empty corpus dump")
    header = json.loads(lines[0])
    if header.get("record") != "corpus":
        raise FormatError(f"{path}: missing corpus header line")
    dialogues = tuple(_dialogue_from_dict(json.loads(line)) for line in lines[1:])
    return Corpus(
        name=header["name"],
        version=header["version"],
        dialogues=dialogues,
        schema=schema_from_dict(header["schema"]),
    )
