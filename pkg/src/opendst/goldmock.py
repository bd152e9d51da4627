"""A backend that answers every pipeline prompt from gold annotations.

Given a corpus with gold per-turn domains and states, it recognizes which
stage a prompt belongs to, locates the dialogue turn being asked about, and
replies with the gold answer in the stage's expected format. This makes a
full offline pipeline run deterministic and supposed to score perfectly,
which is what end-to-end tests pin.

Utterances must be single-line and unique across the corpus (after
whitespace normalization); the constructor enforces this.
"""

from __future__ import annotations

import json
import re

from .core import DialogueState, SlotValue, ValueKind, state_diff
from .datasets.corpus import Corpus
from .gateway import BackendRefusal, SamplingParams

_MCQ_KEY_RE = re.compile(r"JSON with the ([A-Za-z0-9._-]+) as key")


def _norm(utterance: str) -> str:
    return " ".join(utterance.split())


class GoldScriptedBackend:
    name = "gold-mock"

    def __init__(self, corpus: Corpus):
        self.schema = corpus.schema
        self._by_utterance: dict[str, tuple[str, int]] = {}
        self._turn_domains: dict[tuple[str, int], frozenset[str]] = {}
        self._deltas: dict[tuple[str, int], DialogueState] = {}
        self._slot_by_hyphen = {key.replace(".", "-"): key for key in corpus.schema.slot_keys()}
        for dialogue in corpus.dialogues:
            if dialogue.gold_turn_domains is None or dialogue.gold_states is None:
                raise ValueError(f"{dialogue.id}: gold annotations required")
            prev = DialogueState({})
            for ordinal, turn in enumerate(dialogue.user_turns()):
                key = _norm(turn.utterance)
                if key in self._by_utterance:
                    raise ValueError(f"utterance collision: {key!r}")
                self._by_utterance[key] = (dialogue.id, ordinal)
                self._turn_domains[(dialogue.id, ordinal)] = dialogue.gold_turn_domains[ordinal]
                state = dialogue.gold_states[ordinal]
                self._deltas[(dialogue.id, ordinal)] = state_diff(prev, state)
                prev = state

    def _locate_last_user(self, text: str) -> tuple[str, int]:
        for line in reversed(text.splitlines()):
            if line.startswith("USER: "):
                utterance = _norm(line[len("USER: "):])
                if utterance in self._by_utterance:
                    return self._by_utterance[utterance]
                raise BackendRefusal(f"unknown user utterance {utterance!r}")
        raise BackendRefusal("prompt has no USER line")

    def _locate_bare(self, utterance: str) -> tuple[str, int]:
        key = _norm(utterance)
        if key not in self._by_utterance:
            raise BackendRefusal(f"unknown user utterance {key!r}")
        return self._by_utterance[key]

    @staticmethod
    def _surface(value: SlotValue) -> str:
        if value.kind is ValueKind.DONTCARE:
            return "dontcare"
        if value.kind is ValueKind.REQUESTED:
            return "?"
        return value.text

    def send(self, text: str, params: SamplingParams) -> str:
        if "Which of the domains" in text:
            return self._answer_domains(text)
        if "Entity definition:" in text:
            return self._answer_extraction(text)
        if "Can you select the value of the" in text:
            return self._answer_mcq(text)
        if "user explicitly indicates no preference" in text:
            return self._answer_dontcare(text)
        if "dialogue state tracker" in text or 'list of concepts, called "slots"' in text:
            return self._answer_srp(text)
        raise BackendRefusal(f"unrecognized prompt: {text[:80]!r}")

    def _answer_domains(self, text: str) -> str:
        where = self._locate_last_user(text)
        return json.dumps({"domains": sorted(self._turn_domains[where])})

    def _answer_extraction(self, text: str) -> str:
        try:
            segment = text.split("If no entities are presented in any categories keep it [].", 1)[1]
            utterance = segment.rsplit("Output:", 1)[0].strip()
        except IndexError:
            raise BackendRefusal("extraction prompt missing its sentence") from None
        where = self._locate_bare(utterance)
        delta = self._deltas[where]
        payload: dict[str, list[str]] = {}
        for key, value in sorted(delta.entries.items()):
            if not value.is_informed:
                continue
            etype = self.schema.slot_spec(key).entity_type
            payload.setdefault(etype.value, [])
            if value.text not in payload[etype.value]:
                payload[etype.value].append(value.text)
        return json.dumps(payload)

    def _answer_dontcare(self, text: str) -> str:
        try:
            segment = text.split("Consider this dialogue turn from a USER:", 1)[1]
            utterance = segment.split("From the tracked slots", 1)[0].strip()
        except IndexError:
            raise BackendRefusal("scan prompt missing its turn") from None
        where = self._locate_bare(utterance)
        delta = self._deltas[where]
        flagged = sorted(k for k, v in delta.entries.items() if v.kind is ValueKind.DONTCARE)
        return json.dumps({"dontcare": flagged})

    def _answer_mcq(self, text: str) -> str:
        match = _MCQ_KEY_RE.search(text)
        if not match:
            raise BackendRefusal("question prompt missing its answer key")
        hyphen_key = match.group(1)
        slot_key = self._slot_by_hyphen.get(hyphen_key)
        if slot_key is None:
            raise BackendRefusal(f"unknown slot key {hyphen_key!r}")
        where = self._locate_last_user(text)
        value = self._deltas[where].get(slot_key)
        answer = "None" if value is None else self._surface(value)
        return json.dumps({hyphen_key: answer})

    def _answer_srp(self, text: str) -> str:
        domain = None
        for candidate in sorted(self.schema.domains):
            patterns = (
                f"a SYSTEM about {candidate}. Please meticulously",
                f"inquiries about {candidate} regarding specific slots",
                f"task is to track the following {candidate} slots",
            )
            if any(p in text for p in patterns):
                domain = candidate
                break
        if domain is None:
            raise BackendRefusal("tracking prompt names no known domain")
        where = self._locate_last_user(text)
        delta = self._deltas[where].restrict([domain])
        payload = {key.partition(".")[2]: value.serialize() for key, value in sorted(delta.entries.items())}
        return json.dumps(payload)
