"""Corpus statistics used for reporting and request budgeting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from ..core import cumulative_domains
from .corpus import Corpus, MissingGold


@dataclass(frozen=True)
class CorpusStats:
    """Measured corpus quantities.

    ``avg_domains_per_turn`` averages, over user turns, the size of the set
    of domains active so far (the running union of per-turn domains), which
    is the set a tracker has to cover at that turn.
    ``domain_change_profile[p]`` is the mean number of domains that become
    active at user-turn position p.
    """

    dialogue_count: int
    turn_count: int
    slot_count: int
    avg_domains_per_turn: float
    avg_slots_per_domain: float
    domain_change_profile: tuple[float, ...] = ()
    slots_per_domain: Mapping[str, int] = field(default_factory=dict)
    domain_turn_counts: Mapping[str, int] = field(default_factory=dict)

    @property
    def total_domain_turns(self) -> float:
        """Sum over user turns of the active-domain count. Exact when the
        per-domain turn counts were measured; otherwise reconstructed from
        the average."""
        if self.domain_turn_counts:
            return float(sum(self.domain_turn_counts.values()))
        return self.avg_domains_per_turn * self.turn_count

    def to_dict(self) -> dict:
        return {
            "dialogue_count": self.dialogue_count,
            "turn_count": self.turn_count,
            "slot_count": self.slot_count,
            "avg_domains_per_turn": self.avg_domains_per_turn,
            "avg_slots_per_domain": self.avg_slots_per_domain,
            "domain_change_profile": list(self.domain_change_profile),
            "slots_per_domain": dict(sorted(self.slots_per_domain.items())),
            "domain_turn_counts": dict(sorted(self.domain_turn_counts.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CorpusStats":
        return cls(
            dialogue_count=int(data["dialogue_count"]),
            turn_count=int(data["turn_count"]),
            slot_count=int(data["slot_count"]),
            avg_domains_per_turn=float(data["avg_domains_per_turn"]),
            avg_slots_per_domain=float(data["avg_slots_per_domain"]),
            domain_change_profile=tuple(data.get("domain_change_profile", ())),
            slots_per_domain=dict(data.get("slots_per_domain", {})),
            domain_turn_counts=dict(data.get("domain_turn_counts", {})),
        )


def corpus_stats(corpus: Corpus) -> CorpusStats:
    """Measure a corpus. Needs gold per-turn domains on every dialogue."""
    turn_count = 0
    active_total = 0
    domain_turn_counts: dict[str, int] = {}
    change_sums: list[float] = []
    change_counts: list[int] = []
    for dialogue in corpus.dialogues:
        if dialogue.gold_turn_domains is None:
            raise MissingGold(f"{dialogue.id}: no gold turn domains")
        active = cumulative_domains(dialogue.gold_turn_domains)
        turn_count += len(active)
        prev_size = 0
        for pos, domains in enumerate(active):
            active_total += len(domains)
            for d in domains:
                domain_turn_counts[d] = domain_turn_counts.get(d, 0) + 1
            if pos >= len(change_sums):
                change_sums.append(0.0)
                change_counts.append(0)
            change_sums[pos] += len(domains) - prev_size
            change_counts[pos] += 1
            prev_size = len(domains)
    if turn_count == 0:
        raise MissingGold("corpus has no user turns")
    slots_per_domain = corpus.schema.slots_per_domain()
    slot_count = sum(slots_per_domain.values())
    return CorpusStats(
        dialogue_count=len(corpus.dialogues),
        turn_count=turn_count,
        slot_count=slot_count,
        avg_domains_per_turn=active_total / turn_count,
        avg_slots_per_domain=slot_count / len(slots_per_domain),
        domain_change_profile=tuple(s / c for s, c in zip(change_sums, change_counts)),
        slots_per_domain=slots_per_domain,
        domain_turn_counts=domain_turn_counts,
    )
