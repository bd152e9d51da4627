"""Closed-form and measured request counts per querying strategy.

The point of the comparison: querying every schema slot at every turn costs
slots x turns requests, while tracking one prompt per active domain or a
question-answering pass over extracted entities costs a small fraction of
that on the same corpus.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .datasets.stats import CorpusStats
from .gateway import RequestLedger


class MissingTrace(ValueError):
    """A measured strategy was requested without measured counts."""


class Strategy(enum.Enum):
    ALL_SLOTS = "all-slots"
    TURN_DOMAIN_SLOTS = "turn-domain-slots"
    ALL_SLOTS_ONE_PROMPT = "all-slots-one-prompt"
    QA = "qa"
    SRP = "srp"


@dataclass(frozen=True, slots=True)
class QaTraceCounts:
    """Measured request counts of one question-answering run."""

    extraction: int
    dontcare: int
    mcq: int

    def total(self, with_dontcare: bool = True) -> int:
        return self.extraction + self.mcq + (self.dontcare if with_dontcare else 0)

    @classmethod
    def from_ledger(cls, ledger: RequestLedger) -> "QaTraceCounts":
        return cls(
            extraction=ledger.requests(stage="entity-extraction"),
            dontcare=ledger.requests(stage="dontcare-scan"),
            mcq=ledger.requests(stage="mcq-answering"),
        )


@dataclass(frozen=True, slots=True)
class StrategyCount:
    strategy: Strategy
    total: float
    per_dialogue: float


def count_requests(
    strategy: Strategy,
    stats: CorpusStats,
    qa_counts: QaTraceCounts | None = None,
    weighted: bool = False,
    with_dontcare: bool = True,
) -> StrategyCount:
    """Requests the strategy issues on the measured corpus.

    Closed forms: all-slots asks every schema slot each turn; turn-domain
    restricts that to the active domains' slots (``weighted`` uses each
    domain's own slot count instead of the schema average); one-prompt asks
    once per turn; srp asks once per active domain per turn. The qa strategy
    has no closed form and needs measured counts.
    """
    if strategy is Strategy.ALL_SLOTS:
        total = float(stats.slot_count * stats.turn_count)
    elif strategy is Strategy.TURN_DOMAIN_SLOTS:
        if weighted:
            if not stats.domain_turn_counts or not stats.slots_per_domain:
                raise MissingTrace("weighted turn-domain count needs per-domain measurements")
            total = float(
                sum(
                    turns * stats.slots_per_domain.get(domain, 0)
                    for domain, turns in stats.domain_turn_counts.items()
                )
            )
        else:
            total = stats.total_domain_turns * stats.avg_slots_per_domain
    elif strategy is Strategy.ALL_SLOTS_ONE_PROMPT:
        total = float(stats.turn_count)
    elif strategy is Strategy.SRP:
        total = float(stats.total_domain_turns)
    elif strategy is Strategy.QA:
        if qa_counts is None:
            raise MissingTrace("qa request count must be measured from a run ledger")
        total = float(qa_counts.total(with_dontcare))
    else:
        raise ValueError(strategy)
    return StrategyCount(strategy=strategy, total=total, per_dialogue=total / stats.dialogue_count)


def reduction_percent(count: StrategyCount, baseline: StrategyCount) -> float:
    """Relative saving versus a baseline, in percent."""
    if baseline.total <= 0:
        raise ValueError("baseline has no requests")
    return 100.0 * (1.0 - count.total / baseline.total)


def comparison_rows(
    stats: CorpusStats,
    qa_counts: QaTraceCounts | None = None,
    weighted: bool = False,
) -> list[dict]:
    """The full comparison table. The qa strategy appears twice when counts
    are available: with and without the no-preference scan."""
    counts: list[tuple[str, StrategyCount]] = []
    for strategy in (Strategy.ALL_SLOTS, Strategy.TURN_DOMAIN_SLOTS, Strategy.ALL_SLOTS_ONE_PROMPT, Strategy.SRP):
        if strategy is Strategy.TURN_DOMAIN_SLOTS and weighted and not stats.domain_turn_counts:
            continue
        counts.append((strategy.value, count_requests(strategy, stats, weighted=weighted)))
    if qa_counts is not None:
        counts.append((Strategy.QA.value, count_requests(Strategy.QA, stats, qa_counts=qa_counts)))
        if qa_counts.dontcare:
            counts.append(
                (
                    "qa-without-dontcare-scan",
                    count_requests(Strategy.QA, stats, qa_counts=qa_counts, with_dontcare=False),
                )
            )
    baseline = counts[0][1]
    rows = []
    for label, count in counts:
        rows.append(
            {
                "strategy": label,
                "total_requests": count.total,
                "requests_per_dialogue": count.per_dialogue,
                "reduction_vs_all_slots_pct": reduction_percent(count, baseline),
            }
        )
    return rows


def render_budget_text(rows: Iterable[Mapping]) -> str:
    header = f"{'strategy':<26} {'total':>12} {'per dialogue':>14} {'reduction %':>12}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['strategy']:<26} {row['total_requests']:>12.1f} "
            f"{row['requests_per_dialogue']:>14.3f} {row['reduction_vs_all_slots_pct']:>12.3f}"
        )
    return "\n".join(lines)


def write_budget_csv(rows: Iterable[Mapping], path: str | Path) -> None:
    rows = list(rows)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["strategy", "total_requests", "requests_per_dialogue", "reduction_vs_all_slots_pct"],
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in writer.fieldnames})
