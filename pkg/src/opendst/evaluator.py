"""Scoring: joint and per-slot state accuracy, domain classification
accuracy and the supporting breakdowns.

All functions take either flat aligned sequences or per-dialogue nested
ones; metrics that need dialogue boundaries (active-slot accuracy, turn
position curves) require the nested form to mean anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import DialogueState, SlotValue, ValueKind, state_diff
from .similarity import FUZZY_THRESHOLD, fuzzy_match

__all__ = [
    "LengthMismatch",
    "EvalReport",
    "values_match",
    "states_match",
    "jga",
    "aga",
    "domain_accuracy",
    "domain_label_scores",
    "per_domain_jga",
    "per_slot_accuracy",
    "turn_position_accuracy",
    "misclassification_matrix",
    "build_report",
    "write_matrix_csv",
]


class LengthMismatch(ValueError):
    """Prediction and gold sequences are not aligned."""


def values_match(pred: SlotValue, gold: SlotValue, threshold: float = FUZZY_THRESHOLD) -> bool:
    """Two slot values agree. An explicit no-preference only matches another
    no-preference, never a concrete value and never absence."""
    if pred.kind is not gold.kind:
        return False
    if pred.kind is not ValueKind.INFORMED:
        return True
    return fuzzy_match(pred.text, gold.text, threshold)


def states_match(pred: DialogueState, gold: DialogueState, threshold: float = FUZZY_THRESHOLD) -> bool:
    """Exact joint match: same tracked slots, every value in agreement."""
    p, g = pred.scoring_entries(), gold.scoring_entries()
    if p.keys() != g.keys():
        return False
    return all(values_match(p[k], g[k], threshold) for k in p)


def _nested(preds: Sequence, golds: Sequence) -> tuple[list[list], list[list]]:
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} golds")
    items_p = list(preds)
    items_g = list(golds)
    if not items_p:
        return [], []
    if isinstance(items_p[0], (DialogueState, frozenset, set)):
        return [items_p], [items_g]
    out_p, out_g = [], []
    for i, (dp, dg) in enumerate(zip(items_p, items_g)):
        dp, dg = list(dp), list(dg)
        if len(dp) != len(dg):
            raise LengthMismatch(f"dialogue {i}: {len(dp)} predictions vs {len(dg)} golds")
        out_p.append(dp)
        out_g.append(dg)
    return out_p, out_g


def _flat(preds: Sequence, golds: Sequence) -> tuple[list, list]:
    np_, ng = _nested(preds, golds)
    return [x for d in np_ for x in d], [x for d in ng for x in d]


def jga(preds: Sequence, golds: Sequence, threshold: float = FUZZY_THRESHOLD) -> float:
    """Fraction of user turns whose whole predicted state matches gold."""
    p, g = _flat(preds, golds)
    if not p:
        return 0.0
    return sum(states_match(a, b, threshold) for a, b in zip(p, g)) / len(p)


def aga(preds: Sequence, golds: Sequence, threshold: float = FUZZY_THRESHOLD) -> float:
    """Active-slot accuracy, averaged over turns.

    A slot is active at a turn when gold sets or changes it there. Turns
    with no active slots do not count toward the average.
    """
    nested_p, nested_g = _nested(preds, golds)
    per_turn: list[float] = []
    for dp, dg in zip(nested_p, nested_g):
        gold_prev = DialogueState({})
        for pred_state, gold_state in zip(dp, dg):
            active = state_diff(gold_prev, gold_state).scoring_entries()
            gold_prev = gold_state
            if not active:
                continue
            pred_entries = pred_state.scoring_entries()
            hits = sum(
                1
                for key, gold_value in active.items()
                if key in pred_entries and values_match(pred_entries[key], gold_value, threshold)
            )
            per_turn.append(hits / len(active))
    if not per_turn:
        return 0.0
    return sum(per_turn) / len(per_turn)


def domain_accuracy(preds: Sequence, golds: Sequence) -> float:
    """Fraction of user turns whose predicted domain set equals gold exactly."""
    p, g = _flat(preds, golds)
    if not p:
        return 0.0
    return sum(frozenset(a) == frozenset(b) for a, b in zip(p, g)) / len(p)


def domain_label_scores(preds: Sequence, golds: Sequence) -> dict[str, dict[str, float]]:
    """Per-domain precision, recall and F1 over turn-level set membership."""
    p, g = _flat(preds, golds)
    tp: dict[str, int] = {}
    fp: dict[str, int] = {}
    fn: dict[str, int] = {}
    for a, b in zip(p, g):
        a, b = frozenset(a), frozenset(b)
        for d in a & b:
            tp[d] = tp.get(d, 0) + 1
        for d in a - b:
            fp[d] = fp.get(d, 0) + 1
        for d in b - a:
            fn[d] = fn.get(d, 0) + 1
    out = {}
    for d in sorted(set(tp) | set(fp) | set(fn)):
        t, f_p, f_n = tp.get(d, 0), fp.get(d, 0), fn.get(d, 0)
        precision = t / (t + f_p) if t + f_p else 0.0
        recall = t / (t + f_n) if t + f_n else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[d] = {"precision": precision, "recall": recall, "f1": f1}
    return out


def per_domain_jga(preds: Sequence, golds: Sequence, threshold: float = FUZZY_THRESHOLD) -> dict[str, float]:
    """Joint accuracy of each domain's slice of the state, counted over
    turns where either side tracks that domain."""
    p, g = _flat(preds, golds)
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for pred_state, gold_state in zip(p, g):
        for domain in pred_state.domains() | gold_state.domains():
            totals[domain] = totals.get(domain, 0) + 1
            if states_match(pred_state.restrict([domain]), gold_state.restrict([domain]), threshold):
                hits[domain] = hits.get(domain, 0) + 1
    return {d: hits.get(d, 0) / totals[d] for d in sorted(totals)}


def per_slot_accuracy(preds: Sequence, golds: Sequence, threshold: float = FUZZY_THRESHOLD) -> dict[str, float]:
    """For each slot, the fraction of its gold occurrences the tracker got."""
    p, g = _flat(preds, golds)
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for pred_state, gold_state in zip(p, g):
        pred_entries = pred_state.scoring_entries()
        for key, gold_value in gold_state.scoring_entries().items():
            totals[key] = totals.get(key, 0) + 1
            if key in pred_entries and values_match(pred_entries[key], gold_value, threshold):
                hits[key] = hits.get(key, 0) + 1
    return {k: hits.get(k, 0) / totals[k] for k in sorted(totals)}


def turn_position_accuracy(preds: Sequence, golds: Sequence, threshold: float = FUZZY_THRESHOLD) -> list[float]:
    """Joint-match rate by user-turn position, over dialogues long enough to
    have that position."""
    nested_p, nested_g = _nested(preds, golds)
    hits: list[int] = []
    totals: list[int] = []
    for dp, dg in zip(nested_p, nested_g):
        for pos, (a, b) in enumerate(zip(dp, dg)):
            if pos >= len(totals):
                totals.append(0)
                hits.append(0)
            totals[pos] += 1
            hits[pos] += states_match(a, b, threshold)
    return [h / t for h, t in zip(hits, totals)]


def misclassification_matrix(preds: Sequence, golds: Sequence, domains: Sequence[str]) -> np.ndarray:
    """Square count matrix of domain confusions: cell (g, p) counts turns
    where gold domain g was missed while domain p was predicted spuriously.
    Correct predictions contribute nothing."""
    index = {d: i for i, d in enumerate(domains)}
    matrix = np.zeros((len(domains), len(domains)), dtype=np.int64)
    p, g = _flat(preds, golds)
    for pred_set, gold_set in zip(p, g):
        pred_set, gold_set = frozenset(pred_set), frozenset(gold_set)
        for missed in gold_set - pred_set:
            for spurious in pred_set - gold_set:
                if missed in index and spurious in index:
                    matrix[index[missed], index[spurious]] += 1
    return matrix


def write_matrix_csv(matrix: np.ndarray, labels: Sequence[str], path: str | Path) -> None:
    lines = ["gold\\predicted," + ",".join(labels)]
    for i, label in enumerate(labels):
        lines.append(label + "," + ",".join(str(int(x)) for x in matrix[i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class EvalReport:
    """Everything a scored run produces, ready for serialization."""

    jga: float
    aga: float
    dialogue_count: int
    turn_count: int
    fuzzy_threshold: float
    domain_accuracy: float | None = None
    per_domain_jga: dict[str, float] = field(default_factory=dict)
    per_slot_accuracy: dict[str, float] = field(default_factory=dict)
    turn_position_accuracy: list[float] = field(default_factory=list)
    domain_change_profile: list[float] = field(default_factory=list)
    domain_label_scores: dict[str, dict[str, float]] = field(default_factory=dict)
    matrix_labels: list[str] = field(default_factory=list)
    misclassification: list[list[int]] = field(default_factory=list)
    ledger_rows: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "jga": self.jga,
            "aga": self.aga,
            "dialogue_count": self.dialogue_count,
            "turn_count": self.turn_count,
            "fuzzy_threshold": self.fuzzy_threshold,
            "domain_accuracy": self.domain_accuracy,
            "per_domain_jga": self.per_domain_jga,
            "per_slot_accuracy": self.per_slot_accuracy,
            "turn_position_accuracy": self.turn_position_accuracy,
            "domain_change_profile": self.domain_change_profile,
            "domain_label_scores": self.domain_label_scores,
            "matrix_labels": self.matrix_labels,
            "misclassification": self.misclassification,
            "ledger": self.ledger_rows,
            "extras": self.extras,
        }

    def render_text(self) -> str:
        lines = [
            f"dialogues: {self.dialogue_count}   user turns: {self.turn_count}",
            f"JGA: {self.jga:.4f}",
            f"AGA: {self.aga:.4f}",
        ]
        if self.domain_accuracy is not None:
            lines.append(f"domain accuracy: {self.domain_accuracy:.4f}")
        if self.per_domain_jga:
            lines.append("per-domain JGA:")
            for d, v in self.per_domain_jga.items():
                lines.append(f"  {d:<14} {v:.4f}")
        total_requests = sum(r["requests"] for r in self.ledger_rows)
        if self.ledger_rows:
            lines.append(f"requests: {total_requests}")
            for row in self.ledger_rows:
                lines.append(
                    f"  {row['stage']:<22} {row['backend']:<14} requests={row['requests']} failures={row['failures']}"
                )
        return "\n".join(lines)


def build_report(
    pred_states: Sequence,
    gold_states: Sequence,
    pred_domains: Sequence | None = None,
    gold_domains: Sequence | None = None,
    matrix_domains: Sequence[str] | None = None,
    ledger_rows: Sequence[Mapping] | None = None,
    threshold: float = FUZZY_THRESHOLD,
    extras: Mapping | None = None,
) -> EvalReport:
    nested_p, nested_g = _nested(pred_states, gold_states)
    flat_count = sum(len(d) for d in nested_p)
    report = EvalReport(
        jga=jga(nested_p, nested_g, threshold),
        aga=aga(nested_p, nested_g, threshold),
        dialogue_count=len(nested_p),
        turn_count=flat_count,
        fuzzy_threshold=threshold,
        per_domain_jga=per_domain_jga(nested_p, nested_g, threshold),
        per_slot_accuracy=per_slot_accuracy(nested_p, nested_g, threshold),
        turn_position_accuracy=turn_position_accuracy(nested_p, nested_g, threshold),
        ledger_rows=[dict(r) for r in ledger_rows] if ledger_rows else [],
        extras=dict(extras) if extras else {},
    )
    if pred_domains is not None and gold_domains is not None:
        report.domain_accuracy = domain_accuracy(pred_domains, gold_domains)
        report.domain_label_scores = domain_label_scores(pred_domains, gold_domains)
        if matrix_domains:
            labels = list(matrix_domains)
            matrix = misclassification_matrix(pred_domains, gold_domains, labels)
            report.matrix_labels = labels
            report.misclassification = [[int(x) for x in row] for row in matrix]
    return report
