"""Acceptance gate: the nine guarantees this package ships under.

Each criterion records exactly one PASS/FAIL line; the conftest terminal
summary hook prints them after the run so they survive output capture.
Tolerances are pinned in the assertions themselves; nothing here adapts
to what the code happens to produce.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import time
from pathlib import Path

import pytest

from opendst.budget import QaTraceCounts, Strategy, count_requests, reduction_percent
from opendst.core import (
    DONTCARE,
    REQUESTED,
    DialogueState,
    EntityType,
    ValueKind,
    deserialize_slot_value,
    informed,
    slot_value_from_raw,
)
from opendst.datasets.stats import CorpusStats
from opendst.evaluator import jga
from opendst.pipeline import RunConfig, run_pipeline
from opendst.prompts import load_assets
from opendst.srp import build_srp_prompt

import test_evaluator as oracle


VERDICTS: list[str] = []


def _verdict(criterion: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}"
    if detail and not ok:
        line += f"  ({detail})"
    VERDICTS.append(line)
    print(line, flush=True)
    assert ok, f"{criterion}: {detail}"


def _run(gen_corpus_path, out_dir, **kw) -> RunConfig:
    base = dict(
        dataset="multiwoz-2.4",
        data_path=str(gen_corpus_path),
        method="srp",
        domain_source="predicted",
        backend="mock:gold",
        output_dir=str(out_dir),
        figures=False,
    )
    base.update(kw)
    return RunConfig(**base)


# --------------------------------------------------------------------------
def test_criterion_1_request_budget_closed_forms():
    """Whole-corpus request budgets reproduce from corpus statistics alone."""
    started = time.monotonic()
    stats = CorpusStats(
        dialogue_count=1000,
        turn_count=7372,
        slot_count=61,
        avg_domains_per_turn=13100 / 7372,
        avg_slots_per_domain=61 / 8,
    )
    all_slots = count_requests(Strategy.ALL_SLOTS, stats)
    one_prompt = count_requests(Strategy.ALL_SLOTS_ONE_PROMPT, stats)
    srp = count_requests(Strategy.SRP, stats)
    qa = count_requests(
        Strategy.QA, stats, qa_counts=QaTraceCounts(extraction=7372, dontcare=6000, mcq=3028)
    )
    elapsed = time.monotonic() - started
    problems = []
    if abs(all_slots.per_dialogue - 449.7) > 0.05:
        problems.append(f"all-slots {all_slots.per_dialogue}")
    if abs(one_prompt.per_dialogue - 7.4) > 0.05:
        problems.append(f"one-prompt {one_prompt.per_dialogue}")
    if abs(srp.per_dialogue - 13.1) > 0.2:
        problems.append(f"srp {srp.per_dialogue}")
    if abs(reduction_percent(srp, all_slots) - 97.08) > 0.05:
        problems.append(f"srp reduction {reduction_percent(srp, all_slots)}")
    if abs(reduction_percent(qa, all_slots) - 96.35) > 0.05:
        problems.append(f"qa reduction {reduction_percent(qa, all_slots)}")
    if elapsed > 60:
        problems.append(f"took {elapsed:.1f}s")
    _verdict(
        "criterion 1: closed-form request budgets (449.7 / 7.4 / 13.1 per dialogue, "
        "97.08% and 96.35% reductions)",
        not problems,
        "; ".join(problems),
    )


# --------------------------------------------------------------------------
def test_criterion_2_metrics_match_independent_recount():
    """JGA and active-slot accuracy agree with a brute-force reimplementation
    on 200 randomized dialogues, to 1e-12."""
    rng = random.Random(42)
    dialogues = oracle._corpus(rng, 200)
    preds = [[p for p, _ in d] for d in dialogues]
    golds = [[g for _, g in d] for d in dialogues]
    from opendst.evaluator import aga as aga_fn
    from opendst.evaluator import per_slot_accuracy

    jga_delta = abs(jga(preds, golds) - oracle._oracle_jga(dialogues))
    aga_delta = abs(aga_fn(preds, golds) - oracle._oracle_aga(dialogues))
    slots_got = per_slot_accuracy(preds, golds)
    slots_want = oracle._oracle_per_slot(dialogues)
    slot_delta = max(
        (abs(slots_got[k] - slots_want[k]) for k in slots_want), default=0.0
    ) if slots_got.keys() == slots_want.keys() else 1.0
    ok = jga_delta < 1e-12 and aga_delta < 1e-12 and slot_delta < 1e-12
    _verdict(
        "criterion 2: metrics equal an independent recount on 200 randomized dialogues (<1e-12)",
        ok,
        f"jga delta {jga_delta}, aga delta {aga_delta}, slot delta {slot_delta}",
    )


# --------------------------------------------------------------------------
def test_criterion_3_gold_scripted_end_to_end(gen_corpus_path, tmp_path):
    """Both routes, with predicted domains and the gold-scripted backend,
    track the 20-dialogue fixture perfectly; the per-domain route issues
    exactly one tracking request per (turn, active domain)."""
    srp_out = tmp_path / "srp"
    qa_out = tmp_path / "qa"
    srp_report = run_pipeline(_run(gen_corpus_path, srp_out, method="srp"))
    qa_report = run_pipeline(_run(gen_corpus_path, qa_out, method="qa"))
    problems = []
    for label, report in (("srp", srp_report), ("qa", qa_report)):
        if report.jga != 1.0:
            problems.append(f"{label} jga {report.jga}")
        if report.aga != 1.0:
            problems.append(f"{label} aga {report.aga}")
        if report.domain_accuracy != 1.0:
            problems.append(f"{label} domain accuracy {report.domain_accuracy}")
    active_total = 0
    with (srp_out / "predictions.jsonl").open() as fh:
        for line in fh:
            active_total += len(json.loads(line)["active_domains"])
    measured = srp_report.extras["measured_requests"]["srp-tracking"]
    if measured != active_total:
        problems.append(f"srp requests {measured} != active domain-turns {active_total}")
    _verdict(
        "criterion 3: gold-scripted end-to-end runs score JGA=AGA=domain accuracy=1.0 "
        "and one tracking request per active domain-turn",
        not problems,
        "; ".join(problems),
    )


# --------------------------------------------------------------------------
def test_criterion_4_fault_injection_moves_jga_exactly():
    """Corrupting k of n per-turn predictions lowers JGA by exactly k/n."""
    n = 10
    gold = [DialogueState({"alpha.one": informed("falcon")}) for _ in range(n)]
    problems = []
    for k in (0, 1, 3, 7, n):
        preds = list(gold)
        for i in range(k):
            preds[i] = DialogueState({"alpha.one": informed("corrupted-value")})
        got = jga([preds], [gold])
        want = (n - k) / n
        if got != want:
            problems.append(f"k={k}: {got} != {want}")
    _verdict(
        "criterion 4: corrupting k of n turn predictions drops JGA by exactly k/n",
        not problems,
        "; ".join(problems),
    )


# --------------------------------------------------------------------------
# The reference slot inventory, written out by hand. 60 tracked slots.
_REFERENCE_SLOTS = {
    "attraction.name": "NAME", "attraction.type": "TYPE", "attraction.area": "LOCATION",
    "attraction.address": "LOCATION", "attraction.phone": "NUMBER", "attraction.post-code": "CODE",
    "attraction.entrance-fee": "PRICE", "attraction.open-hours": "TIME",
    "bus.day": "DAY", "bus.departure": "LOCATION", "bus.destination": "LOCATION", "bus.leave-at": "TIME",
    "hospital.department": "NAME", "hospital.address": "LOCATION", "hospital.phone": "NUMBER",
    "hotel.name": "NAME", "hotel.type": "TYPE", "hotel.price-range": "RANGE", "hotel.area": "LOCATION",
    "hotel.address": "LOCATION", "hotel.phone": "NUMBER", "hotel.post-code": "CODE",
    "hotel.stars": "NUMBER", "hotel.parking": "BOOLEAN", "hotel.internet": "BOOLEAN",
    "hotel.book-day": "DAY", "hotel.book-stay": "NUMBER", "hotel.book-people": "NUMBER",
    "hotel.reference-code": "CODE",
    "police.name": "NAME", "police.address": "LOCATION", "police.phone": "NUMBER",
    "police.post-code": "CODE",
    "restaurant.name": "NAME", "restaurant.food": "TYPE", "restaurant.price-range": "RANGE",
    "restaurant.area": "LOCATION", "restaurant.address": "LOCATION", "restaurant.phone": "NUMBER",
    "restaurant.post-code": "CODE", "restaurant.book-day": "DAY", "restaurant.book-time": "TIME",
    "restaurant.book-people-count": "NUMBER", "restaurant.reference-code": "CODE",
    "taxi.departure": "NAME", "taxi.destination": "NAME", "taxi.leave-at": "TIME",
    "taxi.arrive-by": "TIME", "taxi.type": "TYPE", "taxi.phone": "NUMBER",
    "train.train-id": "NAME", "train.day": "DAY", "train.departure": "LOCATION",
    "train.destination": "LOCATION", "train.leave-at": "TIME", "train.arrive-by": "TIME",
    "train.duration": "NUMBER", "train.price": "PRICE", "train.book-people-count": "NUMBER",
    "train.reference-code": "CODE",
}


def test_criterion_5_slot_type_inventory(schema):
    """The schema's slot-to-entity-type mapping matches an independent hand
    written table, and type lookups route to the exact slots."""
    problems = []
    keys = schema.slot_keys()
    if set(keys) != set(_REFERENCE_SLOTS):
        problems.append(
            f"key sets differ: +{set(keys) - set(_REFERENCE_SLOTS)} -{set(_REFERENCE_SLOTS) - set(keys)}"
        )
    else:
        for key, type_name in _REFERENCE_SLOTS.items():
            got = schema.slot_spec(key).entity_type.value
            if got != type_name:
                problems.append(f"{key}: {got} != {type_name}")
    if len(_REFERENCE_SLOTS) != 60:
        problems.append(f"reference table has {len(_REFERENCE_SLOTS)} entries")
    time_train = schema.slots_of_type(EntityType.TIME, domains={"train"})
    if time_train != ("train.arrive-by", "train.leave-at"):
        problems.append(f"TIME x train -> {time_train}")
    _verdict(
        "criterion 5: slot inventory and entity types match the hand-written reference table",
        not problems,
        "; ".join(problems[:4]),
    )


# --------------------------------------------------------------------------
_ASSET_PINS = {
    "domain_classification.txt": "15b62fb1a8e4de3437bebf6dda3e1bda907d741c733dfe93401c7e8a2cbb6fbf",
    "entity_extraction.txt": "45a80812de044f443c43941baefaeecc4fa4aeb597b8cb3f65d299b08a07a694",
    "entity_extraction_extended.txt": "dc1078a1ce796263a234c0439601fb89947e6aeeb4139eb5d93257f6a51a8a7b",
    "mcq_answering.txt": "d0366d030a45a81ad9be18d3d9c3b3cc90af3893517c5c603ccf11f3b7bc7977",
    "seed_domain_classification.txt": "f660b717c79311c82251f837eb7e1d603ffb175f8c2e7209a65e12f62c7d1bce",
    "seed_srp_tracking.txt": "86268ccc11fa52a0205601a4b15864c7d9a17ca2d53dc903191146043222f75a",
    "srp_gpt-3.5-turbo.txt": "4bc4c11aeac696d16f57a160dce8eb0e9affde5d1cd4d76176e611aaebf76dc8",
    "srp_gpt-4-turbo.txt": "df17c6fab1af76805d84eba888ed5a0aefec470938f136d72622b80430f6ae98",
    "srp_llama-3.txt": "52a1a39b465536a768bd1b7332b61a779bfef595a81efec6d7cd7d6b1405bf17",
}

_ASSET_SENTENCES = {
    "domain_classification.txt": "Which of the domains (one or more domains) the user is asking service for?",
    "entity_extraction.txt": "If no entities are presented in any categories keep it [].",
    "entity_extraction_extended.txt": "-DAY:",
    "mcq_answering.txt": "Can you select the value of the {slotname} in the last turn",
    "srp_gpt-4-turbo.txt": "Please meticulously extract and catalog the slot values",
    "srp_gpt-3.5-turbo.txt": "inquiries about {domain} regarding specific slots",
    "srp_llama-3.txt": "track the following {domain} slots",
}


def test_criterion_6_prompt_asset_fidelity(schema, library):
    """The prompt assets are byte-for-byte the pinned texts, carry their
    distinctive instruction sentences, and every tracking template renders
    for every domain."""
    import opendst

    asset_dir = Path(opendst.__file__).parent / "assets"
    problems = []
    for name, pin in _ASSET_PINS.items():
        path = asset_dir / name
        if not path.exists():
            problems.append(f"{name} missing")
            continue
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if digest != pin:
            problems.append(f"{name} digest drifted")
        sentence = _ASSET_SENTENCES.get(name)
        if sentence and sentence not in path.read_text(encoding="utf-8"):
            problems.append(f"{name} lost its distinctive sentence")
    extra = {p.name for p in asset_dir.glob("*.txt")} - set(_ASSET_PINS)
    if extra:
        problems.append(f"unpinned assets: {sorted(extra)}")
    for model_key in ("gpt-4-turbo", "gpt-3.5-turbo", "llama-3"):
        for domain in sorted(schema.domains):
            try:
                spec = build_srp_prompt(domain, schema, model_key, "USER: hi", library=library)
            except Exception as exc:  # noqa: BLE001 - any render failure fails the gate
                problems.append(f"{model_key}/{domain}: {exc}")
                continue
            if domain not in spec.text:
                problems.append(f"{model_key}/{domain}: domain not in rendered prompt")
    _verdict(
        "criterion 6: prompt assets match their SHA-256 pins and render for all domains",
        not problems,
        "; ".join(problems[:4]),
    )


# --------------------------------------------------------------------------
def test_criterion_7_value_marker_semantics():
    """'*' and '?' round-trip as markers, absence stays absent, and no
    malformed surface string can turn absence into a tracked value."""
    problems = []
    if DONTCARE.serialize() != "*" or deserialize_slot_value("*") is not DONTCARE:
        problems.append("dontcare marker")
    if REQUESTED.serialize() != "?" or deserialize_slot_value("?") is not REQUESTED:
        problems.append("requested marker")
    for spelling in ("dontcare", "don't care", "do not care", "any", "*"):
        if slot_value_from_raw(spelling) != DONTCARE:
            problems.append(f"{spelling!r} not read as no-preference")
    for spelling in ("", "none", "not mentioned", "null"):
        if slot_value_from_raw(spelling) is not None:
            problems.append(f"{spelling!r} not read as absence")
    if slot_value_from_raw("dontcare") == slot_value_from_raw("none"):
        problems.append("no-preference and absence confused")

    rng = random.Random(1729)
    fragments = ["*", "?", "none", "dontcare", "ANY", " The Cheap ", "5:45 pm", "a1b2", "", "  ", "Don'T CaRe", "null"]
    words = ["north", "acorn house", "2", "friday", "do not care", "not mentioned", "guesthouse"]
    for case in range(50):
        raw = rng.choice(fragments + words) + (rng.choice(["", " ", "x"]) if rng.random() < 0.4 else "")
        value = slot_value_from_raw(raw)
        if value is None:
            continue
        wire = value.serialize()
        back = deserialize_slot_value(wire)
        if back != value:
            problems.append(f"case {case} ({raw!r}): {value} -> {wire!r} -> {back}")
        if value.kind is ValueKind.INFORMED and wire in ("*", "?"):
            problems.append(f"case {case}: informed value serialized as a marker")
    state = DialogueState({"a.b": DONTCARE, "a.c": informed("x")})
    if DialogueState.deserialize(state.serialize()) != state:
        problems.append("state round trip")
    if "a.d" in DialogueState.deserialize(state.serialize()).entries:
        problems.append("absence materialized")
    _verdict(
        "criterion 7: marker serialization round-trips and absence is never a value",
        not problems,
        "; ".join(problems[:4]),
    )


# --------------------------------------------------------------------------
def test_criterion_8_determinism_and_resume(gen_corpus_path, tmp_path):
    """Two clean runs are byte-identical; an interrupted run resumed from its
    checkpoint produces the same bytes as a one-shot run."""
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    out_c = tmp_path / "c"
    run_pipeline(_run(gen_corpus_path, out_a, figures=True))
    run_pipeline(_run(gen_corpus_path, out_b, figures=True))
    with pytest.raises(KeyboardInterrupt):
        run_pipeline(_run(gen_corpus_path, out_c, figures=True), interrupt_after=7)
    run_pipeline(_run(gen_corpus_path, out_c, figures=True))

    problems = []

    def compare(left: Path, right: Path, label: str) -> None:
        for rel in ("predictions.jsonl", "budget.csv", "misclassification_matrix.csv"):
            if (left / rel).read_bytes() != (right / rel).read_bytes():
                problems.append(f"{label}: {rel} differs")
        left_figs = sorted(p.name for p in (left / "figures").glob("*.png"))
        right_figs = sorted(p.name for p in (right / "figures").glob("*.png"))
        if left_figs != right_figs or not left_figs:
            problems.append(f"{label}: figure sets differ")
        else:
            for name in left_figs:
                if (left / "figures" / name).read_bytes() != (right / "figures" / name).read_bytes():
                    problems.append(f"{label}: figures/{name} differs")
        report_l = json.loads((left / "report.json").read_text())
        report_r = json.loads((right / "report.json").read_text())
        report_l["extras"]["config"].pop("output_dir")
        report_r["extras"]["config"].pop("output_dir")
        if report_l != report_r:
            problems.append(f"{label}: report differs beyond the echoed output path")

    compare(out_a, out_b, "rerun")
    compare(out_a, out_c, "resume")
    _verdict(
        "criterion 8: reruns and interrupt/resume produce byte-identical outputs",
        not problems,
        "; ".join(problems[:4]),
    )


# --------------------------------------------------------------------------
def test_criterion_9_live_endpoint_smoke(gen_corpus_path, tmp_path):
    """Optional: a one-dialogue run against a real endpoint, exercised only
    when credentials are provided via the environment."""
    model = os.environ.get("OPENDST_LIVE_MODEL", "")
    if not (os.environ.get("OPENDST_API_KEY") and model):
        VERDICTS.append(
            "[SKIP] criterion 9: live endpoint smoke (set OPENDST_API_KEY and "
            "OPENDST_LIVE_MODEL to enable)"
        )
        pytest.skip("no live credentials in the environment")
    config = _run(
        gen_corpus_path,
        tmp_path / "live",
        backend=model,
        endpoint=os.environ.get("OPENDST_LIVE_ENDPOINT", "https://api.openai.com/v1"),
        dialogue_limit=1,
        rpm=30.0,
    )
    report = run_pipeline(config)
    ok = report.turn_count > 0 and report.extras["measured_requests"]["total"] > 0
    _verdict("criterion 9: live endpoint smoke completed a dialogue", ok)
