"""Question-answering route: extraction, option building, constrained answers."""

from __future__ import annotations

import json

import pytest

from opendst.core import DONTCARE, DialogueState, EntityType, Speaker, Turn, informed
from opendst.gateway import MockBackend, RequestLedger, RetryPolicy, register_mock
from opendst.qa import (
    CORE_ENTITY_TYPES,
    EXTENDED_ENTITY_TYPES,
    McqQuestion,
    answer_mcq,
    build_mcq,
    cross_reference_values,
    detect_dontcare,
    extract_entities,
    match_entities_to_slots,
    qa_track_turn,
)

POLICY = RetryPolicy(max_attempts=2, base_delay=0.0, sleep=lambda s: None)


def _user(i, text):
    return Turn(index=i, speaker=Speaker.USER, utterance=text)


class TestEntityTypes:
    def test_core_has_seven_extended_adds_three(self):
        assert len(CORE_ENTITY_TYPES) == 7
        assert set(EXTENDED_ENTITY_TYPES) - set(CORE_ENTITY_TYPES) == {
            EntityType.DAY,
            EntityType.TYPE,
            EntityType.RANGE,
        }


class TestExtractEntities:
    def test_values_typed_and_normalized(self, library):
        backend = register_mock(
            {"Entity definition:": '{"TIME": ["5:45 pm"], "NAME": ["Acorn Guest House"]}'}
        )
        out = extract_entities(_user(0, "book acorn at 5:45 pm"), backend, library=library, retry=POLICY)
        got = {(e.entity_type, e.value) for e in out}
        assert (EntityType.TIME, "17:45") in got
        assert (EntityType.NAME, "acorn guest house") in got

    def test_duplicates_and_junk_dropped(self, library):
        backend = register_mock(
            {"Entity definition:": '{"NAME": ["acorn", "Acorn", "none", ""], "BOGUSTYPE": ["x"], "NUMBER": 4}'}
        )
        out = extract_entities(_user(0, "acorn"), backend, library=library, retry=POLICY)
        assert [(e.entity_type, e.value) for e in out] == [
            (EntityType.NAME, "acorn"),
            (EntityType.NUMBER, "4"),
        ]

    def test_unusable_reply_degrades_to_empty(self, library):
        backend = MockBackend(default="not json at all")
        ledger = RequestLedger()
        out = extract_entities(_user(0, "anything"), backend, library=library, ledger=ledger, retry=POLICY)
        assert out == []
        assert ledger.requests(stage="entity-extraction") == 2  # reprompt happened

    def test_extended_flag_switches_prompt(self, library):
        backend = MockBackend(default="{}")
        extract_entities(_user(0, "x"), backend, library=library, extended=False, retry=POLICY)
        extract_entities(_user(0, "x"), backend, library=library, extended=True, retry=POLICY)
        assert '"DAY"' not in backend.calls[0]
        assert '"DAY"' in backend.calls[1]


class TestMatching:
    def test_entities_route_to_active_domain_slots(self, schema, library):
        backend = register_mock({"Entity definition:": '{"TIME": ["09:00"]}'})
        entities = extract_entities(_user(0, "at 09:00"), backend, library=library, retry=POLICY)
        matches = match_entities_to_slots(entities, {"taxi"}, schema)
        assert len(matches) == 1
        assert matches[0].candidate_slots == ("taxi.arrive-by", "taxi.leave-at")

    def test_entity_without_candidates_dropped(self, schema, library):
        backend = register_mock({"Entity definition:": '{"PRICE": ["20 pounds"]}'})
        entities = extract_entities(_user(0, "20 pounds"), backend, library=library, retry=POLICY)
        # hotel has no PRICE slot (price-range is a RANGE)
        assert match_entities_to_slots(entities, {"hotel"}, schema) == []


class TestDontcareScan:
    def test_no_candidates_sends_nothing(self, schema):
        backend = MockBackend(default='{"dontcare": []}')
        out = detect_dontcare(_user(0, "x"), (), backend, retry=POLICY)
        assert out == frozenset() and backend.calls == []

    def test_alias_resolution(self, schema):
        backend = register_mock({"no preference": '{"dontcare": ["hotel-area", "hotel.parking", "mystery"]}'})
        out = detect_dontcare(
            _user(0, "anywhere is fine"),
            ("hotel.area", "hotel.parking", "hotel.name"),
            backend,
            retry=POLICY,
        )
        assert out == frozenset({"hotel.area", "hotel.parking"})

    def test_failure_degrades_to_empty(self, schema):
        backend = MockBackend(default="garbage")
        out = detect_dontcare(_user(0, "x"), ("hotel.area",), backend, retry=POLICY)
        assert out == frozenset()


class TestBuildMcq:
    def test_option_assembly_order(self, schema):
        prior = DialogueState({"restaurant.name": informed("cotto"), "restaurant.area": informed("west")})
        q = build_mcq("hotel.name", ["acorn"], prior, dontcare_flagged=True, schema=schema, turn_index=4)
        # entities first, then same-type cross references, then dontcare, None last
        assert q.options == ("acorn", "cotto", "dontcare", "None")
        assert q.turn_index == 4

    def test_duplicate_options_collapse(self, schema):
        prior = DialogueState({"restaurant.name": informed("acorn")})
        q = build_mcq("hotel.name", ["acorn"], prior, dontcare_flagged=False, schema=schema)
        assert q.options == ("acorn", "None")

    def test_cross_reference_same_type_only(self, schema):
        prior = DialogueState(
            {
                "hotel.name": informed("acorn guest house"),
                "hotel.area": informed("north"),
                "hotel.book-day": informed("monday"),
                "restaurant.book-time": informed("18:00"),
            }
        )
        assert cross_reference_values("taxi.destination", prior, schema) == ["acorn guest house"]
        assert cross_reference_values("taxi.leave-at", prior, schema) == ["18:00"]

    def test_cross_reference_excludes_self_and_specials(self, schema):
        prior = DialogueState({"taxi.destination": informed("cotto"), "hotel.area": DONTCARE})
        assert cross_reference_values("taxi.destination", prior, schema) == []

    def test_question_validation(self):
        with pytest.raises(ValueError):
            McqQuestion(slot_key="a.b", options=("x", "None", "None"), turn_index=0)
        with pytest.raises(ValueError):
            McqQuestion(slot_key="a.b", options=("None", "x"), turn_index=0)
        with pytest.raises(ValueError):
            McqQuestion(slot_key="a.b", options=("x", "x", "None"), turn_index=0)


class TestAnswerMcq:
    def _question(self, options=("north", "None")):
        return McqQuestion(slot_key="hotel.area", options=options, turn_index=2)

    def test_option_selected(self, schema, library):
        backend = register_mock({"hotel-area": '{"hotel-area": "North"}'})
        ledger = RequestLedger()
        out = answer_mcq(self._question(), "USER: north please", backend,
                         library=library, schema=schema, ledger=ledger, retry=POLICY)
        assert out == informed("north")
        assert ledger.requests(stage="mcq-answering") == 1

    def test_bare_none_reply_short_circuits(self, schema, library):
        backend = MockBackend(default="None")
        ledger = RequestLedger()
        out = answer_mcq(self._question(), "dlg", backend,
                         library=library, schema=schema, ledger=ledger, retry=POLICY)
        assert out is None
        assert ledger.requests() == 1 and ledger.failures() == 0

    def test_answer_outside_options_rejected(self, schema, library):
        backend = register_mock({"hotel-area": '{"hotel-area": "centre"}'})
        out = answer_mcq(self._question(), "dlg", backend, library=library, schema=schema, retry=POLICY)
        assert out is None

    def test_unoffered_dontcare_rejected(self, schema, library):
        backend = register_mock({"hotel-area": '{"hotel-area": "dontcare"}'})
        out = answer_mcq(self._question(), "dlg", backend, library=library, schema=schema, retry=POLICY)
        assert out is None

    def test_offered_dontcare_accepted(self, schema, library):
        backend = register_mock({"hotel-area": '{"hotel-area": "dontcare"}'})
        q = self._question(options=("north", "dontcare", "None"))
        out = answer_mcq(q, "dlg", backend, library=library, schema=schema, retry=POLICY)
        assert out == DONTCARE

    def test_list_answer_coerced(self, schema, library):
        backend = register_mock({"hotel-area": '{"hotel-area": ["north"]}'})
        out = answer_mcq(self._question(), "dlg", backend, library=library, schema=schema, retry=POLICY)
        assert out == informed("north")

    def test_qualified_key_spelling_tolerated(self, schema, library):
        backend = register_mock({"hotel-area": '{"hotel.area": "north"}'})
        out = answer_mcq(self._question(), "dlg", backend, library=library, schema=schema, retry=POLICY)
        assert out == informed("north")

    def test_reprompt_then_answer(self, schema, library):
        backend = register_mock(
            [("could not be parsed", '{"hotel-area": "north"}')],
            default="???",
        )
        ledger = RequestLedger()
        out = answer_mcq(self._question(), "dlg", backend,
                         library=library, schema=schema, ledger=ledger, retry=POLICY)
        assert out == informed("north")
        assert ledger.requests() == 2 and ledger.failures() == 1


class TestTrackTurn:
    def test_request_budget_one_one_k(self, schema, library):
        # 1 extraction + 1 scan + one question per candidate slot
        backend = register_mock(
            {
                "Entity definition:": '{"LOCATION": ["north"], "RANGE": ["cheap"]}',
                "no preference": '{"dontcare": []}',
                "hotel-area as key": '{"hotel-area": "north"}',
                "hotel-address as key": '{"hotel-address": "None"}',
                "hotel-price-range as key": '{"hotel-price-range": "cheap"}',
            },
            default="None",
        )
        ledger = RequestLedger()
        delta = qa_track_turn(
            _user(0, "find me a cheap hotel in the north"),
            [],
            {"hotel"},
            DialogueState({}),
            schema,
            backend,
            library=library,
            ledger=ledger,
            retry=POLICY,
        )
        assert delta.entries == {
            "hotel.area": informed("north"),
            "hotel.price-range": informed("cheap"),
        }
        assert ledger.requests(stage="entity-extraction") == 1
        assert ledger.requests(stage="dontcare-scan") == 1
        assert ledger.requests(stage="mcq-answering") == 3

    def test_cross_domain_value_carryover(self, schema, library):
        # taxi just became active; the hotel name from earlier turns is
        # offered (and picked) as the taxi destination without being re-said
        backend = register_mock(
            {
                "Entity definition:": "{}",
                "no preference": '{"dontcare": []}',
                "taxi-destination as key": '{"taxi-destination": "acorn guest house"}',
                "taxi-departure as key": '{"taxi-departure": "None"}',
            },
        )
        prior = DialogueState({"hotel.name": informed("acorn guest house"), "hotel.area": informed("north")})
        ledger = RequestLedger()
        delta = qa_track_turn(
            _user(4, "now i need a taxi to the hotel"),
            [_user(0, "earlier turn")],
            {"hotel", "taxi"},
            prior,
            schema,
            backend,
            library=library,
            ledger=ledger,
            retry=POLICY,
        )
        assert delta.entries == {"taxi.destination": informed("acorn guest house")}
        # exactly the two NAME slots of the newly active domain were asked
        assert ledger.requests(stage="mcq-answering") == 2
        asked = [c for c in backend.calls if "Can you select the value" in c]
        assert len(asked) == 2
        assert all("- acorn guest house" in c for c in asked)

    def test_flagged_slot_asked_even_without_entities(self, schema, library):
        backend = register_mock(
            {
                "Entity definition:": "{}",
                "no preference": '{"dontcare": ["restaurant-price-range"]}',
                "restaurant-price-range as key": '{"restaurant-price-range": "dontcare"}',
            },
        )
        delta = qa_track_turn(
            _user(2, "any price is fine"),
            [],
            {"restaurant"},
            DialogueState({}),
            schema,
            backend,
            library=library,
            retry=POLICY,
        )
        assert delta.entries == {"restaurant.price-range": DONTCARE}

    def test_turn_survives_single_question_failure(self, schema, library):
        backend = register_mock(
            {
                "Entity definition:": '{"LOCATION": ["north"]}',
                "no preference": '{"dontcare": []}',
                "hotel-area as key": "garbage never json",
                "hotel-address as key": '{"hotel-address": "None"}',
            },
        )
        delta = qa_track_turn(
            _user(0, "hotel in the north"),
            [],
            {"hotel"},
            DialogueState({}),
            schema,
            backend,
            library=library,
            retry=POLICY,
        )
        # the broken question is skipped, the rest of the turn still lands
        assert delta.entries == {}

    def test_scan_disabled_asks_no_scan(self, schema, library):
        backend = register_mock({"Entity definition:": "{}"}, default='{"dontcare": []}')
        ledger = RequestLedger()
        qa_track_turn(
            _user(0, "x"),
            [],
            {"hotel"},
            DialogueState({}),
            schema,
            backend,
            library=library,
            ledger=ledger,
            dontcare_scan=False,
            retry=POLICY,
        )
        assert ledger.requests(stage="dontcare-scan") == 0
