import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charedit.ipm import (
    MemoryBank,
    ParseError,
    apply_turn,
    build_llm_request,
    fallback_parse,
    parse_llm_response,
    parse_turn,
)
from charedit.llm import ScriptedBackend


@pytest.fixture()
def label_set(desk_stack):
    return desk_stack.label_set


def turn(text, bank, label_set):
    parsed = fallback_parse(text, bank, label_set)
    return apply_turn(parsed, bank, label_set), parsed


class TestFallbackGrammar:
    def test_make_attr_adjective_with_intensifier(self, label_set):
        parsed = fallback_parse("make the nose slightly bigger", MemoryBank(), label_set)
        assert len(parsed.edits) == 1
        edit = parsed.edits[0]
        assert edit.attribute_key == "nose"
        assert edit.prompt == "bigger nose"
        assert edit.mode == "absolute"
        assert edit.strength == 0.25

    def test_default_strength_is_half(self, label_set):
        parsed = fallback_parse("make the jaw wider", MemoryBank(), label_set)
        assert parsed.edits[0].strength == 0.5

    def test_very_maps_to_three_quarters(self, label_set):
        parsed = fallback_parse("make the mouth very wide", MemoryBank(), label_set)
        assert parsed.edits[0].strength == 0.75

    def test_adjective_before_attribute(self, label_set):
        parsed = fallback_parse("darker eyeshadow please", MemoryBank(), label_set)
        assert parsed.edits[0].attribute_key == "eyeshadow"
        assert parsed.edits[0].prompt == "darker eyeshadow"

    def test_anaphoric_more_resolves_to_recent(self, label_set):
        bank = MemoryBank()
        (bank, _), _ = turn("make the nose slightly bigger", bank, label_set)
        parsed = fallback_parse("a bit more", bank, label_set)
        assert len(parsed.edits) == 1
        assert parsed.edits[0].attribute_key == "nose"
        assert parsed.edits[0].mode == "delta"
        assert parsed.edits[0].delta == 0.15

    def test_anaphoric_less_negative_delta(self, label_set):
        bank = MemoryBank()
        (bank, _), _ = turn("make the jaw wider", bank, label_set)
        parsed = fallback_parse("a little less", bank, label_set)
        assert parsed.edits[0].delta == -0.15

    def test_bare_refinement_with_empty_bank_is_chat(self, label_set):
        parsed = fallback_parse("a bit more", MemoryBank(), label_set)
        assert parsed.edits == []
        assert "nothing to adjust" in parsed.feedback.lower()

    def test_unmatched_text_is_chat_with_clarification(self, label_set):
        parsed = fallback_parse("hello there", MemoryBank(), label_set)
        assert parsed.edits == []
        assert "nose" in parsed.feedback  # lists editable attributes

    def test_reset_attribute(self, label_set):
        parsed = fallback_parse("reset the nose", MemoryBank(), label_set)
        assert parsed.edits[0].attribute_key == "nose"
        assert parsed.edits[0].strength == 0.0

    def test_reset_everything_flag(self, label_set):
        parsed = fallback_parse("reset everything", MemoryBank(), label_set)
        assert parsed.reset_all
        assert parsed.edits == []

    def test_set_strength_structured_message(self, label_set):
        parsed = fallback_parse("set nose strength to 0.6", MemoryBank(), label_set)
        assert parsed.edits[0].attribute_key == "nose"
        assert parsed.edits[0].mode == "absolute"
        assert parsed.edits[0].strength == 0.6

    def test_two_attributes_two_edits(self, label_set):
        parsed = fallback_parse("make the nose bigger and the mouth wider", MemoryBank(), label_set)
        keys = [e.attribute_key for e in parsed.edits]
        assert keys == ["nose", "mouth"]
        prompts = {e.prompt for e in parsed.edits}
        assert prompts == {"bigger nose", "wider mouth"}

    def test_synonym_resolution(self, label_set):
        parsed = fallback_parse("make her lips redder", MemoryBank(), label_set)
        assert parsed.edits[0].attribute_key == "lipstick"

    def test_deterministic(self, label_set):
        a = fallback_parse("make the nose bigger", MemoryBank(), label_set)
        b = fallback_parse("make the nose bigger", MemoryBank(), label_set)
        assert a.to_dict() == b.to_dict()


class TestApplyTurn:
    def test_absolute_overwrites(self, label_set):
        bank = MemoryBank()
        (bank, _), _ = turn("make the nose slightly bigger", bank, label_set)  # 0.25
        (bank, resolved), _ = turn("make the nose very big", bank, label_set)  # 0.75
        assert bank.entries["nose"].strength == 0.75
        assert resolved[0].strength == 0.75

    def test_delta_accumulates_and_resolves(self, label_set):
        bank = MemoryBank()
        (bank, _), _ = turn("make the nose slightly bigger", bank, label_set)
        (bank, resolved), _ = turn("a bit more", bank, label_set)
        assert resolved[0].strength == pytest.approx(0.40)
        assert resolved[0].prompt == "bigger nose"  # reused from the bank
        assert bank.entries["nose"].strength == pytest.approx(0.40)

    def test_delta_clamps_at_one(self, label_set):
        bank = MemoryBank()
        parsed = fallback_parse("make the nose very big", bank, label_set)
        parsed.edits[0].strength = 0.95
        bank, _ = apply_turn(parsed, bank, label_set)
        (bank, resolved), _ = turn("more", bank, label_set)
        assert resolved[0].strength == 1.0

    def test_round_counter_once_per_turn(self, label_set):
        bank = MemoryBank()
        parsed = fallback_parse("make the nose bigger and the mouth wider", bank, label_set)
        assert len(parsed.edits) == 2
        bank, _ = apply_turn(parsed, bank, label_set)
        assert bank.round_counter == 1
        assert bank.entries["nose"].history[0][0] == 1
        assert bank.entries["mouth"].history[0][0] == 1

    def test_chat_turn_still_counts_a_round(self, label_set):
        bank = MemoryBank()
        parsed = fallback_parse("hello", bank, label_set)
        bank, resolved = apply_turn(parsed, bank, label_set)
        assert bank.round_counter == 1
        assert resolved == []

    def test_every_edit_lands_in_exactly_one_history(self, label_set):
        bank = MemoryBank()
        texts = ["make the nose bigger", "a bit more", "make the jaw wider", "less"]
        applied = 0
        for text in texts:
            parsed = fallback_parse(text, bank, label_set)
            bank, resolved = apply_turn(parsed, bank, label_set)
            applied += len(resolved)
        total_history = sum(len(st.history) for st in bank.entries.values())
        assert total_history == applied

    def test_reset_all_clears_entries(self, label_set):
        bank = MemoryBank()
        (bank, _), _ = turn("make the nose bigger", bank, label_set)
        parsed = fallback_parse("reset everything", bank, label_set)
        bank, _ = apply_turn(parsed, bank, label_set)
        assert bank.entries == {}

    def test_original_bank_untouched(self, label_set):
        bank = MemoryBank()
        parsed = fallback_parse("make the nose bigger", bank, label_set)
        apply_turn(parsed, bank, label_set)
        assert bank.entries == {}
        assert bank.round_counter == 0


class TestBankSerialization:
    def test_round_trip_lossless(self, label_set):
        bank = MemoryBank()
        for text in ["make the nose slightly bigger", "a bit more", "make the jaw very wide"]:
            (bank, _), _ = turn(text, bank, label_set)
        doc = json.loads(json.dumps(bank.to_dict()))
        back = MemoryBank.from_dict(doc)
        assert back.to_dict() == bank.to_dict()
        assert back.most_recent().attribute_key == bank.most_recent().attribute_key


class TestBuildRequest:
    def test_empty_state_marker(self, label_set):
        request = build_llm_request("hi", [], MemoryBank(), label_set)
        assert request["memory"] == {"state": "empty"}

    def test_bank_serialized_verbatim(self, label_set):
        bank = MemoryBank()
        parsed = fallback_parse("make the nose bigger", bank, label_set)
        parsed.edits[0].strength = 0.4
        bank, _ = apply_turn(parsed, bank, label_set)
        request = build_llm_request("more", [], bank, label_set)
        assert request["memory"]["nose"]["strength"] == 0.4

    def test_history_truncated_to_last_ten(self, label_set):
        history = [("user", f"turn {i}") for i in range(100)]
        request = build_llm_request("hi", history, MemoryBank(), label_set)
        assert len(request["history"]) == 10
        assert request["history"][-1]["text"] == "turn 99"
        assert request["history"][0]["text"] == "turn 90"


class TestParseResponse:
    def test_valid_single_edit(self, label_set):
        raw = json.dumps({
            "feedback": "ok",
            "edits": [{"attribute": "nose", "prompt": "bigger nose", "strength": 0.5}],
            "suggestions": [],
        })
        parsed = parse_llm_response(raw, label_set)
        assert parsed.parser_source == "llm"
        assert len(parsed.edits) == 1
        assert parsed.edits[0].strength == 0.5

    def test_out_of_range_strength_clamped_with_note(self, label_set):
        raw = json.dumps({"feedback": "ok", "edits": [{"attribute": "nose", "strength": 1.7}]})
        parsed = parse_llm_response(raw, label_set)
        assert parsed.edits[0].strength == 1.0
        assert "clamped" in parsed.feedback

    def test_prose_without_json_raises(self, label_set):
        with pytest.raises(ParseError):
            parse_llm_response("I think the nose should be bigger!", label_set)

    def test_json_embedded_in_prose_extracted(self, label_set):
        raw = 'Sure thing. {"feedback": "done", "edits": []} Anything else?'
        parsed = parse_llm_response(raw, label_set)
        assert parsed.feedback == "done"

    def test_unknown_attribute_mapped_through_lexicon(self, label_set):
        raw = json.dumps({"edits": [{"attribute": "the nose area", "strength": 0.5}]})
        parsed = parse_llm_response(raw, label_set)
        assert parsed.edits[0].attribute_key == "nose"

    def test_unresolvable_attribute_dropped_with_note(self, label_set):
        raw = json.dumps({"edits": [{"attribute": "flux capacitor", "strength": 0.5}]})
        parsed = parse_llm_response(raw, label_set)
        assert parsed.edits == []
        assert "flux capacitor" in parsed.feedback

    def test_edit_without_strength_or_delta_dropped(self, label_set):
        raw = json.dumps({"edits": [{"attribute": "nose", "prompt": "bigger nose"}]})
        parsed = parse_llm_response(raw, label_set)
        assert parsed.edits == []

    def test_wrong_types_raise(self, label_set):
        with pytest.raises(ParseError):
            parse_llm_response(json.dumps({"edits": "nope"}), label_set)
        with pytest.raises(ParseError):
            parse_llm_response(json.dumps({"edits": [{"attribute": 3}]}), label_set)
        with pytest.raises(ParseError):
            parse_llm_response(json.dumps({"edits": [], "feedback": 1}), label_set)


class TestParseTurn:
    def test_backend_success(self, label_set):
        backend = ScriptedBackend([json.dumps({"feedback": "done", "edits": []})])
        parsed = parse_turn("hi", [], MemoryBank(), label_set, backend)
        assert parsed.parser_source == "llm"

    def test_retry_then_success(self, label_set):
        backend = ScriptedBackend(["garbage", json.dumps({"feedback": "ok", "edits": []})])
        parsed = parse_turn("hi", [], MemoryBank(), label_set, backend)
        assert parsed.parser_source == "llm"
        # second request carries the error addendum
        assert "error_addendum" in backend.requests[1]

    def test_garbage_three_times_falls_back(self, label_set):
        backend = ScriptedBackend(["junk", "junk", "junk"])
        parsed = parse_turn("make the nose bigger", [], MemoryBank(), label_set, backend)
        assert parsed.parser_source == "fallback"
        assert parsed.edits[0].attribute_key == "nose"

    def test_backend_error_falls_back(self, label_set):
        backend = ScriptedBackend([])  # raises immediately
        parsed = parse_turn("make the nose bigger", [], MemoryBank(), label_set, backend)
        assert parsed.parser_source == "fallback"

    def test_no_backend_uses_fallback(self, label_set):
        parsed = parse_turn("make the nose bigger", [], MemoryBank(), label_set, None)
        assert parsed.parser_source == "fallback"
        assert parsed.edits[0].attribute_key == "nose"


@settings(max_examples=30, deadline=None)
@given(seq=st.lists(st.sampled_from([
    "make the nose slightly bigger", "a bit more", "less", "make the jaw very wide",
    "reset the nose", "hello there", "set mouth strength to 0.9", "more", "reset everything",
]), min_size=1, max_size=12))
def test_bank_strengths_always_in_unit_interval(desk_stack, seq):
    label_set = desk_stack.label_set
    bank = MemoryBank()
    for text in seq:
        parsed = fallback_parse(text, bank, label_set)
        bank, resolved = apply_turn(parsed, bank, label_set)
        for st_ in bank.entries.values():
            assert 0.0 <= st_.strength <= 1.0
        for edit in resolved:
            assert 0.0 <= edit.strength <= 1.0


def test_replaying_turns_gives_bit_identical_bank(desk_stack):
    label_set = desk_stack.label_set
    texts = ["make the nose slightly bigger", "a bit more", "make the jaw wider",
             "less", "set nose strength to 0.3", "hello"]

    def run():
        bank = MemoryBank()
        for text in texts:
            parsed = fallback_parse(text, bank, label_set)
            bank, _ = apply_turn(parsed, bank, label_set)
        return json.dumps(bank.to_dict(), sort_keys=True)

    assert run() == run()
