from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from tutorkit import model
from tutorkit.model import (
    Condition,
    ABLATION_CONDITIONS,
    Problem,
    PromptRole,
    PromptStyle,
    Speaker,
    Termination,
    TranscriptView,
    build_system_prompt,
    parse_tutor_output,
    render_transcript,
    serialize_tutor_output,
    validate_dialogue,
)

from conftest import make_dialogue

PROBLEM = Problem(id="p", statement="Solve x + 1 = 2.", reference_answer="1")


def test_parse_plain_think_and_visible() -> None:
    out = parse_tutor_output("<think>plan hint</think>Try adding 3.", True)
    assert out.as_tuple() == ("plan hint", "Try adding 3.", False)
    assert not out.malformed_think


def test_parse_end_marker() -> None:
    out = parse_tutor_output("Great work! <end_of_conversation>", True)
    assert out.as_tuple() == ("", "Great work!", True)


def test_parse_unterminated_think_is_flagged() -> None:
    out = parse_tutor_output("<think>never closed", True)
    assert out.think_text == "never closed"
    assert out.visible_text == ""
    assert out.end_flag is False
    assert out.malformed_think


def test_parse_thinking_disabled_keeps_tags_in_visible() -> None:
    out = parse_tutor_output("<think>x</think>hello", thinking_enabled=False)
    assert out.think_text == ""
    assert "<think>x</think>hello" == out.visible_text


def test_parse_only_first_think_span_counts() -> None:
    out = parse_tutor_output("<think>a</think>one <think>b</think> two", True)
    assert out.think_text == "a"
    assert out.visible_text == "one <think>b</think> two"


def test_parse_end_marker_inside_think_does_not_end() -> None:
    out = parse_tutor_output("<think>say <end_of_conversation> later</think>keep going", True)
    assert out.end_flag is False
    assert out.think_text == "say <end_of_conversation> later"
    assert out.visible_text == "keep going"


def test_parse_text_before_think_is_kept() -> None:
    out = parse_tutor_output("Hi <think>t</think>there", True)
    assert out.think_text == "t"
    assert out.visible_text == "Hi there"


def test_serialize_parse_round_trip_explicit() -> None:
    raw = serialize_tutor_output("plan", "Try this.", True)
    out = parse_tutor_output(raw, True)
    assert out.as_tuple() == ("plan", "Try this.", True)


_tag_free = st.text(
    alphabet=st.characters(blacklist_characters="<>", blacklist_categories=("Cs",)),
    max_size=80,
)


@given(think=_tag_free, visible=_tag_free, end=st.booleans())
def test_round_trip_property(think: str, visible: str, end: bool) -> None:
    visible = visible.strip()
    raw = serialize_tutor_output(think, visible, end)
    out = parse_tutor_output(raw, True)
    assert out.as_tuple() == (think, visible, end)


def test_round_trip_bulk_seeded() -> None:
    rng = random.Random(7)
    letters = "abc xyz123,.:?!$\\{}()"
    for _ in range(2000):
        think = "".join(rng.choice(letters) for _ in range(rng.randrange(0, 40)))
        visible = "".join(rng.choice(letters) for _ in range(rng.randrange(0, 40))).strip()
        end = rng.random() < 0.5
        out = parse_tutor_output(serialize_tutor_output(think, visible, end), True)
        assert out.as_tuple() == (think, visible, end)


def test_build_system_prompt_pedagogical_mentions_method_and_problem() -> None:
    text = build_system_prompt(PromptRole.TUTOR_PEDAGOGICAL, PROBLEM)
    assert "Polya's 4-step problem-solving method" in text
    assert PROBLEM.statement in text
    assert "{{ problem }}" not in text


def test_build_system_prompt_normal_forbids_revealing() -> None:
    text = build_system_prompt(PromptRole.TUTOR_NORMAL, PROBLEM)
    assert "must not reveal the answer" in text


def test_build_system_prompt_student_role() -> None:
    text = build_system_prompt(PromptRole.STUDENT, PROBLEM)
    assert "act as a student in a conversation" in text
    assert PROBLEM.statement in text


def test_build_system_prompt_empty_problem_rejected() -> None:
    blank = Problem(id="q", statement="   ", reference_answer="1")
    with pytest.raises(model.EmptyProblem):
        build_system_prompt(PromptRole.STUDENT, blank)


def test_unknown_template_errors() -> None:
    with pytest.raises(model.UnknownTemplate):
        model.load_template("no_such_template")


def test_template_purity_single_substitution_site() -> None:
    template = model.load_template(PromptRole.TUTOR_NORMAL)
    rendered = build_system_prompt(PromptRole.TUTOR_NORMAL, PROBLEM)
    assert rendered == template.replace("{{ problem }}", PROBLEM.statement)
    assert template.count("{{ problem }}") == 1


def test_render_transcript_single_turn() -> None:
    d = make_dialogue([("tutor", "plan hint", "Try adding 3.")])
    assert render_transcript(d, TranscriptView.VISIBLE_ONLY) == "Teacher: Try adding 3."
    with_think = render_transcript(d, TranscriptView.WITH_THINKING)
    assert with_think == "Teacher (thinking): plan hint\nTeacher: Try adding 3."


def test_render_transcript_empty_dialogue() -> None:
    d = make_dialogue([], termination=Termination.ERROR)
    assert render_transcript(d) == ""


def test_render_transcript_never_leaks_thinking_in_visible_view() -> None:
    d = make_dialogue(
        [("tutor", "secret reasoning", "Hello."), ("student", "", "Hi."), ("tutor", "more secrets", "Bye.")]
    )
    text = render_transcript(d, TranscriptView.VISIBLE_ONLY)
    assert "secret" not in text
    assert text.splitlines() == ["Teacher: Hello.", "Student: Hi.", "Teacher: Bye."]


def test_paper_conditions_cover_the_ablation_grid() -> None:
    assert set(ABLATION_CONDITIONS) == {
        "nothink",
        "think_noreward",
        "think_reward",
        "ped_think_noreward",
        "ped_think_reward",
    }
    nothink = ABLATION_CONDITIONS["nothink"]
    assert not nothink.thinking_enabled and not nothink.thinking_reward_enabled
    best = ABLATION_CONDITIONS["ped_think_reward"]
    assert best.thinking_enabled and best.thinking_reward_enabled
    assert best.prompt_style is PromptStyle.PEDAGOGICAL
    assert best.tutor_role is PromptRole.TUTOR_PEDAGOGICAL


def test_condition_reward_requires_thinking() -> None:
    with pytest.raises(ValueError):
        Condition("bad", False, PromptStyle.NORMAL, True)


def test_validate_dialogue_accepts_alternation() -> None:
    d = make_dialogue(
        [("tutor", "", "a"), ("student", "", "b"), ("tutor", "", "c")],
        termination=Termination.END_MARKER,
    )
    validate_dialogue(d, max_turns=16)


def test_validate_dialogue_rejects_student_first() -> None:
    bad = make_dialogue([("student", "", "hi")], termination=Termination.ERROR)
    with pytest.raises(model.InvalidDialogue):
        validate_dialogue(bad)


def test_validate_dialogue_rejects_overlong() -> None:
    spec = []
    for _ in range(3):
        spec += [("tutor", "", "x"), ("student", "", "y")]
    d = make_dialogue(spec, termination=Termination.MAX_TURNS)
    with pytest.raises(model.InvalidDialogue):
        validate_dialogue(d, max_turns=2)


def test_student_turns_cannot_think() -> None:
    with pytest.raises(ValueError):
        model.DialogueTurn(Speaker.STUDENT, "thinking", "hi", False, 1)


def test_dialogue_record_round_trip() -> None:
    d = make_dialogue(
        [("tutor", "t", "v"), ("student", "", "s")],
        termination=Termination.MAX_TURNS,
        seed=42,
    )
    back = model.dialogue_from_record(model.dialogue_to_record(d))
    assert back == d
