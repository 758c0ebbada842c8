from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, strategies as st

from tutorkit import reward
from tutorkit.gateway import ChatClient
from tutorkit.mock import mock_backend
from tutorkit.model import ABLATION_CONDITIONS, Problem, Termination
from tutorkit.reward import (
    EmptyGroup,
    MalformedJudgeOutput,
    RewardWeights,
    answers_equivalent,
    composite_reward,
    compute_r_sol,
    emit_training_batch,
    extract_final_answer,
    grpo_advantages,
    judge_help,
    judge_leak,
    judge_thinking,
    score_dialogue,
    score_group,
)
from tutorkit.rollout import RolloutGroup

from conftest import (
    ACCEPT_REPLY,
    HELP_MARK,
    LEAK_MARK,
    PROBLEM_RECORDS,
    SOLO_MARK,
    THINK_MARK,
    judge_rules,
    make_dialogue,
    solve_rules,
)

DEFAULTS = RewardWeights()


def eq1_oracle(r_sol: float, r_ped: float, r_think: float) -> float:
    # Independent direct substitution; keep this separate from the
    # implementation on purpose.
    return r_sol + (r_ped - 1.0) * 0.75 + (r_think - 0.6) * 0.3


# --- composite reward ------------------------------------------------------


def test_composite_full_marks() -> None:
    assert composite_reward(1.0, 1.0, 0.6, DEFAULTS) == 1.0


def test_composite_worst_case_matches_oracle() -> None:
    value = composite_reward(0.0, 0.0, 0.0, DEFAULTS)
    assert value == eq1_oracle(0.0, 0.0, 0.0)
    assert abs(value - (-0.93)) < 1e-12


def test_composite_penalties_vanish_at_thresholds() -> None:
    assert composite_reward(0.5, 1.0, 0.6, DEFAULTS) == 0.5


def test_composite_resonly_drops_thinking_term() -> None:
    with_term = composite_reward(0.5, 1.0, 0.9, DEFAULTS, thinking_reward_enabled=True)
    without = composite_reward(0.5, 1.0, 0.9, DEFAULTS, thinking_reward_enabled=False)
    assert without == 0.5
    assert with_term == pytest.approx(0.5 + 0.3 * 0.3)


def test_composite_matches_oracle_on_random_triples() -> None:
    rng = random.Random(123)
    for _ in range(1000):
        r_sol = rng.random()
        r_ped = float(rng.random() < 0.5)
        r_think = rng.random()
        assert abs(composite_reward(r_sol, r_ped, r_think, DEFAULTS) - eq1_oracle(r_sol, r_ped, r_think)) <= 1e-12


def test_composite_strictly_monotone_in_each_component() -> None:
    base = composite_reward(0.5, 0.0, 0.5, DEFAULTS)
    assert composite_reward(0.6, 0.0, 0.5, DEFAULTS) > base
    assert composite_reward(0.5, 1.0, 0.5, DEFAULTS) > base
    assert composite_reward(0.5, 0.0, 0.6, DEFAULTS) > base


def test_weights_validate_theta_range() -> None:
    with pytest.raises(ValueError):
        RewardWeights(theta=1.5)


# --- GRPO advantages --------------------------------------------------------


def test_constant_group_gets_zero_advantages() -> None:
    assert grpo_advantages([1.0] * 8) == [0.0] * 8


def test_two_point_group_is_plus_minus_one() -> None:
    assert grpo_advantages([0.0, 1.0]) == [-1.0, 1.0]


def test_empty_group_rejected() -> None:
    with pytest.raises(EmptyGroup):
        grpo_advantages([])


@given(
    st.lists(st.floats(min_value=-100, max_value=100, allow_nan=False), min_size=2, max_size=16)
)
def test_advantages_are_zero_mean_unit_std(rewards: list[float]) -> None:
    adv = grpo_advantages(rewards)
    n = len(rewards)
    reward_mean = sum(rewards) / n
    reward_popstd = math.sqrt(sum((r - reward_mean) ** 2 for r in rewards) / n)
    if reward_popstd < 1e-8:  # degenerate groups map to exact zeros
        assert adv == [0.0] * n
        return
    mean = sum(adv) / n
    popstd = math.sqrt(sum((a - mean) ** 2 for a in adv) / n)
    assert abs(mean) < 1e-9
    assert abs(popstd - 1.0) < 1e-9


def test_nearly_constant_group_guarded_by_eps() -> None:
    assert grpo_advantages([1.0, 1.0 + 1e-12], eps=1e-8) == [0.0, 0.0]


# --- answer grading ---------------------------------------------------------


@pytest.mark.parametrize(
    ("candidate", "reference", "expected"),
    [
        ("1/2", "0.5", True),
        ("42", "42", True),
        ("\\boxed{7}", "7", True),
        ("The answer is 12.", "12", True),
        ("  -3 ", "-3.0", True),
        ("0.333333", "1/3", True),  # within relative 1e-6
        ("0.3", "1/3", False),
        ("x + 1", "x + 1", True),
        ("YES", "yes", True),
        ("7", "8", False),
        ("\\frac{1}{2}", "0.5", True),
        ("$10$", "10", True),
        ("1,000", "1000", True),
        ("", "", True),
    ],
)
def test_answers_equivalent_cases(candidate: str, reference: str, expected: bool) -> None:
    assert answers_equivalent(candidate, reference) is expected


_word = st.text(alphabet=st.characters(whitelist_categories=("Ll", "Nd")), min_size=1, max_size=12)
_rational = st.fractions(min_value=-1000, max_value=1000)


@given(_word)
def test_answers_equivalent_reflexive_on_words(word: str) -> None:
    assert answers_equivalent(word, word)


@given(_rational)
def test_answers_equivalent_reflexive_on_rationals(q) -> None:
    assert answers_equivalent(str(q), str(q))


@given(st.one_of(_word, _rational.map(str)), st.one_of(_word, _rational.map(str)))
def test_answers_equivalent_symmetric(a: str, b: str) -> None:
    assert answers_equivalent(a, b) == answers_equivalent(b, a)


def test_extract_final_answer_prefers_answer_line() -> None:
    text = "Let me think.\n\\boxed{9}\nANSWER: 7\n"
    assert extract_final_answer(text) == "7"


def test_extract_final_answer_boxed_fallback() -> None:
    assert extract_final_answer("so we get \\boxed{42} done") == "42"


def test_extract_final_answer_last_line_fallback() -> None:
    assert extract_final_answer("blah\nthe result is 5") == "the result is 5"


# --- judges -----------------------------------------------------------------


def _accepting_dialogue():
    return make_dialogue(
        [
            ("tutor", "assess first trace", "What is the problem asking?"),
            ("student", "", "Not sure."),
            ("tutor", "hint second trace", "Think about the units."),
        ]
    )


def test_judge_leak_accepts(client: ChatClient) -> None:
    ep = mock_backend([{"contains": LEAK_MARK, "reply": ACCEPT_REPLY}])
    verdict = judge_leak(client, _accepting_dialogue(), ep)
    assert verdict.accepted
    assert verdict.attempts == 1
    assert verdict.reasoning == "guided step by step"


def test_judge_help_reject(client: ChatClient) -> None:
    ep = mock_backend(
        [{"contains": HELP_MARK, "reply": '{"reasoning": "too long", "decision": "reject"}'}]
    )
    verdict = judge_help(client, _accepting_dialogue(), ep)
    assert not verdict.accepted


def test_judge_decision_is_case_folded(client: ChatClient) -> None:
    ep = mock_backend([{"always": True, "reply": '{"reasoning": "r", "decision": "ACCEPT"}'}])
    assert judge_leak(client, _accepting_dialogue(), ep).accepted


def test_judge_extra_fields_ignored(client: ChatClient) -> None:
    raw = '{"reasoning": "r", "decision": "accept", "confidence": 0.9, "notes": []}'
    ep = mock_backend([{"always": True, "reply": raw}])
    assert judge_leak(client, _accepting_dialogue(), ep).accepted


def test_judge_json_extracted_from_prose(client: ChatClient) -> None:
    raw = 'Sure! Here is my verdict:\n```json\n{"reasoning": "ok", "decision": "accept"}\n```\nDone.'
    ep = mock_backend([{"always": True, "reply": raw}])
    assert judge_leak(client, _accepting_dialogue(), ep).accepted


def test_judge_malformed_output_exhausts_retries(client: ChatClient) -> None:
    ep = mock_backend([{"always": True, "reply": "not json at all"}])
    with pytest.raises(MalformedJudgeOutput):
        judge_leak(client, _accepting_dialogue(), ep)


def test_judge_sees_visible_transcript_only(client: ChatClient) -> None:
    # A rule keyed on thinking text must never match the leak judge's input.
    ep = mock_backend(
        [
            {"contains": "assess first trace", "reply": '{"decision": "reject", "reasoning": "leak"}'},
            {"always": True, "reply": ACCEPT_REPLY},
        ]
    )
    assert judge_leak(client, _accepting_dialogue(), ep).accepted


def test_judge_thinking_means_per_turn_scores(client: ChatClient) -> None:
    # Key rules on the trace under evaluation; the transcript prefix for a
    # later turn legitimately contains every earlier trace.
    ep = mock_backend(
        [
            {
                "contains": [THINK_MARK, "under evaluation:\nassess first trace"],
                "reply": '{"score": 0.8, "reasoning": "a"}',
            },
            {
                "contains": [THINK_MARK, "under evaluation:\nhint second trace"],
                "reply": '{"score": 0.6, "reasoning": "b"}',
            },
        ]
    )
    result = judge_thinking(client, _accepting_dialogue(), ep)
    assert result.per_turn == (0.8, 0.6)
    assert result.r_think == pytest.approx(0.7, abs=1e-12)


def test_judge_thinking_empty_traces_score_zero_without_calls(client: ChatClient) -> None:
    d = make_dialogue([("tutor", "", "Visible only."), ("student", "", "ok"), ("tutor", "", "Bye.")])
    # No rules at all: a judge call would raise NoMatchingRule.
    ep = mock_backend([{"contains": "never", "reply": "x"}])
    result = judge_thinking(client, d, ep)
    assert result.r_think == 0.0
    assert result.per_turn == (0.0, 0.0)


def test_judge_thinking_clamps_out_of_range(client: ChatClient, caplog) -> None:
    ep = mock_backend([{"always": True, "reply": '{"score": 1.4, "reasoning": "x"}'}])
    d = make_dialogue([("tutor", "some trace", "v")])
    with caplog.at_level("WARNING"):
        result = judge_thinking(client, d, ep)
    assert result.per_turn == (1.0,)
    assert any("clamping" in r.message for r in caplog.records)


# --- r_sol ------------------------------------------------------------------


def _problem() -> Problem:
    rec = PROBLEM_RECORDS[0]
    return Problem(id=rec["id"], statement=rec["problem"], reference_answer=rec["answer"])


def test_compute_r_sol_counts_scripted_successes(client: ChatClient) -> None:
    ep = mock_backend(
        [
            {"contains": SOLO_MARK, "seed_mod": [8, [0, 1, 2, 3]], "reply": "ANSWER: 7"},
            {"always": True, "reply": "ANSWER: 999999"},
        ]
    )
    d = _accepting_dialogue()
    assert compute_r_sol(client, _problem(), d, ep, K=8) == 0.5


def test_compute_r_sol_always_wrong(client: ChatClient) -> None:
    ep = mock_backend([{"always": True, "reply": "ANSWER: 999999"}])
    assert compute_r_sol(client, _problem(), _accepting_dialogue(), ep, K=8) == 0.0


def test_compute_r_sol_always_right(client: ChatClient) -> None:
    ep = mock_backend([{"always": True, "reply": "ANSWER: 7"}])
    assert compute_r_sol(client, _problem(), _accepting_dialogue(), ep, K=8) == 1.0


def test_solo_rate_values_are_exact_eighths(client: ChatClient) -> None:
    ep = mock_backend(
        [
            {"contains": SOLO_MARK, "seed_mod": [8, [0, 1, 2]], "reply": "ANSWER: 7"},
            {"always": True, "reply": "ANSWER: 0"},
        ]
    )
    rate = compute_r_sol(client, _problem(), _accepting_dialogue(), ep, K=8)
    assert rate == 3 / 8


def test_k_must_be_positive(client: ChatClient) -> None:
    ep = mock_backend([{"always": True, "reply": "ANSWER: 7"}])
    with pytest.raises(ValueError):
        compute_r_sol(client, _problem(), _accepting_dialogue(), ep, K=0)


# --- dialogue / group scoring ------------------------------------------------


def _scoring_endpoint(client_rules=None):
    rules = judge_rules() + solve_rules(PROBLEM_RECORDS)
    return mock_backend(rules)


def test_score_dialogue_combines_components(client: ChatClient) -> None:
    ep = _scoring_endpoint()
    condition = ABLATION_CONDITIONS["ped_think_reward"]
    d = _accepting_dialogue()
    breakdown = score_dialogue(client, _problem(), d, condition, ep, ep)
    assert breakdown.r_ped == 1.0
    assert breakdown.r_sol == 0.5
    assert breakdown.r_think == pytest.approx(0.8)
    assert breakdown.composite == composite_reward(
        breakdown.r_sol, breakdown.r_ped, breakdown.r_think
    )


def test_score_dialogue_rejected_by_one_judge_zeroes_r_ped(client: ChatClient) -> None:
    rules = [
        {"contains": LEAK_MARK, "reply": ACCEPT_REPLY},
        {"contains": HELP_MARK, "reply": '{"reasoning": "verbose", "decision": "reject"}'},
        {"contains": THINK_MARK, "reply": '{"score": 0.8, "reasoning": "x"}'},
    ] + solve_rules(PROBLEM_RECORDS)
    ep = mock_backend(rules)
    breakdown = score_dialogue(
        client, _problem(), _accepting_dialogue(), ABLATION_CONDITIONS["ped_think_reward"], ep, ep
    )
    assert breakdown.r_ped == 0.0
    assert breakdown.leak_verdict.accepted
    assert not breakdown.help_verdict.accepted


def test_score_dialogue_errored_gets_worst_case(client: ChatClient) -> None:
    ep = _scoring_endpoint()
    d = make_dialogue([("tutor", "t", "v")], termination=Termination.ERROR)
    breakdown = score_dialogue(
        client, _problem(), d, ABLATION_CONDITIONS["ped_think_reward"], ep, ep
    )
    assert breakdown.errored
    assert (breakdown.r_sol, breakdown.r_ped, breakdown.r_think) == (0.0, 0.0, 0.0)
    assert abs(breakdown.composite - (-0.93)) < 1e-12


def test_score_dialogue_nothink_condition_skips_thinking_judge(client: ChatClient) -> None:
    # No thinking-judge rule: a call would raise NoMatchingRule.
    rules = [
        {"contains": LEAK_MARK, "reply": ACCEPT_REPLY},
        {"contains": HELP_MARK, "reply": ACCEPT_REPLY},
    ] + solve_rules(PROBLEM_RECORDS)
    ep = mock_backend(rules)
    d = make_dialogue([("tutor", "", "Try it."), ("student", "", "ok"), ("tutor", "", "Done.")],
                      condition_id="nothink")
    breakdown = score_dialogue(client, _problem(), d, ABLATION_CONDITIONS["nothink"], ep, ep)
    assert breakdown.r_think == 0.0
    assert breakdown.think_scores == ()
    assert not breakdown.thinking_reward_applied
    assert breakdown.composite == composite_reward(
        breakdown.r_sol, breakdown.r_ped, 0.0, thinking_reward_enabled=False
    )


def test_score_group_fills_rewards_and_advantages(client: ChatClient) -> None:
    ep = _scoring_endpoint()
    dialogues = tuple(
        make_dialogue(
            [("tutor", "first trace", "Hello."), ("student", "", "hi"), ("tutor", "second trace", "Bye.")],
            seed=i,
        )
        for i in range(4)
    )
    group = RolloutGroup(problem_id="p1", dialogues=dialogues)
    score_group(client, _problem(), group, ABLATION_CONDITIONS["ped_think_reward"], ep, ep)
    assert len(group.rewards) == 4
    assert len(group.advantages) == 4
    # identical dialogues -> identical rewards -> zero-variance group
    assert group.advantages == (0.0, 0.0, 0.0, 0.0)


# --- training batch emission --------------------------------------------------


def _scored_group() -> RolloutGroup:
    d1 = make_dialogue(
        [("tutor", "a", "t1"), ("student", "", "s1"), ("tutor", "b", "t2"), ("student", "", "s2"), ("tutor", "c", "t3")],
        seed=1,
    )
    d2 = make_dialogue([("tutor", "d", "t1"), ("student", "", "s1"), ("tutor", "e", "t2")], seed=2)
    group = RolloutGroup(problem_id="p1", dialogues=(d1, d2))
    group.rewards = tuple(
        reward.RewardBreakdown(0.5, 1.0, 0.7, 0.53, None, None) for _ in range(2)
    )
    group.advantages = (0.0, 0.0)
    return group


def test_emit_batch_one_record_per_tutor_turn(client: ChatClient, tmp_path) -> None:
    group = _scored_group()
    path = tmp_path / "batch.jsonl"
    n = emit_training_batch(
        [group], str(path), {"p1": _problem()}, ABLATION_CONDITIONS["ped_think_reward"]
    )
    assert n == 5
    import json

    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(records) == 5
    first = records[0]
    assert first["problem_id"] == "p1"
    assert first["rollout_seed"] == 1
    assert first["turn_index"] == 0
    assert first["prompt_messages"][0]["role"] == "system"
    assert "Polya" in first["prompt_messages"][0]["content"]
    assert first["response_raw"] == "<think>a</think>t1"
    # third tutor turn of the first dialogue sees the prior visible turns
    third = records[2]
    assert third["turn_index"] == 4
    assert [m["role"] for m in third["prompt_messages"]] == [
        "system",
        "assistant",
        "user",
        "assistant",
        "user",
    ]


def test_emit_batch_empty_groups(tmp_path) -> None:
    assert emit_training_batch([], str(tmp_path / "b.jsonl"), {}, ABLATION_CONDITIONS["nothink"]) == 0


def test_emit_batch_requires_scored_groups(tmp_path) -> None:
    group = RolloutGroup(problem_id="p1", dialogues=(make_dialogue([("tutor", "", "x")]),))
    with pytest.raises(ValueError):
        emit_training_batch(
            [group], str(tmp_path / "b.jsonl"), {"p1": _problem()}, ABLATION_CONDITIONS["nothink"]
        )
