from __future__ import annotations

import json

import pytest

from tutorkit.gateway import ChatClient
from tutorkit.model import (
    Dialogue,
    DialogueTurn,
    Problem,
    Speaker,
    Termination,
)

# Four tiny arithmetic problems used by the end-to-end fixtures. Answers are
# distinctive so a mock reply can only grade correct on purpose.
PROBLEM_RECORDS = [
    {"id": "p1", "problem": "Compute 3 + 4.", "answer": "7"},
    {"id": "p2", "problem": "Compute 2 * 5.", "answer": "10"},
    {"id": "p3", "problem": "Compute 9 - 3.", "answer": "6"},
    {"id": "p4", "problem": "Compute 8 / 2.", "answer": "4"},
]

# Markers that identify which template a request was built from.
TUTOR_PED_MARK = "Polya"
TUTOR_NORMAL_MARK = "being a teacher"
STUDENT_MARK = "act as a student"
SOLO_MARK = "taking a math test"
POST_MARK = "tutoring conversation"
LEAK_MARK = "inspecting a conversation"
HELP_MARK = "style and appropriateness"
THINK_MARK = "internal thinking process"

ACCEPT_REPLY = json.dumps({"reasoning": "guided step by step", "decision": "accept"})
SCORE_REPLY = json.dumps({"score": 0.8, "reasoning": "plans the next step"})


def scripted_tutor_rules(marker: str = TUTOR_PED_MARK) -> list[dict]:
    """A three-turn tutor script that ends the conversation on turn 3."""
    return [
        {
            "contains": [marker],
            "turn_index": 0,
            "reply": "<think>assess what the student knows</think>What is the problem asking for?",
        },
        {
            "contains": [marker],
            "turn_index": 1,
            "reply": "<think>plan a small hint</think>Try working through the calculation step by step.",
        },
        {
            "contains": [marker],
            "turn_index": 2,
            "reply": "<think>wrap up</think>Great work! <end_of_conversation>",
        },
    ]


def scripted_student_rules() -> list[dict]:
    return [
        {"contains": [STUDENT_MARK], "turn_index": 0, "reply": "I think it asks me to compute a value."},
        {"contains": [STUDENT_MARK], "turn_index": 1, "reply": "Okay, I will try that."},
    ]


def judge_rules() -> list[dict]:
    return [
        {"contains": [LEAK_MARK], "reply": ACCEPT_REPLY},
        {"contains": [HELP_MARK], "reply": ACCEPT_REPLY},
        {"contains": [THINK_MARK], "reply": SCORE_REPLY},
    ]


def solve_rules(records: list[dict], pre_correct: int = 2, post_correct: int = 4) -> list[dict]:
    """Solo-attempt rules: pre_correct of 8 seeds solve before tutoring,
    post_correct of 8 after (requests carrying the transcript marker)."""
    rules: list[dict] = []
    for rec in records:
        rules.append(
            {
                "contains": [SOLO_MARK, POST_MARK, rec["problem"]],
                "seed_mod": [8, list(range(post_correct))],
                "reply": f"I worked through it.\nANSWER: {rec['answer']}",
            }
        )
        rules.append(
            {
                "contains": [SOLO_MARK, POST_MARK, rec["problem"]],
                "reply": "I am not sure.\nANSWER: 999999",
            }
        )
    for rec in records:
        rules.append(
            {
                "contains": [SOLO_MARK, rec["problem"]],
                "seed_mod": [8, list(range(pre_correct))],
                "reply": f"Let me try.\nANSWER: {rec['answer']}",
            }
        )
        rules.append(
            {
                "contains": [SOLO_MARK, rec["problem"]],
                "reply": "No idea.\nANSWER: 999999",
            }
        )
    return rules


def e2e_rules(records: list[dict] | None = None) -> list[dict]:
    """The full playbook for prepare -> rollout -> score -> evaluate runs."""
    records = records if records is not None else PROBLEM_RECORDS
    return (
        judge_rules()
        + scripted_tutor_rules()
        + scripted_student_rules()
        + solve_rules(records)
    )


def write_playbook(path, rules: list[dict]) -> str:
    with open(path, "w", encoding="utf-8") as f:
        for rule in rules:
            f.write(json.dumps(rule) + "\n")
    return str(path)


def write_problems_file(path, records: list[dict]) -> str:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return str(path)


def make_dialogue(
    turns_spec: list[tuple[str, str, str]],
    problem_id: str = "p1",
    condition_id: str = "ped_think_reward",
    termination: Termination = Termination.END_MARKER,
    seed: int = 0,
) -> Dialogue:
    """Build a dialogue from (speaker, think, visible) triples.

    The last tutor turn gets the end flag when termination is END_MARKER.
    """
    last_tutor = max(
        (i for i, (speaker, _, _) in enumerate(turns_spec) if speaker == "tutor"), default=-1
    )
    turns = []
    for i, (speaker, think, visible) in enumerate(turns_spec):
        is_end = termination is Termination.END_MARKER and i == last_tutor
        turns.append(
            DialogueTurn(
                speaker=Speaker(speaker),
                think_text=think,
                visible_text=visible,
                end_flag=is_end,
                turn_index=i,
            )
        )
    return Dialogue(
        problem_id=problem_id,
        condition_id=condition_id,
        turns=tuple(turns),
        termination=termination,
        seed=seed,
    )


@pytest.fixture
def client() -> ChatClient:
    return ChatClient()


@pytest.fixture
def problems4() -> list[Problem]:
    return [
        Problem(id=r["id"], statement=r["problem"], reference_answer=r["answer"])
        for r in PROBLEM_RECORDS
    ]
