"""Walkthrough: the four pipeline stages end to end, fully offline.

prepare-data -> rollout -> score -> evaluate, all against one scripted
mock playbook, sharing a single run directory. Prints the final metric
report and the run-directory layout.

Run with: python demos/04_full_pipeline.py
"""

import json
import os
import tempfile

from tutorkit import cli

PROBLEMS = [
    {"id": "p1", "problem": "Compute 3 + 4.", "answer": "7"},
    {"id": "p2", "problem": "Compute 2 * 5.", "answer": "10"},
    {"id": "p3", "problem": "Compute 9 - 3.", "answer": "6"},
    {"id": "p4", "problem": "Compute 8 / 2.", "answer": "4"},
]


def playbook_rules() -> list[dict]:
    rules = [
        # Judges: accept everything, thinking scores 0.8.
        {"contains": "inspecting a conversation", "reply": '{"reasoning": "guided", "decision": "accept"}'},
        {"contains": "style and appropriateness", "reply": '{"reasoning": "concise", "decision": "accept"}'},
        {"contains": "internal thinking process", "reply": '{"score": 0.8, "reasoning": "planned"}'},
        # Tutor: three scripted turns ending the conversation.
        {"contains": "Polya", "turn_index": 0,
         "reply": "<think>see what they know</think>What is the problem asking for?"},
        {"contains": "Polya", "turn_index": 1,
         "reply": "<think>nudge them</think>Work through the calculation step by step."},
        {"contains": "Polya", "turn_index": 2,
         "reply": "<think>done</think>Great work! <end_of_conversation>"},
        # Student in dialogue.
        {"contains": "act as a student", "turn_index": 0, "reply": "It wants a number."},
        {"contains": "act as a student", "turn_index": 1, "reply": "Okay, doing that."},
    ]
    for rec in PROBLEMS:
        # After tutoring (the attempt prompt carries the transcript) the
        # student solves 4 of 8 attempts; before tutoring only 2 of 8.
        rules += [
            {"contains": ["taking a math test", "tutoring conversation", rec["problem"]],
             "seed_mod": [8, [0, 1, 2, 3]], "reply": f"ANSWER: {rec['answer']}"},
            {"contains": ["taking a math test", "tutoring conversation", rec["problem"]],
             "reply": "ANSWER: 999999"},
        ]
    for rec in PROBLEMS:
        rules += [
            {"contains": ["taking a math test", rec["problem"]],
             "seed_mod": [8, [0, 1]], "reply": f"ANSWER: {rec['answer']}"},
            {"contains": ["taking a math test", rec["problem"]], "reply": "ANSWER: 999999"},
        ]
    return rules


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        problems = os.path.join(tmp, "problems.jsonl")
        with open(problems, "w") as f:
            for rec in PROBLEMS:
                f.write(json.dumps(rec) + "\n")
        playbook = os.path.join(tmp, "playbook.jsonl")
        with open(playbook, "w") as f:
            for rule in playbook_rules():
                f.write(json.dumps(rule) + "\n")

        run_dir = os.path.join(tmp, "run")
        common = ["--mock", playbook, "--run-dir", run_dir, "--seed", "1", "--set", "group_size=2"]

        print("== prepare-data ==")
        assert cli.main(["prepare-data", "--in", problems, "--lo", "0.01", "--hi", "0.60"] + common) == 0
        prepared = os.path.join(run_dir, "problems.jsonl")

        print("\n== rollout ==")
        assert cli.main(["rollout", "--problems", prepared] + common) == 0
        rollouts = os.path.join(run_dir, "rollouts.jsonl")

        print("\n== score ==")
        assert cli.main(["score", "--rollouts", rollouts, "--problems", prepared] + common) == 0

        print("\n== evaluate ==")
        assert cli.main(["evaluate", "--rollouts", rollouts, "--problems", prepared] + common) == 0

        print("\n== run directory ==")
        for root, _dirs, files in os.walk(run_dir):
            rel = os.path.relpath(root, run_dir)
            for name in sorted(files):
                print(os.path.join(rel, name) if rel != "." else name)

        with open(os.path.join(run_dir, "batch.jsonl")) as f:
            record = json.loads(f.readline())
        print("\nfirst training-batch record keys:", sorted(record))
        print(f"reward={record['reward']:.4f} advantage={record['advantage']:.4f}")


if __name__ == "__main__":
    main()
