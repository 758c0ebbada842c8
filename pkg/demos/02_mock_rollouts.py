"""Walkthrough: scripted mock backends and deterministic dialogue rollouts.

Run with: python demos/02_mock_rollouts.py
"""

import json

from tutorkit import ChatClient, ABLATION_CONDITIONS, Problem, mock_backend, run_group
from tutorkit.model import dialogue_to_record
from tutorkit.rollout import RolloutConfig

client = ChatClient()
problem = Problem(id="demo", statement="Compute 12 * 3.", reference_answer="36")

# A playbook is an ordered list of rules; the first match answers the
# request. turn_index counts assistant messages already in the context, so
# a whole dialogue can be scripted per turn.
playbook = [
    # Tutor script (the pedagogical tutor prompt mentions Polya).
    {"contains": "Polya", "turn_index": 0,
     "reply": "<think>Start from what multiplication means.</think>How would you split 12 * 3 into easier pieces?"},
    {"contains": "Polya", "turn_index": 1,
     "reply": "<think>They got it; close out.</think>Nice decomposition! <end_of_conversation>"},
    # Student script.
    {"contains": "act as a student", "turn_index": 0, "reply": "Maybe 10 * 3 plus 2 * 3?"},
]
endpoint = mock_backend(playbook)

cfg = RolloutConfig(
    condition=ABLATION_CONDITIONS["ped_think_reward"],
    tutor=endpoint,
    student=endpoint,
    group_size=4,
    parallelism=4,
    seed=11,
)

# A rollout group samples group_size dialogues for one problem with
# consecutive derived seeds.
group = run_group(client, problem, cfg)
print(f"group of {len(group.dialogues)} dialogues, seeds:", [d.seed for d in group.dialogues])
d = group.dialogues[0]
print("termination:", d.termination.value, "| tutor turns:", len(d.tutor_turns()))

print("\n--- rollout log record (what run_batch appends per dialogue) ---")
print(json.dumps(dialogue_to_record(d), indent=2)[:600], "...")

# Determinism: same config and playbook means bit-identical dialogues.
again = run_group(client, problem, cfg)
print("\ndeterministic re-run identical:", group.dialogues == again.dialogues)

# Forced-failure injection exercises the retry path: this endpoint fails
# twice per unique request, then recovers.
flaky = mock_backend([{"always": True, "fail_count": 2, "reply": "recovered"}])
from tutorkit.gateway import system, user

result = client.chat_detailed(flaky, [system("probe"), user("hello")])
print(f"\nflaky endpoint answered {result.text!r} on attempt {result.attempts}")
