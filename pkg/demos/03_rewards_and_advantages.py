"""Walkthrough: the composite reward, LLM judges, and GRPO advantages.

Run with: python demos/03_rewards_and_advantages.py
"""

from tutorkit import (
    ChatClient,
    ABLATION_CONDITIONS,
    Problem,
    RewardWeights,
    composite_reward,
    grpo_advantages,
    mock_backend,
    score_dialogue,
)
from tutorkit.model import Dialogue, DialogueTurn, Speaker, Termination

# The scalar reward combines three signals:
#   solve-rate uplift  r_sol   in [0, 1]
#   pedagogy gate      r_ped   in {0, 1}  (both judges must accept)
#   thinking quality   r_think in [0, 1]
# r = r_sol + (r_ped - 1) * 0.75 + (r_think - 0.6) * 0.3 with the defaults.
w = RewardWeights()
print(f"perfect dialogue          : {composite_reward(1.0, 1.0, 0.6, w):+.2f}")
print(f"worst case                : {composite_reward(0.0, 0.0, 0.0, w):+.2f}")
print(f"good sol, judged leaky    : {composite_reward(0.8, 0.0, 0.6, w):+.2f}")
print(f"thinking above threshold  : {composite_reward(0.5, 1.0, 0.9, w):+.2f}")
print(f"same but reward disabled  : {composite_reward(0.5, 1.0, 0.9, w, thinking_reward_enabled=False):+.2f}")

# Group-relative advantages: z-score the rewards within one problem's
# group. Constant groups give zero advantage everywhere.
rewards = [0.92, 0.17, 0.55, 0.55, -0.18, 0.92, 0.30, 0.41]
adv = grpo_advantages(rewards)
print("\ngroup rewards   :", [f"{r:+.2f}" for r in rewards])
print("advantages      :", [f"{a:+.2f}" for a in adv])
print("constant group  :", grpo_advantages([0.5] * 8))

# Scoring a real dialogue calls three judges and re-tests the student.
problem = Problem(id="demo", statement="Compute 6 * 7.", reference_answer="42")
turns = (
    DialogueTurn(Speaker.TUTOR, "Probe for strategy first.", "How might you break 6 * 7 apart?", False, 0),
    DialogueTurn(Speaker.STUDENT, "", "6 * 7 is 6 * 5 plus 6 * 2?", False, 1),
    DialogueTurn(Speaker.TUTOR, "Confirm, have them finish.", "Great plan. Put it together!", True, 2),
)
dialogue = Dialogue("demo", "ped_think_reward", turns, Termination.END_MARKER, seed=3)

endpoint = mock_backend(
    [
        # Leak and help judges accept; the thinking judge scores 0.8.
        {"contains": "inspecting a conversation", "reply": '{"reasoning": "guides via questions", "decision": "accept"}'},
        {"contains": "style and appropriateness", "reply": '{"reasoning": "concise, natural", "decision": "accept"}'},
        {"contains": "internal thinking process", "reply": '{"score": 0.8, "reasoning": "student-centered"}'},
        # Post-dialogue attempts: 6 of 8 seeds solve it.
        {"contains": "taking a math test", "seed_mod": [8, [0, 1, 2, 3, 4, 5]], "reply": "ANSWER: 42"},
        {"contains": "taking a math test", "reply": "ANSWER: 41"},
    ]
)
client = ChatClient()
breakdown = score_dialogue(
    client, problem, dialogue, ABLATION_CONDITIONS["ped_think_reward"], endpoint, endpoint, w, K=8
)
print("\nscored dialogue:")
print(f"  r_sol={breakdown.r_sol}  r_ped={breakdown.r_ped}  r_think={breakdown.r_think}")
print(f"  composite reward = {breakdown.composite:.4f}")
print(f"  leak judge said  : {breakdown.leak_verdict.reasoning!r}")
