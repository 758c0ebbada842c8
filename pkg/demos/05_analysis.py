"""Walkthrough: dialogue analytics over rollout logs.

Sentence splitting, word statistics, math-content ratio, reasoning-phase
labeling, codebook labeling, and chi-square tests with effect sizes.

Run with: python demos/05_analysis.py
"""

from tutorkit import ChatClient, chi_square, mock_backend
from tutorkit.analysis import (
    Sentence,
    classify_schoenfeld,
    code_frequency_table,
    condition_contingency,
    label_codebook,
    load_codebook,
    math_content_ratio,
    split_sentences,
    word_stats,
)
from tutorkit.model import Dialogue, DialogueTurn, Speaker, Termination

client = ChatClient()

# Sentence splitting is math-aware: a period inside $...$ does not split.
text = "Compute $f(x). g$. Then substitute. Does the result make sense?"
for s in split_sentences(text):
    print("sentence:", s)

# Word statistics per tutor response (whitespace tokens).
turns = (
    DialogueTurn(Speaker.TUTOR, "Cost is low. Try a hint first.", "What do you notice about the terms?", False, 0),
    DialogueTurn(Speaker.STUDENT, "", "They share a factor.", False, 1),
    DialogueTurn(Speaker.TUTOR, "Confirm and push further.", "Right! Factor it out and simplify.", True, 2),
)
d = Dialogue("demo", "ped_think_reward", turns, Termination.END_MARKER, seed=0)
stats = word_stats([d], "ped_think_reward")
print(
    f"\nword stats: visible={stats.visible_words:.1f} think={stats.think_words:.1f} "
    f"total={stats.total_words:.1f} unique={stats.unique_words:.1f}"
)

print("math ratio of 'x + 1 = 2'     :", math_content_ratio("x + 1 = 2"))
print("math ratio of 'Hello there'   :", math_content_ratio("Hello there"))

# Reasoning-phase labeling via a scripted labeler (any chat endpoint works).
labeler = mock_backend(
    [
        {"contains": "Cost is low", "reply": "General"},
        {"contains": "Try a hint first", "reply": "General"},
        {"contains": "Confirm and push", "reply": "Verify"},
        {"always": True, "reply": "General"},
    ]
)
dist = classify_schoenfeld(client, "Cost is low. Try a hint first. Confirm and push further.", labeler)
print(f"\nphases: explore={dist.explore:.2f} general={dist.general:.2f} verify={dist.verify:.2f}")

# Codebook labeling: 82 codes in 7 major categories, shipped as data.
codebook = load_codebook()
print(f"\ncodebook: {len(codebook)} codes, {len({e.major for e in codebook})} major categories")

sentences = [
    Sentence("a#0", "nothink", 0, 0, "Great job, amazing!"),
    Sentence("a#0", "nothink", 0, 1, "Wonderful, you are so smart!"),
    Sentence("a#0", "nothink", 0, 2, "Now add 3 to both sides."),
    Sentence("b#0", "ped_think_reward", 0, 0, "Nice effort."),
    Sentence("b#0", "ped_think_reward", 0, 1, "First isolate x, then divide."),
    Sentence("b#0", "ped_think_reward", 0, 2, "Next, check your arithmetic."),
]
coding_labeler = mock_backend(
    [
        {"contains": "Great job", "reply": "Praise"},
        {"contains": "Wonderful", "reply": "Praise"},
        {"contains": "Nice effort", "reply": "Praise"},
        {"contains": "add 3", "reply": "Step-by-step instruction"},
        {"contains": "isolate x", "reply": "Step-by-step instruction"},
        {"contains": "check your arithmetic", "reply": "Checking calculations"},
    ]
)
coded = label_codebook(client, sentences, codebook, coding_labeler)
table = code_frequency_table(coded, "code")
print("\ncode proportions per condition:")
for cond in table.conditions():
    print(" ", cond, {k: round(v, 3) for k, v in sorted(table.proportions[cond].items())})

# Chi-square over a condition x code contingency table, with effect size.
counts = condition_contingency(table)
result = chi_square(counts)
print(
    f"\nchi2={result.chi2:.3f} df={result.df} p={result.p_value:.3f} "
    f"{result.effect_name}={result.effect:.3f} n={result.n}"
)

# The same machinery reproduces textbook values exactly.
check = chi_square([[10, 20], [20, 10]])
print(f"2x2 sanity: chi2={check.chi2:.4f} phi={check.effect:.4f}")
