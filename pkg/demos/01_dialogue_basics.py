"""Walkthrough: tutor output parsing, prompt construction, transcripts.

Run with: python demos/01_dialogue_basics.py
"""

from tutorkit import (
    ABLATION_CONDITIONS,
    Problem,
    PromptRole,
    TranscriptView,
    build_system_prompt,
    parse_tutor_output,
    render_transcript,
    serialize_tutor_output,
)
from tutorkit.model import Dialogue, DialogueTurn, Speaker, Termination

problem = Problem(id="demo", statement="Solve x + 3 = 10.", reference_answer="7")

# A tutor completion has three parts: hidden thinking, the visible reply,
# and an optional end-of-conversation marker.
raw = "<think>The student should isolate x; hint at subtraction.</think>What could you subtract from both sides?"
parsed = parse_tutor_output(raw, thinking_enabled=True)
print("think  :", parsed.think_text)
print("visible:", parsed.visible_text)
print("ended  :", parsed.end_flag)

# Serialization is the exact inverse, which is what lets training batches
# carry the raw completion losslessly.
assert parse_tutor_output(serialize_tutor_output(*parsed.as_tuple()), True) == parsed
print("\nround trip: ok")

# A completion that opens a think tag and never closes it is recorded, not
# guessed at; downstream reward code can then penalize it deliberately.
broken = parse_tutor_output("<think>oops, never closed", True)
print("\nmalformed think recorded:", broken.malformed_think, repr(broken.visible_text))

# System prompts come from shipped template files with one placeholder.
print("\n--- pedagogical tutor prompt (first lines) ---")
prompt = build_system_prompt(PromptRole.TUTOR_PEDAGOGICAL, problem)
print("\n".join(prompt.splitlines()[:3]))
print("...")

# The five experimental conditions select tutor prompt, thinking, and
# whether thinking quality is rewarded.
print("\nconditions:")
for name, cond in ABLATION_CONDITIONS.items():
    print(
        f"  {name:20s} thinking={cond.thinking_enabled!s:5s} "
        f"style={cond.prompt_style.value:11s} think_reward={cond.thinking_reward_enabled}"
    )

# Transcripts have two views: what the student (and the leak/help judges)
# see, and the thinking-judge view with reasoning interleaved.
turns = (
    DialogueTurn(Speaker.TUTOR, "Plan: ask about inverse operations.", "What undoes adding 3?", False, 0),
    DialogueTurn(Speaker.STUDENT, "", "Subtracting 3?", False, 1),
    DialogueTurn(Speaker.TUTOR, "Confirm and let them finish.", "Exactly. So what is x?", True, 2),
)
dialogue = Dialogue("demo", "ped_think_reward", turns, Termination.END_MARKER, seed=0)

print("\n--- visible transcript ---")
print(render_transcript(dialogue, TranscriptView.VISIBLE_ONLY))
print("\n--- thinking-judge view ---")
print(render_transcript(dialogue, TranscriptView.WITH_THINKING))
