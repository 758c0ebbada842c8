"""Domain types for problems, dialogues, and the tutor's structured output.

A tutor completion has up to three parts: an internal reasoning span wrapped
in ``<think>`` tags, the visible text shown to the student, and an optional
``<end_of_conversation>`` marker that closes the dialogue. Parsing keeps the
split lossless so raw completions can be reconstructed for training batches.

Prompt templates are shipped as data files under ``tutorkit/data/prompts``
and substituted at a single ``{{ problem }}`` placeholder, so the prompt
text stays auditable and bit-exact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources

from .errors import TutorKitError

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
END_MARKER = "<end_of_conversation>"
PROBLEM_PLACEHOLDER = "{{ problem }}"


class UnknownTemplate(TutorKitError):
    """A prompt template file is missing from the package data."""


class EmptyProblem(TutorKitError):
    """A prompt was requested for a problem with a blank statement."""


class InvalidDialogue(TutorKitError):
    """A dialogue violates the turn-structure invariants."""


class Speaker(str, enum.Enum):
    TUTOR = "tutor"
    STUDENT = "student"


class Termination(str, enum.Enum):
    END_MARKER = "end_marker"
    MAX_TURNS = "max_turns"
    ERROR = "error"


class PromptStyle(str, enum.Enum):
    NORMAL = "normal"
    PEDAGOGICAL = "pedagogical"


class PromptRole(str, enum.Enum):
    TUTOR_NORMAL = "tutor_normal"
    TUTOR_PEDAGOGICAL = "tutor_pedagogical"
    STUDENT = "student"
    SOLO_ATTEMPT = "solo_attempt"


class TranscriptView(str, enum.Enum):
    VISIBLE_ONLY = "visible_only"
    WITH_THINKING = "with_thinking"


@dataclass(frozen=True)
class Problem:
    """A math task with its reference answer and cached baseline solve rate."""

    id: str
    statement: str
    reference_answer: str
    baseline_solve_rate: float | None = None
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.baseline_solve_rate is not None and not 0.0 <= self.baseline_solve_rate <= 1.0:
            raise ValueError(
                f"baseline_solve_rate must be in [0, 1], got {self.baseline_solve_rate!r}"
            )


@dataclass(frozen=True)
class Condition:
    """One experimental configuration of the tutor.

    ``thinking_reward_enabled`` only makes sense for tutors that think, so it
    implies ``thinking_enabled``.
    """

    name: str
    thinking_enabled: bool
    prompt_style: PromptStyle
    thinking_reward_enabled: bool

    def __post_init__(self) -> None:
        if self.thinking_reward_enabled and not self.thinking_enabled:
            raise ValueError("thinking_reward_enabled requires thinking_enabled")

    @property
    def tutor_role(self) -> PromptRole:
        if self.prompt_style is PromptStyle.PEDAGOGICAL:
            return PromptRole.TUTOR_PEDAGOGICAL
        return PromptRole.TUTOR_NORMAL


#: The five ablation conditions: thinking off/on, normal vs. pedagogical
#: prompting, and thinking reward off/on.
ABLATION_CONDITIONS: dict[str, Condition] = {
    c.name: c
    for c in (
        Condition("nothink", False, PromptStyle.NORMAL, False),
        Condition("think_noreward", True, PromptStyle.NORMAL, False),
        Condition("think_reward", True, PromptStyle.NORMAL, True),
        Condition("ped_think_noreward", True, PromptStyle.PEDAGOGICAL, False),
        Condition("ped_think_reward", True, PromptStyle.PEDAGOGICAL, True),
    )
}


@dataclass(frozen=True)
class DialogueTurn:
    """One utterance. Student turns never carry thinking or an end flag."""

    speaker: Speaker
    think_text: str
    visible_text: str
    end_flag: bool
    turn_index: int
    malformed_think: bool = False

    def __post_init__(self) -> None:
        if self.speaker is Speaker.STUDENT and (self.think_text or self.end_flag):
            raise ValueError("student turns must have empty think_text and end_flag=False")


@dataclass(frozen=True)
class Dialogue:
    """An ordered tutor/student exchange for one problem under one condition.

    ``raws`` holds the unmodified completion text per turn, parallel to
    ``turns``; training-batch emission uses it verbatim.
    """

    problem_id: str
    condition_id: str
    turns: tuple[DialogueTurn, ...]
    termination: Termination
    seed: int
    raws: tuple[str, ...] = ()

    def tutor_turns(self) -> tuple[DialogueTurn, ...]:
        return tuple(t for t in self.turns if t.speaker is Speaker.TUTOR)


def validate_dialogue(d: Dialogue, max_turns: int | None = None) -> None:
    """Check the turn-structure invariants, raising InvalidDialogue on violation.

    Turns must alternate tutor/student starting with the tutor, with strictly
    increasing ``turn_index``. An end-marker termination requires the final
    tutor turn to carry ``end_flag``.
    """
    last_index = -1
    for i, turn in enumerate(d.turns):
        expected = Speaker.TUTOR if i % 2 == 0 else Speaker.STUDENT
        if turn.speaker is not expected:
            raise InvalidDialogue(
                f"turn {i} of dialogue {d.problem_id}#{d.seed}: expected {expected.value}"
            )
        if turn.turn_index <= last_index:
            raise InvalidDialogue(f"turn_index not strictly increasing at position {i}")
        last_index = turn.turn_index
    n_tutor = sum(1 for t in d.turns if t.speaker is Speaker.TUTOR)
    if max_turns is not None and n_tutor > max_turns:
        raise InvalidDialogue(f"{n_tutor} tutor turns exceeds max_turns={max_turns}")
    if d.termination is Termination.END_MARKER:
        tutor = [t for t in d.turns if t.speaker is Speaker.TUTOR]
        if not tutor or not tutor[-1].end_flag:
            raise InvalidDialogue("end_marker termination without a final end-flagged tutor turn")
    if d.raws and len(d.raws) != len(d.turns):
        raise InvalidDialogue("raws, when present, must parallel turns")


@dataclass(frozen=True)
class TutorOutput:
    """Parsed split of one raw tutor completion."""

    think_text: str
    visible_text: str
    end_flag: bool
    malformed_think: bool = False

    def as_tuple(self) -> tuple[str, str, bool]:
        return (self.think_text, self.visible_text, self.end_flag)


def parse_tutor_output(raw: str, thinking_enabled: bool = True) -> TutorOutput:
    """Split a raw tutor completion into (think, visible, end_flag).

    Only the first ``<think>...</think>`` span counts as thinking; any later
    ``<think>`` occurrences stay verbatim inside the visible text (analysis
    treats them as a leak-risk signal). The end marker is honored only in the
    visible region: a marker inside the think span cannot end the dialogue
    because the student never sees it.

    An unterminated ``<think>`` is not guessed at: the whole completion
    (minus the opening tag) is recorded as thinking, the visible text is
    empty, and the turn is flagged malformed so downstream stages can
    penalize or exclude it deliberately.
    """
    think = ""
    visible_region = raw
    malformed = False
    if thinking_enabled:
        open_at = raw.find(THINK_OPEN)
        if open_at != -1:
            close_at = raw.find(THINK_CLOSE, open_at + len(THINK_OPEN))
            if close_at == -1:
                return TutorOutput(
                    think_text=raw.replace(THINK_OPEN, "", 1),
                    visible_text="",
                    end_flag=False,
                    malformed_think=True,
                )
            think = raw[open_at + len(THINK_OPEN) : close_at]
            visible_region = raw[:open_at] + raw[close_at + len(THINK_CLOSE) :]
    end_flag = END_MARKER in visible_region
    visible = visible_region.replace(END_MARKER, "").strip()
    return TutorOutput(think, visible, end_flag, malformed)


def serialize_tutor_output(think_text: str, visible_text: str, end_flag: bool) -> str:
    """Inverse of :func:`parse_tutor_output` for tag-free contents.

    Round-trips exactly when ``think_text`` contains no think tags and
    ``visible_text`` is whitespace-trimmed and marker-free.
    """
    parts = []
    if think_text:
        parts.append(f"{THINK_OPEN}{think_text}{THINK_CLOSE}")
    parts.append(visible_text)
    if end_flag:
        parts.append(f" {END_MARKER}")
    return "".join(parts)


def _template_text(name: str) -> str:
    path = resources.files("tutorkit").joinpath(f"data/prompts/{name}.txt")
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UnknownTemplate(f"no prompt template named {name!r}") from None


def load_template(role: PromptRole | str) -> str:
    """Return the raw template text for a role, placeholder included."""
    name = role.value if isinstance(role, PromptRole) else role
    return _template_text(name)


def build_system_prompt(role: PromptRole, problem: Problem) -> str:
    """Substitute the problem statement into a role's shipped template.

    The output differs from the template file only at the placeholder site.
    """
    if not problem.statement.strip():
        raise EmptyProblem(f"problem {problem.id!r} has a blank statement")
    template = load_template(role)
    return template.replace(PROBLEM_PLACEHOLDER, problem.statement)


def judge_prompt(name: str) -> str:
    """Load a judge system prompt: ``leak``, ``help``, or ``thinking``."""
    return _template_text(f"judge_{name}")


def render_transcript(d: Dialogue, view: TranscriptView = TranscriptView.VISIBLE_ONLY) -> str:
    """Render the dialogue as speaker-labeled text.

    ``VISIBLE_ONLY`` is what the student (and the leak/help judges) see.
    ``WITH_THINKING`` additionally interleaves tutor thinking in its own
    labeled block, for the thinking-quality judge.
    """
    return render_transcript_prefix(d, len(d.turns), view)


def render_transcript_prefix(
    d: Dialogue, end: int, view: TranscriptView = TranscriptView.VISIBLE_ONLY
) -> str:
    """Render only the first ``end`` turns (used for per-response judging)."""
    lines: list[str] = []
    for turn in d.turns[:end]:
        if turn.speaker is Speaker.TUTOR:
            if view is TranscriptView.WITH_THINKING and turn.think_text:
                lines.append(f"Teacher (thinking): {turn.think_text}")
            lines.append(f"Teacher: {turn.visible_text}")
        else:
            lines.append(f"Student: {turn.visible_text}")
    return "\n".join(lines)


def dialogue_to_record(d: Dialogue) -> dict:
    """Serialize a dialogue to the rollout-log JSONL schema."""
    return {
        "problem_id": d.problem_id,
        "condition": d.condition_id,
        "seed": d.seed,
        "termination": d.termination.value,
        "turns": [
            {
                "speaker": t.speaker.value,
                "think": t.think_text,
                "visible": t.visible_text,
                "end_flag": t.end_flag,
                "malformed_think": t.malformed_think,
            }
            for t in d.turns
        ],
        "raw": list(d.raws),
    }


def dialogue_from_record(rec: dict) -> Dialogue:
    """Inverse of :func:`dialogue_to_record`."""
    turns = tuple(
        DialogueTurn(
            speaker=Speaker(t["speaker"]),
            think_text=t["think"],
            visible_text=t["visible"],
            end_flag=t["end_flag"],
            turn_index=i,
            malformed_think=t.get("malformed_think", False),
        )
        for i, t in enumerate(rec["turns"])
    )
    return Dialogue(
        problem_id=rec["problem_id"],
        condition_id=rec["condition"],
        turns=turns,
        termination=Termination(rec["termination"]),
        seed=rec["seed"],
        raws=tuple(rec.get("raw", ())),
    )
