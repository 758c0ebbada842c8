"""Reward computation: solve-rate, pedagogy judges, thinking judge, and
group-relative advantages.

The composite reward for one dialogue is

    r = r_sol + (r_ped - 1.0) * lambda_ped + (r_think - theta) * lambda_think

where r_sol is the student's post-dialogue solve rate over K attempts,
r_ped is 1.0 iff both the leak judge and the helpfulness judge accept the
dialogue, and r_think is the mean per-turn thinking-quality score. Under
conditions without the thinking reward the last term is dropped entirely.

Judge output parsing is deliberately lenient: decisions are case-folded,
extra JSON fields are ignored, and a JSON object is dug out of surrounding
prose or code fences if needed. Judges that stay malformed after the retry
budget raise :class:`MalformedJudgeOutput`.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import model
from .errors import TutorKitError
from .gateway import ChatClient, ChatMessage, EndpointConfig, system, user
from .model import Condition, Dialogue, Problem, TranscriptView
from .seeds import derive_seed

logger = logging.getLogger(__name__)


class MalformedJudgeOutput(TutorKitError):
    """A judge kept returning unparseable output after all retries."""


class EmptyGroup(TutorKitError):
    """Advantages were requested for an empty reward group."""


@dataclass(frozen=True)
class RewardWeights:
    """Weights of the composite reward; defaults are the trained values."""

    lambda_ped: float = 0.75
    lambda_think: float = 0.3
    theta: float = 0.6

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")


@dataclass(frozen=True)
class JudgeVerdict:
    decision: str  # "accept" or "reject"
    reasoning: str
    raw: str
    attempts: int

    @property
    def accepted(self) -> bool:
        return self.decision == "accept"


@dataclass(frozen=True)
class ThinkingJudgement:
    """Per-turn thinking scores and their mean."""

    r_think: float
    per_turn: tuple[float, ...]
    raws: tuple[str, ...]


@dataclass(frozen=True)
class RewardBreakdown:
    r_sol: float
    r_ped: float
    r_think: float
    composite: float
    leak_verdict: JudgeVerdict | None
    help_verdict: JudgeVerdict | None
    think_scores: tuple[float, ...] = ()
    think_raws: tuple[str, ...] = ()  # raw judge replies, parallel to think_scores
    thinking_reward_applied: bool = True
    errored: bool = False

    def as_record(self) -> dict:
        rec = {
            "r_sol": self.r_sol,
            "r_ped": self.r_ped,
            "r_think": self.r_think,
            "composite": self.composite,
            "thinking_reward_applied": self.thinking_reward_applied,
            "errored": self.errored,
            "think_scores": list(self.think_scores),
        }
        for name, verdict in (("leak", self.leak_verdict), ("help", self.help_verdict)):
            rec[name] = (
                None
                if verdict is None
                else {"decision": verdict.decision, "reasoning": verdict.reasoning}
            )
        return rec


def composite_reward(
    r_sol: float,
    r_ped: float,
    r_think: float,
    weights: RewardWeights = RewardWeights(),
    thinking_reward_enabled: bool = True,
) -> float:
    """Combine the three components into the scalar training reward."""
    r = r_sol + (r_ped - 1.0) * weights.lambda_ped
    if thinking_reward_enabled:
        r += (r_think - weights.theta) * weights.lambda_think
    return r


def grpo_advantages(group_rewards: list[float], eps: float = 1e-8) -> list[float]:
    """Group-relative advantages: z-score within the group.

    Uses the population standard deviation. Groups with (near-)zero spread
    get all-zero advantages instead of blowing up.
    """
    if len(group_rewards) == 0:
        raise EmptyGroup("cannot normalize an empty group")
    arr = np.asarray(group_rewards, dtype=np.float64)
    std = float(arr.std())
    if std < eps:
        return [0.0] * len(group_rewards)
    return ((arr - arr.mean()) / std).tolist()


# ---------------------------------------------------------------------------
# Judge output parsing


_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)\n\s*```", re.DOTALL)


def extract_json_object(text: str) -> dict | None:
    """Dig a JSON object out of a judge reply, tolerating prose and fences."""
    candidates = [text.strip()]
    fence = _FENCE_RE.search(text)
    if fence:
        candidates.append(fence.group(1).strip())
    for candidate in candidates:
        try:
            obj = json.loads(candidate)
            if isinstance(obj, dict):
                return obj
        except ValueError:
            pass
    # Last resort: first balanced {...} region that parses.
    start = text.find("{")
    while start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start : i + 1])
                        if isinstance(obj, dict):
                            return obj
                    except ValueError:
                        pass
                    break
        start = text.find("{", start + 1)
    return None


def parse_verdict_reply(raw: str) -> tuple[str, str]:
    """Parse ``{"reasoning": ..., "decision": "accept"/"reject"}`` leniently."""
    obj = extract_json_object(raw)
    if obj is None:
        raise ValueError("no JSON object in judge reply")
    decision = str(obj.get("decision", "")).strip().lower()
    if decision not in ("accept", "reject"):
        raise ValueError(f"decision must be accept or reject, got {obj.get('decision')!r}")
    return decision, str(obj.get("reasoning", ""))


def parse_score_reply(raw: str) -> tuple[float, str]:
    """Parse ``{"score": float, "reasoning": ...}``, clamping to [0, 1]."""
    obj = extract_json_object(raw)
    if obj is None:
        raise ValueError("no JSON object in judge reply")
    if "score" not in obj:
        raise ValueError("judge reply has no 'score' field")
    try:
        score = float(obj["score"])
    except (TypeError, ValueError):
        raise ValueError(f"score is not numeric: {obj['score']!r}") from None
    if not 0.0 <= score <= 1.0:
        logger.warning("thinking score %s out of [0, 1]; clamping", score)
        score = min(1.0, max(0.0, score))
    return score, str(obj.get("reasoning", ""))


def _judged_reply(
    client: ChatClient,
    judge: EndpointConfig,
    messages: list[ChatMessage],
    parse,
    base_seed: int,
):
    """Call the judge, retrying malformed replies up to its retry budget."""
    last_raw = ""
    for attempt in range(1, judge.max_retries + 2):
        last_raw = client.chat(judge, messages, seed=base_seed + attempt - 1)
        try:
            return parse(last_raw), last_raw, attempt
        except ValueError as exc:
            logger.debug("judge reply attempt %d unparseable: %s", attempt, exc)
    raise MalformedJudgeOutput(
        f"judge output stayed malformed after {judge.max_retries + 1} attempts; "
        f"last reply: {last_raw[:200]!r}"
    )


def judge_leak(
    client: ChatClient, d: Dialogue, judge: EndpointConfig, seed: int | None = None
) -> JudgeVerdict:
    """Did the tutor guide rather than reveal? Judged on the visible dialogue."""
    return _dialogue_verdict(client, d, judge, "leak", seed)


def judge_help(
    client: ChatClient, d: Dialogue, judge: EndpointConfig, seed: int | None = None
) -> JudgeVerdict:
    """Was the tutoring style appropriate and educationally useful?"""
    return _dialogue_verdict(client, d, judge, "help", seed)


def _dialogue_verdict(
    client: ChatClient, d: Dialogue, judge: EndpointConfig, which: str, seed: int | None
) -> JudgeVerdict:
    if not d.tutor_turns():
        raise ValueError("dialogue has no tutor turns to judge")
    if seed is None:
        seed = derive_seed(d.seed, "judge", which)
    messages = [
        system(model.judge_prompt(which)),
        user(model.render_transcript(d, TranscriptView.VISIBLE_ONLY)),
    ]
    (decision, reasoning), raw, attempts = _judged_reply(
        client, judge, messages, parse_verdict_reply, seed
    )
    return JudgeVerdict(decision, reasoning, raw, attempts)


def judge_response_prefix(
    client: ChatClient,
    d: Dialogue,
    turn_position: int,
    judge: EndpointConfig,
    which: str,
    seed: int | None = None,
) -> JudgeVerdict:
    """Judge a single tutor response given only the transcript up to it.

    Evaluation-time leak/helpful rates are per response; the judging window
    deliberately stops at the response so later turns cannot excuse it.
    """
    if seed is None:
        seed = derive_seed(d.seed, "judge", which, turn_position)
    messages = [
        system(model.judge_prompt(which)),
        user(model.render_transcript_prefix(d, turn_position + 1, TranscriptView.VISIBLE_ONLY)),
    ]
    (decision, reasoning), raw, attempts = _judged_reply(
        client, judge, messages, parse_verdict_reply, seed
    )
    return JudgeVerdict(decision, reasoning, raw, attempts)


def judge_thinking(
    client: ChatClient, d: Dialogue, judge: EndpointConfig, seed: int | None = None
) -> ThinkingJudgement:
    """Score each tutor turn's thinking trace and average over tutor turns.

    Turns with empty thinking score 0 without a judge call, so a tutor that
    skips thinking is penalized rather than silently excused. Averaging per
    turn keeps long dialogues from being dominated by one long trace.
    """
    tutor_turns = d.tutor_turns()
    if not tutor_turns:
        raise ValueError("dialogue has no tutor turns to judge")
    prompt = model.judge_prompt("thinking")
    scores: list[float] = []
    raws: list[str] = []
    for turn in tutor_turns:
        if not turn.think_text.strip():
            scores.append(0.0)
            raws.append("")
            continue
        turn_seed = (
            derive_seed(d.seed, "judge", "thinking", turn.turn_index) if seed is None else seed
        )
        context = model.render_transcript_prefix(
            d, turn.turn_index + 1, TranscriptView.WITH_THINKING
        )
        messages = [
            system(prompt),
            user(f"{context}\n\nThinking trace under evaluation:\n{turn.think_text}"),
        ]
        (score, _), raw, _ = _judged_reply(client, judge, messages, parse_score_reply, turn_seed)
        scores.append(score)
        raws.append(raw)
    r_think = sum(scores) / len(scores)
    return ThinkingJudgement(r_think, tuple(scores), tuple(raws))


# ---------------------------------------------------------------------------
# Answer grading


_ANSWER_LINE_RE = re.compile(r"^\s*ANSWER\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)
_BOXED_RE = re.compile(r"\\boxed\{([^{}]*)\}")
_FRAC_RE = re.compile(r"\\d?frac\{([^{}]*)\}\{([^{}]*)\}")
_LEADING_PHRASES = ("the final answer is", "the answer is", "answer:", "answer is")


def extract_final_answer(text: str) -> str:
    """Pull the student's final answer out of an attempt completion.

    Prefers the last ``ANSWER:`` line (the convention our solo-attempt
    prompt requests), then the last ``\\boxed{...}``, then the last
    non-empty line.
    """
    matches = _ANSWER_LINE_RE.findall(text)
    if matches:
        return matches[-1]
    boxed = _BOXED_RE.findall(text)
    if boxed:
        return boxed[-1]
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    return lines[-1] if lines else ""


def _normalize_answer(s: str) -> str:
    s = s.strip()
    lowered = s.lower()
    for phrase in _LEADING_PHRASES:
        if lowered.startswith(phrase):
            s = s[len(phrase) :].strip()
            lowered = s.lower()
    boxed = _BOXED_RE.search(s)
    if boxed and boxed.group(0) == s.strip():
        s = boxed.group(1).strip()
    s = _FRAC_RE.sub(lambda m: f"{m.group(1)}/{m.group(2)}", s)
    s = s.strip().strip("$").strip()
    s = s.rstrip(".,;:!?").strip()
    return s


def _parse_number(s: str) -> Fraction | None:
    compact = s.replace(" ", "")
    # Digit-group commas only; "1,2,3" style lists stay strings.
    compact = re.sub(r"(?<=\d),(?=\d{3}(\D|$))", "", compact)
    try:
        return Fraction(compact)
    except (ValueError, ZeroDivisionError):
        return None


def answers_equivalent(candidate: str, reference: str) -> bool:
    """Tolerant equality for final answers.

    Both sides are normalized (wrappers, leading phrases, trailing
    punctuation, case), then compared numerically with relative tolerance
    1e-6 when both parse as numbers, else as normalized strings.
    """
    a = _normalize_answer(candidate)
    b = _normalize_answer(reference)
    na, nb = _parse_number(a), _parse_number(b)
    if na is not None and nb is not None:
        if na == nb:
            return True
        tol = Fraction(1, 10**6) * max(abs(na), abs(nb))
        return abs(na - nb) <= tol
    return " ".join(a.lower().split()) == " ".join(b.lower().split())


# ---------------------------------------------------------------------------
# Solve-rate measurement


def solo_attempt_messages(problem: Problem, transcript: str | None) -> list[ChatMessage]:
    """Messages for one independent student attempt at the problem."""
    sys_prompt = model.build_system_prompt(model.PromptRole.SOLO_ATTEMPT, problem)
    if transcript:
        content = (
            "Here is a tutoring conversation you just had about this problem:\n\n"
            f"{transcript}\n\n"
            "Now solve the problem yourself. Remember to end with 'ANSWER: <your final answer>'."
        )
    else:
        content = "Solve the problem now. Remember to end with 'ANSWER: <your final answer>'."
    return [system(sys_prompt), user(content)]


def solo_solve_rate(
    client: ChatClient,
    problem: Problem,
    student: EndpointConfig,
    K: int,
    seed: int,
    transcript: str | None = None,
) -> float:
    """Fraction of K independent attempts (seeds seed..seed+K-1) graded correct."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    messages = solo_attempt_messages(problem, transcript)
    successes = 0
    for j in range(K):
        completion = client.chat(student, messages, seed=seed + j)
        answer = extract_final_answer(completion)
        if answers_equivalent(answer, problem.reference_answer):
            successes += 1
    return successes / K


def compute_r_sol(
    client: ChatClient,
    problem: Problem,
    d: Dialogue,
    student: EndpointConfig,
    K: int = 8,
    seed: int | None = None,
) -> float:
    """Post-dialogue solve rate: K attempts conditioned on the visible transcript."""
    if seed is None:
        seed = derive_seed(d.seed, "rsol")
    transcript = model.render_transcript(d, TranscriptView.VISIBLE_ONLY)
    return solo_solve_rate(client, problem, student, K, seed, transcript=transcript)


# ---------------------------------------------------------------------------
# Dialogue and group scoring


def score_dialogue(
    client: ChatClient,
    problem: Problem,
    d: Dialogue,
    condition: Condition,
    judge: EndpointConfig,
    student: EndpointConfig,
    weights: RewardWeights = RewardWeights(),
    K: int = 8,
) -> RewardBreakdown:
    """Full reward breakdown for one dialogue.

    Errored dialogues keep their slot in the group with worst-case
    components (all zero) so advantage normalization sees the full group.
    """
    apply_think = condition.thinking_reward_enabled
    if d.termination is model.Termination.ERROR:
        return RewardBreakdown(
            r_sol=0.0,
            r_ped=0.0,
            r_think=0.0,
            composite=composite_reward(0.0, 0.0, 0.0, weights, apply_think),
            leak_verdict=None,
            help_verdict=None,
            thinking_reward_applied=apply_think,
            errored=True,
        )
    leak = judge_leak(client, d, judge)
    help_ = judge_help(client, d, judge)
    r_ped = 1.0 if (leak.accepted and help_.accepted) else 0.0
    if condition.thinking_enabled:
        thinking = judge_thinking(client, d, judge)
        r_think, think_scores, think_raws = thinking.r_think, thinking.per_turn, thinking.raws
    else:
        r_think, think_scores, think_raws = 0.0, (), ()
    r_sol = compute_r_sol(client, problem, d, student, K)
    return RewardBreakdown(
        r_sol=r_sol,
        r_ped=r_ped,
        r_think=r_think,
        composite=composite_reward(r_sol, r_ped, r_think, weights, apply_think),
        leak_verdict=leak,
        help_verdict=help_,
        think_scores=think_scores,
        think_raws=think_raws,
        thinking_reward_applied=apply_think,
    )


def score_group(
    client: ChatClient,
    problem: Problem,
    group,
    condition: Condition,
    judge: EndpointConfig,
    student: EndpointConfig,
    weights: RewardWeights = RewardWeights(),
    K: int = 8,
    parallelism: int = 1,
):
    """Fill a rollout group's rewards and group-relative advantages in place."""
    from concurrent.futures import ThreadPoolExecutor

    def score(d: Dialogue) -> RewardBreakdown:
        return score_dialogue(client, problem, d, condition, judge, student, weights, K)

    if parallelism > 1 and len(group.dialogues) > 1:
        with ThreadPoolExecutor(max_workers=min(parallelism, len(group.dialogues))) as pool:
            rewards = tuple(pool.map(score, group.dialogues))
    else:
        rewards = tuple(score(d) for d in group.dialogues)
    group.rewards = rewards
    group.advantages = tuple(grpo_advantages([b.composite for b in rewards]))
    return group


def emit_training_batch(
    groups,
    path: str,
    problems: dict[str, Problem],
    condition: Condition,
) -> int:
    """Write one training record per tutor turn to a JSONL file.

    The dialogue-level reward and advantage are broadcast to every tutor
    turn of that dialogue; per-turn credit assignment is the trainer's
    business, not ours. Returns the number of records written.
    """
    from . import jsonl, rollout

    records = []
    for group in groups:
        if group.rewards is None or group.advantages is None:
            raise ValueError(f"group {group.problem_id} is missing rewards or advantages")
        problem = problems[group.problem_id]
        for d, breakdown, advantage in zip(group.dialogues, group.rewards, group.advantages):
            for i, turn in enumerate(d.turns):
                if turn.speaker is not model.Speaker.TUTOR:
                    continue
                prompt_messages = rollout.tutor_messages(problem, condition, d.turns[:i])
                if d.raws and i < len(d.raws):
                    response_raw = d.raws[i]
                else:
                    response_raw = model.serialize_tutor_output(
                        turn.think_text, turn.visible_text, turn.end_flag
                    )
                records.append(
                    {
                        "problem_id": d.problem_id,
                        "rollout_seed": d.seed,
                        "turn_index": turn.turn_index,
                        "prompt_messages": [m.as_dict() for m in prompt_messages],
                        "response_raw": response_raw,
                        "reward": breakdown.composite,
                        "advantage": advantage,
                    }
                )
    return jsonl.write_jsonl(path, records)
