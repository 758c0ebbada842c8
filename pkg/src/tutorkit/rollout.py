"""Multi-turn dialogue rollouts: one dialogue, a group per problem, batches.

A dialogue alternates tutor and student turns, starting with the tutor, and
stops on the tutor's end marker or after ``max_turns`` tutor turns. The
student only ever sees the visible transcript; thinking text never enters
the student prompt.

Groups of ``group_size`` dialogues share a problem and get consecutive
seeds derived from the run seed and the problem id (not list position), so
resumed runs sample identically. Batches fan dialogues out over a bounded
thread pool but commit finished groups to the rollout log in problem order,
which keeps the log bytes reproducible and makes interrupted runs resumable
by problem id.
"""

from __future__ import annotations

import logging
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass

from . import jsonl, model
from .errors import TutorKitError
from .gateway import (
    ChatClient,
    ChatMessage,
    EmptyCompletion,
    EndpointConfig,
    HttpError,
    TransportError,
    system,
    user,
    assistant,
)
from .model import Condition, Dialogue, DialogueTurn, Problem, Speaker, Termination
from .reward import RewardBreakdown
from .seeds import derive_seed

logger = logging.getLogger(__name__)

_ENDPOINT_FAILURES = (TransportError, HttpError, EmptyCompletion)


class GroupAborted(TutorKitError):
    """Every dialogue in a rollout group failed; nothing to learn from."""


@dataclass(frozen=True)
class RolloutConfig:
    """Settings for dialogue generation; defaults match the training setup."""

    condition: Condition
    tutor: EndpointConfig
    student: EndpointConfig
    max_turns: int = 16
    group_size: int = 8
    batch_problems: int = 16
    k_attempts: int = 8
    parallelism: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ValueError(f"max_turns must be >= 1, got {self.max_turns}")
        if self.group_size < 1:
            raise ValueError(f"group_size must be >= 1, got {self.group_size}")
        if self.parallelism < 1:
            raise ValueError(f"parallelism must be >= 1, got {self.parallelism}")


@dataclass
class RolloutGroup:
    """The dialogues sampled for one problem, plus rewards once scored."""

    problem_id: str
    dialogues: tuple[Dialogue, ...]
    rewards: tuple[RewardBreakdown, ...] | None = None
    advantages: tuple[float, ...] | None = None

    def composite_rewards(self) -> list[float]:
        if self.rewards is None:
            raise ValueError(f"group {self.problem_id} has not been scored")
        return [b.composite for b in self.rewards]


def tutor_messages(
    problem: Problem, condition: Condition, turns: tuple[DialogueTurn, ...] | list[DialogueTurn]
) -> list[ChatMessage]:
    """Chat context for the tutor's next completion.

    Prior tutor turns appear visible-only, mirroring reasoning-model chat
    templates that strip earlier thinking from the context.
    """
    messages = [system(model.build_system_prompt(condition.tutor_role, problem))]
    for turn in turns:
        if turn.speaker is Speaker.TUTOR:
            messages.append(assistant(turn.visible_text))
        else:
            messages.append(user(turn.visible_text))
    return messages


def student_messages(
    problem: Problem, turns: tuple[DialogueTurn, ...] | list[DialogueTurn]
) -> list[ChatMessage]:
    """Chat context for the simulated student: visible text only, roles flipped."""
    messages = [system(model.build_system_prompt(model.PromptRole.STUDENT, problem))]
    for turn in turns:
        if turn.speaker is Speaker.TUTOR:
            messages.append(user(turn.visible_text))
        else:
            messages.append(assistant(turn.visible_text))
    return messages


def run_dialogue(
    client: ChatClient, problem: Problem, cfg: RolloutConfig, dialogue_seed: int
) -> Dialogue:
    """Run one complete tutor-student dialogue.

    Endpoint failures do not raise; the dialogue is preserved up to the
    failure with ``termination=ERROR`` so the group keeps its size.
    """
    turns: list[DialogueTurn] = []
    raws: list[str] = []
    termination = Termination.MAX_TURNS
    tutor_count = 0
    while True:
        try:
            raw = client.chat(cfg.tutor, tutor_messages(problem, cfg.condition, turns), seed=dialogue_seed)
        except _ENDPOINT_FAILURES as exc:
            logger.warning("tutor endpoint failed in %s#%d: %s", problem.id, dialogue_seed, exc)
            termination = Termination.ERROR
            break
        parsed = model.parse_tutor_output(raw, cfg.condition.thinking_enabled)
        turns.append(
            DialogueTurn(
                speaker=Speaker.TUTOR,
                think_text=parsed.think_text,
                visible_text=parsed.visible_text,
                end_flag=parsed.end_flag,
                turn_index=len(turns),
                malformed_think=parsed.malformed_think,
            )
        )
        raws.append(raw)
        tutor_count += 1
        if parsed.end_flag:
            termination = Termination.END_MARKER
            break
        if tutor_count >= cfg.max_turns:
            termination = Termination.MAX_TURNS
            break
        try:
            reply = client.chat(cfg.student, student_messages(problem, turns), seed=dialogue_seed)
        except _ENDPOINT_FAILURES as exc:
            logger.warning("student endpoint failed in %s#%d: %s", problem.id, dialogue_seed, exc)
            termination = Termination.ERROR
            break
        turns.append(
            DialogueTurn(
                speaker=Speaker.STUDENT,
                think_text="",
                visible_text=reply.strip(),
                end_flag=False,
                turn_index=len(turns),
            )
        )
        raws.append(reply)
    return Dialogue(
        problem_id=problem.id,
        condition_id=cfg.condition.name,
        turns=tuple(turns),
        termination=termination,
        seed=dialogue_seed,
        raws=tuple(raws),
    )


def group_seed(cfg_seed: int, problem_id: str) -> int:
    """Base seed for a problem's rollout group; dialogue i uses base + i."""
    return derive_seed(cfg_seed, "rollout", problem_id)


def run_group(client: ChatClient, problem: Problem, cfg: RolloutConfig) -> RolloutGroup:
    """Sample ``group_size`` dialogues for one problem, concurrently."""
    base = group_seed(cfg.seed, problem.id)
    seeds = [base + i for i in range(cfg.group_size)]
    workers = min(cfg.parallelism, cfg.group_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            dialogues = tuple(pool.map(lambda s: run_dialogue(client, problem, cfg, s), seeds))
    else:
        dialogues = tuple(run_dialogue(client, problem, cfg, s) for s in seeds)
    if all(d.termination is Termination.ERROR for d in dialogues):
        raise GroupAborted(f"all {cfg.group_size} dialogues for {problem.id} errored")
    return RolloutGroup(problem_id=problem.id, dialogues=dialogues)


def run_batch(
    client: ChatClient,
    problems: list[Problem],
    cfg: RolloutConfig,
    log_path: str | None = None,
    resume: bool = False,
) -> list[RolloutGroup]:
    """One rollout group per problem, with a global in-flight dialogue cap.

    Finished groups are appended to ``log_path`` in problem order as soon as
    all their predecessors are flushed, so a fresh run's log is byte-stable
    and an interrupted run can resume: problems whose full group is already
    in the log are loaded instead of re-executed.
    """
    if not problems:
        raise ValueError("problems must be non-empty")
    done: dict[str, RolloutGroup] = {}
    if resume and log_path:
        done = load_rollout_log(log_path, expected_group_size=cfg.group_size)
        if done:
            logger.info("resuming: %d groups already complete", len(done))

    pending = [p for p in problems if p.id not in done]
    futures: dict[str, list[Future]] = {}
    groups: dict[str, RolloutGroup] = dict(done)
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        for problem in pending:
            base = group_seed(cfg.seed, problem.id)
            futures[problem.id] = [
                pool.submit(run_dialogue, client, problem, cfg, base + i)
                for i in range(cfg.group_size)
            ]
        for problem in problems:
            if problem.id in done:
                continue
            dialogues = tuple(f.result() for f in futures[problem.id])
            if all(d.termination is Termination.ERROR for d in dialogues):
                raise GroupAborted(f"all {cfg.group_size} dialogues for {problem.id} errored")
            group = RolloutGroup(problem_id=problem.id, dialogues=dialogues)
            groups[problem.id] = group
            if log_path:
                for d in dialogues:
                    jsonl.append_jsonl(log_path, model.dialogue_to_record(d))
    return [groups[p.id] for p in problems]


def load_rollout_log(path: str, expected_group_size: int | None = None) -> dict[str, RolloutGroup]:
    """Read a rollout log back into groups keyed by problem id.

    With ``expected_group_size`` set, incomplete groups (from an interrupted
    run) are dropped so they get re-executed rather than half-trusted.
    """
    by_problem: dict[str, list[Dialogue]] = {}
    try:
        records = list(jsonl.read_jsonl(path))
    except FileNotFoundError:
        return {}
    for rec in records:
        d = model.dialogue_from_record(rec)
        by_problem.setdefault(d.problem_id, []).append(d)
    groups = {}
    for problem_id, dialogues in by_problem.items():
        if expected_group_size is not None and len(dialogues) != expected_group_size:
            logger.warning(
                "dropping incomplete group for %s (%d/%s dialogues)",
                problem_id,
                len(dialogues),
                expected_group_size,
            )
            continue
        groups[problem_id] = RolloutGroup(problem_id=problem_id, dialogues=tuple(dialogues))
    return groups
