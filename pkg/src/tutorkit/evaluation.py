"""The three tutor metrics: delta solve rate, leak rate, helpful rate.

Delta solve rate subtracts the dataset's cached pre-dialogue baselines from
post-dialogue solve rates measured with the same K-attempt procedure. Leak
and helpful rates are response-weighted: every tutor response is judged
individually against the transcript prefix that ends at it, so later turns
cannot retroactively excuse an early leak.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .errors import TutorKitError
from .gateway import ChatClient, EndpointConfig
from .model import Dialogue, Problem, Speaker
from .reward import MalformedJudgeOutput, compute_r_sol, judge_response_prefix

logger = logging.getLogger(__name__)


class LengthMismatch(TutorKitError):
    """Pre and post solve-rate lists are not aligned."""


class EmptyReport(TutorKitError):
    """A report with no per-problem rows cannot be rendered."""


@dataclass(frozen=True)
class ProblemRow:
    problem_id: str
    pre_rate: float
    post_rate: float
    n_dialogues: int

    @property
    def delta(self) -> float:
        return self.post_rate - self.pre_rate


@dataclass(frozen=True)
class EvalReport:
    condition_id: str
    n_problems: int
    delta_solve: float
    leak_rate: float
    helpful_rate: float
    rows: tuple[ProblemRow, ...]
    responses_judged: int
    responses_failed: int
    config_snapshot: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        return {
            "condition": self.condition_id,
            "n_problems": self.n_problems,
            "delta_solve": self.delta_solve,
            "leak_rate": self.leak_rate,
            "helpful_rate": self.helpful_rate,
            "responses_judged": self.responses_judged,
            "responses_failed": self.responses_failed,
            "per_problem": [
                {
                    "problem_id": r.problem_id,
                    "pre": r.pre_rate,
                    "post": r.post_rate,
                    "delta": r.delta,
                    "n_dialogues": r.n_dialogues,
                }
                for r in self.rows
            ],
            "config": self.config_snapshot,
        }


def delta_solve_rate(pre: list[float], post: list[float]) -> float:
    """mean(post) - mean(pre), aligned by problem."""
    if len(pre) != len(post):
        raise LengthMismatch(f"pre has {len(pre)} entries, post has {len(post)}")
    if not pre:
        raise LengthMismatch("cannot compute delta over zero problems")
    return sum(post) / len(post) - sum(pre) / len(pre)


@dataclass(frozen=True)
class ResponseJudgement:
    problem_id: str
    dialogue_seed: int
    turn_index: int
    decision: str | None  # None when judging failed
    reasoning: str


def judge_responses(
    client: ChatClient,
    dialogues: list[Dialogue],
    judge: EndpointConfig,
    which: str,
    parallelism: int = 1,
) -> list[ResponseJudgement]:
    """Judge every tutor response individually with the given judge prompt.

    Responses whose judge calls stay malformed are recorded with a None
    decision; rates exclude them from the denominator but reports count
    them. Judging fans out over a thread pool, but results keep the stable
    (dialogue, turn) order regardless of parallelism.
    """
    targets = [
        (d, i, turn.turn_index)
        for d in dialogues
        for i, turn in enumerate(d.turns)
        if turn.speaker is Speaker.TUTOR
    ]

    def judge_one(target) -> ResponseJudgement:
        d, i, turn_index = target
        try:
            verdict = judge_response_prefix(client, d, i, judge, which)
            return ResponseJudgement(d.problem_id, d.seed, turn_index, verdict.decision, verdict.reasoning)
        except MalformedJudgeOutput as exc:
            logger.warning("response judging failed for %s#%d turn %d: %s", d.problem_id, d.seed, i, exc)
            return ResponseJudgement(d.problem_id, d.seed, turn_index, None, str(exc))

    if parallelism > 1 and len(targets) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=min(parallelism, len(targets))) as pool:
            return list(pool.map(judge_one, targets))
    return [judge_one(t) for t in targets]


def leak_rate(client: ChatClient, dialogues: list[Dialogue], judge: EndpointConfig) -> float:
    """Proportion of tutor responses the leak judge rejects (reveals too much)."""
    if not dialogues:
        raise ValueError("dialogues must be non-empty")
    judged = [r for r in judge_responses(client, dialogues, judge, "leak") if r.decision]
    if not judged:
        return 0.0
    return sum(1 for r in judged if r.decision == "reject") / len(judged)


def helpful_rate(client: ChatClient, dialogues: list[Dialogue], judge: EndpointConfig) -> float:
    """Proportion of tutor responses the helpfulness judge accepts."""
    if not dialogues:
        raise ValueError("dialogues must be non-empty")
    judged = [r for r in judge_responses(client, dialogues, judge, "help") if r.decision]
    if not judged:
        return 0.0
    return sum(1 for r in judged if r.decision == "accept") / len(judged)


def evaluate_condition(
    client: ChatClient,
    problems: list[Problem],
    dialogues: list[Dialogue],
    judge: EndpointConfig,
    student: EndpointConfig,
    K: int = 8,
    condition_id: str | None = None,
    config_snapshot: dict | None = None,
    parallelism: int = 1,
) -> EvalReport:
    """Compute the full metric report for one condition's dialogues.

    Pre-dialogue rates come from the problems' cached baselines; post rates
    average K-attempt solve rates over each problem's dialogues.
    """
    if not dialogues:
        raise ValueError("dialogues must be non-empty")
    if condition_id is None:
        condition_id = dialogues[0].condition_id
    by_problem: dict[str, list[Dialogue]] = {}
    for d in dialogues:
        by_problem.setdefault(d.problem_id, []).append(d)

    rows = []
    for p in sorted(problems, key=lambda p: p.id):
        if p.id not in by_problem:
            continue
        if p.baseline_solve_rate is None:
            raise ValueError(f"problem {p.id!r} has no cached baseline solve rate")
        group = sorted(by_problem[p.id], key=lambda d: d.seed)
        post_rates = [compute_r_sol(client, p, d, student, K) for d in group]
        rows.append(
            ProblemRow(
                problem_id=p.id,
                pre_rate=p.baseline_solve_rate,
                post_rate=sum(post_rates) / len(post_rates),
                n_dialogues=len(group),
            )
        )
    if not rows:
        raise ValueError("no dialogues matched the given problems")

    delta = delta_solve_rate([r.pre_rate for r in rows], [r.post_rate for r in rows])
    leak_judged = judge_responses(client, dialogues, judge, "leak", parallelism)
    help_judged = judge_responses(client, dialogues, judge, "help", parallelism)
    leak_ok = [r for r in leak_judged if r.decision]
    help_ok = [r for r in help_judged if r.decision]
    failed = sum(1 for r in leak_judged + help_judged if r.decision is None)
    return EvalReport(
        condition_id=condition_id,
        n_problems=len(rows),
        delta_solve=delta,
        leak_rate=(sum(1 for r in leak_ok if r.decision == "reject") / len(leak_ok)) if leak_ok else 0.0,
        helpful_rate=(sum(1 for r in help_ok if r.decision == "accept") / len(help_ok)) if help_ok else 0.0,
        rows=tuple(rows),
        responses_judged=len(leak_ok),
        responses_failed=failed,
        config_snapshot=config_snapshot or {},
    )


def render_report(r: EvalReport, format: str = "markdown") -> str:
    """Render the report as a markdown table block or CSV, 3 decimals."""
    if not r.rows:
        raise EmptyReport("report has no per-problem rows")
    if format == "csv":
        lines = ["condition,delta_solve,leak_rate,helpful_rate"]
        lines.append(
            f"{r.condition_id},{r.delta_solve:.3f},{r.leak_rate:.3f},{r.helpful_rate:.3f}"
        )
        return "\n".join(lines) + "\n"
    if format != "markdown":
        raise ValueError(f"unknown report format {format!r}")
    lines = [
        "# Tutor evaluation",
        "",
        f"Problems evaluated: {r.n_problems}",
        f"Tutor responses judged: {r.responses_judged}"
        + (f" ({r.responses_failed} failed judging)" if r.responses_failed else ""),
        "",
        "| Condition | Δ Solve | Leak | Helpful |",
        "|---|---:|---:|---:|",
        f"| {r.condition_id} | {r.delta_solve:.3f} | {r.leak_rate:.3f} | {r.helpful_rate:.3f} |",
        "",
        "## Per-problem solve rates",
        "",
        "| Problem | Pre | Post | Δ |",
        "|---|---:|---:|---:|",
    ]
    for row in r.rows:
        lines.append(
            f"| {row.problem_id} | {row.pre_rate:.3f} | {row.post_rate:.3f} | {row.delta:.3f} |"
        )
    return "\n".join(lines) + "\n"
