"""Problem ingestion, baseline solve-rate measurement, filtering, splitting.

Problems arrive as JSONL, one object per line:

    {"id": str, "problem": str, "answer": str,
     "baseline_solve_rate": float?, "tags": [str]?}

Baseline rates are measured once at prepare time and cached into the
problem records, so evaluation's delta solve rate subtracts the exact same
pre-dialogue rates instead of re-sampling them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from . import jsonl
from .errors import TutorKitError
from .gateway import ChatClient, EndpointConfig
from .model import Problem
from .reward import solo_solve_rate

logger = logging.getLogger(__name__)


class ParseError(TutorKitError):
    """A problem line failed to parse against the record schema."""

    def __init__(self, path: str, line_no: int, detail: str):
        super().__init__(f"{path}:{line_no}: {detail}")
        self.line_no = line_no


class DuplicateId(TutorKitError):
    """Two problems share an id."""


class MissingBaseline(TutorKitError):
    """Filtering needs baseline solve rates that have not been measured."""


class InsufficientProblems(TutorKitError):
    """The requested split sizes exceed the available problems."""


@dataclass(frozen=True)
class ProblemSet:
    problems: tuple[Problem, ...]
    source: str
    content_hash: str
    filter_bounds: tuple[float, float] | None = None

    def __len__(self) -> int:
        return len(self.problems)

    def by_id(self) -> dict[str, Problem]:
        return {p.id: p for p in self.problems}


def ingest_problems(path: str) -> ProblemSet:
    """Load a JSONL problem file, rejecting duplicates and bad records."""
    with open(path, "rb") as f:
        content_hash = hashlib.sha256(f.read()).hexdigest()
    problems: list[Problem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc}") from exc
            try:
                problem = Problem(
                    id=str(rec["id"]),
                    statement=str(rec["problem"]),
                    reference_answer=str(rec["answer"]),
                    baseline_solve_rate=rec.get("baseline_solve_rate"),
                    tags=tuple(rec.get("tags", ())),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(path, line_no, f"bad problem record: {exc}") from exc
            if problem.id in seen:
                raise DuplicateId(f"duplicate problem id {problem.id!r} at {path}:{line_no}")
            seen.add(problem.id)
            problems.append(problem)
    if not problems:
        logger.warning("problem file %s is empty", path)
    return ProblemSet(tuple(problems), source=path, content_hash=content_hash)


def write_problems(s: ProblemSet, path: str) -> int:
    """Write problems back out in the ingestion schema."""
    records = []
    for p in s.problems:
        rec: dict = {"id": p.id, "problem": p.statement, "answer": p.reference_answer}
        if p.baseline_solve_rate is not None:
            rec["baseline_solve_rate"] = p.baseline_solve_rate
        if p.tags:
            rec["tags"] = list(p.tags)
        records.append(rec)
    return jsonl.write_jsonl(path, records)


def measure_baseline_solve_rate(
    client: ChatClient,
    p: Problem,
    student: EndpointConfig,
    K: int,
    seed: int,
) -> float:
    """Solve rate over K solo attempts (no tutor), seeds seed..seed+K-1."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    return solo_solve_rate(client, p, student, K, seed, transcript=None)


def measure_baselines(
    client: ChatClient,
    s: ProblemSet,
    student: EndpointConfig,
    K: int,
    seed: int,
    parallelism: int = 4,
    only_missing: bool = True,
) -> ProblemSet:
    """Measure and cache baseline rates for a whole set.

    Each problem gets a seed block derived from (seed, problem id), so the
    measurement is stable under reordering and resumption.
    """
    from .seeds import derive_seed

    def measure(p: Problem) -> Problem:
        if only_missing and p.baseline_solve_rate is not None:
            return p
        rate = measure_baseline_solve_rate(
            client, p, student, K, derive_seed(seed, "baseline", p.id)
        )
        return replace(p, baseline_solve_rate=rate)

    if parallelism > 1 and len(s.problems) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            measured = tuple(pool.map(measure, s.problems))
    else:
        measured = tuple(measure(p) for p in s.problems)
    return replace(s, problems=measured)


def filter_by_solve_rate(s: ProblemSet, lo: float, hi: float) -> ProblemSet:
    """Keep problems whose baseline rate lies in [lo, hi] (inclusive)."""
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"need 0 <= lo <= hi <= 1, got lo={lo}, hi={hi}")
    for p in s.problems:
        if p.baseline_solve_rate is None:
            raise MissingBaseline(f"problem {p.id!r} has no baseline_solve_rate")
    kept = tuple(p for p in s.problems if lo <= p.baseline_solve_rate <= hi)
    return replace(s, problems=kept, filter_bounds=(lo, hi))


def split(s: ProblemSet, n_train: int, n_eval: int, seed: int) -> tuple[ProblemSet, ProblemSet]:
    """Disjoint seeded-shuffle split into (train, eval)."""
    if n_train < 0 or n_eval < 0:
        raise ValueError("split sizes must be non-negative")
    if n_train + n_eval > len(s.problems):
        raise InsufficientProblems(
            f"requested {n_train}+{n_eval} problems but only {len(s.problems)} available"
        )
    order = list(s.problems)
    random.Random(seed).shuffle(order)
    train = replace(s, problems=tuple(order[:n_train]))
    eval_ = replace(s, problems=tuple(order[n_train : n_train + n_eval]))
    return train, eval_
