from __future__ import annotations


import pytest
from hypothesis import given, strategies as st

from tutorkit import dataset
from tutorkit.dataset import (
    DuplicateId,
    InsufficientProblems,
    MissingBaseline,
    ParseError,
    ProblemSet,
    filter_by_solve_rate,
    ingest_problems,
    measure_baseline_solve_rate,
    split,
)
from tutorkit.gateway import ChatClient
from tutorkit.mock import mock_backend
from tutorkit.model import Problem

from conftest import PROBLEM_RECORDS, SOLO_MARK, write_problems_file


def _problem_set(rates: list[float | None]) -> ProblemSet:
    problems = tuple(
        Problem(id=f"p{i}", statement=f"q {i}", reference_answer="1", baseline_solve_rate=r)
        for i, r in enumerate(rates)
    )
    return ProblemSet(problems, source="memory", content_hash="0")


# --- ingestion ---------------------------------------------------------------


def test_ingest_valid_jsonl(tmp_path) -> None:
    path = write_problems_file(tmp_path / "p.jsonl", PROBLEM_RECORDS[:3])
    s = ingest_problems(path)
    assert len(s) == 3
    assert s.problems[0].id == "p1"
    assert s.problems[0].reference_answer == "7"
    assert len(s.content_hash) == 64


def test_ingest_duplicate_id_rejected(tmp_path) -> None:
    records = [PROBLEM_RECORDS[0], PROBLEM_RECORDS[0]]
    path = write_problems_file(tmp_path / "p.jsonl", records)
    with pytest.raises(DuplicateId, match="p1"):
        ingest_problems(path)


def test_ingest_empty_file_warns(tmp_path, caplog) -> None:
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with caplog.at_level("WARNING"):
        s = ingest_problems(str(path))
    assert len(s) == 0
    assert any("empty" in r.message for r in caplog.records)


def test_ingest_bad_json_reports_line(tmp_path) -> None:
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "problem": "x", "answer": "1"}\nnot json\n')
    with pytest.raises(ParseError, match=":2"):
        ingest_problems(str(path))


def test_ingest_missing_field_reports_line(tmp_path) -> None:
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "problem": "x"}\n')
    with pytest.raises(ParseError, match=":1"):
        ingest_problems(str(path))


def test_ingest_out_of_range_baseline_rejected(tmp_path) -> None:
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "problem": "x", "answer": "1", "baseline_solve_rate": 1.5}\n')
    with pytest.raises(ParseError):
        ingest_problems(str(path))


def test_write_then_ingest_round_trip(tmp_path) -> None:
    s = _problem_set([0.25, None, 0.5])
    out = tmp_path / "out.jsonl"
    dataset.write_problems(s, str(out))
    back = ingest_problems(str(out))
    assert [p.baseline_solve_rate for p in back.problems] == [0.25, None, 0.5]


# --- baseline measurement ------------------------------------------------------


def test_measure_baseline_counts_scripted_successes(client: ChatClient) -> None:
    ep = mock_backend(
        [
            {"contains": SOLO_MARK, "seed_mod": [8, [0, 1, 2]], "reply": "ANSWER: 7"},
            {"always": True, "reply": "ANSWER: 0"},
        ]
    )
    p = Problem(id="p1", statement="Compute 3 + 4.", reference_answer="7")
    assert measure_baseline_solve_rate(client, p, ep, K=8, seed=16) == 0.375


def test_measure_baseline_k_zero_rejected(client: ChatClient) -> None:
    ep = mock_backend([{"always": True, "reply": "ANSWER: 7"}])
    p = Problem(id="p1", statement="q", reference_answer="7")
    with pytest.raises(ValueError):
        measure_baseline_solve_rate(client, p, ep, K=0, seed=0)


def test_measure_baseline_saturates_at_one(client: ChatClient) -> None:
    ep = mock_backend([{"always": True, "reply": "ANSWER: 7"}])
    p = Problem(id="p1", statement="q", reference_answer="7")
    assert measure_baseline_solve_rate(client, p, ep, K=8, seed=0) == 1.0


def test_measure_baseline_values_are_multiples_of_one_over_k(client: ChatClient) -> None:
    ep = mock_backend(
        [
            {"contains": SOLO_MARK, "seed_mod": [8, [0, 4, 5]], "reply": "ANSWER: 7"},
            {"always": True, "reply": "ANSWER: 0"},
        ]
    )
    p = Problem(id="p1", statement="q", reference_answer="7")
    for seed in (0, 8, 24):
        rate = measure_baseline_solve_rate(client, p, ep, K=8, seed=seed)
        assert rate in {i / 8 for i in range(9)}


def test_measure_baselines_caches_only_missing(client: ChatClient) -> None:
    ep = mock_backend([{"always": True, "reply": "ANSWER: 1"}])
    s = _problem_set([0.25, None])
    measured = dataset.measure_baselines(client, s, ep, K=4, seed=0, parallelism=1)
    assert measured.problems[0].baseline_solve_rate == 0.25  # untouched
    assert measured.problems[1].baseline_solve_rate == 1.0


# --- filtering -----------------------------------------------------------------


def test_filter_bounds_inclusive() -> None:
    s = _problem_set([0.0, 0.01, 0.30, 0.60, 0.75])
    kept = filter_by_solve_rate(s, 0.01, 0.60)
    assert [p.baseline_solve_rate for p in kept.problems] == [0.01, 0.30, 0.60]
    assert kept.filter_bounds == (0.01, 0.60)


def test_filter_excludes_zero_rate() -> None:
    s = _problem_set([0.0])
    assert len(filter_by_solve_rate(s, 0.01, 0.60)) == 0


def test_filter_requires_baselines() -> None:
    s = _problem_set([0.5, None])
    with pytest.raises(MissingBaseline):
        filter_by_solve_rate(s, 0.0, 1.0)


def test_filter_is_idempotent() -> None:
    s = _problem_set([0.05, 0.2, 0.9])
    once = filter_by_solve_rate(s, 0.01, 0.60)
    twice = filter_by_solve_rate(once, 0.01, 0.60)
    assert once.problems == twice.problems


# --- splitting -----------------------------------------------------------------


def test_split_partitions_disjointly() -> None:
    s = _problem_set([0.5] * 10)
    train, eval_ = split(s, 7, 3, seed=1)
    assert len(train) == 7 and len(eval_) == 3
    assert not {p.id for p in train.problems} & {p.id for p in eval_.problems}


def test_split_deterministic_for_fixed_seed() -> None:
    s = _problem_set([0.5] * 10)
    a = split(s, 7, 3, seed=1)
    b = split(s, 7, 3, seed=1)
    assert a[0].problems == b[0].problems
    assert a[1].problems == b[1].problems


def test_split_insufficient_problems() -> None:
    s = _problem_set([0.5] * 10)
    with pytest.raises(InsufficientProblems):
        split(s, 9, 3, seed=1)


@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 30))
def test_split_disjoint_and_deterministic_property(seed: int, n: int) -> None:
    s = _problem_set([0.5] * n)
    n_train = n // 2
    n_eval = n - n_train
    t1, e1 = split(s, n_train, n_eval, seed)
    t2, e2 = split(s, n_train, n_eval, seed)
    assert t1.problems == t2.problems and e1.problems == e2.problems
    train_ids = {p.id for p in t1.problems}
    eval_ids = {p.id for p in e1.problems}
    assert not train_ids & eval_ids
    assert len(train_ids | eval_ids) == n
