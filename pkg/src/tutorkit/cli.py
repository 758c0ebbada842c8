"""Command-line pipelines over JSONL stages.

    tutorkit prepare-data --in problems.jsonl --lo 0.01 --hi 0.60
    tutorkit rollout  --config run.cfg --mock playbook.jsonl
    tutorkit score    --config run.cfg --rollouts rollouts.jsonl ...
    tutorkit evaluate --config run.cfg --rollouts rollouts.jsonl ...
    tutorkit analyze  --rollouts rollouts.jsonl
    tutorkit serve-mock --playbook playbook.jsonl --port 8080

Each stage reads and writes plain JSONL files inside a run directory, so
stages are independently testable and a rerun with ``--resume`` skips work
that already finished. ``--mock`` points every unconfigured endpoint at an
in-process scripted backend, which makes whole pipelines runnable with no
network at all.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time

from . import analysis, dataset, evaluation, jsonl, mock, model, reward, rollout
from .config import RunConfig, load_config, write_snapshot
from .errors import TutorKitError
from .gateway import ChatClient

logger = logging.getLogger(__name__)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TutorKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tutorkit",
        description="Rollout, reward, and evaluation pipelines for LLM tutors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        p.add_argument("--mock", help="playbook JSONL; unconfigured endpoints use this mock")
        p.add_argument("--run-dir", help="exact run directory (default: timestamped)")

    p = sub.add_parser("prepare-data", help="ingest, measure baselines, filter, split")
    common(p)
    p.add_argument("--in", dest="infile", help="problem JSONL (default: config 'dataset')")
    p.add_argument("--lo", type=float, help="lower solve-rate bound (default: config)")
    p.add_argument("--hi", type=float, help="upper solve-rate bound (default: config)")
    p.add_argument("--n-train", type=int, help="training split size")
    p.add_argument("--n-eval", type=int, help="evaluation split size")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("rollout", help="run dialogue groups over a problem file")
    common(p)
    p.add_argument("--problems", help="problem JSONL (default: config 'dataset')")
    p.add_argument("--resume", action="store_true", help="skip problems already in the log")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("score", help="judge dialogues, compute rewards and advantages")
    common(p)
    p.add_argument("--rollouts", required=True, help="rollout log JSONL")
    p.add_argument("--problems", required=True, help="problem JSONL with reference answers")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="delta solve / leak / helpful over a rollout log")
    common(p)
    p.add_argument("--rollouts", required=True)
    p.add_argument("--problems", required=True, help="problem JSONL with cached baselines")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="word stats, math ratio, labeling, chi-square tests")
    common(p)
    p.add_argument("--rollouts", required=True)
    p.add_argument("--no-label", action="store_true", help="skip LLM labeling passes")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve-mock", help="serve a playbook over HTTP (chat-completions)")
    p.add_argument("--playbook", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve_mock)

    return parser


def _setup(args) -> tuple[RunConfig, str, ChatClient]:
    """Load config, wire mocks, create the run directory and audit client."""
    overrides = list(args.overrides)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    if args.mock:
        backend = mock.MockBackend(mock.load_playbook(args.mock))
        with open(args.mock, "rb") as f:
            name = "pb" + hashlib.sha256(f.read()).hexdigest()[:12]
        base_url = mock.register_backend(backend, name)
        cfg = cfg.with_mock_endpoints(base_url)

    run_dir = args.run_dir or os.path.join(
        cfg.run_dir or ".", time.strftime("run-%Y%m%d-%H%M%S")
    )
    os.makedirs(os.path.join(run_dir, "audit"), exist_ok=True)
    write_snapshot(cfg, os.path.join(run_dir, "config.snapshot"))
    client = ChatClient(log_path=os.path.join(run_dir, "audit", "requests.jsonl"))
    return cfg, run_dir, client


def _report_snapshot(cfg: RunConfig) -> dict:
    """Config subset embedded in reports: stable across run directories."""
    return {
        "condition": cfg.condition.name,
        "seed": cfg.seed,
        "k_attempts": cfg.k_attempts,
        "group_size": cfg.group_size,
        "max_turns": cfg.max_turns,
        "weights": {
            "lambda_ped": cfg.weights.lambda_ped,
            "lambda_think": cfg.weights.lambda_think,
            "theta": cfg.weights.theta,
        },
    }


def cmd_prepare_data(args) -> int:
    cfg, run_dir, client = _setup(args)
    infile = args.infile or cfg.dataset
    if not infile:
        raise TutorKitError("prepare-data needs --in or a 'dataset' config key")
    problems = dataset.ingest_problems(infile)
    print(f"ingested {len(problems)} problems from {infile}")

    if any(p.baseline_solve_rate is None for p in problems.problems):
        student = cfg.require_endpoint("student")
        problems = dataset.measure_baselines(
            client, problems, student, cfg.k_attempts, cfg.seed, cfg.parallelism
        )
        print(f"measured baselines with K={cfg.k_attempts}")

    lo = args.lo if args.lo is not None else cfg.filter_lo
    hi = args.hi if args.hi is not None else cfg.filter_hi
    filtered = dataset.filter_by_solve_rate(problems, lo, hi)
    out = os.path.join(run_dir, "problems.jsonl")
    dataset.write_problems(filtered, out)
    print(f"kept {len(filtered)}/{len(problems)} problems in [{lo}, {hi}] -> {out}")

    n_train = args.n_train if args.n_train is not None else cfg.n_train
    n_eval = args.n_eval if args.n_eval is not None else cfg.n_eval
    if n_train is not None and n_eval is not None:
        train, eval_ = dataset.split(filtered, n_train, n_eval, cfg.seed)
        dataset.write_problems(train, os.path.join(run_dir, "train.jsonl"))
        dataset.write_problems(eval_, os.path.join(run_dir, "eval.jsonl"))
        print(f"split into {len(train)} train / {len(eval_)} eval")
    return 0


def _rollout_config(cfg: RunConfig) -> rollout.RolloutConfig:
    return rollout.RolloutConfig(
        condition=cfg.condition,
        tutor=cfg.require_endpoint("tutor"),
        student=cfg.require_endpoint("student"),
        max_turns=cfg.max_turns,
        group_size=cfg.group_size,
        batch_problems=cfg.batch_problems,
        k_attempts=cfg.k_attempts,
        parallelism=cfg.parallelism,
        seed=cfg.seed,
    )


def cmd_rollout(args) -> int:
    cfg, run_dir, client = _setup(args)
    problems_path = args.problems or cfg.dataset
    if not problems_path:
        raise TutorKitError("rollout needs --problems or a 'dataset' config key")
    problems = dataset.ingest_problems(problems_path)
    rcfg = _rollout_config(cfg)
    log_path = os.path.join(run_dir, "rollouts.jsonl")
    groups = rollout.run_batch(
        client, list(problems.problems), rcfg, log_path=log_path, resume=args.resume
    )
    n_dialogues = sum(len(g.dialogues) for g in groups)
    print(f"rolled out {len(groups)} groups / {n_dialogues} dialogues -> {log_path}")
    return 0


def _load_groups(rollouts_path: str, problems: dataset.ProblemSet) -> list[rollout.RolloutGroup]:
    by_problem = rollout.load_rollout_log(rollouts_path)
    ordered = [by_problem[p.id] for p in problems.problems if p.id in by_problem]
    if not ordered:
        raise TutorKitError(f"no rollouts in {rollouts_path} match the given problems")
    return ordered


def cmd_score(args) -> int:
    cfg, run_dir, client = _setup(args)
    problems = dataset.ingest_problems(args.problems)
    by_id = problems.by_id()
    groups = _load_groups(args.rollouts, problems)
    judge = cfg.require_endpoint("judge")
    student = cfg.require_endpoint("student")

    audit_path = os.path.join(run_dir, "audit", "judges.jsonl")
    reward_records = []
    for group in groups:
        reward.score_group(
            client,
            by_id[group.problem_id],
            group,
            cfg.condition,
            judge,
            student,
            cfg.weights,
            cfg.k_attempts,
            parallelism=cfg.parallelism,
        )
        for d, breakdown, advantage in zip(group.dialogues, group.rewards, group.advantages):
            rec = {"problem_id": d.problem_id, "seed": d.seed, "advantage": advantage}
            rec.update(breakdown.as_record())
            reward_records.append(rec)
            _append_judge_audit(audit_path, d, breakdown)

    rewards_path = os.path.join(run_dir, "rewards.jsonl")
    jsonl.write_jsonl(rewards_path, reward_records)
    batch_path = os.path.join(run_dir, "batch.jsonl")
    n = reward.emit_training_batch(groups, batch_path, by_id, cfg.condition)
    print(f"scored {len(groups)} groups -> {rewards_path}")
    print(f"emitted {n} training records -> {batch_path}")
    return 0


def _append_judge_audit(path: str, d: model.Dialogue, b: reward.RewardBreakdown) -> None:
    ref = f"{d.problem_id}#{d.seed}"
    for name, verdict in (("leak", b.leak_verdict), ("help", b.help_verdict)):
        if verdict is not None:
            jsonl.append_jsonl(
                path,
                {
                    "dialogue_ref": ref,
                    "judge": name,
                    "raw": verdict.raw,
                    "parsed": {"decision": verdict.decision, "reasoning": verdict.reasoning},
                    "attempts": verdict.attempts,
                },
            )
    for i, score in enumerate(b.think_scores):
        raw = b.think_raws[i] if i < len(b.think_raws) else None
        jsonl.append_jsonl(
            path,
            {
                "dialogue_ref": ref,
                "judge": f"thinking[{i}]",
                "raw": raw or None,  # empty-trace turns are scored without a call
                "parsed": {"score": score},
                "attempts": 1,
            },
        )


def cmd_evaluate(args) -> int:
    cfg, run_dir, client = _setup(args)
    problems = dataset.ingest_problems(args.problems)
    groups = _load_groups(args.rollouts, problems)
    dialogues = [d for g in groups for d in g.dialogues]
    report = evaluation.evaluate_condition(
        client,
        list(problems.problems),
        dialogues,
        cfg.require_endpoint("judge"),
        cfg.require_endpoint("student"),
        K=cfg.k_attempts,
        condition_id=cfg.condition.name,
        config_snapshot=_report_snapshot(cfg),
        parallelism=cfg.parallelism,
    )
    md = evaluation.render_report(report, "markdown")
    csv = evaluation.render_report(report, "csv")
    for name, text in (("eval.md", md), ("eval.csv", csv)):
        with open(os.path.join(run_dir, name), "w", encoding="utf-8") as f:
            f.write(text)
    with open(os.path.join(run_dir, "eval.json"), "w", encoding="utf-8") as f:
        json.dump(report.as_record(), f, indent=2, sort_keys=True)
        f.write("\n")
    print(md)
    print(f"wrote eval.md / eval.csv / eval.json under {run_dir}")
    return 0


def cmd_analyze(args) -> int:
    cfg, run_dir, client = _setup(args)
    records = list(jsonl.read_jsonl(args.rollouts))
    if not records:
        raise TutorKitError(f"rollout log {args.rollouts} is empty")
    dialogues = [model.dialogue_from_record(r) for r in records]
    by_condition: dict[str, list[model.Dialogue]] = {}
    for d in dialogues:
        by_condition.setdefault(d.condition_id, []).append(d)
    conditions = sorted(by_condition)

    stats = [analysis.word_stats(by_condition[c], c) for c in conditions]
    math_ratios = {}
    for c in conditions:
        visible = " ".join(
            t.visible_text for d in by_condition[c] for t in d.turns if t.speaker is model.Speaker.TUTOR
        )
        think = " ".join(
            t.think_text for d in by_condition[c] for t in d.turns if t.speaker is model.Speaker.TUTOR
        )
        math_ratios[c] = (
            analysis.math_content_ratio(visible),
            analysis.math_content_ratio(think),
        )

    phases = None
    categories = None
    codes = None
    tests: list[tuple[str, analysis.StatTestResult]] = []
    labeler = cfg.endpoints.get("labeler")
    if labeler is not None and not args.no_label:
        phases = {}
        for c in conditions:
            think_all = "\n".join(
                t.think_text
                for d in by_condition[c]
                for t in d.turns
                if t.speaker is model.Speaker.TUTOR and t.think_text.strip()
            )
            if think_all.strip():
                phases[c] = analysis.classify_schoenfeld(
                    client, think_all, labeler, cfg.label_retries, seed=cfg.seed
                )
        codebook = analysis.load_codebook()
        sentences = analysis.sentences_from_dialogues(dialogues, "visible")
        coded = analysis.label_codebook(
            client,
            sentences,
            codebook,
            labeler,
            cfg.label_retries,
            seed=cfg.seed,
            parallelism=cfg.parallelism,
        )
        jsonl.write_jsonl(
            os.path.join(run_dir, "coded.jsonl"), [c.as_record() for c in coded]
        )
        categories = analysis.code_frequency_table(coded, "major_category")
        codes = analysis.code_frequency_table(coded, "code")
        if len(conditions) >= 2:
            table = analysis.condition_contingency(categories)
            try:
                tests.append(("Major categories", analysis.chi_square(table)))
            except analysis.DegenerateTable:
                logger.warning("major-category table is degenerate; skipping test")
            if len(conditions) == 2:
                top = sorted(
                    codes.groups(),
                    key=lambda g: -sum(codes.counts[c].get(g, 0) for c in conditions),
                )[:5]
                for code in top:
                    t = analysis.code_presence_table(coded, code, conditions[0], conditions[1])
                    try:
                        tests.append((code, analysis.chi_square(t)))
                    except analysis.DegenerateTable:
                        continue

    md = analysis.render_analysis_report(
        stats,
        math_ratios,
        phases,
        categories,
        codes,
        tests or None,
        stray_think=analysis.stray_think_markers(dialogues),
    )
    out = os.path.join(run_dir, "analysis.md")
    with open(out, "w", encoding="utf-8") as f:
        f.write(md)
    print(md)
    print(f"wrote {out}")
    return 0


def cmd_serve_mock(args) -> int:
    backend = mock.MockBackend(mock.load_playbook(args.playbook))
    server = mock.MockHttpServer(backend, port=args.port)
    server.start()
    print(f"mock chat-completions server listening on {server.base_url}")
    print("POST /v1/chat/completions; Ctrl-C to stop")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
