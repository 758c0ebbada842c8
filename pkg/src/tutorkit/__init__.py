"""Orchestration for training and evaluating pedagogically aligned LLM tutors.

The package runs multi-turn tutor-student dialogues against chat-completion
endpoints, scores them with a composite reward (student solve-rate uplift,
pedagogy judges, thinking-trace judge), normalizes rewards into
group-relative advantages, and emits training batches for an external
trainer. Deterministic mock backends make every pipeline runnable offline.
"""

from .model import (
    Condition,
    Dialogue,
    DialogueTurn,
    ABLATION_CONDITIONS,
    Problem,
    PromptRole,
    PromptStyle,
    Speaker,
    Termination,
    TranscriptView,
    build_system_prompt,
    parse_tutor_output,
    render_transcript,
    serialize_tutor_output,
)
from .gateway import ChatClient, ChatMessage, EndpointConfig, retry_schedule
from .mock import MockBackend, MockHttpServer, mock_backend
from .dataset import ProblemSet, filter_by_solve_rate, ingest_problems, split
from .rollout import RolloutConfig, RolloutGroup, run_batch, run_dialogue, run_group
from .reward import (
    RewardBreakdown,
    RewardWeights,
    answers_equivalent,
    composite_reward,
    compute_r_sol,
    emit_training_batch,
    grpo_advantages,
    judge_help,
    judge_leak,
    judge_thinking,
    score_dialogue,
    score_group,
)
from .evaluation import EvalReport, delta_solve_rate, helpful_rate, leak_rate, render_report
from .analysis import (
    CodebookEntry,
    CodedSentence,
    StatTestResult,
    WordStats,
    chi_square,
    classify_schoenfeld,
    code_frequency_table,
    label_codebook,
    load_codebook,
    math_content_ratio,
    split_sentences,
    word_stats,
)

__version__ = "0.1.0"
