"""Quantitative dialogue analysis: word statistics, math-content ratio,
reasoning-phase distribution, codebook labeling, and chi-square tests.

The unit of labeling is the sentence. Sentences are split on terminal
punctuation outside math delimiters so "Compute $f(x). g$." stays one
sentence. Labeling prompts ship as data files; the educational codebook (82
codes in 7 major categories) ships as JSONL next to them.

The math-content token rule is an artifact definition (the underlying ratio
was reported without one): a whitespace token counts as mathematical iff it
contains a digit, an operator or relation character, a currency/TeX marker,
or brackets. Bare single-letter variables do not count; they collide with
too many English words. The character classes are parameters.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.special import gammaincc

from .errors import TutorKitError
from .gateway import ChatClient, EndpointConfig, system, user
from .model import Dialogue, Speaker, THINK_OPEN
from .seeds import derive_seed

logger = logging.getLogger(__name__)

SCHOENFELD_PHASES = ("Explore", "General", "Verify")
UNLABELED = "Unlabeled"


class MalformedLabel(TutorKitError):
    """The labeler produced nothing usable for an entire input."""


class DegenerateTable(TutorKitError):
    """A contingency table has an empty row/column or is not at least 2x2."""


# ---------------------------------------------------------------------------
# Sentence splitting


_MATH_OPENERS = ("$$", "$", "\\(", "\\[")
_MATH_CLOSERS = {"$$": "$$", "$": "$", "\\(": "\\)", "\\[": "\\]"}
_TERMINALS = ".!?"


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation outside math delimiters.

    Returned sentences are exact substrings of the input (leading
    whitespace dropped); a trailing fragment without terminal punctuation
    is kept as a final sentence. An escaped dollar sign does not open math
    mode, so "costs \\$5." splits normally.
    """
    sentences: list[str] = []
    start = 0
    i = 0
    closer: str | None = None
    n = len(text)
    while i < n:
        if closer is not None:
            if text.startswith(closer, i):
                i += len(closer)
                closer = None
            else:
                i += 1
            continue
        if text.startswith("\\$", i):
            i += 2
            continue
        opened = next((d for d in _MATH_OPENERS if text.startswith(d, i)), None)
        if opened is not None:
            closer = _MATH_CLOSERS[opened]
            i += len(opened)
            continue
        if text[i] in _TERMINALS:
            while i + 1 < n and text[i + 1] in _TERMINALS:
                i += 1
            sentence = text[start : i + 1].strip()
            if sentence:
                sentences.append(sentence)
            start = i + 1
            i += 1
            continue
        i += 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


# ---------------------------------------------------------------------------
# Word statistics and math-content ratio


@dataclass(frozen=True)
class WordStats:
    """Per-response word-count averages for one condition's dialogues."""

    condition_id: str
    visible_words: float
    think_words: float
    total_words: float
    unique_words: float
    n_responses: int


def word_stats(dialogues: list[Dialogue], condition_id: str | None = None) -> WordStats:
    """Average whitespace-token counts over tutor responses.

    ``unique`` is the number of distinct case-folded tokens per response
    (thinking plus visible), averaged; it can never exceed ``total``.
    """
    if condition_id is None and dialogues:
        condition_id = dialogues[0].condition_id
    visible, think, total, unique = [], [], [], []
    for d in dialogues:
        for turn in d.turns:
            if turn.speaker is not Speaker.TUTOR:
                continue
            v_tokens = turn.visible_text.split()
            t_tokens = turn.think_text.split()
            visible.append(len(v_tokens))
            think.append(len(t_tokens))
            total.append(len(v_tokens) + len(t_tokens))
            unique.append(len({w.casefold() for w in v_tokens + t_tokens}))
    if not visible:
        logger.warning("word_stats over zero tutor responses (condition %s)", condition_id)
        return WordStats(condition_id or "", 0.0, 0.0, 0.0, 0.0, 0)
    n = len(visible)
    return WordStats(
        condition_id=condition_id or "",
        visible_words=sum(visible) / n,
        think_words=sum(think) / n,
        total_words=sum(total) / n,
        unique_words=sum(unique) / n,
        n_responses=n,
    )


DEFAULT_OPERATOR_CHARS = "+-−*/=^<>"
DEFAULT_MARKER_CHARS = "$\\"
DEFAULT_BRACKET_CHARS = "()[]{}"


def math_content_ratio(
    text: str,
    operator_chars: str = DEFAULT_OPERATOR_CHARS,
    marker_chars: str = DEFAULT_MARKER_CHARS,
    bracket_chars: str = DEFAULT_BRACKET_CHARS,
) -> float:
    """Fraction of whitespace tokens classified as mathematical."""
    tokens = text.split()
    if not tokens:
        return 0.0
    special = set(operator_chars) | set(marker_chars) | set(bracket_chars)

    def is_math(token: str) -> bool:
        return any(ch.isdigit() or ch in special for ch in token)

    return sum(1 for t in tokens if is_math(t)) / len(tokens)


def stray_think_markers(dialogues: list[Dialogue]) -> int:
    """Count think-tag markers left inside visible text (a leak-risk signal)."""
    return sum(
        turn.visible_text.count(THINK_OPEN)
        for d in dialogues
        for turn in d.turns
        if turn.speaker is Speaker.TUTOR
    )


# ---------------------------------------------------------------------------
# Codebook


@dataclass(frozen=True)
class CodebookEntry:
    major: str
    sub: str
    code: str

    @property
    def path(self) -> str:
        return f"{self.major} > {self.sub} > {self.code}"


def load_codebook() -> list[CodebookEntry]:
    """Load the shipped 82-code educational codebook."""
    path = resources.files("tutorkit").joinpath("data/codebook.jsonl")
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            rec = json.loads(line)
            entries.append(CodebookEntry(rec["major"], rec["sub"], rec["code"]))
    return entries


def codebook_label_prompt(codebook: list[CodebookEntry]) -> str:
    """The sentence-labeling system prompt with all codes enumerated."""
    template = (
        resources.files("tutorkit").joinpath("data/prompts/label_codebook.txt").read_text("utf-8")
    )
    listing = "\n".join(f"- {e.path}" for e in codebook)
    return template.replace("{{ codes }}", listing)


def resolve_code(reply: str, codebook: list[CodebookEntry]) -> CodebookEntry | None:
    """Map a labeler reply to a codebook entry.

    Accepts a bare code name (first entry wins if the name repeats across
    categories), a "sub-category > code" pair, or a full category path.
    """
    cleaned = reply.strip().strip("\"'`.").strip()
    if not cleaned:
        return None
    parts = [p.strip().casefold() for p in cleaned.split(">")]
    if len(parts) >= 2:
        sub, code = parts[-2], parts[-1]
        for e in codebook:
            if e.sub.casefold() == sub and e.code.casefold() == code:
                return e
        return None
    name = parts[0]
    for e in codebook:
        if e.code.casefold() == name:
            return e
    return None


# ---------------------------------------------------------------------------
# Sentence records and labeling


@dataclass(frozen=True)
class Sentence:
    """One sentence of one dialogue turn, addressable for later joins."""

    dialogue_ref: str
    condition_id: str
    turn_index: int
    sentence_index: int
    text: str


@dataclass(frozen=True)
class CodedSentence:
    dialogue_ref: str
    condition_id: str
    turn_index: int
    sentence_index: int
    sentence_text: str
    code_name: str
    major_category: str
    sub_category: str
    labeler_raw: str

    def as_record(self) -> dict:
        return {
            "dialogue_ref": self.dialogue_ref,
            "condition": self.condition_id,
            "turn_index": self.turn_index,
            "sentence_index": self.sentence_index,
            "sentence": self.sentence_text,
            "code": self.code_name,
            "major": self.major_category,
            "sub": self.sub_category,
            "labeler_raw": self.labeler_raw,
        }


def sentences_from_dialogues(dialogues: list[Dialogue], source: str = "visible") -> list[Sentence]:
    """Explode tutor turns into sentence records.

    ``source`` picks the text stream: "visible", "think", or "both".
    """
    if source not in ("visible", "think", "both"):
        raise ValueError(f"source must be visible, think, or both; got {source!r}")
    out: list[Sentence] = []
    for d in dialogues:
        ref = f"{d.problem_id}#{d.seed}"
        for turn in d.turns:
            if turn.speaker is not Speaker.TUTOR:
                continue
            texts = []
            if source in ("visible", "both"):
                texts.append(turn.visible_text)
            if source in ("think", "both"):
                texts.append(turn.think_text)
            idx = 0
            for text in texts:
                for sent in split_sentences(text):
                    out.append(Sentence(ref, d.condition_id, turn.turn_index, idx, sent))
                    idx += 1
    return out


@dataclass(frozen=True)
class PhaseDistribution:
    """Schoenfeld phase proportions over one reasoning trace's sentences."""

    explore: float
    general: float
    verify: float
    n_labeled: int
    n_unlabeled: int

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.explore, self.general, self.verify)


def _label_once(
    client: ChatClient,
    labeler: EndpointConfig,
    sys_prompt: str,
    sentence: str,
    parse,
    seed: int,
    retries: int,
):
    """Ask for a label, re-asking on unusable replies. None when exhausted."""
    raw = ""
    for attempt in range(retries + 1):
        raw = client.chat(labeler, [system(sys_prompt), user(sentence)], seed=seed + attempt)
        parsed = parse(raw)
        if parsed is not None:
            return parsed, raw
    return None, raw


def classify_schoenfeld(
    client: ChatClient,
    think_text: str,
    labeler: EndpointConfig,
    label_retries: int = 1,
    seed: int = 0,
) -> PhaseDistribution:
    """Label each sentence of a thinking trace with its problem-solving phase.

    Returns per-phase proportions over the labeled sentences (they sum to
    1); sentences the labeler cannot place are excluded and counted.
    """
    sentences = split_sentences(think_text)
    if not sentences:
        raise ValueError("think_text has no sentences to classify")
    sys_prompt = (
        resources.files("tutorkit").joinpath("data/prompts/label_schoenfeld.txt").read_text("utf-8")
    )

    def parse(raw: str) -> str | None:
        found = [p for p in SCHOENFELD_PHASES if re.search(rf"\b{p}\b", raw, re.IGNORECASE)]
        return found[0] if len(found) == 1 else None

    counts = Counter()
    unlabeled = 0
    for i, sentence in enumerate(sentences):
        label, _ = _label_once(
            client,
            labeler,
            sys_prompt,
            sentence,
            parse,
            derive_seed(seed, "phase", i, sentence),
            label_retries,
        )
        if label is None:
            unlabeled += 1
        else:
            counts[label] += 1
    labeled = sum(counts.values())
    if labeled == 0:
        raise MalformedLabel("labeler produced no usable phase labels")
    return PhaseDistribution(
        explore=counts["Explore"] / labeled,
        general=counts["General"] / labeled,
        verify=counts["Verify"] / labeled,
        n_labeled=labeled,
        n_unlabeled=unlabeled,
    )


def label_codebook(
    client: ChatClient,
    sentences: list[Sentence],
    codebook: list[CodebookEntry],
    labeler: EndpointConfig,
    label_retries: int = 1,
    seed: int = 0,
    parallelism: int = 1,
) -> list[CodedSentence]:
    """Assign exactly one codebook code to each sentence, order-preserving.

    Replies that never resolve to a known code leave the sentence marked
    ``Unlabeled`` rather than guessing. Labeling fans out over a thread pool
    when ``parallelism`` allows; output order stays that of the input.
    """
    if not codebook:
        raise ValueError("codebook must be loaded and non-empty")
    sys_prompt = codebook_label_prompt(codebook)

    def label_one(item: tuple[int, Sentence]) -> CodedSentence:
        i, s = item
        entry, raw = _label_once(
            client,
            labeler,
            sys_prompt,
            s.text,
            lambda reply: resolve_code(reply, codebook),
            derive_seed(seed, "codebook", i, s.text),
            label_retries,
        )
        if entry is None:
            return CodedSentence(
                s.dialogue_ref, s.condition_id, s.turn_index, s.sentence_index, s.text, UNLABELED, "", "", raw
            )
        return CodedSentence(
            s.dialogue_ref,
            s.condition_id,
            s.turn_index,
            s.sentence_index,
            s.text,
            entry.code,
            entry.major,
            entry.sub,
            raw,
        )

    items = list(enumerate(sentences))
    if parallelism > 1 and len(items) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=min(parallelism, len(items))) as pool:
            return list(pool.map(label_one, items))
    return [label_one(item) for item in items]


# ---------------------------------------------------------------------------
# Frequency tables and chi-square


@dataclass(frozen=True)
class FrequencyTable:
    """Per-condition proportions (and raw counts) over labeled sentences."""

    group_by: str
    counts: dict[str, dict[str, int]]  # condition -> group -> count
    proportions: dict[str, dict[str, float]]

    def conditions(self) -> list[str]:
        return sorted(self.counts)

    def groups(self) -> list[str]:
        seen = {g for per_cond in self.counts.values() for g in per_cond}
        return sorted(seen)


def code_frequency_table(coded: list[CodedSentence], group_by: str = "code") -> FrequencyTable:
    """Tabulate labeled sentences per condition.

    ``group_by`` is "code" or "major_category"; the rollup uses the category
    stored on each coded sentence. Unlabeled sentences are excluded, and
    proportions sum to 1 per condition.
    """
    if group_by not in ("code", "major_category"):
        raise ValueError(f"group_by must be 'code' or 'major_category', got {group_by!r}")
    if not coded:
        raise ValueError("coded sentences must be non-empty")
    counts: dict[str, dict[str, int]] = {}
    for c in coded:
        if c.code_name == UNLABELED:
            continue
        key = c.code_name if group_by == "code" else c.major_category
        counts.setdefault(c.condition_id, {})
        counts[c.condition_id][key] = counts[c.condition_id].get(key, 0) + 1
    proportions = {
        cond: {k: v / total for k, v in per.items()}
        for cond, per in counts.items()
        if (total := sum(per.values())) > 0
    }
    return FrequencyTable(group_by=group_by, counts=counts, proportions=proportions)


@dataclass(frozen=True)
class StatTestResult:
    chi2: float
    df: int
    p_value: float
    effect_name: str  # "phi" for 2x2, "cramers_v" otherwise
    effect: float
    n: int

    def as_record(self) -> dict:
        return {
            "chi2": self.chi2,
            "df": self.df,
            "p_value": self.p_value,
            "effect_name": self.effect_name,
            "effect": self.effect,
            "n": self.n,
        }


def chi_square(table) -> StatTestResult:
    """Pearson chi-square test of independence on an r x c count table.

    Expectations come from the marginals; no continuity correction. The
    p-value is the upper tail of the chi-square distribution, computed with
    the regularized incomplete gamma function. Effect size is phi for 2x2
    tables and Cramer's V otherwise.
    """
    obs = np.asarray(table, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 2 or obs.shape[1] < 2:
        raise DegenerateTable(f"need an r x c table with r, c >= 2, got shape {obs.shape}")
    if (obs < 0).any():
        raise DegenerateTable("counts must be non-negative")
    row_sums = obs.sum(axis=1)
    col_sums = obs.sum(axis=0)
    if (row_sums == 0).any() or (col_sums == 0).any():
        raise DegenerateTable("every row and column must have a positive sum")
    n = float(obs.sum())
    expected = np.outer(row_sums, col_sums) / n
    chi2 = float(((obs - expected) ** 2 / expected).sum())
    r, c = obs.shape
    df = (r - 1) * (c - 1)
    p = float(gammaincc(df / 2.0, chi2 / 2.0))
    k = min(r, c)
    if r == 2 and c == 2:
        effect_name, effect = "phi", math.sqrt(chi2 / n)
    else:
        effect_name, effect = "cramers_v", math.sqrt(chi2 / (n * (k - 1)))
    return StatTestResult(chi2, df, p, effect_name, effect, int(round(n)))


def chi_square_upper_tail(chi2: float, df: int) -> float:
    """P(X >= chi2) for a chi-square variable with df degrees of freedom."""
    if chi2 < 0 or df < 1:
        raise ValueError("need chi2 >= 0 and df >= 1")
    return float(gammaincc(df / 2.0, chi2 / 2.0))


def condition_contingency(table: FrequencyTable, groups: list[str] | None = None) -> np.ndarray:
    """Counts matrix (conditions x groups) for a chi-square test."""
    conds = table.conditions()
    cols = groups if groups is not None else table.groups()
    return np.array(
        [[table.counts[cond].get(g, 0) for g in cols] for cond in conds], dtype=np.int64
    )


def code_presence_table(
    coded: list[CodedSentence], code: str, cond_a: str, cond_b: str, by: str = "code"
) -> np.ndarray:
    """2x2 table: sentences with/without a code, for two conditions."""
    rows = []
    for cond in (cond_a, cond_b):
        labeled = [
            c
            for c in coded
            if c.condition_id == cond and c.code_name != UNLABELED
        ]
        hits = sum(
            1
            for c in labeled
            if (c.code_name if by == "code" else c.major_category) == code
        )
        rows.append([hits, len(labeled) - hits])
    return np.array(rows, dtype=np.int64)


# ---------------------------------------------------------------------------
# Report rendering


def render_analysis_report(
    stats: list[WordStats],
    math_ratios: dict[str, tuple[float, float]] | None = None,
    phases: dict[str, PhaseDistribution] | None = None,
    categories: FrequencyTable | None = None,
    codes: FrequencyTable | None = None,
    tests: list[tuple[str, StatTestResult]] | None = None,
    stray_think: int | None = None,
) -> str:
    """Assemble the markdown analysis report from whichever pieces exist."""
    lines = ["# Dialogue analysis", ""]

    lines += ["## Average word counts per response", ""]
    lines += ["| Condition | Visible | Think | Total | Unique |", "|---|---:|---:|---:|---:|"]
    for s in stats:
        lines.append(
            f"| {s.condition_id} | {s.visible_words:.2f} | {s.think_words:.2f} "
            f"| {s.total_words:.2f} | {s.unique_words:.2f} |"
        )
    lines.append("")

    if stray_think is not None:
        lines += [f"Stray think markers inside visible text: {stray_think}", ""]

    if math_ratios:
        lines += ["## Mathematical content ratio", ""]
        lines += ["| Condition | Visible | Think |", "|---|---:|---:|"]
        for cond in sorted(math_ratios):
            v, t = math_ratios[cond]
            lines.append(f"| {cond} | {v:.1%} | {t:.1%} |")
        lines.append("")

    if phases:
        lines += ["## Reasoning phase distribution in thinking", ""]
        lines += ["| Condition | Explore | General | Verify |", "|---|---:|---:|---:|"]
        for cond in sorted(phases):
            p = phases[cond]
            lines.append(f"| {cond} | {p.explore:.2%} | {p.general:.2%} | {p.verify:.2%} |")
        lines.append("")

    for title, table in (("Major category distribution", categories), ("Code distribution", codes)):
        if table is None:
            continue
        conds = table.conditions()
        lines += [f"## {title} (sentence level)", ""]
        lines += ["| " + " | ".join(["Group"] + conds) + " |", "|---|" + "---:|" * len(conds)]
        for g in table.groups():
            cells = [f"{table.proportions.get(c, {}).get(g, 0.0):.2%}" for c in conds]
            lines.append("| " + " | ".join([g] + cells) + " |")
        lines.append("")

    if tests:
        lines += ["## Chi-square tests", ""]
        lines += ["| Comparison | chi2 | df | p | Effect | n |", "|---|---:|---:|---:|---|---:|"]
        for name, t in tests:
            label = "phi" if t.effect_name == "phi" else "V"
            p_str = "<.001" if t.p_value < 0.001 else f"{t.p_value:.3f}"
            lines.append(
                f"| {name} | {t.chi2:.2f} | {t.df} | {p_str} | {label}={t.effect:.3f} | {t.n} |"
            )
        lines.append("")
    return "\n".join(lines)
