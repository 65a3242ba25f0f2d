"""Answer selection and accuracy aggregation for multiple-choice evaluation.

Single-answer questions take the argmax letter over per-option log scores.
Multi-answer questions take the argmax over all option combinations of size
two or more (there are 2^n - n - 1 of them for n options), scoring each
combination by the sum of its members' log scores, i.e. the log of the joint
product.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from .errors import FinragError
from .exam import OPTION_LETTERS, ExamQuestion, QuestionCategory

MODE_ANSWER_ONLY = "answer_only"
MODE_COT = "chain_of_thought"


class EmptyScores(FinragError):
    pass


class NonFiniteScore(FinragError):
    pass


class UnsupportedOptionCount(FinragError):
    pass


class NoAnswerFound(FinragError):
    pass


class IdMismatch(FinragError):
    pass


@dataclass(frozen=True, slots=True)
class ScoredPrediction:
    """A model's answer to one question, with scores when they exist.

    In answer-only mode ``per_option_log_prob`` is present and
    ``predicted_set`` is derived from it.  ``predicted_set`` may be empty only
    when ``refused`` is set (chain-of-thought output with no parseable
    answer); such predictions always score as incorrect.
    """

    question_id: str
    mode: str
    predicted_set: frozenset[str]
    per_option_log_prob: dict[str, float] | None = None
    raw_output: str | None = None
    correct: bool | None = None
    refused: bool = False

    def __post_init__(self) -> None:
        if not self.predicted_set and not self.refused:
            raise ValueError(f"prediction for {self.question_id} has no letters and is not a refusal")


def _check_scores(per_option_log_prob: Mapping[str, float]) -> list[str]:
    if not per_option_log_prob:
        raise EmptyScores("no option scores given")
    for letter, value in per_option_log_prob.items():
        if not math.isfinite(value):
            raise NonFiniteScore(f"score for {letter} is {value}")
    return sorted(per_option_log_prob)


def select_single(per_option_log_prob: Mapping[str, float]) -> str:
    """Return the highest-scoring letter; ties break alphabetically."""
    letters = _check_scores(per_option_log_prob)
    # max() keeps the first maximal element, and letters are sorted
    return max(letters, key=lambda letter: per_option_log_prob[letter])


def enumerate_combinations(n: int) -> list[frozenset[str]]:
    """All option-letter subsets of size >= 2, by size then lexicographic.

    For n options there are 2^n - n - 1 such subsets.
    """
    if not 2 <= n <= 5:
        raise UnsupportedOptionCount(f"option count must be in 2..5, got {n}")
    letters = OPTION_LETTERS[:n]
    combos = [frozenset(c) for size in range(2, n + 1) for c in combinations(letters, size)]
    assert len(combos) == 2**n - n - 1
    return combos


def select_multi(per_option_log_prob: Mapping[str, float]) -> frozenset[str]:
    """Return the combination maximizing the summed member log scores.

    Log-space sum of per-option scores is the log of the joint product, so
    the argmax matches maximizing the joint probability of the combination.
    Ties break by canonical combination order (size, then lexicographic).
    """
    letters = _check_scores(per_option_log_prob)
    best: frozenset[str] | None = None
    best_score = -math.inf
    for combo in enumerate_combinations(len(letters)):
        # summing in letter order keeps the float result order-independent
        score = sum(per_option_log_prob[l] for l in sorted(combo))
        if score > best_score:
            best, best_score = combo, score
    assert best is not None
    return best


_DECLARATION = re.compile(
    r"(?:答案是|答案为|答案应为|正确答案是|正确答案为|答案\s*[:：]|[Tt]he answer is|[Aa]nswer\s*[:：]|[Aa]nswer is)"
    r"\s*[\(（]?([A-E][A-E\s,，、和及]*)",
)
_LETTER_RUN = re.compile(r"(?<![A-Za-z])([A-E]+)(?![A-Za-z])")


def parse_cot_answer(raw: str, alphabet: Iterable[str], multi: bool) -> frozenset[str]:
    """Pull the final answer letters out of a chain-of-thought completion.

    Takes the last answer declaration ("答案是…", "the answer is…",
    "Answer: …"); failing that, the last standalone letter run drawn from the
    alphabet.  Raises :class:`NoAnswerFound` when neither exists.
    """
    if not raw.strip():
        raise NoAnswerFound("empty output")
    allowed = set(alphabet)

    candidates: list[str] = []
    for m in _DECLARATION.finditer(raw):
        letters = [ch for ch in m.group(1) if ch in allowed]
        if letters:
            candidates.append("".join(letters))
    if not candidates:
        for m in _LETTER_RUN.finditer(raw):
            letters = [ch for ch in m.group(1) if ch in allowed]
            if letters and len(letters) == len(m.group(1)):
                candidates.append("".join(letters))
    if not candidates:
        raise NoAnswerFound(f"no answer letters in output: {raw[:80]!r}")

    final = candidates[-1]
    if not multi:
        return frozenset(final[0])
    return frozenset(final)


@dataclass(slots=True)
class SubjectStats:
    n: int = 0
    correct: int = 0

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0


@dataclass(slots=True)
class AccuracyReport:
    """Per-subject and per-category accuracy with grand totals.

    Category accuracy is the micro-average over the member subjects'
    question-level correctness.
    """

    per_subject: dict[str, SubjectStats] = field(default_factory=dict)
    per_category: dict[str, SubjectStats] = field(default_factory=dict)
    total: SubjectStats = field(default_factory=SubjectStats)
    refusals: int = 0
    errors: int = 0
    baselines: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_subject": {
                s: {"n": st.n, "correct": st.correct, "accuracy": st.accuracy}
                for s, st in self.per_subject.items()
            },
            "per_category": {
                c: {"n": st.n, "correct": st.correct, "accuracy": st.accuracy}
                for c, st in self.per_category.items()
            },
            "overall": {"n": self.total.n, "correct": self.total.correct, "accuracy": self.total.accuracy},
            "refusals": self.refusals,
            "errors": self.errors,
            "baselines": self.baselines,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"


_MULTI_BASELINE_NOTE = (
    "uniform choice over the 2^n-n-1 option combinations; for 4 options this is "
    "1/11 = 9.09%, not the 10% round figure often quoted for random multi-answer guessing"
)


def random_baselines(categories: Mapping[str, QuestionCategory]) -> dict[str, dict]:
    """Expected random-guess accuracy per category, with the multi-answer caveat."""
    out: dict[str, dict] = {}
    for cat in {c.name: c for c in categories.values()}.values():
        entry: dict = {"random_accuracy": cat.random_accuracy}
        if cat.multi_answer:
            entry["note"] = _MULTI_BASELINE_NOTE
        out[cat.name] = entry
    return out


def aggregate(
    predictions: Sequence[ScoredPrediction],
    gold: Sequence[ExamQuestion],
    categories: Mapping[str, QuestionCategory] | None = None,
) -> AccuracyReport:
    """Score predictions against gold questions by exact answer-set match.

    ``categories`` maps subject name to its category; when given, the report
    carries per-category micro-averages and random baselines.
    """
    if not predictions:
        raise IdMismatch("no predictions given")
    by_id = {q.id: q for q in gold}
    pred_ids = [p.question_id for p in predictions]
    if len(set(pred_ids)) != len(pred_ids):
        raise IdMismatch("duplicate prediction ids")
    if set(pred_ids) != set(by_id):
        missing = set(by_id) - set(pred_ids)
        extra = set(pred_ids) - set(by_id)
        raise IdMismatch(f"ids do not align 1:1 (missing={sorted(missing)[:3]}, extra={sorted(extra)[:3]})")

    report = AccuracyReport()
    for pred in sorted(predictions, key=lambda p: p.question_id):
        q = by_id[pred.question_id]
        correct = bool(pred.predicted_set) and pred.predicted_set == q.answer_set
        subj = report.per_subject.setdefault(q.subject, SubjectStats())
        subj.n += 1
        subj.correct += int(correct)
        report.total.n += 1
        report.total.correct += int(correct)
        report.refusals += int(pred.refused)
        if categories and q.subject in categories:
            cat = report.per_category.setdefault(categories[q.subject].name, SubjectStats())
            cat.n += 1
            cat.correct += int(correct)
    if categories:
        report.baselines = random_baselines(categories)
    return report


def format_report_table(reports: Mapping[str, AccuracyReport]) -> str:
    """Aligned text table: one row per model, one column per category plus overall."""
    cat_names = sorted({c for r in reports.values() for c in r.per_category})
    headers = ["Model", *cat_names, "Overall"]
    rows = [headers]
    for model, report in reports.items():
        row = [model]
        for cat in cat_names:
            st = report.per_category.get(cat)
            row.append(f"{st.accuracy * 100:.2f}" if st else "-")
        row.append(f"{report.total.accuracy * 100:.2f}")
        rows.append(row)

    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    for report in reports.values():
        for cat, entry in sorted(report.baselines.items()):
            note = f" ({entry['note']})" if "note" in entry else ""
            lines.append(f"random[{cat}] = {entry['random_accuracy'] * 100:.2f}%{note}")
        break  # baselines depend only on categories, identical across rows
    return "\n".join(lines) + "\n"
