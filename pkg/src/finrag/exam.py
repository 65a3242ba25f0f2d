"""Domain types and CSV I/O for multiple-choice exam datasets.

Datasets live under ``<root>/{dev,val,test}/<subject>_<split>.csv`` with the
fixed column order ``id,question,A,B,C,D,answer,explanation``.  Three-option
subjects leave the D column empty.  Files are UTF-8; a BOM is tolerated on
read and never written.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import FinragError

OPTION_LETTERS = "ABCDE"
CSV_HEADER = ["id", "question", "A", "B", "C", "D", "answer", "explanation"]
SPLITS = ("dev", "val", "test")
LANGUAGES = ("zh", "en")

_SEPARATORS = re.compile(r"[\s,，、;；/和及]+")


class MissingFile(FinragError):
    pass


class MalformedRow(FinragError):
    def __init__(self, row_no: int, reason: str):
        super().__init__(f"row {row_no}: {reason}")
        self.row_no = row_no
        self.reason = reason


class InvalidAnswerLetter(FinragError):
    pass


class EmptyAnswer(FinragError):
    pass


class NonLetterCharacter(FinragError):
    pass


def normalize_answer(raw: str) -> frozenset[str]:
    """Normalize a raw answer string to a set of uppercase option letters.

    Strips whitespace and common separators, uppercases, and deduplicates:
    ``"a, c"`` -> ``{A, C}``, ``"ABBA"`` -> ``{A, B}``.
    """
    stripped = _SEPARATORS.sub("", raw.strip())
    if not stripped:
        raise EmptyAnswer(f"answer is empty after trimming: {raw!r}")
    letters = set()
    for ch in stripped.upper():
        if not ch.isalpha():
            raise NonLetterCharacter(f"non-letter character {ch!r} in answer {raw!r}")
        if ch not in OPTION_LETTERS:
            raise InvalidAnswerLetter(f"letter {ch!r} outside {OPTION_LETTERS!r} in answer {raw!r}")
        letters.add(ch)
    return frozenset(letters)


@dataclass(frozen=True, slots=True)
class QuestionCategory:
    """Question bucket used for reporting: name, option count, multi-answer flag."""

    name: str
    option_count: int
    multi_answer: bool

    def __post_init__(self) -> None:
        if not 2 <= self.option_count <= 5:
            raise ValueError(f"option_count must be in 2..5, got {self.option_count}")
        canon = _CANONICAL.get(self.name)
        if canon is not None and canon != (self.option_count, self.multi_answer):
            raise ValueError(f"category {self.name} must have {canon[0]} options, multi_answer={canon[1]}")

    @property
    def random_accuracy(self) -> float:
        """Expected accuracy of a uniform random guesser for this category.

        Single-answer: 1/n.  Multi-answer: one of the 2^n - n - 1 possible
        option combinations, so 1/(2^n - n - 1).
        """
        n = self.option_count
        if self.multi_answer:
            return 1.0 / (2**n - n - 1)
        return 1.0 / n


_CANONICAL = {
    "CPA-SA": (4, False),
    "CPA-MA": (4, True),
    "CFA-L1": (3, False),
    "CFA-L2": (3, False),
}

CPA_SA = QuestionCategory("CPA-SA", 4, False)
CPA_MA = QuestionCategory("CPA-MA", 4, True)
CFA_L1 = QuestionCategory("CFA-L1", 3, False)
CFA_L2 = QuestionCategory("CFA-L2", 3, False)
CATEGORIES = {c.name: c for c in (CPA_SA, CPA_MA, CFA_L1, CFA_L2)}


@dataclass(frozen=True, slots=True)
class ExamQuestion:
    """One multiple-choice item with ordered options and an answer letter set.

    ``answer_set`` may be empty only for test-split rows whose ground truth
    is withheld; dev and val rows always carry answers.
    """

    id: str
    subject: str
    language: str
    stem: str
    options: dict[str, str]
    answer_set: frozenset[str] = frozenset()
    explanation: str | None = None
    split: str = "test"

    def __post_init__(self) -> None:
        letters = list(self.options)
        if not 2 <= len(letters) <= 5:
            raise ValueError(f"question {self.id}: expected 2..5 options, got {len(letters)}")
        if letters != list(OPTION_LETTERS[: len(letters)]):
            raise ValueError(f"question {self.id}: options must be contiguous letters from A, got {letters}")
        if not self.answer_set <= set(letters):
            raise InvalidAnswerLetter(
                f"question {self.id}: answer {sorted(self.answer_set)} outside options {letters}"
            )
        if self.language not in LANGUAGES:
            raise ValueError(f"question {self.id}: unsupported language {self.language!r}")
        if self.split not in SPLITS:
            raise ValueError(f"question {self.id}: unsupported split {self.split!r}")
        if self.split in ("dev", "val") and not self.answer_set:
            raise ValueError(f"question {self.id}: {self.split} rows must carry an answer")

    @property
    def letters(self) -> list[str]:
        return list(self.options)

    @property
    def answer_text(self) -> str:
        return "".join(sorted(self.answer_set))


def dataset_path(root_path: str | Path, subject: str, split: str) -> Path:
    return Path(root_path) / split / f"{subject}_{split}.csv"


def _infer_language(subject: str) -> str:
    return "en" if "cfa" in subject.lower() else "zh"


def load_dataset(
    root_path: str | Path,
    subject: str,
    split: str,
    language: str | None = None,
) -> list[ExamQuestion]:
    """Load one subject/split CSV into questions, preserving file order.

    Dev rows must carry answer and explanation, val rows an answer; test rows
    may omit both.  ``language`` defaults to "en" for CFA-like subjects and
    "zh" otherwise.
    """
    if split not in SPLITS:
        raise ValueError(f"unsupported split {split!r}")
    path = dataset_path(root_path, subject, split)
    if not path.is_file():
        raise MissingFile(str(path))
    language = language or _infer_language(subject)

    questions: list[ExamQuestion] = []
    with path.open("r", encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        rows = iter(reader)
        try:
            header = next(rows)
        except StopIteration:
            raise MalformedRow(1, "missing header row") from None
        if header != CSV_HEADER:
            raise MalformedRow(1, f"expected header {CSV_HEADER}, got {header}")
        for row_no, row in enumerate(rows, start=2):
            questions.append(_parse_row(row_no, row, subject, split, language))
    return questions


def _parse_row(row_no: int, row: list[str], subject: str, split: str, language: str) -> ExamQuestion:
    if len(row) != len(CSV_HEADER):
        raise MalformedRow(row_no, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
    qid, stem, *option_cells, answer_raw, explanation = row
    if not qid.strip():
        raise MalformedRow(row_no, "empty id")
    if not stem.strip():
        raise MalformedRow(row_no, "empty question stem")

    options: dict[str, str] = {}
    for letter, text in zip("ABCD", option_cells):
        if text:
            options[letter] = text
    if list(options) != list("ABCD"[: len(options)]):
        raise MalformedRow(row_no, f"options are not contiguous from A: {sorted(options)}")
    if len(options) < 2:
        raise MalformedRow(row_no, f"need at least 2 options, got {len(options)}")

    answer_set: frozenset[str] = frozenset()
    if answer_raw.strip():
        answer_set = normalize_answer(answer_raw)
    elif split in ("dev", "val"):
        raise MalformedRow(row_no, f"{split} rows must carry an answer")
    if split == "dev" and not explanation.strip():
        raise MalformedRow(row_no, "dev rows must carry an explanation")

    try:
        return ExamQuestion(
            id=qid,
            subject=subject,
            language=language,
            stem=stem,
            options=options,
            answer_set=answer_set,
            explanation=explanation or None,
            split=split,
        )
    except (ValueError, InvalidAnswerLetter) as exc:
        raise MalformedRow(row_no, str(exc)) from exc


def write_dataset(root_path: str | Path, subject: str, split: str, questions: Sequence[ExamQuestion]) -> Path:
    """Write questions to the canonical CSV layout (quoted fields, LF, no BOM)."""
    path = dataset_path(root_path, subject, split)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_ALL, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for q in questions:
            writer.writerow(
                [
                    q.id,
                    q.stem,
                    q.options.get("A", ""),
                    q.options.get("B", ""),
                    q.options.get("C", ""),
                    q.options.get("D", ""),
                    q.answer_text,
                    q.explanation or "",
                ]
            )
    return path
