"""Question-bank ingestion: cleaning, deduplication, statistics, and export
of instruction-tuning records.

Each raw record is split into question and answer at the last answer
delimiter, stripped of boilerplate prefixes/suffixes (rules live in a
versioned JSON config), and deduplicated by the first 30 Chinese characters
of the question.  Items without a delimiter are routed to a reject list, not
dropped silently.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import FinragError
from .exam import InvalidAnswerLetter, normalize_answer

CATEGORY_KNOWLEDGE = "knowledge_inquiry"
CATEGORY_CALCULATION = "calculation_reasoning"
CATEGORY_READING = "reading_comprehension"
CATEGORY_LOGICAL = "logical_judgment"
CATEGORIES = (CATEGORY_KNOWLEDGE, CATEGORY_CALCULATION, CATEGORY_READING, CATEGORY_LOGICAL)

_CJK = re.compile(r"[一-鿿]")
_OPTION_MARK = re.compile(r"(?:^|[\s，。；;,])([A-E])[\.、．:：]|[（(]([A-E])[）)]")
_TRUE_FALSE_TEXTS = {"对", "错", "正确", "错误", "√", "×", "是", "否"}
_CALC_CHARS = set("0123456789+-×÷*/=%().．，,")


class NoDelimiter(FinragError):
    pass


class UncategorizableItem(FinragError):
    pass


@dataclass(frozen=True, slots=True)
class CleanRules:
    strip_prefixes: tuple[str, ...]
    strip_suffixes: tuple[str, ...]
    answer_delimiters: tuple[str, ...]
    version: int = 1

    @classmethod
    def default(cls) -> "CleanRules":
        raw = json.loads(
            (resources.files("finrag") / "data" / "corpus_rules.json").read_text(encoding="utf-8")
        )
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: Mapping) -> "CleanRules":
        return cls(
            strip_prefixes=tuple(raw.get("strip_prefixes", ())),
            strip_suffixes=tuple(raw.get("strip_suffixes", ())),
            answer_delimiters=tuple(raw.get("answer_delimiters", ("答案：", "答案:", "Answer:"))),
            version=int(raw.get("version", 1)),
        )


@dataclass(frozen=True, slots=True)
class CorpusItem:
    """One cleaned question/answer record from the financial question bank."""

    id: str
    raw_text: str
    question: str
    answer_text: str
    dedup_key: str
    source_tag: str = ""
    options: dict[str, str] | None = None
    answer_set: frozenset[str] | None = None
    explanation: str | None = None

    def as_raw_record(self) -> dict:
        """Re-join into the input shape; cleaning this again is a no-op."""
        return {
            "id": self.id,
            "text": f"{self.question}\n答案：{self.answer_text}",
            "source_tag": self.source_tag,
        }


def dedup_key(question: str) -> str:
    """First 30 characters of the Chinese-only projection of the question."""
    return "".join(_CJK.findall(question))[:30]


def split_qa(raw: str, delimiters: Sequence[str] = ("答案：", "答案:", "Answer:")) -> tuple[str, str]:
    """Split at the last occurrence of any answer delimiter; both parts trimmed."""
    if not raw:
        raise NoDelimiter("empty text")
    best_pos, best_delim = -1, ""
    for delim in delimiters:
        pos = raw.rfind(delim)
        if pos > best_pos:
            best_pos, best_delim = pos, delim
    if best_pos < 0:
        raise NoDelimiter(f"no answer delimiter in {raw[:60]!r}")
    return raw[:best_pos].strip(), raw[best_pos + len(best_delim) :].strip()


def parse_options(question: str) -> dict[str, str] | None:
    """Extract inline option texts when markers run contiguously from A."""
    marks = [
        (m.start(1) if m.group(1) else m.start(0), m.group(1) or m.group(2))
        for m in _OPTION_MARK.finditer(question)
    ]
    # keep the last contiguous-from-A ascending run of markers
    run: list[tuple[int, str]] = []
    for pos, letter in marks:
        if letter == "A":
            run = [(pos, letter)]
        elif run and letter == chr(ord(run[-1][1]) + 1):
            run.append((pos, letter))
    if len(run) < 2:
        return None
    options: dict[str, str] = {}
    for i, (pos, letter) in enumerate(run):
        end = run[i + 1][0] if i + 1 < len(run) else len(question)
        text = question[pos:end]
        text = re.sub(r"^[（(]?[A-E][\.、．:：）)]?", "", text).strip(" 　\t\n,，;；")
        options[letter] = text
    return options


def _parse_answer_head(answer_text: str) -> tuple[frozenset[str] | None, str | None]:
    """Leading option letters of the answer, plus any trailing explanation."""
    m = re.match(r"^\s*[（(]?([A-E][A-E\s,，、]*)[）)]?\s*[。．.:：]?\s*(.*)$", answer_text, re.DOTALL)
    if not m:
        return None, None
    try:
        answer_set = normalize_answer(m.group(1))
    except (FinragError, InvalidAnswerLetter):
        return None, None
    explanation = m.group(2).strip() or None
    return answer_set, explanation


def _strip_rules(text: str, patterns: Sequence[str], suffix: bool) -> str:
    for pattern in patterns:
        text = re.sub(pattern, "", text, flags=re.MULTILINE if suffix else 0)
    return text.strip()


@dataclass(slots=True)
class CleanResult:
    kept: list[CorpusItem] = field(default_factory=list)
    rejected: list[tuple[dict, str]] = field(default_factory=list)
    duplicates: list[CorpusItem] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.kept) + len(self.rejected) + len(self.duplicates)


def clean_corpus(items: Iterable[Mapping], rules: CleanRules | None = None) -> CleanResult:
    """Clean and deduplicate raw records ``{"id", "text", "source_tag"?}``.

    First occurrence per dedup key wins; items whose key is empty bypass
    deduplication.  Deterministic given input order, and idempotent: cleaning
    the kept set again changes nothing.
    """
    rules = rules or CleanRules.default()
    result = CleanResult()
    seen: set[str] = set()
    for row_no, record in enumerate(items):
        raw = str(record.get("text", ""))
        item_id = str(record.get("id", row_no))
        source_tag = str(record.get("source_tag", ""))
        text = _strip_rules(raw, rules.strip_prefixes, suffix=False)
        text = _strip_rules(text, rules.strip_suffixes, suffix=True)
        try:
            question, answer_text = split_qa(text, rules.answer_delimiters)
        except NoDelimiter:
            result.rejected.append((dict(record), "no_delimiter"))
            continue
        if not question:
            result.rejected.append((dict(record), "empty_question"))
            continue
        if not answer_text:
            result.rejected.append((dict(record), "empty_answer"))
            continue
        answer_set, explanation = _parse_answer_head(answer_text)
        item = CorpusItem(
            id=item_id,
            raw_text=text,
            question=question,
            answer_text=answer_text,
            dedup_key=dedup_key(question),
            source_tag=source_tag,
            options=parse_options(question),
            answer_set=answer_set,
            explanation=explanation,
        )
        if item.dedup_key and item.dedup_key in seen:
            result.duplicates.append(item)
            continue
        if item.dedup_key:
            seen.add(item.dedup_key)
        result.kept.append(item)
    return result


# Table-style statistics ------------------------------------------------------

STAT_METRICS = (
    "Total items",
    "Unique items",
    "Average text length",
    "Minimum text length",
    "Maximum text length",
    "Average question length",
    "Average answer length",
    "With 2 options",
    "With 3 options",
    "With 4 options",
    "With 5 options",
    "Others",
)


def corpus_stats(items: Sequence[CorpusItem]) -> dict[str, float | int]:
    """Corpus statistics over a (possibly duplicated) item list.

    "Unique items" counts distinct dedup keys, with empty-key items each
    counting as unique.  The option buckets cover cardinalities 2..5;
    "Others" collects everything else, including option-less items.
    """
    stats: dict[str, float | int] = {name: 0 for name in STAT_METRICS}
    stats["Total items"] = len(items)
    if not items:
        return stats
    keys = [item.dedup_key for item in items]
    stats["Unique items"] = len({k for k in keys if k}) + sum(1 for k in keys if not k)
    text_lengths = [len(item.raw_text) for item in items]
    stats["Average text length"] = round(sum(text_lengths) / len(items), 2)
    stats["Minimum text length"] = min(text_lengths)
    stats["Maximum text length"] = max(text_lengths)
    stats["Average question length"] = round(sum(len(i.question) for i in items) / len(items), 2)
    stats["Average answer length"] = round(sum(len(i.answer_text) for i in items) / len(items), 2)
    for item in items:
        count = len(item.options) if item.options else 0
        if 2 <= count <= 5:
            stats[f"With {count} options"] += 1
        else:
            stats["Others"] += 1
    return stats


def format_stats(stats: Mapping[str, float | int]) -> str:
    width = max(len(name) for name in STAT_METRICS)
    return "\n".join(f"{name.ljust(width)}  {stats[name]}" for name in STAT_METRICS) + "\n"


# Instruction export ----------------------------------------------------------

@dataclass(frozen=True, slots=True)
class InstructionRecord:
    category: str
    instruction: str
    input: str
    output: str

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown instruction category {self.category!r}")
        if not self.output:
            raise ValueError("instruction output must be non-empty")

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "instruction": self.instruction,
            "input": self.input,
            "output": self.output,
        }


@dataclass(frozen=True, slots=True)
class CategoryRules:
    """Deterministic shape-to-category rules with per-category templates."""

    calc_density_threshold: float = 0.15
    instructions: Mapping[str, str] = field(
        default_factory=lambda: {
            CATEGORY_KNOWLEDGE: "请回答下面的金融知识问题，并在必要时引用相关条文。",
            CATEGORY_CALCULATION: "请根据题目逐步列出计算过程，再给出最终答案。",
            CATEGORY_READING: "请阅读题目和各个选项，分析后选出正确选项并说明理由。",
            CATEGORY_LOGICAL: "请判断下面说法的正误，并说明理由。",
        }
    )


def calc_density(text: str) -> float:
    """Fraction of non-space characters that are digits or arithmetic symbols."""
    core = [ch for ch in text if not ch.isspace()]
    if not core:
        return 0.0
    return sum(1 for ch in core if ch in _CALC_CHARS) / len(core)


def _is_true_false(item: CorpusItem) -> bool:
    if item.options and len(item.options) == 2:
        texts = {t.strip("。．. ") for t in item.options.values()}
        if texts <= _TRUE_FALSE_TEXTS:
            return True
    head = item.answer_text.strip()[:2].strip("。．. ")
    return head in _TRUE_FALSE_TEXTS and not item.options


def categorize(item: CorpusItem, rules: CategoryRules | None = None) -> str:
    rules = rules or CategoryRules()
    if _is_true_false(item):
        return CATEGORY_LOGICAL
    if calc_density(item.explanation or item.answer_text) >= rules.calc_density_threshold:
        return CATEGORY_CALCULATION
    if item.options:
        return CATEGORY_READING
    return CATEGORY_KNOWLEDGE


def export_instructions(
    items: Sequence[CorpusItem],
    category_rules: CategoryRules | None = None,
) -> tuple[list[InstructionRecord], list[tuple[CorpusItem, str]]]:
    """Turn corpus items into instruction records for fine-tuning export.

    Reading-comprehension inputs keep the options inline (they are part of the
    question text); calculation outputs prefer the worked explanation over the
    bare answer.  Items that cannot produce a non-empty output are collected,
    not fatal.
    """
    rules = category_rules or CategoryRules()
    records: list[InstructionRecord] = []
    uncategorizable: list[tuple[CorpusItem, str]] = []
    for item in items:
        if not item.question.strip():
            uncategorizable.append((item, "empty question"))
            continue
        category = categorize(item, rules)
        if category == CATEGORY_CALCULATION and item.explanation:
            output = item.explanation
        else:
            output = item.answer_text
        if not output.strip():
            uncategorizable.append((item, "empty output"))
            continue
        records.append(
            InstructionRecord(
                category=category,
                instruction=rules.instructions[category],
                input=item.question,
                output=output,
            )
        )
    return records, uncategorizable


# JSONL helpers ----------------------------------------------------------------

def read_jsonl(path: str | Path) -> list[dict]:
    rows: list[dict] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_jsonl(path: str | Path, rows: Iterable[Mapping]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def item_to_dict(item: CorpusItem) -> dict:
    return {
        "id": item.id,
        "raw_text": item.raw_text,
        "question": item.question,
        "answer_text": item.answer_text,
        "dedup_key": item.dedup_key,
        "source_tag": item.source_tag,
        "options": item.options,
        "answer_set": sorted(item.answer_set) if item.answer_set else None,
        "explanation": item.explanation,
    }


def item_from_dict(raw: Mapping) -> CorpusItem:
    return CorpusItem(
        id=str(raw["id"]),
        raw_text=raw["raw_text"],
        question=raw["question"],
        answer_text=raw["answer_text"],
        dedup_key=raw["dedup_key"],
        source_tag=raw.get("source_tag", ""),
        options=dict(raw["options"]) if raw.get("options") else None,
        answer_set=frozenset(raw["answer_set"]) if raw.get("answer_set") else None,
        explanation=raw.get("explanation"),
    )
