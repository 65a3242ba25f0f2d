"""Render demonstration sets and target questions into model prompts.

Wording is fixed by the template files under ``templates/<language>/<mode>.txt``.
A template is a sequence of named blocks, each introduced by a ``[name]`` line:
``instruction`` (the default task instruction), ``example`` (rendered once per
demonstration), ``target`` (the question being asked, ending with the answer
cue), and, for chain-of-thought templates, ``cot_cue``.  Blocks may use the
placeholders ``{stem}``, ``{options}``, ``{answer}`` and ``{explanation}``;
any other braces are left untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

from .errors import FinragError
from .exam import LANGUAGES, ExamQuestion

MODE_ANSWER_ONLY = "answer_only"
MODE_COT = "chain_of_thought"
MODES = (MODE_ANSWER_ONLY, MODE_COT)


class MissingExplanationForCoT(FinragError):
    pass


class AlphabetMismatch(FinragError):
    pass


class UnsupportedLanguage(FinragError):
    pass


@dataclass(frozen=True, slots=True)
class Demonstration:
    """One worked exemplar: problem, options, answer, optional explanation."""

    problem: str
    options: dict[str, str]
    answer: frozenset[str]
    explanation: str | None = None

    def __post_init__(self) -> None:
        if not self.answer <= set(self.options):
            raise ValueError(f"answer {sorted(self.answer)} outside options {list(self.options)}")

    @classmethod
    def from_question(cls, q: ExamQuestion) -> "Demonstration":
        return cls(problem=q.stem, options=dict(q.options), answer=q.answer_set, explanation=q.explanation)


@dataclass(frozen=True, slots=True)
class DemonstrationSet:
    """Instruction plus k exemplars; k = 0 is the zero-shot case.

    ``instruction`` of None uses the template's default wording.
    """

    examples: Sequence[Demonstration]
    language: str
    mode: str
    instruction: str | None = None

    def __post_init__(self) -> None:
        if self.language not in LANGUAGES:
            raise UnsupportedLanguage(self.language)
        if self.mode not in MODES:
            raise ValueError(f"unsupported mode {self.mode!r}")


_BLOCK_HEADER = re.compile(r"\[([a-z_]+)\]")
_PLACEHOLDER = re.compile(r"\{(stem|options|answer|explanation)\}")


def _parse_blocks(text: str) -> dict[str, str]:
    blocks: dict[str, str] = {}
    name: str | None = None
    lines: list[str] = []
    for line in text.splitlines():
        m = _BLOCK_HEADER.fullmatch(line)
        if m:
            if name is not None:
                blocks[name] = "\n".join(lines)
            name, lines = m.group(1), []
        elif name is not None:
            lines.append(line)
    if name is not None:
        blocks[name] = "\n".join(lines)
    return blocks


@lru_cache(maxsize=None)
def load_template(language: str, mode: str) -> dict[str, str]:
    if language not in LANGUAGES:
        raise UnsupportedLanguage(language)
    if mode not in MODES:
        raise ValueError(f"unsupported mode {mode!r}")
    path = resources.files("finrag") / "templates" / language / f"{mode}.txt"
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:  # pragma: no cover - templates ship with the package
        raise UnsupportedLanguage(f"{language}/{mode}") from exc
    blocks = _parse_blocks(text)
    for required in ("instruction", "example", "target"):
        if required not in blocks:
            raise ValueError(f"template {language}/{mode} lacks [{required}] block")
    return blocks


def default_instruction(language: str, mode: str) -> str:
    return load_template(language, mode)["instruction"]


def render_cot_cue(language: str) -> str:
    """The fixed step-by-step cue appended to chain-of-thought targets."""
    return load_template(language, MODE_COT)["cot_cue"]


def render_options(options: Mapping[str, str]) -> str:
    return "\n".join(f"{letter}. {text}" for letter, text in options.items())


def _fill(block: str, values: Mapping[str, str]) -> str:
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], block)


def build_prompt(dset: DemonstrationSet, target: ExamQuestion) -> str:
    """Deterministically render instruction, exemplars, and the target question.

    The output ends with the template's answer cue and carries no trailing
    whitespace; the target's own answer and explanation are never included.
    """
    template = load_template(dset.language, dset.mode)
    target_letters = set(target.options)

    parts = [dset.instruction if dset.instruction is not None else template["instruction"]]
    for demo in dset.examples:
        if set(demo.options) != target_letters:
            raise AlphabetMismatch(
                f"example letters {sorted(demo.options)} != target letters {sorted(target_letters)}"
            )
        if dset.mode == MODE_COT and not (demo.explanation and demo.explanation.strip()):
            raise MissingExplanationForCoT(f"demonstration {demo.problem[:40]!r} lacks an explanation")
        parts.append(
            _fill(
                template["example"],
                {
                    "stem": demo.problem,
                    "options": render_options(demo.options),
                    "answer": "".join(sorted(demo.answer)),
                    "explanation": demo.explanation or "",
                },
            )
        )
    parts.append(
        _fill(
            template["target"],
            {"stem": target.stem, "options": render_options(target.options), "answer": "", "explanation": ""},
        )
    )
    return "\n\n".join(parts)
