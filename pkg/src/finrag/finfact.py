"""Factual-QA dataset tooling and the pairwise judge protocol.

Structural items ask about objective entities (names, places, organizations,
dates, numbers) and carry an extractable gold answer; conversational items
ask about viewpoints and are grounded in the full article.  Judging is
pairwise on three dimensions (factual, relevant, informational) with
position-bias mitigation: every pair is judged in both orderings and a
disagreement reconciles to a tie.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .agents import ModelError, _extract_json
from .docstore import Document
from .errors import FinragError
from .gateway import Gateway, GatewayError, GenerationParams, ModelHandle

logger = logging.getLogger(__name__)

KIND_STRUCTURAL = "structural"
KIND_CONVERSATIONAL = "conversational"
KINDS = (KIND_STRUCTURAL, KIND_CONVERSATIONAL)
ARTICLE_CATEGORIES = ("financial", "political", "technical", "sports")
DIMENSIONS = ("factual", "relevant", "informational")
A_WINS, B_WINS, TIE = "a_wins", "b_wins", "tie"


class UnparseableGeneration(FinragError):
    pass


class UnparseableVerdict(FinragError):
    pass


class NoVerdicts(FinragError):
    pass


class ManifestMismatch(FinragError):
    pass


@dataclass(frozen=True, slots=True)
class FactQA:
    id: str
    kind: str
    category: str
    year: int
    question: str
    source_article_id: str
    gold_answer: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.category not in ARTICLE_CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.kind == KIND_STRUCTURAL and not self.gold_answer:
            raise ValueError(f"structural item {self.id} must carry a gold answer")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "category": self.category,
            "year": self.year,
            "question": self.question,
            "source_article_id": self.source_article_id,
            "gold_answer": self.gold_answer,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "FactQA":
        return cls(
            id=str(raw["id"]),
            kind=raw["kind"],
            category=raw["category"],
            year=int(raw["year"]),
            question=raw["question"],
            source_article_id=str(raw["source_article_id"]),
            gold_answer=raw.get("gold_answer"),
        )


@dataclass(frozen=True, slots=True)
class JudgeVerdict:
    qa_id: str
    system_a: str
    system_b: str
    per_dimension: dict[str, str]
    flagged: bool = False

    def __post_init__(self) -> None:
        if set(self.per_dimension) != set(DIMENSIONS):
            raise ValueError(f"verdict must cover all of {DIMENSIONS}")
        bad = [v for v in self.per_dimension.values() if v not in (A_WINS, B_WINS, TIE)]
        if bad:
            raise ValueError(f"invalid outcomes {bad}")

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "system_a": self.system_a,
            "system_b": self.system_b,
            "per_dimension": dict(self.per_dimension),
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "JudgeVerdict":
        return cls(
            qa_id=str(raw["qa_id"]),
            system_a=raw["system_a"],
            system_b=raw["system_b"],
            per_dimension=dict(raw["per_dimension"]),
            flagged=bool(raw.get("flagged", False)),
        )


def _agent_template(name: str) -> str:
    return (resources.files("finrag") / "templates" / "agents" / f"{name}.txt").read_text(
        encoding="utf-8"
    )


_ARTICLE = re.compile(r"\{article\}")
_JUDGE_FIELDS = re.compile(r"\{(question|reference|response_a|response_b)\}")


def generate_factqa(
    article: Document,
    kind: str,
    gateway: Gateway,
    model: str | ModelHandle,
    category: str = "financial",
    year: int = 0,
) -> list[FactQA]:
    """Generate question(-answer) items from one article via the model.

    Structural generations missing their answer are skipped with a log line
    rather than failing the batch.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    text = article.body or article.summary
    if not text.strip():
        raise ValueError(f"article {article.id} has no text")
    template = _agent_template(f"factqa_{kind}")
    prompt = _ARTICLE.sub(lambda _: text, template)
    try:
        raw = gateway.generate(model, prompt, GenerationParams(max_tokens=2048))
    except GatewayError as exc:
        raise ModelError(str(exc)) from exc
    try:
        parsed = _extract_json(raw)
        if not isinstance(parsed, list):
            raise ValueError("expected a JSON list")
    except (json.JSONDecodeError, ValueError) as exc:
        raise UnparseableGeneration(f"article {article.id}: {exc}") from exc

    items: list[FactQA] = []
    for i, entry in enumerate(parsed):
        question = str(entry.get("question", "")).strip() if isinstance(entry, Mapping) else ""
        answer = str(entry.get("answer", "")).strip() if isinstance(entry, Mapping) else ""
        if not question:
            logger.warning("article %s item %d: no question, skipped", article.id, i)
            continue
        if kind == KIND_STRUCTURAL and not answer:
            logger.warning("article %s item %d: structural item lacks an answer, skipped", article.id, i)
            continue
        items.append(
            FactQA(
                id=f"{article.id}-{kind[0]}{i}",
                kind=kind,
                category=category,
                year=year,
                question=question,
                source_article_id=article.id,
                gold_answer=answer or None,
            )
        )
    return items


def _judge_once(
    qa: FactQA,
    reference: str,
    first: str,
    second: str,
    gateway: Gateway,
    model: str | ModelHandle,
) -> dict[str, str]:
    """One ordering: returns per-dimension "1" / "2" / "tie"."""
    values = {
        "question": qa.question,
        "reference": reference,
        "response_a": first,
        "response_b": second,
    }
    prompt = _JUDGE_FIELDS.sub(lambda m: values[m.group(1)], _agent_template("judge"))
    raw = gateway.generate(model, prompt, GenerationParams(max_tokens=512))
    data = _extract_json(raw)
    out: dict[str, str] = {}
    for dim in DIMENSIONS:
        value = str(data.get(dim, "")).strip().lower()
        if value not in ("1", "2", "tie"):
            raise UnparseableVerdict(f"dimension {dim} got {value!r}")
        out[dim] = value
    return out


def judge_pairwise(
    qa: FactQA,
    resp_a: str,
    resp_b: str,
    gateway: Gateway,
    judge_model: str | ModelHandle,
    system_a: str = "A",
    system_b: str = "B",
    article_text: str | None = None,
) -> JudgeVerdict:
    """Judge both orderings and reconcile; disagreement means a tie.

    The reference is the gold answer for structural items and the article
    text for conversational items.
    """
    if not resp_a.strip() or not resp_b.strip():
        raise ValueError("both responses must be non-empty")
    if qa.kind == KIND_STRUCTURAL:
        reference = qa.gold_answer or ""
    else:
        if not article_text:
            raise ValueError("conversational judging needs the article text as reference")
        reference = article_text

    try:
        forward = _judge_once(qa, reference, resp_a, resp_b, gateway, judge_model)
        backward = _judge_once(qa, reference, resp_b, resp_a, gateway, judge_model)
    except (GatewayError, json.JSONDecodeError, ValueError, UnparseableVerdict) as exc:
        logger.warning("judge failed for %s: %s; recording flagged ties", qa.id, exc)
        return JudgeVerdict(
            qa_id=qa.id,
            system_a=system_a,
            system_b=system_b,
            per_dimension={dim: TIE for dim in DIMENSIONS},
            flagged=True,
        )

    per_dimension: dict[str, str] = {}
    for dim in DIMENSIONS:
        # map position answers back to systems: forward "1"=A, backward "1"=B
        first = {"1": A_WINS, "2": B_WINS, "tie": TIE}[forward[dim]]
        second = {"1": B_WINS, "2": A_WINS, "tie": TIE}[backward[dim]]
        per_dimension[dim] = first if first == second else TIE
    return JudgeVerdict(qa_id=qa.id, system_a=system_a, system_b=system_b, per_dimension=per_dimension)


def win_rate(
    verdicts: Sequence[JudgeVerdict],
    system: str,
    dimension: str,
    opponent: str | None = None,
) -> dict[str, float]:
    """Win/tie/loss fractions for a system on one dimension.

    Counts every verdict involving the system (optionally restricted to one
    opponent); the fractions sum to 1.
    """
    if dimension not in DIMENSIONS:
        raise ValueError(f"unknown dimension {dimension!r}")
    relevant = [
        v
        for v in verdicts
        if system in (v.system_a, v.system_b)
        and (opponent is None or opponent in (v.system_a, v.system_b))
        and v.system_a != v.system_b
    ]
    if not relevant:
        raise NoVerdicts(f"no verdicts for system {system!r}")
    wins = ties = losses = 0
    for v in relevant:
        outcome = v.per_dimension[dimension]
        if outcome == TIE:
            ties += 1
        elif (outcome == A_WINS) == (v.system_a == system):
            wins += 1
        else:
            losses += 1
    n = len(relevant)
    return {"win": wins / n, "tie": ties / n, "loss": losses / n, "n": n}


def win_rate_report(verdicts: Sequence[JudgeVerdict], system: str) -> dict:
    """Pooled and per-opponent win rates across all dimensions."""
    opponents = sorted(
        {v.system_b if v.system_a == system else v.system_a for v in verdicts if system in (v.system_a, v.system_b)}
    )
    report: dict = {"system": system, "pooled": {}, "per_opponent": {}}
    for dim in DIMENSIONS:
        report["pooled"][dim] = win_rate(verdicts, system, dim)
    for opp in opponents:
        report["per_opponent"][opp] = {dim: win_rate(verdicts, system, dim, opponent=opp) for dim in DIMENSIONS}
    return report


def win_rate_csv(verdicts: Sequence[JudgeVerdict], system: str) -> str:
    """Bar-chart-ready CSV: opponent,dimension,win,tie,loss."""
    report = win_rate_report(verdicts, system)
    lines = ["opponent,dimension,win,tie,loss"]
    for opp, dims in report["per_opponent"].items():
        for dim, rates in dims.items():
            lines.append(f"{opp},{dim},{rates['win']:.4f},{rates['tie']:.4f},{rates['loss']:.4f}")
    return "\n".join(lines) + "\n"


# Manifest ---------------------------------------------------------------------


def build_manifest(items: Sequence[FactQA], articles: Mapping[str, Mapping[str, int]] | None = None) -> dict:
    """Counts by kind for the item list, plus caller-supplied article counts."""
    kinds = Counter(item.kind for item in items)
    manifest = {
        "questions": {
            "structural": kinds.get(KIND_STRUCTURAL, 0),
            "conversational": kinds.get(KIND_CONVERSATIONAL, 0),
            "total": len(items),
        }
    }
    if articles:
        manifest["articles"] = {k: dict(v) for k, v in articles.items()}
    return manifest


def validate_manifest(items: Sequence[FactQA], manifest: Mapping, article_ids: Iterable[str]) -> None:
    """Check manifest counts against the dataset and article references.

    Raises :class:`ManifestMismatch` on any disagreement.
    """
    expected = build_manifest(items)["questions"]
    declared = manifest.get("questions", {})
    for key, value in expected.items():
        if declared.get(key) != value:
            raise ManifestMismatch(f"questions.{key}: manifest says {declared.get(key)}, dataset has {value}")
    known = set(article_ids)
    missing = sorted({item.source_article_id for item in items} - known)
    if missing:
        raise ManifestMismatch(f"items reference unknown articles: {missing[:5]}")
