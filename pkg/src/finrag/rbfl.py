"""Retrieval-based few-shot learning: nearest-exemplar shot selection.

For a target problem, the K most similar candidate questions are retrieved
one per iteration, each retrieved item being excluded from subsequent
iterations so no shot repeats.  The loop is implemented with a growing
exclude set over an immutable index snapshot, which returns exactly the same
shots as literally deleting retrieved rows from a scratch copy (there is an
equivalence test for this).  Shots are returned in ascending similarity so
the most similar example lands adjacent to the target in the prompt.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import CorpusItem, dedup_key
from .errors import FinragError
from .exam import ExamQuestion
from .gateway import Gateway, GenerationParams, ModelHandle
from .prompts import MODE_ANSWER_ONLY, Demonstration, DemonstrationSet, build_prompt
from .scoring import (
    NoAnswerFound,
    ScoredPrediction,
    parse_cot_answer,
    select_multi,
    select_single,
)
from .vectors import VectorIndex

logger = logging.getLogger(__name__)


class PoolExhausted(FinragError):
    """Raised only in strict mode; by default exhaustion logs a warning."""


@dataclass(frozen=True, slots=True)
class ShotPool:
    """Candidate exemplars with their embedding index."""

    index: VectorIndex
    items: Mapping[str, CorpusItem]

    def __post_init__(self) -> None:
        missing = [ref for ref in self.index.ids if ref not in self.items]
        if missing:
            raise ValueError(f"pool index refs without items: {missing[:3]}")


def build_pool(items: Sequence[CorpusItem], gateway: Gateway, embedder: str | ModelHandle) -> ShotPool:
    """Embed candidate questions and wrap them in a queryable pool.

    Items without inline options or an answer letter set cannot be rendered
    as demonstrations and are skipped with a warning.
    """
    usable = [item for item in items if item.options and item.answer_set]
    dropped = len(items) - len(usable)
    if dropped:
        logger.warning("pool: dropping %d items without options/answer letters", dropped)
    vectors = gateway.embed(embedder, [item.question for item in usable]) if usable else []
    index = VectorIndex.build((item.id, vec) for item, vec in zip(usable, vectors))
    return ShotPool(index=index, items={item.id: item for item in usable})


@dataclass(frozen=True)
class RbflConfig:
    k_shots: int
    pool: ShotPool
    embedder: str | ModelHandle
    answer_model: str | ModelHandle
    mode: str = MODE_ANSWER_ONLY
    language: str = "zh"
    multi_answer: bool = False
    most_similar_last: bool = True

    def __post_init__(self) -> None:
        if self.k_shots < 0:
            raise ValueError("k_shots must be >= 0")
        if self.k_shots > 0 and len(self.pool.index) == 0:
            raise ValueError("candidate pool is empty")


def retrieve_shots(
    cfg: RbflConfig,
    gateway: Gateway,
    problem: str,
    exclude: Sequence[str] = (),
) -> list[tuple[CorpusItem, float]]:
    """K distinct nearest candidates for the problem, with similarity scores.

    Each iteration takes the single nearest remaining candidate and adds it
    to the exclude set.  If the pool runs out, returns what exists and warns.
    Output order is ascending similarity when ``most_similar_last`` is set.
    """
    if not problem.strip():
        raise ValueError("problem must be non-empty")
    if cfg.k_shots == 0:
        return []
    query = gateway.embed(cfg.embedder, [problem])[0]
    excluded = set(exclude)
    picked: list[tuple[CorpusItem, float]] = []
    while len(picked) < cfg.k_shots:
        hits = cfg.pool.index.top_k(query, k=1, exclude=excluded)
        if not hits:
            logger.warning(
                "pool exhausted: wanted %d shots, found %d", cfg.k_shots, len(picked)
            )
            break
        hit = hits[0]
        picked.append((cfg.pool.items[hit.ref_id], hit.score))
        excluded.add(hit.ref_id)
    if cfg.most_similar_last:
        picked.reverse()
    return picked


def retrieve_shots_destructive(
    cfg: RbflConfig,
    gateway: Gateway,
    problem: str,
    exclude: Sequence[str] = (),
) -> list[tuple[CorpusItem, float]]:
    """Literal removal variant: deletes each retrieved row from a scratch
    index copy.  Exists as the oracle for the exclude-set implementation."""
    if cfg.k_shots == 0:
        return []
    query = gateway.embed(cfg.embedder, [problem])[0]
    index = cfg.pool.index.remove(set(exclude) & set(cfg.pool.index.ids)) if exclude else cfg.pool.index
    picked: list[tuple[CorpusItem, float]] = []
    while len(picked) < cfg.k_shots and len(index):
        hit = index.top_k(query, k=1)[0]
        picked.append((cfg.pool.items[hit.ref_id], hit.score))
        index = index.remove([hit.ref_id])
    if cfg.most_similar_last:
        picked.reverse()
    return picked


def _self_exclusions(cfg: RbflConfig, target: ExamQuestion) -> set[str]:
    """Pool ids matching the target by id or by dedup key."""
    excluded = {target.id} if target.id in cfg.pool.items else set()
    target_key = dedup_key(target.stem)
    if target_key:
        excluded.update(
            ref for ref, item in cfg.pool.items.items() if item.dedup_key == target_key
        )
    return excluded


def demonstration_from_item(item: CorpusItem) -> Demonstration:
    assert item.options and item.answer_set
    return Demonstration(
        problem=item.question,
        options=dict(item.options),
        answer=item.answer_set,
        explanation=item.explanation,
    )


def answer_with_rbfl(
    cfg: RbflConfig,
    gateway: Gateway,
    target: ExamQuestion,
) -> tuple[ScoredPrediction, list[tuple[CorpusItem, float]], str]:
    """Retrieve shots, build the prompt, and answer the target question.

    The target itself is never retrieved as its own shot: pool entries
    matching its id or its dedup key are excluded up front.  Returns the
    prediction, the shots used (for provenance logging), and the prompt.
    """
    shots = retrieve_shots(cfg, gateway, target.stem, exclude=sorted(_self_exclusions(cfg, target)))
    dset = DemonstrationSet(
        examples=[demonstration_from_item(item) for item, _ in shots],
        language=cfg.language,
        mode=cfg.mode,
    )
    prompt = build_prompt(dset, target)
    letters = target.letters
    if cfg.mode == MODE_ANSWER_ONLY:
        result = gateway.score_candidates(cfg.answer_model, prompt, letters)
        predicted = (
            select_multi(result.log_probs) if cfg.multi_answer else frozenset(select_single(result.log_probs))
        )
        prediction = ScoredPrediction(
            question_id=target.id,
            mode=cfg.mode,
            predicted_set=predicted,
            per_option_log_prob=dict(result.log_probs),
        )
        return prediction, shots, prompt
    else:
        raw = gateway.generate(cfg.answer_model, prompt, GenerationParams(max_tokens=2048))
        try:
            predicted = parse_cot_answer(raw, letters, multi=cfg.multi_answer)
            prediction = ScoredPrediction(
                question_id=target.id, mode=cfg.mode, predicted_set=predicted, raw_output=raw
            )
        except NoAnswerFound:
            logger.warning("no parseable answer for %s", target.id)
            prediction = ScoredPrediction(
                question_id=target.id,
                mode=cfg.mode,
                predicted_set=frozenset(),
                raw_output=raw,
                refused=True,
            )
    return prediction, shots, prompt
