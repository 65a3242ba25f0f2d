"""The four LLM-driven agents and the retrieval pipeline that wires them to
the two indices.

Stages: query rewriting (history-aware), intention detection (source
routing), two-stage retrieval (text-index recall, embedding rerank, plus
realtime fetchers when the intent demands), knowledge extraction under a
character budget, and citation-grounded response generation.  Every agent
parses a JSON-constrained model response with one retry and then falls back
deterministically, so no single model failure can crash the pipeline.
"""

from __future__ import annotations

import json
import logging
import math
import re
import secrets
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

from .docstore import (
    DocStore,
    Document,
    Fetcher,
    Paragraph,
    run_realtime,
)
from .errors import FinragError
from .gateway import Gateway, GatewayError, GenerationParams, ModelHandle
from .textindex import TextIndex, tokenize
from .vectors import VectorIndex

logger = logging.getLogger(__name__)

SOURCE_FALLBACK = frozenset({"news"})
MAX_KEYWORD_LEN = 32
INSUFFICIENT_ZH = "未能检索到足够的相关资料，无法回答这个问题。"
INSUFFICIENT_EN = "The retrieved material is insufficient to answer this question."
FAILURE_ZH = "抱歉，系统在处理这个问题时出现了错误。"
FAILURE_EN = "Sorry, the system hit an error while handling this question."


class ModelError(FinragError):
    pass


class UncitedIndex(FinragError):
    pass


@dataclass(frozen=True, slots=True)
class Citation:
    index: int
    paragraph_ref: str

    def to_dict(self) -> dict:
        return {"index": self.index, "paragraph_ref": self.paragraph_ref}


@dataclass(frozen=True, slots=True)
class DialogueTurn:
    role: str
    text: str
    citations: tuple[Citation, ...] = ()
    timestamp: float = 0.0
    trace_id: str | None = None


@dataclass(frozen=True, slots=True)
class RewriteResult:
    rewritten_query: str
    keywords: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class Intention:
    sources: frozenset[str]
    needs_market_data: bool = False
    needs_reports: bool = False
    confidence: float = 0.0

    def __post_init__(self) -> None:
        if not self.sources:
            object.__setattr__(self, "sources", SOURCE_FALLBACK)


@dataclass(frozen=True, slots=True)
class BundleEntry:
    index: int
    paragraph_ref: str
    text: str
    condensed: bool = False


@dataclass(frozen=True, slots=True)
class KnowledgeBundle:
    entries: tuple[BundleEntry, ...]
    budget_chars: int

    def __post_init__(self) -> None:
        if [e.index for e in self.entries] != list(range(1, len(self.entries) + 1)):
            raise ValueError("bundle indices must be 1-based and consecutive")
        if sum(len(e.text) for e in self.entries) > self.budget_chars:
            raise ValueError("bundle exceeds its character budget")


def _template(name: str) -> str:
    return (resources.files("finrag") / "templates" / "agents" / f"{name}.txt").read_text(
        encoding="utf-8"
    )


_FILL = re.compile(r"\{(history|query|question|knowledge|passage)\}")


def _fill(template: str, values: Mapping[str, str]) -> str:
    return _FILL.sub(lambda m: values[m.group(1)], template)


def _extract_json(text: str):
    """Parse a JSON object/array from a model response, tolerating fences."""
    fenced = re.search(r"```(?:json)?\s*\n(.*?)```", text, re.DOTALL)
    if fenced:
        text = fenced.group(1)
    text = text.strip()
    start = min((i for i in (text.find("{"), text.find("[")) if i >= 0), default=0)
    return json.loads(text[start:])


def _json_call(gateway: Gateway, model: str | ModelHandle, prompt: str):
    """One model call with a single retry on unparseable JSON."""
    last_exc: Exception | None = None
    for _ in range(2):
        try:
            raw = gateway.generate(model, prompt, GenerationParams(max_tokens=1024))
            return _extract_json(raw)
        except (json.JSONDecodeError, GatewayError, ValueError) as exc:
            last_exc = exc
    raise ModelError(str(last_exc))


def render_history(history: Sequence[DialogueTurn], max_turns: int = 8) -> str:
    if not history:
        return "(none)"
    lines = [f"{turn.role}: {turn.text}" for turn in history[-max_turns:]]
    return "\n".join(lines)


def fallback_keywords(query: str, text_index: TextIndex | None = None, top_n: int = 5) -> tuple[str, ...]:
    """Unique query terms, rarest-first when an index is available."""
    terms = list(dict.fromkeys(tokenize(query)))
    if text_index is not None and len(text_index):
        n_docs = len(text_index)
        order = {term: i for i, term in enumerate(terms)}

        def idf(term: str) -> float:
            df = len(text_index._postings.get(term, {}))
            return math.log(1.0 + n_docs / df) if df else math.log(1.0 + n_docs)

        terms.sort(key=lambda t: (-idf(t), order[t]))
    return tuple(t[:MAX_KEYWORD_LEN] for t in terms[:top_n])


def rewrite_query(
    history: Sequence[DialogueTurn],
    query: str,
    gateway: Gateway,
    model: str | ModelHandle,
    text_index: TextIndex | None = None,
) -> RewriteResult:
    """Resolve references against history and extract search keywords.

    Parse failures after one retry fall back to the raw query with its own
    tokens as keywords.
    """
    if not query.strip():
        raise ValueError("query must be non-empty")
    prompt = _fill(_template("rewrite"), {"history": render_history(history), "query": query})
    try:
        data = _json_call(gateway, model, prompt)
        rewritten = str(data["rewritten_query"]).strip() or query
        keywords = tuple(
            str(k).strip()[:MAX_KEYWORD_LEN] for k in data.get("keywords", []) if str(k).strip()
        )
        if not keywords:
            keywords = fallback_keywords(rewritten, text_index)
        return RewriteResult(rewritten_query=rewritten, keywords=keywords)
    except (ModelError, KeyError, TypeError):
        return RewriteResult(rewritten_query=query, keywords=fallback_keywords(query, text_index))


def detect_intention(rewritten: str, gateway: Gateway, model: str | ModelHandle) -> Intention:
    """Choose data sources for the query; falls back to news with zero confidence."""
    if not rewritten.strip():
        raise ValueError("rewritten query must be non-empty")
    prompt = _fill(_template("intention"), {"query": rewritten})
    try:
        data = _json_call(gateway, model, prompt)
        sources = {s for s in map(str, data.get("sources", [])) if s in SOURCE_TYPES_SET}
        needs_market = bool(data.get("needs_market_data"))
        needs_reports = bool(data.get("needs_reports"))
        if needs_market:
            sources.add("market")
        if needs_reports:
            sources.add("report")
        confidence = min(1.0, max(0.0, float(data.get("confidence", 0.0))))
        return Intention(
            sources=frozenset(sources) or SOURCE_FALLBACK,
            needs_market_data=needs_market,
            needs_reports=needs_reports,
            confidence=confidence,
        )
    except (ModelError, TypeError, ValueError):
        return Intention(sources=SOURCE_FALLBACK, confidence=0.0)


SOURCE_TYPES_SET = frozenset({"report", "news", "market", "macro", "custom"})

_SENTENCE_SPLIT = re.compile(r"(?<=[。！？!?.])\s*")


def _leading_sentences(text: str, budget: int) -> str:
    """Longest prefix of whole sentences fitting the budget (may be empty)."""
    taken: list[str] = []
    used = 0
    for sentence in _SENTENCE_SPLIT.split(text):
        if not sentence:
            continue
        if used + len(sentence) > budget:
            break
        taken.append(sentence)
        used += len(sentence)
    return "".join(taken)


def extract_refine(
    hits: Sequence[tuple[Paragraph, float]],
    question: str,
    budget_chars: int,
    gateway: Gateway | None = None,
    model: str | ModelHandle | None = None,
) -> KnowledgeBundle:
    """Select passages in score order until the character budget is spent.

    Passages that do not fit whole are trimmed to their leading sentences (a
    sentence-level subsequence of the source, never new text).  When a
    gateway and model are given, oversized passages are instead condensed by
    the model and flagged ``condensed``; condensation output that exceeds the
    remaining budget falls back to sentence trimming.
    """
    entries: list[BundleEntry] = []
    used = 0
    for paragraph, _score in hits:
        remaining = budget_chars - used
        if remaining <= 0:
            break
        text = paragraph.text
        condensed = False
        if len(text) > remaining:
            if gateway is not None and model is not None:
                try:
                    prompt = _fill(_template("refine"), {"question": question, "passage": text})
                    candidate = gateway.generate(model, prompt, GenerationParams(max_tokens=1024)).strip()
                    if candidate and len(candidate) <= remaining:
                        text, condensed = candidate, True
                    else:
                        text = _leading_sentences(text, remaining)
                except GatewayError:
                    text = _leading_sentences(text, remaining)
            else:
                text = _leading_sentences(text, remaining)
        if not text:
            continue
        entries.append(
            BundleEntry(index=len(entries) + 1, paragraph_ref=paragraph.ref, text=text, condensed=condensed)
        )
        used += len(text)
    return KnowledgeBundle(entries=tuple(entries), budget_chars=budget_chars)


_CITATION_MARK = re.compile(r"\[(\d+)\]")


def parse_citation_marks(text: str) -> list[int]:
    return [int(m.group(1)) for m in _CITATION_MARK.finditer(text)]


def _is_chinese(text: str) -> bool:
    return any("一" <= ch <= "鿿" for ch in text)


def insufficient_answer(question: str) -> str:
    return INSUFFICIENT_ZH if _is_chinese(question) else INSUFFICIENT_EN


def generate_response(
    bundle: KnowledgeBundle,
    question: str,
    history: Sequence[DialogueTurn],
    gateway: Gateway,
    model: str | ModelHandle,
) -> tuple[str, list[Citation]]:
    """Generate the cited answer; bracketed indices must resolve in the bundle.

    An empty bundle yields the fixed insufficient-knowledge answer with zero
    citations.  An out-of-bundle index triggers one regeneration, then
    :class:`UncitedIndex`.
    """
    if not bundle.entries:
        return insufficient_answer(question), []
    knowledge = "\n".join(f"[{e.index}] {e.text}" for e in bundle.entries)
    prompt = _fill(
        _template("generate"),
        {"knowledge": knowledge, "history": render_history(history), "question": question},
    )
    by_index = {e.index: e for e in bundle.entries}
    last_bad: list[int] = []
    for _ in range(2):
        try:
            answer = gateway.generate(model, prompt, GenerationParams(max_tokens=2048))
        except GatewayError as exc:
            raise ModelError(str(exc)) from exc
        marks = parse_citation_marks(answer)
        bad = sorted({m for m in marks if m not in by_index})
        if not bad:
            cited = sorted({m for m in marks})
            citations = [Citation(index=i, paragraph_ref=by_index[i].paragraph_ref) for i in cited]
            return answer, citations
        last_bad = bad
    raise UncitedIndex(f"answer cites indices {last_bad} outside the bundle")


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class QaPipeline:
    """End-to-end answerer over a document store and its two indices."""

    store: DocStore
    text_index: TextIndex
    gateway: Gateway
    chat_model: str | ModelHandle
    embed_model: str | ModelHandle
    recall_k: int = 20
    rerank_k: int = 8
    budget_chars: int = 6000
    realtime_fetchers: Sequence[Fetcher] = ()
    realtime_limit: int = 5
    condense_with_model: bool = False
    _vectors: dict[str, list[float]] = field(default_factory=dict, repr=False)

    def refresh_embeddings(self) -> int:
        """Embed paragraphs still waiting for a vector; returns how many."""
        pending = self.store.pending_embedding()
        if not pending:
            return 0
        vectors = self.gateway.embed(self.embed_model, [p.text for p in pending])
        for paragraph, vector in zip(pending, vectors):
            self._vectors[paragraph.ref] = vector
            self.store.set_embedding_ref(paragraph.doc_id, paragraph.ordinal, paragraph.ref)
        return len(pending)

    def ingest_document(self, doc: Document) -> list[Paragraph]:
        paragraphs = self.store.ingest(doc)
        self.text_index.index_document(doc)
        return paragraphs

    def _candidate_paragraphs(self, doc_ids: Sequence[str]) -> list[Paragraph]:
        out: list[Paragraph] = []
        for doc_id in doc_ids:
            out.extend(self.store.paragraphs(doc_id))
        return out

    def _rerank(self, query: str, candidates: Sequence[Paragraph]) -> list[tuple[Paragraph, float]]:
        if not candidates:
            return []
        self.refresh_embeddings()
        by_ref = {p.ref: p for p in candidates}
        vectors = [(ref, self._vectors[ref]) for ref in by_ref if ref in self._vectors]
        missing = [ref for ref in by_ref if ref not in self._vectors]
        if missing:  # paragraphs ingested outside this pipeline instance
            embedded = self.gateway.embed(self.embed_model, [by_ref[ref].text for ref in missing])
            for ref, vec in zip(missing, embedded):
                self._vectors[ref] = vec
            vectors.extend((ref, self._vectors[ref]) for ref in missing)
        index = VectorIndex.build(vectors)
        query_vec = self.gateway.embed(self.embed_model, [query])[0]
        hits = index.top_k(query_vec, k=min(self.rerank_k, len(vectors)))
        return [(by_ref[hit.ref_id], hit.score) for hit in hits]

    def answer(
        self,
        history: Sequence[DialogueTurn],
        query: str,
        now: float | None = None,
    ) -> tuple[DialogueTurn, dict]:
        """Run the full pipeline; always returns a turn, never raises.

        The second element is the retrieval trace: rewrite, intention,
        per-stage hits with scores, the knowledge bundle, and any per-stage
        error markers.
        """
        now = time.time() if now is None else now
        trace_id = secrets.token_hex(16)
        trace: dict = {"trace_id": trace_id, "query": query, "stages": {}, "errors": {}}
        try:
            return self._answer_inner(history, query, now, trace), trace
        except Exception as exc:  # noqa: BLE001 - explicit failure turn, never a crash
            logger.exception("pipeline failed for query %r", query)
            trace["errors"]["pipeline"] = str(exc)
            text = FAILURE_ZH if _is_chinese(query) else FAILURE_EN
            turn = DialogueTurn(
                role="assistant", text=text, citations=(), timestamp=now, trace_id=trace_id
            )
            trace["answer"] = text
            trace["citations"] = []
            return turn, trace

    def _answer_inner(
        self,
        history: Sequence[DialogueTurn],
        query: str,
        now: float,
        trace: dict,
    ) -> DialogueTurn:
        rewrite = rewrite_query(history, query, self.gateway, self.chat_model, self.text_index)
        trace["stages"]["rewrite"] = {
            "rewritten_query": rewrite.rewritten_query,
            "keywords": list(rewrite.keywords),
        }

        intention = detect_intention(rewrite.rewritten_query, self.gateway, self.chat_model)
        trace["stages"]["intention"] = {
            "sources": sorted(intention.sources),
            "needs_market_data": intention.needs_market_data,
            "needs_reports": intention.needs_reports,
            "confidence": intention.confidence,
        }

        search_text = " ".join((rewrite.rewritten_query, *rewrite.keywords))
        text_hits = self.text_index.search(search_text, k=self.recall_k, now=now)
        trace["stages"]["text_recall"] = [
            {"doc_id": h.doc_id, "score": round(h.final_score, 6)} for h in text_hits
        ]

        realtime_docs: list[Document] = []
        for fetcher in self.realtime_fetchers:
            if fetcher.kind != "realtime" or fetcher.source_type not in intention.sources:
                continue
            try:
                fetched = run_realtime(fetcher, self.store, rewrite.rewritten_query, self.realtime_limit)
            except FinragError as exc:
                trace["errors"][f"fetch:{fetcher.name}"] = str(exc)
                continue
            for doc in fetched:
                if doc.id not in self.text_index:
                    self.text_index.index_document(doc)
            realtime_docs.extend(fetched)
        if realtime_docs:
            trace["stages"]["realtime"] = [d.id for d in realtime_docs]

        candidate_doc_ids = list(dict.fromkeys([h.doc_id for h in text_hits] + [d.id for d in realtime_docs]))
        candidates = self._candidate_paragraphs(candidate_doc_ids)
        reranked = self._rerank(rewrite.rewritten_query, candidates)
        trace["stages"]["rerank"] = [
            {"paragraph_ref": p.ref, "score": round(score, 6)} for p, score in reranked
        ]

        bundle = extract_refine(
            reranked,
            rewrite.rewritten_query,
            self.budget_chars,
            gateway=self.gateway if self.condense_with_model else None,
            model=self.chat_model if self.condense_with_model else None,
        )
        trace["stages"]["bundle"] = [
            {"index": e.index, "paragraph_ref": e.paragraph_ref, "text": e.text, "condensed": e.condensed}
            for e in bundle.entries
        ]

        try:
            answer, citations = generate_response(bundle, query, history, self.gateway, self.chat_model)
        except (ModelError, UncitedIndex) as exc:
            trace["errors"]["generate"] = str(exc)
            answer, citations = insufficient_answer(query), []
        trace["answer"] = answer
        trace["citations"] = [c.to_dict() for c in citations]
        return DialogueTurn(
            role="assistant",
            text=answer,
            citations=tuple(citations),
            timestamp=now,
            trace_id=trace["trace_id"],
        )
