"""Field-weighted inverted index with recency decay over stored documents.

Terms come from the title (weight 3.0), company names (2.0), and summary
(1.0).  CJK runs are tokenized into overlapping character bigrams and latin
runs into lowercase words, so no dictionary segmenter is needed.  Matching
scores are ``field_weight * tf * idf`` with ``idf = ln(1 + N/df)``; the final
score multiplies in an exponential recency factor ``2^(-age_days/half_life)``
so that, all else equal, a document one half-life old scores exactly half.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .docstore import Document
from .errors import FinragError

DEFAULT_FIELD_WEIGHTS = {"title": 3.0, "company": 2.0, "summary": 1.0}
DEFAULT_HALF_LIFE_DAYS = 30.0
SECONDS_PER_DAY = 86_400.0
INDEX_FILE = "text_index.json"
INDEX_VERSION = 1


class DuplicateDocId(FinragError):
    pass


@dataclass(frozen=True, slots=True)
class TextHit:
    doc_id: str
    match_score: float
    recency_factor: float

    @property
    def final_score(self) -> float:
        return self.match_score * self.recency_factor


def _is_cjk(ch: str) -> bool:
    return "一" <= ch <= "鿿"


def _is_word_char(ch: str) -> bool:
    return ch.isascii() and (ch.isalnum())


def tokenize(text: str, language_hint: str | None = None) -> list[str]:
    """CJK runs become character bigrams (unigram for single characters);
    latin/digit runs become lowercase words."""
    terms: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if _is_cjk(ch):
            j = i
            while j < n and _is_cjk(text[j]):
                j += 1
            run = text[i:j]
            if len(run) == 1:
                terms.append(run)
            else:
                terms.extend(run[k : k + 2] for k in range(len(run) - 1))
            i = j
        elif _is_word_char(ch):
            j = i
            while j < n and _is_word_char(text[j]):
                j += 1
            terms.append(text[i:j].lower())
            i = j
        else:
            i += 1
    return terms


class TextIndex:
    """In-memory inverted index; mutation and search serialize on one lock."""

    def __init__(
        self,
        field_weights: dict[str, float] | None = None,
        half_life_days: float = DEFAULT_HALF_LIFE_DAYS,
    ):
        self.field_weights = dict(field_weights or DEFAULT_FIELD_WEIGHTS)
        self.half_life_days = half_life_days
        # term -> doc_id -> field -> tf
        self._postings: dict[str, dict[str, dict[str, int]]] = {}
        self._published_at: dict[str, float] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._published_at)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._published_at

    def _field_terms(self, doc: Document) -> dict[str, list[str]]:
        return {
            "title": tokenize(doc.title),
            "company": [t for name in doc.company_names for t in tokenize(name)],
            "summary": tokenize(doc.summary),
        }

    def index_document(self, doc: Document) -> None:
        with self._lock:
            if doc.id in self._published_at:
                raise DuplicateDocId(doc.id)
            self._published_at[doc.id] = doc.published_at
            for fieldname, terms in self._field_terms(doc).items():
                for term in terms:
                    by_doc = self._postings.setdefault(term, {})
                    by_field = by_doc.setdefault(doc.id, {})
                    by_field[fieldname] = by_field.get(fieldname, 0) + 1

    def recency_factor(self, doc_id: str, now: float) -> float:
        age_days = (now - self._published_at[doc_id]) / SECONDS_PER_DAY
        return min(1.0, 2.0 ** (-age_days / self.half_life_days))

    def search(self, query: str, k: int, now: float) -> list[TextHit]:
        """Top-k documents by ``match_score * recency_factor``.

        Ties break toward the newer document, then by doc id.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock:
            n_docs = len(self._published_at)
            match: dict[str, float] = {}
            for term in sorted(set(tokenize(query))):
                by_doc = self._postings.get(term)
                if not by_doc:
                    continue
                idf = math.log(1.0 + n_docs / len(by_doc))
                for doc_id, fields in by_doc.items():
                    gain = sum(
                        self.field_weights.get(fieldname, 0.0) * tf * idf
                        for fieldname, tf in fields.items()
                    )
                    match[doc_id] = match.get(doc_id, 0.0) + gain
            hits = [
                TextHit(doc_id=doc_id, match_score=score, recency_factor=self.recency_factor(doc_id, now))
                for doc_id, score in match.items()
                if score > 0.0
            ]
            hits.sort(key=lambda h: (-h.final_score, -self._published_at[h.doc_id], h.doc_id))
            return hits[:k]

    # Persistence --------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._lock:
            payload = {
                "version": INDEX_VERSION,
                "field_weights": self.field_weights,
                "half_life_days": self.half_life_days,
                "published_at": self._published_at,
                "postings": self._postings,
            }
        (directory / INDEX_FILE).write_text(
            json.dumps(payload, ensure_ascii=False), encoding="utf-8"
        )

    @classmethod
    def load(cls, directory: str | Path) -> "TextIndex":
        payload = json.loads((Path(directory) / INDEX_FILE).read_text(encoding="utf-8"))
        if payload.get("version") != INDEX_VERSION:
            raise FinragError(f"unsupported text index version {payload.get('version')}")
        index = cls(field_weights=payload["field_weights"], half_life_days=payload["half_life_days"])
        index._published_at = {str(k): float(v) for k, v in payload["published_at"].items()}
        index._postings = {
            term: {doc: {f: int(tf) for f, tf in fields.items()} for doc, fields in by_doc.items()}
            for term, by_doc in payload["postings"].items()
        }
        return index


def index_documents(index: TextIndex, docs: Iterable[Document]) -> None:
    for doc in docs:
        index.index_document(doc)
