"""Persistent document storage, paragraph splitting, and source fetchers.

Documents live in an embedded sqlite database together with their line-break
paragraphs, queued for embedding.  The same database also persists chat
sessions, turns, and retrieval traces so a service restart loses nothing.
Collection is driven by :class:`Fetcher` descriptors bound to source
adapters: a JSONL file-drop directory, an HTTP listing endpoint, or an
in-process fixture for tests.
"""

from __future__ import annotations

import json
import re
import sqlite3
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

from .errors import FinragError

SOURCE_TYPES = ("report", "news", "market", "macro", "custom")
FETCHER_PERIODIC = "periodic"
FETCHER_REALTIME = "realtime"

_PARAGRAPH_SPLIT = re.compile(r"\n+")


class DuplicateDocId(FinragError):
    pass


class EmptyBodyAndSummary(FinragError):
    pass


class SourceUnavailable(FinragError):
    pass


class QueryRejected(FinragError):
    pass


class UnknownParagraph(FinragError):
    pass


def _parse_timestamp(value) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    return datetime.fromisoformat(str(value).replace("Z", "+00:00")).timestamp()


def format_timestamp(epoch: float) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True, slots=True)
class Document:
    """A collected financial text with metadata."""

    id: str
    source_type: str
    title: str
    summary: str = ""
    body: str = ""
    company_names: tuple[str, ...] = ()
    published_at: float = 0.0
    url: str | None = None
    pdf_link: str | None = None
    extra: dict | None = None

    def __post_init__(self) -> None:
        if self.source_type not in SOURCE_TYPES:
            raise ValueError(f"document {self.id}: unknown source_type {self.source_type!r}")
        if self.source_type == "report" and not (self.title and self.summary):
            raise ValueError(f"report document {self.id} must carry title and summary")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source_type": self.source_type,
            "title": self.title,
            "summary": self.summary,
            "body": self.body,
            "company_names": list(self.company_names),
            "published_at": format_timestamp(self.published_at),
            "url": self.url,
            "pdf_link": self.pdf_link,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Document":
        return cls(
            id=str(raw["id"]),
            source_type=raw.get("source_type", "news"),
            title=raw.get("title", ""),
            summary=raw.get("summary", ""),
            body=raw.get("body", ""),
            company_names=tuple(raw.get("company_names", ())),
            published_at=_parse_timestamp(raw.get("published_at", 0.0)),
            url=raw.get("url"),
            pdf_link=raw.get("pdf_link"),
            extra=raw.get("extra"),
        )


@dataclass(frozen=True, slots=True)
class Paragraph:
    doc_id: str
    ordinal: int
    text: str
    embedding_ref: str | None = None

    @property
    def ref(self) -> str:
        return paragraph_ref(self.doc_id, self.ordinal)


def paragraph_ref(doc_id: str, ordinal: int) -> str:
    return f"{doc_id}:{ordinal}"


def parse_paragraph_ref(ref: str) -> tuple[str, int]:
    doc_id, _, ordinal = ref.rpartition(":")
    if not doc_id or not ordinal.isdigit():
        raise UnknownParagraph(f"malformed paragraph ref {ref!r}")
    return doc_id, int(ordinal)


def split_paragraphs(doc: Document) -> list[str]:
    """Split the body on line-break runs, dropping blank fragments; an empty
    body falls back to the summary as a single paragraph."""
    fragments = [frag.strip() for frag in _PARAGRAPH_SPLIT.split(doc.body)]
    texts = [frag for frag in fragments if frag]
    if not texts and doc.summary.strip():
        texts = [doc.summary.strip()]
    return texts


@dataclass(slots=True)
class IngestReport:
    fetched: int = 0
    new: int = 0
    skipped: int = 0

    def to_dict(self) -> dict:
        return {"fetched": self.fetched, "new": self.new, "skipped": self.skipped}


_SCHEMA = """
CREATE TABLE IF NOT EXISTS documents (
    id TEXT PRIMARY KEY,
    source_type TEXT NOT NULL,
    title TEXT NOT NULL,
    summary TEXT NOT NULL,
    body TEXT NOT NULL,
    company_names TEXT NOT NULL,
    published_at REAL NOT NULL,
    url TEXT,
    pdf_link TEXT,
    extra TEXT,
    ingested_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS paragraphs (
    doc_id TEXT NOT NULL REFERENCES documents(id),
    ordinal INTEGER NOT NULL,
    text TEXT NOT NULL,
    embedding_ref TEXT,
    PRIMARY KEY (doc_id, ordinal)
);
CREATE TABLE IF NOT EXISTS sessions (
    id TEXT PRIMARY KEY,
    created_at REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS turns (
    session_id TEXT NOT NULL REFERENCES sessions(id),
    seq INTEGER NOT NULL,
    role TEXT NOT NULL,
    text TEXT NOT NULL,
    citations TEXT,
    trace_id TEXT,
    timestamp REAL NOT NULL,
    PRIMARY KEY (session_id, seq)
);
CREATE TABLE IF NOT EXISTS traces (
    trace_id TEXT PRIMARY KEY,
    payload TEXT NOT NULL,
    created_at REAL NOT NULL
);
"""


class DocStore:
    """Sqlite-backed store; concurrent readers, serialized writers."""

    def __init__(self, path: str | Path = ":memory:"):
        self.path = str(path)
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        if self.path != ":memory:":
            self._conn.execute("PRAGMA journal_mode=WAL")
        self._lock = threading.RLock()
        with self._lock:
            self._conn.executescript(_SCHEMA)
            self._conn.commit()

    def close(self) -> None:
        self._conn.close()

    # Documents ------------------------------------------------------------

    def ingest(self, doc: Document, now: float | None = None) -> list[Paragraph]:
        """Persist a document and its paragraphs atomically."""
        now = time.time() if now is None else now
        if doc.published_at > now:
            raise ValueError(f"document {doc.id}: published_at is in the future")
        texts = split_paragraphs(doc)
        if not texts:
            raise EmptyBodyAndSummary(doc.id)
        paragraphs = [Paragraph(doc_id=doc.id, ordinal=i, text=t) for i, t in enumerate(texts)]
        with self._lock:
            try:
                with self._conn:
                    self._conn.execute(
                        "INSERT INTO documents VALUES (?,?,?,?,?,?,?,?,?,?,?)",
                        (
                            doc.id,
                            doc.source_type,
                            doc.title,
                            doc.summary,
                            doc.body,
                            json.dumps(list(doc.company_names), ensure_ascii=False),
                            doc.published_at,
                            doc.url,
                            doc.pdf_link,
                            json.dumps(doc.extra, ensure_ascii=False) if doc.extra else None,
                            now,
                        ),
                    )
                    self._conn.executemany(
                        "INSERT INTO paragraphs (doc_id, ordinal, text) VALUES (?,?,?)",
                        [(p.doc_id, p.ordinal, p.text) for p in paragraphs],
                    )
            except sqlite3.IntegrityError as exc:
                raise DuplicateDocId(doc.id) from exc
        return paragraphs

    def has_document(self, doc_id: str) -> bool:
        cur = self._conn.execute("SELECT 1 FROM documents WHERE id = ?", (doc_id,))
        return cur.fetchone() is not None

    def get_document(self, doc_id: str) -> Document | None:
        cur = self._conn.execute(
            "SELECT id, source_type, title, summary, body, company_names, published_at, url, pdf_link, extra"
            " FROM documents WHERE id = ?",
            (doc_id,),
        )
        row = cur.fetchone()
        if row is None:
            return None
        return Document(
            id=row[0],
            source_type=row[1],
            title=row[2],
            summary=row[3],
            body=row[4],
            company_names=tuple(json.loads(row[5])),
            published_at=row[6],
            url=row[7],
            pdf_link=row[8],
            extra=json.loads(row[9]) if row[9] else None,
        )

    def documents(self) -> list[Document]:
        cur = self._conn.execute("SELECT id FROM documents ORDER BY id")
        return [self.get_document(row[0]) for row in cur.fetchall()]

    def count_documents(self) -> int:
        return self._conn.execute("SELECT COUNT(*) FROM documents").fetchone()[0]

    # Paragraphs -----------------------------------------------------------

    def paragraphs(self, doc_id: str) -> list[Paragraph]:
        cur = self._conn.execute(
            "SELECT doc_id, ordinal, text, embedding_ref FROM paragraphs WHERE doc_id = ? ORDER BY ordinal",
            (doc_id,),
        )
        return [Paragraph(*row) for row in cur.fetchall()]

    def get_paragraph(self, ref: str) -> Paragraph:
        doc_id, ordinal = parse_paragraph_ref(ref)
        cur = self._conn.execute(
            "SELECT doc_id, ordinal, text, embedding_ref FROM paragraphs WHERE doc_id = ? AND ordinal = ?",
            (doc_id, ordinal),
        )
        row = cur.fetchone()
        if row is None:
            raise UnknownParagraph(ref)
        return Paragraph(*row)

    def pending_embedding(self) -> list[Paragraph]:
        cur = self._conn.execute(
            "SELECT doc_id, ordinal, text, embedding_ref FROM paragraphs"
            " WHERE embedding_ref IS NULL ORDER BY doc_id, ordinal"
        )
        return [Paragraph(*row) for row in cur.fetchall()]

    def set_embedding_ref(self, doc_id: str, ordinal: int, ref: str) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "UPDATE paragraphs SET embedding_ref = ? WHERE doc_id = ? AND ordinal = ?",
                (ref, doc_id, ordinal),
            )

    # Sessions / turns / traces ---------------------------------------------

    def create_session(self, session_id: str, created_at: float | None = None) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO sessions VALUES (?, ?)", (session_id, created_at or time.time())
            )

    def has_session(self, session_id: str) -> bool:
        cur = self._conn.execute("SELECT 1 FROM sessions WHERE id = ?", (session_id,))
        return cur.fetchone() is not None

    def add_turn(
        self,
        session_id: str,
        role: str,
        text: str,
        citations: Sequence[Mapping] = (),
        trace_id: str | None = None,
        timestamp: float | None = None,
    ) -> int:
        with self._lock, self._conn:
            cur = self._conn.execute(
                "SELECT COALESCE(MAX(seq), -1) + 1 FROM turns WHERE session_id = ?", (session_id,)
            )
            seq = cur.fetchone()[0]
            self._conn.execute(
                "INSERT INTO turns VALUES (?,?,?,?,?,?,?)",
                (
                    session_id,
                    seq,
                    role,
                    text,
                    json.dumps(list(citations), ensure_ascii=False),
                    trace_id,
                    timestamp or time.time(),
                ),
            )
        return seq

    def turns(self, session_id: str) -> list[dict]:
        cur = self._conn.execute(
            "SELECT seq, role, text, citations, trace_id, timestamp FROM turns"
            " WHERE session_id = ? ORDER BY seq",
            (session_id,),
        )
        return [
            {
                "seq": row[0],
                "role": row[1],
                "text": row[2],
                "citations": json.loads(row[3]) if row[3] else [],
                "trace_id": row[4],
                "timestamp": row[5],
            }
            for row in cur.fetchall()
        ]

    def save_trace(self, trace_id: str, payload: Mapping) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO traces VALUES (?,?,?)",
                (trace_id, json.dumps(payload, ensure_ascii=False), time.time()),
            )

    def get_trace(self, trace_id: str) -> dict | None:
        cur = self._conn.execute("SELECT payload FROM traces WHERE trace_id = ?", (trace_id,))
        row = cur.fetchone()
        return json.loads(row[0]) if row else None


# Fetchers -------------------------------------------------------------------


class SourceAdapter(Protocol):
    def list_documents(self) -> list[Document]: ...

    def search(self, query: str, limit: int) -> list[Document]: ...


@dataclass(frozen=True)
class Fetcher:
    """Descriptor binding a named source to an adapter.

    Periodic fetchers pull a full listing on a schedule; realtime fetchers
    answer ad-hoc query strings.
    """

    name: str
    kind: str
    source_type: str
    adapter: SourceAdapter
    schedule_s: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in (FETCHER_PERIODIC, FETCHER_REALTIME):
            raise ValueError(f"fetcher {self.name}: unknown kind {self.kind!r}")
        if self.kind == FETCHER_PERIODIC and not self.schedule_s:
            raise ValueError(f"periodic fetcher {self.name} needs a schedule")


class DirectoryAdapter:
    """File-drop source: every ``*.jsonl`` file under a directory."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def list_documents(self) -> list[Document]:
        if not self.directory.is_dir():
            raise SourceUnavailable(f"directory {self.directory} does not exist")
        docs: list[Document] = []
        for path in sorted(self.directory.glob("*.jsonl")):
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    docs.append(Document.from_dict(json.loads(line)))
        return docs

    def search(self, query: str, limit: int) -> list[Document]:
        return [d for d in self.list_documents() if query in d.title or query in d.summary][:limit]


class HttpAdapter:
    """HTTP listing/search source returning a JSON array of documents."""

    def __init__(self, endpoint: str, transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        self._client = httpx.Client(transport=transport, timeout=10.0)

    def _get(self, params: dict | None = None) -> list[Document]:
        try:
            response = self._client.get(self.endpoint, params=params)
        except httpx.HTTPError as exc:
            raise SourceUnavailable(str(exc)) from exc
        if response.status_code >= 400:
            raise SourceUnavailable(f"{self.endpoint} returned {response.status_code}")
        return [Document.from_dict(raw) for raw in response.json()]

    def list_documents(self) -> list[Document]:
        return self._get()

    def search(self, query: str, limit: int) -> list[Document]:
        return self._get({"q": query, "limit": limit})[:limit]


class FixtureAdapter:
    """In-process adapter: fixed listing plus a keyed query table."""

    def __init__(self, listing: Sequence[Document] = (), by_query: Mapping[str, Sequence[Document]] | None = None):
        self.listing = list(listing)
        self.by_query = {k: list(v) for k, v in (by_query or {}).items()}

    def list_documents(self) -> list[Document]:
        return list(self.listing)

    def search(self, query: str, limit: int) -> list[Document]:
        for key, docs in self.by_query.items():
            if key in query:
                return list(docs)[:limit]
        return []


def run_periodic(fetcher: Fetcher, store: DocStore) -> IngestReport:
    """Pull the source listing and ingest unseen documents."""
    if fetcher.kind != FETCHER_PERIODIC:
        raise ValueError(f"fetcher {fetcher.name} is not periodic")
    docs = fetcher.adapter.list_documents()
    report = IngestReport(fetched=len(docs))
    for doc in docs:
        if store.has_document(doc.id):
            report.skipped += 1
        else:
            store.ingest(doc)
            report.new += 1
    return report


def run_realtime(fetcher: Fetcher, store: DocStore, query: str, limit: int) -> list[Document]:
    """Query the live source, ingest unseen results, and return them in
    relevance order."""
    if fetcher.kind != FETCHER_REALTIME:
        raise ValueError(f"fetcher {fetcher.name} is not realtime")
    if limit < 1:
        raise QueryRejected(f"limit must be >= 1, got {limit}")
    if not query.strip():
        raise QueryRejected("query must be non-empty")
    docs = fetcher.adapter.search(query, limit)[:limit]
    for doc in docs:
        if not store.has_document(doc.id):
            store.ingest(doc)
    return docs


def read_documents_jsonl(path: str | Path) -> list[Document]:
    docs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            docs.append(Document.from_dict(json.loads(line)))
    return docs


def write_documents_jsonl(path: str | Path, docs: Iterable[Document]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_dict(), ensure_ascii=False) + "\n")


def market_document(
    doc_id: str,
    stock_name: str,
    candles: Sequence[Mapping],
    published_at: float,
) -> Document:
    """Render daily open/close/high/low rows into a textual market document,
    keeping the structured rows as an attachment."""
    lines = [f"{stock_name} 近期行情："]
    for candle in candles:
        lines.append(
            "{date}：开盘 {open}，收盘 {close}，最高 {high}，最低 {low}".format(**candle)
        )
    return Document(
        id=doc_id,
        source_type="market",
        title=f"{stock_name} 行情数据",
        summary=lines[0],
        body="\n".join(lines),
        company_names=(stock_name,),
        published_at=published_at,
        extra={"candles": [dict(c) for c in candles]},
    )
