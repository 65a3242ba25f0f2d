"""HTTP service over the QA pipeline: sessions, chat, traces, ingest, search.

State (sessions, turns, traces, documents) persists in the document store's
sqlite database, so a restarted service picks up exactly where it left off.
Chat responses stream as newline-delimited JSON events ending with a final
event that carries the citations and the trace id.  Auth is a single
optional bearer token.
"""

from __future__ import annotations

import json
import secrets
import time
from dataclasses import dataclass
from typing import Iterator

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .agents import Citation, DialogueTurn, QaPipeline
from .docstore import Document, DuplicateDocId, UnknownParagraph
from .textindex import TextHit

CHUNK_CHARS = 48


class ChatRequest(BaseModel):
    query: str


@dataclass
class ServiceState:
    pipeline: QaPipeline
    token: str | None = None

    @property
    def store(self):
        return self.pipeline.store


def _new_session_id() -> str:
    return secrets.token_urlsafe(24)  # 192 bits


def _history(state: ServiceState, session_id: str) -> list[DialogueTurn]:
    return [
        DialogueTurn(
            role=row["role"],
            text=row["text"],
            citations=tuple(Citation(**c) for c in row["citations"]),
            timestamp=row["timestamp"],
            trace_id=row["trace_id"],
        )
        for row in state.store.turns(session_id)
    ]


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="finrag QA service")

    @app.middleware("http")
    async def check_token(request: Request, call_next):
        if state.token and request.url.path != "/healthz":
            supplied = request.headers.get("authorization", "")
            if supplied != f"Bearer {state.token}":
                return JSONResponse({"detail": "unauthorized"}, status_code=401)
        return await call_next(request)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "documents": state.store.count_documents()}

    @app.post("/v1/sessions", status_code=201)
    async def create_session(request: Request) -> dict:
        body = await request.body()
        if body:
            try:
                json.loads(body)
            except json.JSONDecodeError:
                raise HTTPException(status_code=400, detail="malformed JSON body") from None
        session_id = _new_session_id()
        state.store.create_session(session_id)
        return {"session_id": session_id}

    @app.post("/v1/sessions/{session_id}/chat")
    def chat(session_id: str, request: ChatRequest) -> StreamingResponse:
        if not state.store.has_session(session_id):
            raise HTTPException(status_code=404, detail="unknown session")
        if not request.query.strip():
            raise HTTPException(status_code=422, detail="query must be non-empty")

        history = _history(state, session_id)
        try:
            turn, trace = state.pipeline.answer(history, request.query)
        except Exception as exc:  # noqa: BLE001 - wrapped as 502 with a failure turn
            state.store.add_turn(session_id, "user", request.query)
            state.store.add_turn(session_id, "assistant", f"pipeline failure: {exc}")
            raise HTTPException(status_code=502, detail=f"pipeline failure: {exc}") from exc

        state.store.add_turn(session_id, "user", request.query, timestamp=time.time())
        state.store.save_trace(trace["trace_id"], trace)
        state.store.add_turn(
            session_id,
            "assistant",
            turn.text,
            citations=[c.to_dict() for c in turn.citations],
            trace_id=turn.trace_id,
            timestamp=turn.timestamp,
        )

        def events() -> Iterator[bytes]:
            text = turn.text
            for i in range(0, len(text), CHUNK_CHARS):
                yield (json.dumps({"type": "chunk", "text": text[i : i + CHUNK_CHARS]}, ensure_ascii=False) + "\n").encode("utf-8")
            final = {
                "type": "final",
                "citations": [c.to_dict() for c in turn.citations],
                "trace_id": turn.trace_id,
            }
            yield (json.dumps(final, ensure_ascii=False) + "\n").encode("utf-8")

        return StreamingResponse(events(), media_type="application/x-ndjson")

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        if not state.store.has_session(session_id):
            raise HTTPException(status_code=404, detail="unknown session")
        return {"session_id": session_id, "turns": state.store.turns(session_id)}

    @app.get("/v1/traces/{trace_id}")
    def get_trace(trace_id: str) -> dict:
        trace = state.store.get_trace(trace_id)
        if trace is None:
            raise HTTPException(status_code=404, detail="unknown trace")
        return trace

    @app.get("/v1/paragraphs/{ref}")
    def get_paragraph(ref: str) -> dict:
        try:
            paragraph = state.store.get_paragraph(ref)
        except UnknownParagraph:
            raise HTTPException(status_code=404, detail="unknown paragraph") from None
        doc = state.store.get_document(paragraph.doc_id)
        return {
            "ref": paragraph.ref,
            "doc_id": paragraph.doc_id,
            "ordinal": paragraph.ordinal,
            "text": paragraph.text,
            "document_title": doc.title if doc else "",
            "source_type": doc.source_type if doc else "",
        }

    @app.post("/v1/ingest")
    async def ingest(request: Request) -> dict:
        raw = (await request.body()).decode("utf-8")
        fetched = new = skipped = 0
        for line in raw.splitlines():
            if not line.strip():
                continue
            fetched += 1
            try:
                doc = Document.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise HTTPException(status_code=422, detail=f"bad document line: {exc}") from exc
            if state.store.has_document(doc.id):
                skipped += 1
                continue
            try:
                state.pipeline.ingest_document(doc)
                new += 1
            except DuplicateDocId:
                skipped += 1
        return {"fetched": fetched, "new": new, "skipped": skipped}

    @app.get("/v1/search")
    def search(q: str, mode: str = "text", k: int = 10) -> dict:
        if mode == "text":
            hits: list[TextHit] = state.pipeline.text_index.search(q, k=k, now=time.time())
            return {
                "mode": "text",
                "hits": [
                    {
                        "doc_id": h.doc_id,
                        "match_score": h.match_score,
                        "recency_factor": h.recency_factor,
                        "final_score": h.final_score,
                    }
                    for h in hits
                ],
            }
        if mode == "vector":
            state.pipeline.refresh_embeddings()
            refs = sorted(state.pipeline._vectors)
            if not refs:
                return {"mode": "vector", "hits": []}
            from .vectors import VectorIndex

            index = VectorIndex.build((ref, state.pipeline._vectors[ref]) for ref in refs)
            query_vec = state.pipeline.gateway.embed(state.pipeline.embed_model, [q])[0]
            hits = index.top_k(query_vec, k=min(k, len(index)))
            return {
                "mode": "vector",
                "hits": [{"paragraph_ref": h.ref_id, "score": h.score} for h in hits],
            }
        raise HTTPException(status_code=422, detail="mode must be text or vector")

    return app
