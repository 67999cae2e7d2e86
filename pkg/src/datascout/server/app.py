"""JSON API over a built index and generated reports.

All endpoints are pure reads over an immutable index, so identical requests
give identical responses and concurrent access needs no coordination.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from ..harvester import load_manifest
from ..layout import build_graph, fr_layout, layout_to_json
from ..modelgw import ModelGateway
from ..ragindex import VectorIndex, embed_chunked, load_index

logger = logging.getLogger(__name__)

SNIPPET_CHARS = 200
GRAPH_NODE_CAP = 200
GRAPH_SEED = 0


@dataclass
class ServerState:
    gateway: ModelGateway
    index: Optional[VectorIndex] = None
    reports_dir: Optional[Path] = None
    titles: dict[str, str] = field(default_factory=dict)
    snippets: dict[str, str] = field(default_factory=dict)


def load_state(
    index_path: Optional[str | Path],
    reports_dir: Optional[str | Path] = None,
    manifest_path: Optional[str | Path] = None,
    gateway: Optional[ModelGateway] = None,
) -> ServerState:
    """Assemble server state; a missing index leaves the service degraded (503s)."""
    state = ServerState(gateway=gateway or ModelGateway.with_stubs())
    if index_path and Path(index_path).exists():
        state.index = load_index(index_path)
    if reports_dir and Path(reports_dir).exists():
        state.reports_dir = Path(reports_dir)
        for record_json in sorted(state.reports_dir.glob("*/record.json")):
            try:
                data = json.loads(record_json.read_text(encoding="utf-8"))
                state.snippets[data["record_id"]] = data.get("unified_summary", "")[:SNIPPET_CHARS]
            except (ValueError, KeyError) as exc:
                logger.warning("skipping unreadable report %s: %s", record_json, exc)
    if manifest_path and Path(manifest_path).exists():
        for record in load_manifest(manifest_path):
            state.titles[record.record_id] = record.title
    return state


class QueryRequest(BaseModel):
    q: str
    k: int = 10


def _require_index(state: ServerState) -> VectorIndex:
    if state.index is None:
        raise HTTPException(status_code=503, detail="index not loaded; build one with 'datascout index'")
    return state.index


def _query_graph(state: ServerState, q: str, k: int) -> dict:
    index = _require_index(state)
    query_vector = embed_chunked(q, state.gateway)
    ranked = index.query(q, min(GRAPH_NODE_CAP, len(index.entries)), state.gateway, level="record")
    keep = {rid for rid, _ in ranked}
    sub = VectorIndex(
        entries=[e for e in index.entries if e.level == "record" and e.entry_id in keep],
        dims=index.dims,
        metadata=index.metadata,
    )
    graph = build_graph(sub, query_vector=query_vector, query_top_k=k)
    positions = fr_layout(graph, seed=GRAPH_SEED)
    return layout_to_json(graph, positions)


def create_app(state: ServerState) -> FastAPI:
    app = FastAPI(title="datascout", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/health")
    def health() -> dict:
        index = _require_index(state)
        return {"status": "ok", "entries": len(index.entries)}

    @app.get("/records")
    def records() -> list[dict]:
        index = _require_index(state)
        return [
            {
                "record_id": e.entry_id,
                "title": state.titles.get(e.entry_id, e.entry_id),
            }
            for e in index.entries
            if e.level == "record"
        ]

    @app.get("/records/{record_id}/report")
    def record_report(record_id: str) -> dict:
        if state.reports_dir is None:
            raise HTTPException(status_code=503, detail="reports directory not configured")
        record_dir = state.reports_dir / record_id
        record_json = record_dir / "record.json"
        if not record_json.exists():
            raise HTTPException(status_code=404, detail=f"no report for record {record_id}")
        record = json.loads(record_json.read_text(encoding="utf-8"))
        files = []
        for path in sorted(record_dir.glob("*.json")):
            if path.name == "record.json":
                continue
            files.append(json.loads(path.read_text(encoding="utf-8")))
        return {"record": record, "files": files, "title": state.titles.get(record_id, record_id)}

    @app.post("/query")
    def query(payload: QueryRequest) -> dict:
        if not payload.q.strip():
            raise HTTPException(status_code=422, detail="query must be non-empty")
        if payload.k < 1:
            raise HTTPException(status_code=422, detail="k must be >= 1")
        index = _require_index(state)
        ranked = index.query(payload.q, payload.k, state.gateway, level="record")
        return {
            "query": payload.q,
            "results": [
                {
                    "record_id": rid,
                    "score": score,
                    "title": state.titles.get(rid, rid),
                    "snippet": state.snippets.get(rid, ""),
                }
                for rid, score in ranked
            ],
            "graph": _query_graph(state, payload.q, payload.k),
        }

    @app.get("/graph")
    def graph(q: str, k: int = 10) -> dict:
        if not q.strip():
            raise HTTPException(status_code=422, detail="query must be non-empty")
        return _query_graph(state, q, k)

    return app
