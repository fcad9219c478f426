"""HTTP service over the analysis engine.

Endpoints mirror the CLI: analysis responses use the same envelope either
way, sessions record turns append-only, and per-request stage events replay
over server-sent events. Every JSON body carries schema_version; Markdown
bodies carry it as an X-Schema-Version header instead.
"""
from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.exceptions import HTTPException, RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..config import Config, DEFAULT_CONFIG
from ..engine import AnalysisEngine, AnalysisRequest, AnalysisResponse
from ..errors import GeneratorUnavailable, UnsupportedFileType
from ..kb import KnowledgeStore, load_seed_store

_STREAM_POLL_S = 0.02
_STREAM_MAX_WAIT_S = 300.0


@dataclass
class SessionRecord:
    """One analyst conversation; turns only ever grow."""
    session_id: str
    created_at: str
    turns: list = field(default_factory=list)

    def append_turn(self, request_meta: dict, response: AnalysisResponse) -> None:
        self.turns.append((request_meta, response))

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "created_at": self.created_at,
            "turns": [
                {"request": meta, "response": resp.to_dict()}
                for meta, resp in self.turns
            ],
        }


def request_meta(request: AnalysisRequest, sample_sha256: str | None) -> dict:
    """Serializable view of a request; raw sample bytes never leave the server."""
    return {
        "query": request.query,
        "sample_sha256": sample_sha256,
        "model_id": request.model_id,
        "want_report": request.want_report,
    }


def response_envelope(response: AnalysisResponse, request_id: str,
                      session_id: str, schema_version: str) -> dict:
    """The one wire shape for analysis results, shared by CLI and HTTP."""
    body = response.to_dict()
    body["request_id"] = request_id
    body["session_id"] = session_id
    body["schema_version"] = schema_version
    return body


def build_engine(config: Config | None = None,
                 state_dir: str | None = None,
                 knowledge: KnowledgeStore | None = None) -> AnalysisEngine:
    cfg = config or DEFAULT_CONFIG
    store = knowledge if knowledge is not None else load_seed_store(state_dir)
    return AnalysisEngine(store, config=cfg)


class _State:
    def __init__(self, engine: AnalysisEngine, cfg: Config):
        self.engine = engine
        self.cfg = cfg
        self.sessions: dict[str, SessionRecord] = {}
        self.reports: dict[str, AnalysisResponse] = {}
        self.events: dict[str, list] = {}
        self.lock = threading.Lock()
        self.workers = threading.BoundedSemaphore(cfg.service.workers)

    def session_for(self, session_id: str | None) -> SessionRecord:
        with self.lock:
            if session_id is not None and session_id in self.sessions:
                return self.sessions[session_id]
            new_id = session_id or uuid.uuid4().hex
            record = SessionRecord(
                session_id=new_id,
                created_at=datetime.now(timezone.utc).isoformat())
            self.sessions[new_id] = record
            return record


class QueryBody(BaseModel):
    query: str = ""
    session_id: str | None = None
    model_id: str | None = None


def _error(status: int, message: str, request_id: str | None = None):
    detail: dict = {"message": message}
    if request_id is not None:
        detail["request_id"] = request_id
    raise HTTPException(status_code=status, detail=detail)


def create_app(config: Config | None = None,
               engine: AnalysisEngine | None = None,
               knowledge: KnowledgeStore | None = None) -> FastAPI:
    cfg = config or DEFAULT_CONFIG
    if engine is None:
        engine = build_engine(cfg, state_dir=None, knowledge=knowledge)
    state = _State(engine, cfg)
    version = cfg.service.schema_version
    app = FastAPI(title="binhound", version="1")
    app.state.facade = state

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={
            "detail": "malformed request", "errors": exc.errors(),
            "schema_version": version})

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        detail = exc.detail if isinstance(exc.detail, dict) \
            else {"message": exc.detail}
        body = {"detail": detail["message"], "schema_version": version}
        if "request_id" in detail:
            body["request_id"] = detail["request_id"]
        return JSONResponse(status_code=exc.status_code, content=body)

    def run_analysis(request: AnalysisRequest, session_id: str | None,
                     sample_sha256: str | None) -> dict:
        request_id = uuid.uuid4().hex
        log: list = []
        state.events[request_id] = log
        try:
            with state.workers:
                response = state.engine.analyze(
                    request, on_stage=lambda s: log.append({"event": s}))
        except UnsupportedFileType as exc:
            log.append({"event": "error", "detail": str(exc)})
            _error(422, f"unsupported file type: {exc}", request_id)
        except GeneratorUnavailable as exc:
            log.append({"event": "error", "detail": str(exc)})
            _error(503, f"generator unavailable: {exc}", request_id)
        except ValueError as exc:
            log.append({"event": "error", "detail": str(exc)})
            _error(400, str(exc), request_id)
        log.append({"event": "done"})
        session = state.session_for(session_id)
        session.append_turn(request_meta(request, sample_sha256), response)
        state.reports[request_id] = response
        return response_envelope(response, request_id, session.session_id,
                                 version)

    @app.post("/api/analyze")
    def analyze(sample: UploadFile | None = File(None),
                query: str = Form(""),
                session_id: str | None = Form(None),
                model_id: str | None = Form(None),
                want_report: bool = Form(True)):
        data = sample.file.read() if sample is not None else None
        if data is None and not query.strip():
            _error(400, "request needs a sample file or a non-empty query")
        if data is not None and len(data) > cfg.engine.sample_size_cap:
            _error(413, f"sample exceeds the "
                        f"{cfg.engine.sample_size_cap}-byte cap")
        sha = None
        if data is not None:
            import hashlib
            sha = hashlib.sha256(data).hexdigest()
        request = AnalysisRequest(
            query=query, sample=data,
            model_id=model_id or cfg.engine.model_id,
            want_report=want_report)
        return run_analysis(request, session_id, sha)

    @app.post("/api/query")
    def query_only(body: QueryBody):
        if not body.query.strip():
            _error(400, "query must be non-empty")
        request = AnalysisRequest(query=body.query,
                                  model_id=body.model_id or cfg.engine.model_id)
        return run_analysis(request, body.session_id, None)

    @app.get("/api/report/{request_id}")
    def report(request_id: str, request: Request):
        response = state.reports.get(request_id)
        if response is None:
            _error(404, f"unknown request id {request_id!r}")
        if response.report is None:
            _error(404, f"request {request_id!r} produced no structured "
                        "report (query-only)")
        accept = request.headers.get("accept", "")
        if "text/markdown" in accept:
            return PlainTextResponse(response.report.to_markdown(),
                                     media_type="text/markdown",
                                     headers={"X-Schema-Version": version})
        return {"request_id": request_id,
                "report": response.report.to_dict(),
                "schema_version": version}

    @app.get("/api/session/{session_id}")
    def session(session_id: str):
        record = state.sessions.get(session_id)
        if record is None:
            _error(404, f"unknown session id {session_id!r}")
        body = record.to_dict()
        body["schema_version"] = version
        return body

    @app.get("/api/health")
    def health():
        counts = state.engine.knowledge.counts()
        stores = {
            "knowledge_store": sum(counts.values()) > 0,
            "retrieval_index": state.engine.retriever.built,
        }
        body = {"stores": stores, "collections": counts,
                "schema_version": version}
        missing = sorted(name for name, ok in stores.items() if not ok)
        if missing:
            body["status"] = "unavailable"
            body["missing"] = missing
            return JSONResponse(status_code=503, content=body)
        body["status"] = "ok"
        return body

    @app.get("/api/stream/{request_id}")
    def stream(request_id: str):
        if request_id not in state.events:
            _error(404, f"unknown request id {request_id!r}")

        def sse():
            log = state.events[request_id]
            index = 0
            deadline = time.monotonic() + _STREAM_MAX_WAIT_S
            while True:
                while index < len(log):
                    entry = log[index]
                    payload = dict(entry, seq=index, schema_version=version)
                    yield (f"event: {entry['event']}\n"
                           f"data: {json.dumps(payload, sort_keys=True)}\n\n")
                    if entry["event"] in ("done", "error"):
                        return
                    index += 1
                if time.monotonic() > deadline:
                    payload = {"event": "error", "detail": "stream timeout",
                               "seq": index, "schema_version": version}
                    yield ("event: error\n"
                           f"data: {json.dumps(payload, sort_keys=True)}\n\n")
                    return
                time.sleep(_STREAM_POLL_S)

        return StreamingResponse(sse(), media_type="text/event-stream")

    # Console assets, when a build exists. API routes are registered first,
    # so /api/* always wins over files.
    if cfg.service.static_dir:
        app.mount("/", StaticFiles(directory=cfg.service.static_dir,
                                   html=True), name="console")

    return app


def serve(config: Config | None = None,
          engine: AnalysisEngine | None = None) -> None:
    """Blocking entry point: run the service under uvicorn."""
    import uvicorn

    cfg = config or DEFAULT_CONFIG
    app = create_app(cfg, engine=engine)
    uvicorn.run(app, host=cfg.service.host, port=cfg.service.port)
