"""HTTP API exposing corpora, synth/eval runs, and retrieval sessions.

Runs execute asynchronously on a worker pool and persist to append-only
JSONL logs; the in-memory indexes rebuild from those logs at startup, so a
restarted service sees every previously persisted run and session. Session
mutation responses are NDJSON event lines, byte-identical to the lines the
log endpoint serves, which lets clients mirror the log without re-serializing.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import Depends, FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import evalkit, synthgen
from .backend import make_backend, make_embedder
from .corpus import CorpusIndex, parse_manifest
from .fixture import build_fixture_index
from .session import (
    EmptyScopeError,
    InvalidSelectionError,
    Session,
    SessionClosedError,
    SessionConfig,
    SessionError,
    Query,
)

logger = logging.getLogger(__name__)

NDJSON = "application/x-ndjson"


class ApiError(Exception):
    """Error carried to the client as {code, message, detail}."""

    def __init__(self, status: int, code: str, message: str, detail: object = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


@dataclass
class ServiceConfig:
    data_dir: Path
    manifest: Path | None = None
    use_fixture: bool = False
    fixture_identities: int = 50
    fixture_seed: int = 7
    token: str | None = None
    console_dir: Path | None = None
    default_backend: dict = field(default_factory=lambda: {"kind": "perfect"})
    run_workers: int = 2


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


class RunStore:
    """Append-only run log plus an in-memory latest-state index."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self._runs: dict[str, dict] = {}
        if path.exists():
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        record = json.loads(line)
                        self._runs[record["run_id"]] = record

    def put(self, record: dict) -> None:
        with self._lock:
            self._runs[record["run_id"]] = record
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")

    def get(self, run_id: str) -> dict | None:
        return self._runs.get(run_id)

    def list(self, kind: str | None = None) -> list[dict]:
        records = sorted(self._runs.values(), key=lambda r: r.get("created_at", 0))
        if kind:
            records = [r for r in records if r.get("kind") == kind]
        return records


class SessionStore:
    """Live sessions plus their persisted event logs."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self._logs: dict[str, list[str]] = {}
        if path.exists():
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        envelope = json.loads(line)
                        self._logs.setdefault(envelope["session_id"], []).append(envelope["line"])

    def register(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.session_id] = session
            self._logs[session.session_id] = []

    def live(self, session_id: str) -> Session | None:
        return self._sessions.get(session_id)

    def log_lines(self, session_id: str) -> list[str] | None:
        return self._logs.get(session_id)

    def persist_new_events(self, session: Session) -> list[str]:
        """Persist any event lines not yet stored; returns the new lines."""
        with self._lock:
            seen = self._logs.setdefault(session.session_id, [])
            fresh = session.event_lines()[len(seen) :]
            if fresh:
                with open(self.path, "a", encoding="utf-8") as fh:
                    for line in fresh:
                        fh.write(json.dumps({"session_id": session.session_id, "line": line}) + "\n")
                seen.extend(fresh)
            return fresh


# ---------------------------------------------------------------------------
# App state and helpers
# ---------------------------------------------------------------------------


class AppState:
    def __init__(self, config: ServiceConfig):
        self.config = config
        config.data_dir.mkdir(parents=True, exist_ok=True)
        if config.use_fixture or config.manifest is None:
            self.index: CorpusIndex = build_fixture_index(config.fixture_identities, seed=config.fixture_seed)
        else:
            self.index = parse_manifest(config.manifest)
        self.runs = RunStore(config.data_dir / "runs.jsonl")
        self.sessions = SessionStore(config.data_dir / "sessions.jsonl")
        self.executor = ThreadPoolExecutor(max_workers=config.run_workers)
        self.session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def session_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self.session_locks.setdefault(session_id, threading.Lock())


def _now() -> float:
    return time.time()


def _fixture_png(image_id: str) -> bytes:
    """Deterministic synthetic thumbnail for synthetic:// image URIs."""
    from PIL import Image, ImageDraw

    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    base = tuple(digest[:3])
    stripe = tuple(digest[3:6])
    img = Image.new("RGB", (64, 128), base)
    draw = ImageDraw.Draw(img)
    draw.rectangle([16, 40, 48, 100], fill=stripe)
    draw.ellipse([22, 10, 42, 30], fill=stripe)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Request models
# ---------------------------------------------------------------------------


class SynthRunRequest(BaseModel):
    stage: int = Field(ge=1, le=3)
    plan: dict | None = None  # {"fractions": {...}, "total": int}
    bounds: dict | None = None  # {"a": int, "b": int}
    seed: int = 0
    total: int = 1000


class EvalRunRequest(BaseModel):
    setting: str = "standard"
    strategy: str = "pairwise"
    tau: float = 0.5
    floor: int = 32
    batch_size: int = 8
    queries_per_identity: int = 1
    backend: dict = Field(default_factory=lambda: {"kind": "perfect"})
    embedder: dict | None = None


class SessionCreateRequest(BaseModel):
    scope: dict
    backend: dict | None = None
    k: int = 10
    strategy: str = "pairwise"


class SessionQueryRequest(BaseModel):
    image: str | None = None
    text: str | None = None
    attributes: dict | None = None
    k: int | None = None


class SessionSelectRequest(BaseModel):
    image_id: str
    extra_text: str | None = None


# ---------------------------------------------------------------------------
# Run execution
# ---------------------------------------------------------------------------


def _execute_synth_run(state: AppState, record: dict, request: SynthRunRequest) -> None:
    run_dir = state.config.data_dir / "runs" / record["run_id"]
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        if request.plan:
            plan = synthgen.MixPlan.create(dict(request.plan["fractions"]), int(request.plan.get("total", request.total)))
        else:
            plan = synthgen.default_plan(request.stage, request.total)
        bounds = synthgen.SamplingBounds(**(request.bounds or {}))
        dataset_path = run_dir / "dataset.jsonl"
        manifest = synthgen.write_dataset(plan, state.index, bounds, request.seed, dataset_path)
        record = {
            **record,
            "status": "done",
            "finished_at": _now(),
            "artifacts": {
                "dataset": str(dataset_path),
                "manifest": str(dataset_path) + ".manifest.json",
            },
            "result": manifest,
        }
    except Exception as exc:  # failure recorded, not raised: runs are async
        logger.exception("synth run %s failed", record["run_id"])
        record = {**record, "status": "failed", "finished_at": _now(), "error": str(exc)}
    state.runs.put(record)


def _execute_eval_run(state: AppState, record: dict, request: EvalRunRequest) -> None:
    run_dir = state.config.data_dir / "runs" / record["run_id"]
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        split = evalkit.build_split(state.index, request.setting, queries_per_identity=request.queries_per_identity)
        backend_descriptor = dict(request.backend)
        if backend_descriptor.get("kind") == "remote":
            backend_descriptor.setdefault("ledger_path", str(run_dir / "ledger.jsonl"))
        backend = make_backend(backend_descriptor, state.index)
        embedder = make_embedder(request.embedder or {"kind": "identity"}, state.index)
        report = evalkit.run_eval(
            state.index,
            split,
            backend,
            embedder,
            prefilter_config=evalkit.PrefilterConfig(tau=request.tau, floor=request.floor),
            ranking_config=evalkit.RankingConfig(strategy=request.strategy, batch_size=request.batch_size),
        )
        report_path = run_dir / "report.json"
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        summary_path = run_dir / "report.txt"
        summary_path.write_text(report.summary_table() + "\n", encoding="utf-8")
        record = {
            **record,
            "status": "done",
            "finished_at": _now(),
            "artifacts": {"report": str(report_path), "summary": str(summary_path)},
            "result": report.to_dict(),
        }
    except Exception as exc:
        logger.exception("eval run %s failed", record["run_id"])
        record = {**record, "status": "failed", "finished_at": _now(), "error": str(exc)}
    state.runs.put(record)


# ---------------------------------------------------------------------------
# Application factory
# ---------------------------------------------------------------------------


def create_app(config: ServiceConfig) -> FastAPI:
    state = AppState(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        # Drain in-flight runs before shutdown.
        state.executor.shutdown(wait=True)

    app = FastAPI(title="reidlab", lifespan=lifespan)
    app.state.reidlab = state

    async def require_auth(request: Request):
        if config.token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {config.token}":
            raise ApiError(401, "unauthorized", "missing or invalid bearer token")

    auth = Depends(require_auth)

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    def _get_session(session_id: str) -> Session:
        session = state.sessions.live(session_id)
        if session is None:
            raise ApiError(404, "session_not_found", f"no session {session_id!r}", detail={"session_id": session_id})
        return session

    # -- corpus -----------------------------------------------------------

    @app.get("/v1/datasets", dependencies=[auth])
    def list_datasets():
        out = []
        for dataset_id, count in sorted(state.index.stats.per_dataset.items()):
            ids = [i for i in state.index.image_ids() if state.index.records[i].dataset_id == dataset_id]
            identities = {state.index.records[i].identity_id for i in ids}
            out.append(
                {
                    "dataset_id": dataset_id,
                    "images": count,
                    "identities": len(identities),
                    "sample_image_ids": ids[:24],
                }
            )
        return {"datasets": out}

    @app.get("/v1/images/{image_id}", dependencies=[auth])
    def get_image(image_id: str):
        record = state.index.records.get(image_id)
        if record is None:
            raise ApiError(404, "image_not_found", f"no image {image_id!r}", detail={"image_id": image_id})
        if record.uri.startswith("synthetic://"):
            return Response(content=_fixture_png(image_id), media_type="image/png")
        path = Path(record.uri.removeprefix("file://"))
        if not path.exists():
            raise ApiError(404, "image_unavailable", f"stored image for {image_id!r} is missing")
        return FileResponse(path)

    # -- runs ---------------------------------------------------------------

    def _submit_run(kind: str, config_snapshot: dict, executor_fn, request_model) -> dict:
        record = {
            "run_id": uuid.uuid4().hex,
            "kind": kind,
            "status": "running",
            "config": config_snapshot,
            "created_at": _now(),
        }
        state.runs.put(record)
        state.executor.submit(executor_fn, state, record, request_model)
        return record

    @app.post("/v1/synth/runs", dependencies=[auth])
    def create_synth_run(request: SynthRunRequest):
        try:
            if request.plan:
                synthgen.MixPlan.create(dict(request.plan["fractions"]), int(request.plan.get("total", request.total)))
            synthgen.SamplingBounds(**(request.bounds or {}))
        except (synthgen.MixPlanError, ValueError, KeyError, TypeError) as exc:
            raise ApiError(422, "invalid_config", f"invalid synth configuration: {exc}")
        return _submit_run("synth", request.model_dump(), _execute_synth_run, request)

    @app.get("/v1/synth/runs", dependencies=[auth])
    def list_synth_runs():
        return {"runs": state.runs.list("synth")}

    @app.get("/v1/synth/runs/{run_id}", dependencies=[auth])
    def get_synth_run(run_id: str):
        record = state.runs.get(run_id)
        if record is None or record.get("kind") != "synth":
            raise ApiError(404, "run_not_found", f"no synth run {run_id!r}")
        return record

    @app.post("/v1/eval/runs", dependencies=[auth])
    def create_eval_run(request: EvalRunRequest):
        if request.setting not in evalkit.EVAL_SETTINGS:
            raise ApiError(422, "invalid_config", f"unknown setting {request.setting!r}")
        if request.strategy not in evalkit.STRATEGIES:
            raise ApiError(422, "invalid_config", f"unknown strategy {request.strategy!r}")
        return _submit_run("eval", request.model_dump(), _execute_eval_run, request)

    @app.get("/v1/eval/runs", dependencies=[auth])
    def list_eval_runs():
        return {"runs": state.runs.list("eval")}

    @app.get("/v1/eval/runs/{run_id}", dependencies=[auth])
    def get_eval_run(run_id: str):
        record = state.runs.get(run_id)
        if record is None or record.get("kind") != "eval":
            raise ApiError(404, "run_not_found", f"no eval run {run_id!r}")
        return record

    # -- sessions -----------------------------------------------------------

    def _ndjson_response(lines: list[str]) -> Response:
        return Response(content="".join(line + "\n" for line in lines), media_type=NDJSON)

    @app.post("/v1/sessions", dependencies=[auth])
    def create_session(request: SessionCreateRequest):
        backend = make_backend(request.backend or config.default_backend, state.index)
        try:
            session = Session(
                state.index,
                request.scope,
                backend,
                config=SessionConfig(k=request.k, strategy=request.strategy),
            )
        except (EmptyScopeError, SessionError) as exc:
            raise ApiError(422, "empty_scope", str(exc))
        state.sessions.register(session)
        fresh = state.sessions.persist_new_events(session)
        return _ndjson_response(fresh)

    @app.post("/v1/sessions/{session_id}/query", dependencies=[auth])
    def session_query(session_id: str, request: SessionQueryRequest):
        session = _get_session(session_id)
        try:
            query = Query(image=request.image, text=request.text, attributes=request.attributes)
        except ValueError as exc:
            raise ApiError(422, "invalid_query", str(exc))
        if query.image is not None and query.image not in state.index.records:
            raise ApiError(422, "invalid_query", f"unknown image {query.image!r}")
        with state.session_lock(session_id):
            try:
                session.submit_query(query, k=request.k)
            except SessionClosedError as exc:
                raise ApiError(409, "session_closed", str(exc))
            fresh = state.sessions.persist_new_events(session)
        return _ndjson_response(fresh)

    @app.post("/v1/sessions/{session_id}/select", dependencies=[auth])
    def session_select(session_id: str, request: SessionSelectRequest):
        session = _get_session(session_id)
        with state.session_lock(session_id):
            try:
                session.refine_with_selection(request.image_id, extra_text=request.extra_text)
            except InvalidSelectionError as exc:
                raise ApiError(422, "invalid_selection", str(exc))
            except SessionClosedError as exc:
                raise ApiError(409, "session_closed", str(exc))
            fresh = state.sessions.persist_new_events(session)
        return _ndjson_response(fresh)

    @app.post("/v1/sessions/{session_id}/close", dependencies=[auth])
    def session_close(session_id: str):
        session = _get_session(session_id)
        with state.session_lock(session_id):
            try:
                session.close()
            except SessionClosedError as exc:
                raise ApiError(409, "session_closed", str(exc))
            fresh = state.sessions.persist_new_events(session)
        return _ndjson_response(fresh)

    @app.get("/v1/sessions/{session_id}", dependencies=[auth])
    def session_state(session_id: str):
        session = state.sessions.live(session_id)
        if session is not None:
            live = session.state
            return {
                "session_id": live.session_id,
                "status": live.status,
                "scope": live.scope,
                "rounds": [
                    {
                        "round_index": r.round_index,
                        "query": r.query.to_dict(),
                        "candidates": [{"image_id": e.image_id, "score": e.score} for e in r.candidates.entries],
                        "action": r.action,
                        **({"error": r.error} if r.error else {}),
                    }
                    for r in live.rounds
                ],
            }
        lines = state.sessions.log_lines(session_id)
        if lines is None:
            raise ApiError(404, "session_not_found", f"no session {session_id!r}", detail={"session_id": session_id})
        from .session import import_session

        restored = import_session("\n".join(lines))
        return {
            "session_id": restored.session_id,
            "status": restored.status,
            "scope": restored.scope,
            "rounds": [
                {
                    "round_index": r.round_index,
                    "query": r.query.to_dict(),
                    "candidates": [{"image_id": e.image_id, "score": e.score} for e in r.candidates.entries],
                    "action": r.action,
                    **({"error": r.error} if r.error else {}),
                }
                for r in restored.rounds
            ],
        }

    @app.get("/v1/sessions/{session_id}/log", dependencies=[auth])
    def session_log(session_id: str):
        lines = state.sessions.log_lines(session_id)
        if lines is None:
            raise ApiError(404, "session_not_found", f"no session {session_id!r}", detail={"session_id": session_id})
        return _ndjson_response(lines)

    # -- console statics ------------------------------------------------------

    if config.console_dir and Path(config.console_dir).exists():
        app.mount("/console", StaticFiles(directory=config.console_dir, html=True), name="console")

    return app
