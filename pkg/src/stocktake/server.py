"""JSON-over-HTTP surface for operator terminals, the console and the simulator.

Every modeled domain error maps to exactly one status code:

    401  missing or unknown bearer token
    403  Forbidden (role violation)
    404  UnknownSession, UnknownBin
    400  payload/CSV validation: MissingField, EmptyField, IllegalCharacter,
         MalformedRow, DuplicateHuCode, UnknownSurplusUnit, bad request body
    409  state conflicts: AlreadyStarted, SessionArchived, TaskCompleted,
         NotAssigned, IncompleteBatchList, SessionInProgress, TasksRemaining,
         NoReferenceLoaded
    503  StorageFailure (append rejected; nothing was recorded)

Terminals are thin: they buffer scans and resend on failure; the server
dedups on the client-generated event_id, so delivery is at-least-once with
exactly-once effect.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import click
import uvicorn
from fastapi import Depends, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import monitor
from .config import ServerConfig, load_server_config
from .optimizer import bin_profiles, build_route_plan, route_plan_as_dict
from .reconcile import PayloadError, UnknownBin, classification_as_dict, reconciliation_as_dict
from .session import (
    AlreadyStarted,
    Credential,
    DomainError,
    DuplicateHuCode,
    Forbidden,
    IncompleteBatchList,
    MalformedRow,
    NoReferenceLoaded,
    NotAssigned,
    SessionArchived,
    SessionInProgress,
    StocktakeService,
    TaskCompleted,
    TasksRemaining,
    UnknownSession,
    UnknownSurplusUnit,
    load_credentials,
    task_as_dict,
)
from .store import EventLog, StorageFailure

STATUS_BY_ERROR: dict[type, int] = {
    Forbidden: 403,
    UnknownSession: 404,
    UnknownBin: 404,
    PayloadError: 400,
    MalformedRow: 400,
    DuplicateHuCode: 400,
    UnknownSurplusUnit: 400,
    AlreadyStarted: 409,
    SessionArchived: 409,
    TaskCompleted: 409,
    NotAssigned: 409,
    IncompleteBatchList: 409,
    SessionInProgress: 409,
    TasksRemaining: 409,
    NoReferenceLoaded: 409,
    StorageFailure: 503,
}


def status_for(exc: Exception) -> int:
    for klass, status in STATUS_BY_ERROR.items():
        if isinstance(exc, klass):
            return status
    raise exc  # unmodeled errors surface as genuine 500s


def error_body(exc: Exception) -> dict:
    body = {"error": type(exc).__name__, "detail": str(exc)}
    if isinstance(exc, IncompleteBatchList):
        body["blocking_batches"] = exc.blocking_batches
        body["unacknowledged_surplus"] = exc.unacknowledged_surplus
    if isinstance(exc, TasksRemaining):
        body["remaining"] = exc.count
    return body


class AuthError(Exception):
    pass


async def _optional_json(request: Request) -> dict:
    raw = await request.body()
    if not raw:
        return {}
    try:
        body = json.loads(raw)
    except ValueError:
        return {}
    return body if isinstance(body, dict) else {}


def _at_of(body: dict) -> float | None:
    at = body.get("at")
    return float(at) if at is not None else None


def create_app(service: StocktakeService, credentials: dict[str, Credential], config: ServerConfig | None = None) -> FastAPI:
    config = config or ServerConfig()
    app = FastAPI(title="stocktake", docs_url=None, redoc_url=None)
    app.state.started_at = time.time()
    app.state.requests = 0

    def authenticate(request: Request) -> Credential:
        app.state.requests += 1
        header = request.headers.get("authorization", "")
        if not header.startswith("Bearer "):
            raise AuthError("missing bearer token")
        cred = credentials.get(header[len("Bearer "):])
        if cred is None:
            raise AuthError("unknown token")
        return cred

    @app.exception_handler(AuthError)
    def handle_auth_error(request: Request, exc: AuthError):
        return JSONResponse(status_code=401, content={"error": "Unauthorized", "detail": str(exc)})

    @app.exception_handler(DomainError)
    @app.exception_handler(PayloadError)
    @app.exception_handler(UnknownBin)
    @app.exception_handler(StorageFailure)
    def handle_domain_error(request: Request, exc: Exception):
        return JSONResponse(status_code=status_for(exc), content=error_body(exc))

    @app.exception_handler(RequestValidationError)
    def handle_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"error": "BadRequest", "detail": str(exc.errors())}
        )

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "entries": service.log.last_seq,
            "engine_seconds": service.engine_seconds,
            "requests": app.state.requests,
            "uptime_seconds": time.time() - app.state.started_at,
        }

    @app.post("/reference")
    async def import_reference(request: Request, actor: Credential = Depends(authenticate)):
        body = await request.body()
        summary = service.import_reference(actor, body)
        return {"bins": summary.bins, "batches": summary.batches, "units": summary.units}

    @app.post("/sessions")
    def create_session(actor: Credential = Depends(authenticate)):
        session = service.create_session(actor)
        return {
            "session_id": session.session_id,
            "state": session.state,
            "bin_count": len(session.bin_tasks),
        }

    @app.get("/sessions")
    def list_sessions(actor: Credential = Depends(authenticate)):
        with service.lock:
            return {
                "sessions": [
                    {
                        "session_id": s.session_id,
                        "state": s.state,
                        "bin_count": len(s.bin_tasks),
                        "created_at": s.created_at,
                    }
                    for s in service.state.sessions.values()
                ]
            }

    @app.post("/clear")
    async def clear_data(request: Request, actor: Credential = Depends(authenticate)):
        body = await request.json()
        scope = body.get("scope")
        if scope not in ("REFERENCE", "HISTORY"):
            return JSONResponse(
                status_code=400,
                content={"error": "BadRequest", "detail": "scope must be REFERENCE or HISTORY"},
            )
        service.clear_data(actor, scope)
        return {"cleared": scope}

    @app.post("/sessions/{session_id}/bins/{bin_code}/start")
    async def start_bin(
        session_id: str, bin_code: str, request: Request, actor: Credential = Depends(authenticate)
    ):
        body = await _optional_json(request)
        task = service.start_bin_task(actor, session_id, bin_code, at=_at_of(body))
        return task_as_dict(task)

    @app.post("/scans")
    async def submit_scan(request: Request, actor: Credential = Depends(authenticate)):
        body = await request.json()
        missing = [k for k in ("session_id", "bin_code", "event_id", "payload") if not body.get(k)]
        if missing:
            return JSONResponse(
                status_code=400,
                content={"error": "BadRequest", "detail": f"missing fields: {missing}"},
            )
        classification = service.submit_scan(
            actor,
            session_id=body["session_id"],
            bin_code=body["bin_code"],
            event_id=body["event_id"],
            payload=body["payload"],
            at=float(body.get("at", time.time())),
        )
        out = classification_as_dict(classification)
        if body.get("verbose"):
            rec, blocking, unacked = service.completeness(body["session_id"], body["bin_code"])
            out["bin"] = reconciliation_as_dict(rec)
            out["blocking_batches"] = sorted(blocking)
            out["unacknowledged_surplus"] = sorted(unacked)
        return out

    @app.post("/sessions/{session_id}/bins/{bin_code}/ack-surplus")
    async def ack_surplus(
        session_id: str, bin_code: str, request: Request, actor: Credential = Depends(authenticate)
    ):
        body = await request.json()
        hu_code = body.get("hu_code")
        if not hu_code:
            return JSONResponse(
                status_code=400, content={"error": "BadRequest", "detail": "hu_code required"}
            )
        service.acknowledge_surplus(actor, session_id, bin_code, hu_code, at=_at_of(body))
        return {"acknowledged": hu_code}

    @app.post("/sessions/{session_id}/bins/{bin_code}/signoff")
    async def sign_off(
        session_id: str, bin_code: str, request: Request, actor: Credential = Depends(authenticate)
    ):
        body = await _optional_json(request)
        rec = service.sign_off_bin(actor, session_id, bin_code, at=_at_of(body))
        return reconciliation_as_dict(rec)

    @app.get("/sessions/{session_id}/bins/{bin_code}")
    def bin_detail(session_id: str, bin_code: str, actor: Credential = Depends(authenticate)):
        with service.lock:
            session = service._session(session_id)
            task = service._task(session, bin_code)
            rec, blocking, unacked = service.completeness(session_id, bin_code)
            out = task_as_dict(task)
            out["current"] = reconciliation_as_dict(rec)
            out["blocking_batches"] = sorted(blocking)
            out["unacknowledged_surplus"] = sorted(unacked)
            out["acknowledged_surplus"] = sorted(task.acked_surplus)
            return out

    @app.post("/sessions/{session_id}/archive")
    def archive(session_id: str, actor: Credential = Depends(authenticate)):
        record = service.archive_session(actor, session_id)
        return {
            "archive_id": record.archive_id,
            "first_seq": record.first_seq,
            "last_seq": record.last_seq,
        }

    @app.get("/sessions/{session_id}/progress")
    def progress(session_id: str, actor: Credential = Depends(authenticate)):
        with service.lock:
            return monitor.progress_as_dict(monitor.progress(service.state, session_id))

    @app.get("/sessions/{session_id}/discrepancies")
    def discrepancies(session_id: str, actor: Credential = Depends(authenticate)):
        with service.lock:
            return monitor.discrepancies_as_dict(monitor.discrepancies(service.state, session_id))

    @app.get("/sessions/{session_id}/activity")
    def activity(
        session_id: str,
        idle_threshold: float | None = None,
        actor: Credential = Depends(authenticate),
    ):
        threshold = idle_threshold if idle_threshold is not None else config.idle_threshold_seconds
        with service.lock:
            service._session(session_id)  # 404 on unknown ids
            return monitor.activity_as_dict(
                monitor.activity(service.log.entries, session_id, threshold)
            )

    @app.get("/sessions/{session_id}/route-plan")
    def route_plan(session_id: str, k: int = 1, actor: Credential = Depends(authenticate)):
        with service.lock:
            service._session(session_id)
            if service.state.reference is None:
                raise NoReferenceLoaded("no reference loaded")
            profiles = bin_profiles(service.state.reference)
        plan = build_route_plan(profiles, k, config.cost_model, config.thresholds)
        return route_plan_as_dict(plan)

    return app


@click.command()
@click.option("--listen", default="127.0.0.1:8000", help="addr:port to bind")
@click.option("--credentials", "credentials_path", required=True, type=click.Path(exists=True))
@click.option("--primary-log-dir", required=True, type=click.Path())
@click.option("--mirror-log-dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def main(listen, credentials_path, primary_log_dir, mirror_log_dir, config_path):
    """Run the stocktake server."""
    config = load_server_config(config_path)
    credentials = load_credentials(credentials_path)
    log = EventLog(primary_log_dir, mirror_log_dir, fsync=config.fsync)
    archive_dir = config.archive_dir or str(Path(primary_log_dir).parent / "archives")
    service = StocktakeService(log, archive_dir=archive_dir)
    app = create_app(service, credentials, config)
    host, _, port = listen.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")


if __name__ == "__main__":
    main()
