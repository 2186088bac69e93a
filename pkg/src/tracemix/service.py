"""HTTP service exposing the pipeline to the portal and to automation.

The service layer holds no logic of its own: every response body is the
serialized output of a pipeline module, so endpoint/module equality is
testable. Replay runs execute in background threads and are polled by id;
scripts and reports are plain files under the configured data directory.
"""
from __future__ import annotations

import math
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import cluster as clustering
from . import combine, ingest, profiles, replay
from .model import AnonymousJob, ServiceRequest, TraceWindow

MS_PER_HOUR = ingest.MS_PER_HOUR

STATE_RUNNING = "running"
STATE_DONE = "done"
STATE_FAILED = "failed"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: Optional[dict] = None):
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail or {}
        super().__init__(message)


@dataclass
class ServiceConfig:
    jobs_path: Path
    queries_path: Path
    profiles_path: Path
    machines_path: Path
    data_dir: Path
    portal_dir: Optional[Path] = None  # static portal assets, mounted at /


class MatchRequest(BaseModel):
    start_ms: int
    end_ms: int
    machine_class: Optional[str] = None
    theta1: float = combine.DEFAULT_CV_THRESHOLD
    theta2: float = combine.DEFAULT_DELTA_CV_THRESHOLD
    k_max: Optional[int] = None
    seed: int = 0


class ReplayRequest(BaseModel):
    script_id: str
    scale_factor: float = 1.0
    seed: int = 0
    compression: float = 60.0
    executor: str = "mock"
    template: Optional[str] = None


@dataclass
class RunState:
    state: str
    summary: Optional[dict] = None
    error: Optional[str] = None
    report_path: Optional[str] = None


@dataclass
class RunRegistry:
    runs: dict[str, RunState] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def create(self) -> str:
        run_id = uuid.uuid4().hex[:12]
        with self.lock:
            self.runs[run_id] = RunState(state=STATE_RUNNING)
        return run_id

    def finish(self, run_id: str, summary: dict, report_path: str) -> None:
        with self.lock:
            self.runs[run_id] = RunState(state=STATE_DONE, summary=summary, report_path=report_path)

    def fail(self, run_id: str, error: str) -> None:
        with self.lock:
            self.runs[run_id] = RunState(state=STATE_FAILED, error=error)

    def get(self, run_id: str) -> Optional[RunState]:
        with self.lock:
            state = self.runs.get(run_id)
            return RunState(state.state, state.summary, state.error, state.report_path) if state else None


def _window_or_400(start_ms: int, end_ms: int, machine_class: Optional[str] = None) -> TraceWindow:
    try:
        return TraceWindow(start_ms=start_ms, end_ms=end_ms, machine_class=machine_class)
    except ValueError as exc:
        raise ApiError(400, "invalid_window", str(exc)) from None


def _rebased(records, start_ms: int):
    """Shift record timestamps so the window start becomes hour 0."""
    rebased = []
    for record in records:
        if isinstance(record, AnonymousJob):
            rebased.append(
                AnonymousJob(
                    job_id=record.job_id,
                    submit_ts_ms=record.submit_ts_ms - start_ms,
                    tenant_id=record.tenant_id,
                    metrics=record.metrics,
                    machine_class=record.machine_class,
                )
            )
        else:
            rebased.append(ServiceRequest(ts_ms=record.ts_ms - start_ms, tenant_id=record.tenant_id, query=record.query))
    return rebased


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="tracemix service")
    registry = RunRegistry()
    scripts_dir = Path(config.data_dir) / "scripts"
    reports_dir = Path(config.data_dir) / "reports"
    scripts_dir.mkdir(parents=True, exist_ok=True)
    reports_dir.mkdir(parents=True, exist_ok=True)

    @app.exception_handler(ApiError)
    async def api_error_handler(_: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_handler(_: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"code": "validation_error", "message": "invalid request", "detail": {"errors": exc.errors()}},
        )

    @app.get("/machines")
    def get_machines():
        classes = ingest.load_machine_classes(config.machines_path)
        return {"machines": [c.to_dict() for c in classes]}

    @app.get("/stats")
    def get_stats(start_ms: int, end_ms: int):
        window = _window_or_400(start_ms, end_ms)
        jobs = ingest.filter_window(ingest.parse_job_trace(config.jobs_path), window)
        requests = ingest.filter_window(ingest.parse_query_log(config.queries_path), window)
        span_hours = max(1, math.ceil((end_ms - start_ms) / MS_PER_HOUR))
        rows = ingest.hourly_stats(_rebased(jobs, start_ms), _rebased(requests, start_ms), span_hours=span_hours)
        return {
            "window": {"start_ms": start_ms, "end_ms": end_ms},
            "rows": [row.to_dict() for row in rows],
        }

    @app.post("/match")
    def post_match(body: MatchRequest):
        window = _window_or_400(body.start_ms, body.end_ms, body.machine_class)
        samples = profiles.load_profiles(config.profiles_path)
        if not samples:
            raise ApiError(422, "empty_catalog", "the profile catalog has no samples")
        jobs = ingest.filter_window(ingest.parse_job_trace(config.jobs_path), window)
        if not jobs:
            raise ApiError(422, "no_jobs_in_window", "no anonymous jobs fall inside the window")
        requests = ingest.filter_window(ingest.parse_query_log(config.queries_path), window)

        clustering_result = clustering.cluster_jobs(jobs, k_max=body.k_max, seed=body.seed)
        catalog = profiles.fit_catalog(samples)
        size_grid = profiles.training_size_grid(samples)
        matches = combine.match_clusters(
            clustering_result.clusters, catalog, size_grid, theta1=body.theta1, theta2=body.theta2
        )
        script = combine.build_replay_script(jobs, clustering_result.clusters, matches, requests)

        script_id = uuid.uuid4().hex[:12]
        combine.write_script(script, scripts_dir / f"{script_id}.ndjson")
        return {
            "script_id": script_id,
            "seed": body.seed,
            "k": clustering_result.k,
            "bic": clustering_result.bic if math.isfinite(clustering_result.bic) else None,
            "matches": [m.to_dict() for m in matches],
            "coverage": script.coverage.to_dict(),
            "event_count": len(script.events),
        }

    def _run_replay(run_id: str, script_path: Path, body: ReplayRequest) -> None:
        try:
            script = combine.load_script(script_path)
            schedules = replay.extract_tenants(script)
            if schedules:
                plan = replay.ScalePlan.plan(body.scale_factor, body.seed, len(schedules))
                schedules = replay.scale_tenants(schedules, plan)
            if body.executor == "mock":
                executor = replay.MockExecutor()
            elif body.executor == "shell":
                executor = replay.ShellExecutor(body.template or "")
            elif body.executor == "http":
                executor = replay.HttpExecutor(body.template or "")
            else:
                raise ValueError(f"unknown executor {body.executor!r}")
            report = replay.run_replay(schedules, executor, time_compression=body.compression)
            report_path = reports_dir / f"{run_id}.csv"
            report_path.write_text(report.to_csv(), encoding="utf-8")
            registry.finish(run_id, report.summary(), str(report_path))
        except Exception as exc:  # noqa: BLE001 - failures surface via polling
            registry.fail(run_id, str(exc))

    @app.post("/replay")
    def post_replay(body: ReplayRequest):
        script_path = scripts_dir / f"{body.script_id}.ndjson"
        if not script_path.exists():
            raise ApiError(404, "unknown_script", f"no script with id {body.script_id!r}")
        if body.executor not in ("mock", "shell", "http"):
            raise ApiError(400, "unknown_executor", f"executor must be mock, shell or http, got {body.executor!r}")
        run_id = registry.create()
        thread = threading.Thread(target=_run_replay, args=(run_id, script_path, body), daemon=True)
        thread.start()
        return {"run_id": run_id, "state": STATE_RUNNING}

    @app.get("/replay/{run_id}")
    def get_replay(run_id: str):
        state = registry.get(run_id)
        if state is None:
            raise ApiError(404, "unknown_run", f"no replay run with id {run_id!r}")
        payload = {"run_id": run_id, "state": state.state}
        if state.summary is not None:
            payload["summary"] = state.summary
            payload["report_path"] = state.report_path
        if state.error is not None:
            payload["error"] = state.error
        return payload

    if config.portal_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(config.portal_dir), html=True), name="portal")

    return app
