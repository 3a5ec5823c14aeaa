"""FastAPI service wrapping the experiment runner.

Endpoints mirror the CLI surface: submit runs, resume from checkpoints,
convert datasets, fan out sweeps, fetch curves. Config problems come back as
HTTP 400 with the named diagnostic; numeric failures surface in the job state
so clients can map them to their own exit codes.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from .. import __version__, datasets
from ..config import ConfigError, build_config
from ..experiment import CURVE_FILE, resume_experiment, run_experiment, run_sweep
from .jobs import JobStore
from .schemas import (
    ConvertRequest,
    ConvertResponse,
    HealthResponse,
    ResumeRequest,
    RunRequest,
    RunStatus,
    SweepRequest,
    SweepStatus,
)


def _run_status(job):
    result = job.result
    return RunStatus(
        run_id=job.job_id,
        state=job.state,
        kind=job.kind,
        outdir=getattr(result, "outdir", None),
        summary=getattr(result, "summary", None),
        error=job.error,
        checkpoint_path=getattr(result, "checkpoint_path", None) or job.checkpoint_path,
    )


def create_app():
    app = FastAPI(title="foml experiment service", version=__version__)
    store = JobStore()
    app.state.jobs = store

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/runs", response_model=RunStatus)
    def submit_run(req: RunRequest):
        try:
            cfg = build_config(req.config_text, req.overrides)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        job = store.submit("run", lambda: run_experiment(cfg), wait=req.wait)
        return _run_status(job)

    @app.get("/runs", response_model=list[RunStatus])
    def list_runs():
        return [_run_status(j) for j in store.list() if j.kind in ("run", "resume")]

    @app.get("/runs/{run_id}", response_model=RunStatus)
    def get_run(run_id: str):
        job = store.get(run_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no such run {run_id!r}")
        return _run_status(job)

    @app.get("/runs/{run_id}/curve", response_class=PlainTextResponse)
    def get_curve(run_id: str):
        job = store.get(run_id)
        if job is None or job.result is None:
            raise HTTPException(status_code=404, detail=f"no finished run {run_id!r}")
        path = Path(job.result.outdir) / CURVE_FILE
        if not path.exists():
            raise HTTPException(status_code=404, detail="run produced no curve")
        return path.read_text()

    @app.post("/resume", response_model=RunStatus)
    def submit_resume(req: ResumeRequest):
        if not Path(req.checkpoint_path).exists():
            raise HTTPException(status_code=400, detail=f"no checkpoint at {req.checkpoint_path}")
        job = store.submit(
            "resume",
            lambda: resume_experiment(req.checkpoint_path, req.config_text, req.outdir),
            wait=req.wait,
        )
        return _run_status(job)

    @app.post("/sweeps", response_model=SweepStatus)
    def submit_sweep(req: SweepRequest):
        job = store.submit(
            "sweep",
            lambda: run_sweep(req.config_text, req.overrides, req.param, req.values, req.outdir),
            wait=req.wait if hasattr(req, "wait") else True,
        )
        return SweepStatus(run_id=job.job_id, state=job.state, rows=job.result, error=job.error)

    @app.post("/convert-dataset", response_model=ConvertResponse)
    def convert_dataset(req: ConvertRequest):
        try:
            n = datasets.convert_idx(req.images_path, req.labels_path, req.out_path, req.limit)
        except (datasets.DatasetError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return ConvertResponse(items=n, out_path=req.out_path)

    return app
