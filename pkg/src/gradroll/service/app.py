"""FastAPI application wrapping the core package.

Short operations (explain, metrics, ledger info, dataset conversion) are
synchronous endpoints; train/roar/correlate/verify-theory run as background
jobs polled via /jobs/{id}. All paths are server-local; artifacts are
written to run directories, never streamed over the wire.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import GradrollError
from . import backend
from .jobs import JobRegistry
from .schemas import (ConvertMovielensRequest, CorrelateRequest,
                      ExplainRequest, ExplainResponse, HealthResponse,
                      JobCreated, JobState, MetricsRequest, MetricsResponse,
                      RoarRequest, TrainRequest, VerifyTheoryRequest)


def _http_error(exc: Exception) -> HTTPException:
    kind, status = backend.classify_error(exc)
    return HTTPException(status_code=status,
                         detail={"error_kind": kind, "message": str(exc)})


def create_app() -> FastAPI:
    app = FastAPI(title="gradroll", version=__version__)
    app.state.jobs = JobRegistry()

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/jobs/train", response_model=JobCreated)
    def submit_train(req: TrainRequest):
        config_doc = req.config.model_dump()
        job_id = app.state.jobs.submit(
            "train", lambda: backend.do_train(config_doc, req.overrides))
        return JobCreated(job_id=job_id)

    @app.post("/jobs/roar", response_model=JobCreated)
    def submit_roar(req: RoarRequest):
        config_doc = req.config.model_dump() if req.config else None
        job_id = app.state.jobs.submit(
            "roar",
            lambda: backend.do_roar(config_doc, req.overrides, req.run_dir,
                                    req.selector, req.sample_size,
                                    req.eval_seed, req.workers, req.dry_run))
        return JobCreated(job_id=job_id)

    @app.post("/jobs/correlate", response_model=JobCreated)
    def submit_correlate(req: CorrelateRequest):
        config_doc = req.config.model_dump() if req.config else None
        job_id = app.state.jobs.submit(
            "correlate",
            lambda: backend.do_correlate(config_doc, req.overrides, req.run_dir,
                                         req.sample_size, req.eval_seed))
        return JobCreated(job_id=job_id)

    @app.post("/jobs/verify-theory", response_model=JobCreated)
    def submit_verify(req: VerifyTheoryRequest):
        config_doc = req.config.model_dump()
        job_id = app.state.jobs.submit(
            "verify-theory",
            lambda: backend.do_verify_theory(config_doc, req.overrides,
                                             req.trials, req.eval_seed))
        return JobCreated(job_id=job_id)

    @app.get("/jobs/{job_id}", response_model=JobState)
    def job_state(job_id: str):
        job = app.state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404,
                                detail={"error_kind": "runtime",
                                        "message": f"unknown job {job_id}"})
        return JobState(job_id=job.job_id, kind=job.kind, state=job.state,
                        result=job.result, error=job.error,
                        error_kind=job.error_kind)

    @app.post("/explain", response_model=ExplainResponse)
    def explain(req: ExplainRequest):
        try:
            doc = backend.do_explain(
                run_dir=req.run_dir,
                config_doc=req.config.model_dump() if req.config else None,
                overrides=req.overrides, subject=req.subject,
                relation=req.relation, obj=req.object, mode=req.mode,
                include_self=req.include_self, write_dot=req.write_dot,
                out_dir=req.out_dir, checkpoint=req.checkpoint,
                ledger_path=req.ledger)
        except GradrollError as exc:
            raise _http_error(exc)
        return doc

    @app.post("/metrics", response_model=MetricsResponse)
    def metrics(req: MetricsRequest):
        try:
            return backend.do_metrics(
                run_dir=req.run_dir,
                config_doc=req.config.model_dump() if req.config else None,
                overrides=req.overrides, split=req.split)
        except GradrollError as exc:
            raise _http_error(exc)

    @app.get("/ledger/info")
    def ledger_info(path: str):
        try:
            return backend.do_ledger_info(path)
        except (GradrollError, FileNotFoundError) as exc:
            raise _http_error(exc)

    @app.post("/convert/movielens")
    def convert_movielens(req: ConvertMovielensRequest):
        try:
            return backend.do_convert_movielens(req.ml_dir, req.out_dir)
        except GradrollError as exc:
            raise _http_error(exc)

    return app


app = create_app()
