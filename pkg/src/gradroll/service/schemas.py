"""Request/response models for the HTTP surface."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict

from ..runconfig import RunConfig


class HealthResponse(BaseModel):
    status: str
    version: str


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig
    overrides: dict[str, str] = {}


class JobCreated(BaseModel):
    job_id: str


class JobState(BaseModel):
    job_id: str
    kind: str
    state: str  # queued | running | done | error
    result: Optional[dict] = None
    error: Optional[str] = None
    error_kind: Optional[str] = None


class ExplainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run_dir: Optional[str] = None
    config: Optional[RunConfig] = None
    overrides: dict[str, str] = {}
    subject: str
    relation: str
    object: Optional[str] = None  # None or "?" -> explain the top prediction
    mode: str = "gr-all"
    include_self: bool = False
    write_dot: bool = False
    out_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    ledger: Optional[str] = None


class TripleDoc(BaseModel):
    s: int
    r: int
    o: int
    names: list[str]


class ScoreDoc(TripleDoc):
    triple_id: int
    delta: float


class ExplainResponse(BaseModel):
    target: TripleDoc
    base_prob: float
    mode: str
    scores: list[ScoreDoc]
    selected: list[int]
    prob_evaluations: int
    files: dict[str, str]


class MetricsRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run_dir: Optional[str] = None
    config: Optional[RunConfig] = None
    overrides: dict[str, str] = {}
    split: str = "test"


class MetricsResponse(BaseModel):
    mrr: float
    hits1: float
    hits10: float
    n_queries: int
    split: str


class RoarRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run_dir: Optional[str] = None
    config: Optional[RunConfig] = None
    overrides: dict[str, str] = {}
    selector: str = "gr-1"
    sample_size: Optional[int] = None
    eval_seed: Optional[int] = None
    workers: Optional[int] = None
    dry_run: bool = False


class CorrelateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run_dir: Optional[str] = None
    config: Optional[RunConfig] = None
    overrides: dict[str, str] = {}
    sample_size: Optional[int] = None
    eval_seed: Optional[int] = None


class VerifyTheoryRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig
    overrides: dict[str, str] = {}
    trials: Optional[int] = None
    eval_seed: Optional[int] = None


class ConvertMovielensRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ml_dir: str
    out_dir: str


class ErrorResponse(BaseModel):
    error_kind: str
    message: str
