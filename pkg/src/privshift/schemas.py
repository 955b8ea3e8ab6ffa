"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class Table(BaseModel):
    """A named-column numeric table (the wire form of a CSV)."""

    columns: list[str]
    rows: list[list[float]]


class LedgerRow(BaseModel):
    label: str
    epsilon: float
    delta: float


class LedgerModel(BaseModel):
    total_epsilon: float
    total_delta: float
    spent_epsilon: float
    spent_delta: float
    within_budget: bool
    allocations: list[LedgerRow]


class ArtifactModel(BaseModel):
    schema_version: int
    m: int
    p: int
    column_names: list[str]
    outcome_index: int
    matrix: list[float]
    transform: dict
    seed: int
    created_utc: str


class TransformRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    data: Table
    outcome: str
    method: Literal["gram", "en-gram", "dp-gram", "synth"]
    epsilon: float | None = None
    delta: float = 1e-5
    noise_lambda: float | None = Field(default=None, alias="lambda")
    rows_out: int | None = None
    seed: int = 0
    dp_split: Literal["element", "block", "per_statistic"] = "per_statistic"


class TransformResponse(BaseModel):
    artifact: ArtifactModel | None = None
    synthetic: Table | None = None
    ledger: LedgerModel | None = None


class EstimateRequest(BaseModel):
    rct: Table
    outcome: str
    treatment: str
    pi: float
    estimator: Literal["dm", "ols", "ipw", "cw", "acw", "fipw", "loop"]
    aux_artifact: ArtifactModel | None = None
    aux_data: Table | None = None
    aux_outcome: str | None = None
    bootstrap: int = 0
    seed: int = 0
    max_rct_covariates: int = 20
    second_moments: bool = False


class EstimateResponse(BaseModel):
    estimator: str
    tau_hat: float
    variance_hat: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    diagnostics: dict = {}


class SimulateRequest(BaseModel):
    study: Literal["generalization", "precision"]
    p: int
    reps: int = 1000
    generations: int = 100
    assignments: int = 1000
    n: int = 100
    m_aux: int = 1000
    candidate_pool: int = 1300
    bootstrap: int = 100
    max_rct_covariates: int = 20
    transforms: str = "gram"
    delta: float = 1e-5
    seed: int = 0
    threads: int = 1


class ResultRowModel(BaseModel):
    study: str
    p: int
    estimator: str
    transform: str
    mse: float | None = None
    bias2: float | None = None
    variance: float | None = None
    coverage: float | None = None
    var_tau: float | None = None
    re_dm: float | None = None
    re_reg: float | None = None
    failures: int = 0


class SimulateResponse(BaseModel):
    rows: list[ResultRowModel]
    diagnostics: dict = {}


class ReportRequest(BaseModel):
    rows: list[dict]
    table: Literal["coverage", "mse", "precision"]
    format: Literal["markdown", "csv"] = "markdown"


class ReportResponse(BaseModel):
    content: str


class HealthResponse(BaseModel):
    status: str
    version: str
