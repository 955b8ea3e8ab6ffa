"""FastAPI service exposing transforms, estimation, studies, and reports.

The service is stateless: every request carries its data, and all
randomness is driven by explicit seeds, so responses are reproducible.
Domain errors map to structured HTTP errors: configuration and schema
problems return 400, numerical failures 409.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .core_model import DataMatrix, GramMatrix, compute_gram, ols_from_gram, partition_gram, predict
from .errors import ConfigError, NumericalError, PrivshiftError
from .estimators import (
    RctSample,
    acw_estimate,
    bootstrap_ci,
    calibration_features,
    calibration_target_from_moments,
    calibration_weights,
    cw_estimate,
    diff_in_means,
    fipw_estimate,
    ipw_estimate,
    loop_estimate,
    regression_adjusted,
)
from .io import GramArtifact, created_utc, method_for_provenance
from .privacy import BudgetLedger, PrivacyBudget, dp_gram_transform, en_transform
from .reporting import render_report
from .schemas import (
    ArtifactModel,
    EstimateRequest,
    EstimateResponse,
    HealthResponse,
    LedgerModel,
    LedgerRow,
    ReportRequest,
    ReportResponse,
    ResultRowModel,
    SimulateRequest,
    SimulateResponse,
    Table,
    TransformRequest,
    TransformResponse,
)
from .simulation import (
    GeneralizationConfig,
    PrecisionConfig,
    run_generalization_study,
    run_precision_study,
)
from .synthesis import fit_sequential, synthesize
from .transforms import parse_transforms


def _data_matrix_from_table(table: Table, outcome: str) -> tuple[DataMatrix, list[str]]:
    """Build a data matrix with the outcome in column 1.

    Returns the matrix and the covariate names in their original order.
    """
    if outcome not in table.columns:
        raise ConfigError(f"outcome column {outcome!r} not in input columns")
    arr = np.asarray(table.rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(table.columns):
        raise ConfigError("table rows do not match the declared columns")
    if "const" in table.columns:
        raise ConfigError("the intercept column is implicit and must not appear in the input")
    covariate_names = [c for c in table.columns if c != outcome]
    if not covariate_names:
        raise ConfigError("need at least one covariate column")
    y = arr[:, table.columns.index(outcome)]
    x = arr[:, [table.columns.index(c) for c in covariate_names]]
    names = ("const", outcome, *covariate_names)
    try:
        return DataMatrix.from_columns(y, x, names), covariate_names
    except ValueError as exc:
        raise ConfigError(str(exc))


def _artifact_model(artifact: GramArtifact) -> ArtifactModel:
    return ArtifactModel(**artifact.to_json_dict())


def _artifact_from_model(model: ArtifactModel) -> GramArtifact:
    return GramArtifact.from_json_dict(model.model_dump())


def _ledger_model(ledger: BudgetLedger) -> LedgerModel:
    return LedgerModel(
        total_epsilon=ledger.total.epsilon,
        total_delta=ledger.total.delta,
        spent_epsilon=ledger.spent_epsilon,
        spent_delta=ledger.spent_delta,
        within_budget=ledger.within_budget,
        allocations=[LedgerRow(label=l, epsilon=e, delta=d) for l, e, d in ledger.rows()],
    )


def create_app() -> FastAPI:
    app = FastAPI(title="privshift", version=_version())

    @app.exception_handler(PrivshiftError)
    async def _domain_error(request: Request, exc: PrivshiftError):
        kind = "config" if isinstance(exc, ConfigError) else "numerical"
        status = 400 if kind == "config" else 409
        return JSONResponse(
            status_code=status,
            content={"detail": {"kind": kind, "error": type(exc).__name__, "message": str(exc)}},
        )

    @app.get("/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=_version())

    @app.post("/v1/transform", response_model=TransformResponse)
    def transform(req: TransformRequest) -> TransformResponse:
        d, covariate_names = _data_matrix_from_table(req.data, req.outcome)
        rng = np.random.default_rng(req.seed)
        if req.method == "synth":
            rows_out = req.rows_out or d.m
            synth = synthesize(fit_sequential(d), rows_out, rng)
            original_order = req.data.columns
            idx = [synth.column_names.index(c) for c in original_order]
            return TransformResponse(
                synthetic=Table(columns=list(original_order), rows=synth.values[:, idx].tolist())
            )

        ledger = None
        if req.method == "gram":
            gram = compute_gram(d)
            meta = {"method": "gram"}
        elif req.method == "en-gram":
            gram = en_transform(d, req.noise_lambda, rng)
            meta = {"method": "en"}
            if req.noise_lambda is not None:
                meta["lambda"] = req.noise_lambda
        else:
            if req.epsilon is None:
                raise ConfigError("dp-gram needs --epsilon")
            budget = PrivacyBudget(epsilon=req.epsilon, delta=req.delta)
            gram, ledger = dp_gram_transform(d, budget, rng, split=req.dp_split)
            meta = {
                "method": "dp",
                "epsilon": req.epsilon,
                "delta": req.delta,
                "split": req.dp_split,
            }
        artifact = GramArtifact(
            gram=gram,
            outcome_index=1,
            transform=meta,
            seed=req.seed,
            created=created_utc(),
        )
        return TransformResponse(
            artifact=_artifact_model(artifact),
            ledger=_ledger_model(ledger) if ledger is not None else None,
        )

    @app.post("/v1/estimate", response_model=EstimateResponse)
    def estimate(req: EstimateRequest) -> EstimateResponse:
        return _run_estimate(req)

    @app.post("/v1/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest) -> SimulateResponse:
        transforms = parse_transforms(req.transforms)
        try:
            if req.study == "generalization":
                cfg = GeneralizationConfig(
                    p=req.p,
                    reps=req.reps,
                    candidate_pool=req.candidate_pool,
                    m_aux=req.m_aux,
                    bootstrap_b=req.bootstrap,
                    transforms=transforms,
                    delta=req.delta,
                    base_seed=req.seed,
                )
                results = run_generalization_study(cfg, threads=req.threads)
            else:
                cfg = PrecisionConfig(
                    p=req.p,
                    generations=req.generations,
                    assignments=req.assignments,
                    n=req.n,
                    m_aux=req.m_aux,
                    max_rct_covariates=req.max_rct_covariates,
                    transforms=transforms,
                    delta=req.delta,
                    base_seed=req.seed,
                )
                results = run_precision_study(cfg, threads=req.threads)
        except ValueError as exc:
            raise ConfigError(str(exc))
        rows = [ResultRowModel(**row.__dict__) for row in results.rows]
        return SimulateResponse(rows=rows, diagnostics=results.diagnostics)

    @app.post("/v1/report", response_model=ReportResponse)
    def report(req: ReportRequest) -> ReportResponse:
        return ReportResponse(content=render_report(req.rows, req.table, req.format))

    return app


def _version() -> str:
    from . import __version__

    return __version__


# ---------------------------------------------------------------------------
# Estimation dispatch
# ---------------------------------------------------------------------------


def _rct_from_table(req: EstimateRequest, covariate_order: list[str] | None) -> RctSample:
    table = req.rct
    for name in (req.outcome, req.treatment):
        if name not in table.columns:
            raise ConfigError(f"column {name!r} not in experiment data")
    arr = np.asarray(table.rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(table.columns):
        raise ConfigError("experiment table rows do not match the declared columns")
    names = [c for c in table.columns if c not in (req.outcome, req.treatment)]
    if covariate_order is not None:
        missing = [c for c in covariate_order if c not in names]
        if missing:
            raise ConfigError(f"experiment data lacks auxiliary covariates: {missing}")
        names = covariate_order
    if not names:
        raise ConfigError("need at least one covariate column")
    y = arr[:, table.columns.index(req.outcome)]
    t = arr[:, table.columns.index(req.treatment)]
    x = arr[:, [table.columns.index(c) for c in names]]
    try:
        return RctSample(y=y, t=t, x=x, pi=req.pi)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _aux_gram(req: EstimateRequest) -> GramMatrix | None:
    if req.aux_artifact is not None:
        return _artifact_from_model(req.aux_artifact).gram
    if req.aux_data is not None:
        outcome = req.aux_outcome or req.outcome
        d, _ = _data_matrix_from_table(req.aux_data, outcome)
        return compute_gram(d)
    return None


def _run_estimate(req: EstimateRequest) -> EstimateResponse:
    gram = _aux_gram(req)
    needs_aux = req.estimator in ("cw", "acw", "fipw", "loop")
    if needs_aux and gram is None:
        raise ConfigError(f"estimator {req.estimator!r} needs auxiliary data (--aux)")

    covariate_order = list(gram.column_names[2:]) if gram is not None else None
    sample = _rct_from_table(req, covariate_order)

    aux_mu = aux_sigma2 = None
    aux_pred = None
    if gram is not None:
        summary = partition_gram(gram)
        aux_mu, aux_sigma2 = summary.mu[1:], summary.sigma2[1:]
        if req.estimator in ("fipw", "loop"):
            model = ols_from_gram(gram)
            aux_pred = np.asarray(predict(model, sample.x), dtype=float)

    def run(s: RctSample):
        if req.estimator == "dm":
            return diff_in_means(s)
        if req.estimator == "ols":
            return regression_adjusted(s, s.x)
        if req.estimator == "ipw":
            return ipw_estimate(s)
        if req.estimator == "cw":
            features = calibration_features(s.x, req.second_moments)
            target = calibration_target_from_moments(aux_mu, aux_sigma2, req.second_moments)
            return cw_estimate(s, calibration_weights(features, target))
        if req.estimator == "acw":
            features = calibration_features(s.x, req.second_moments)
            target = calibration_target_from_moments(aux_mu, aux_sigma2, req.second_moments)
            return acw_estimate(s, calibration_weights(features, target), aux_mu)
        if req.estimator == "fipw":
            return fipw_estimate(s, aux_pred)
        return loop_estimate(s, aux_pred, req.max_rct_covariates)

    result = run(sample)
    response = EstimateResponse(
        estimator=result.estimator_id,
        tau_hat=result.tau_hat,
        variance_hat=result.variance_hat,
        ci_low=result.ci_low,
        ci_high=result.ci_high,
        diagnostics=dict(result.diagnostics),
    )
    if req.bootstrap > 0:
        rng = np.random.default_rng(req.seed)
        if req.estimator in ("fipw", "loop"):
            # run() closes over predictions aligned to the full sample;
            # replicates need predictions for their own resampled rows.
            aux_model = ols_from_gram(gram)

            def estimator_fn(s: RctSample) -> float:
                local_pred = np.asarray(predict(aux_model, s.x), dtype=float)
                if req.estimator == "fipw":
                    return fipw_estimate(s, local_pred).tau_hat
                return loop_estimate(s, local_pred, req.max_rct_covariates).tau_hat

        else:

            def estimator_fn(s: RctSample) -> float:
                return run(s).tau_hat

        boot = bootstrap_ci(estimator_fn, sample, req.bootstrap, 0.95, rng)
        response.ci_low = boot.ci_low
        response.ci_high = boot.ci_high
        response.variance_hat = boot.bootstrap_sd**2
        response.diagnostics["bootstrap_ok"] = boot.n_ok
        response.diagnostics["bootstrap_failed"] = boot.n_failed
    return response
