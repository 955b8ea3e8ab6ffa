"""Monte Carlo studies of the privacy-utility trade-off.

Two harnesses. The generalization study draws a selected (biased)
experiment plus a representative auxiliary sample, estimates the
population effect with and without transformed auxiliary summaries, and
reports MSE decompositions and interval coverage. The precision study
fixes experiment outcomes, rerandomizes treatment many times, and reports
empirical variances and relative efficiencies of covariate-adjusted
estimators that use an auxiliary outcome model.

Every replication owns an independent seed stream derived from
``(base_seed, study id, p, purpose, index, ...)``, so results are
bit-reproducible regardless of worker count or replication order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.special import expit

from .core_model import DataMatrix, ols_from_gram, partition_gram, predict
from .errors import DegenerateSample, NumericalError
from .estimators import (
    RctSample,
    acw_pipeline,
    bootstrap_ci,
    diff_in_means,
    loop_estimate,
    regression_adjusted,
)
from .transforms import TransformSpec, apply_transform

_GENERALIZATION = 1
_PRECISION = 2

# Purpose codes inside a seed tuple.
_P_COEFFS = 0
_P_DATA = 1
_P_ASSIGN = 2
_P_BOOT = 3
_P_TRANSFORM = 4

_MAX_REDRAWS = 100

TRUTH = 0.5

# Selection-model parameters. The nominal values put the selection logit
# at -2 with modifier coefficient 0.5, but those produce a selected-sample
# effect near 0.72 and an expected experiment size near 116; the
# calibrated defaults below reproduce the documented targets (mean
# selected-sample effect ~0.86 with ~100 selected subjects).
SELECTION_INTERCEPT = -2.7
SELECTION_MODIFIER_COEF = 0.85


def _stream(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


@dataclass(frozen=True)
class GeneralizationConfig:
    """Settings for the generalization (coverage) study."""

    p: int
    reps: int
    candidate_pool: int = 1300
    m_aux: int = 1000
    bootstrap_b: int = 100
    transforms: tuple[TransformSpec, ...] = (TransformSpec(kind="gram"),)
    delta: float = 1e-5
    base_seed: int = 0
    selection_intercept: float = SELECTION_INTERCEPT
    selection_modifier_coef: float = SELECTION_MODIFIER_COEF

    def __post_init__(self):
        for name in ("p", "reps", "candidate_pool", "m_aux", "bootstrap_b"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.base_seed < 0:
            raise ValueError("base_seed must be nonnegative")


@dataclass(frozen=True)
class PrecisionConfig:
    """Settings for the precision (variance) study."""

    p: int
    generations: int = 100
    assignments: int = 1000
    n: int = 100
    m_aux: int = 1000
    max_rct_covariates: int = 20
    transforms: tuple[TransformSpec, ...] = (TransformSpec(kind="gram"),)
    delta: float = 1e-5
    base_seed: int = 0
    include_loop: bool = True

    def __post_init__(self):
        for name in ("p", "generations", "assignments", "n", "m_aux", "max_rct_covariates"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_rct_covariates > self.n - 3:
            raise ValueError("max_rct_covariates must be at most n - 3")
        if self.base_seed < 0:
            raise ValueError("base_seed must be nonnegative")


@dataclass(frozen=True)
class ResultRow:
    """One estimator-by-transform cell of a study."""

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


@dataclass(frozen=True)
class StudyResults:
    study: str
    p: int
    rows: tuple[ResultRow, ...]
    diagnostics: dict = field(default_factory=dict)


def mse_decompose(estimates, truth: float) -> tuple[float, float, float]:
    """Mean squared error split into squared bias and variance.

    The variance is computed as the difference, so the decomposition is an
    exact identity.
    """
    arr = np.asarray(estimates, dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one estimate")
    mse = float(np.mean((arr - truth) ** 2))
    bias2 = float((arr.mean() - truth) ** 2)
    return mse, bias2, mse - bias2


# ---------------------------------------------------------------------------
# Data-generating processes
# ---------------------------------------------------------------------------


def generalization_coefficients(p: int, base_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Frozen selection and outcome coefficients for one study.

    Half of the selection coefficients equal -1 / (0.5 p); 60% of the
    outcome coefficients equal sqrt(0.7 / (0.6 p)), so the covariates
    explain 70% of a unit-variance control outcome.
    """
    rng = _stream(base_seed, _GENERALIZATION, p, _P_COEFFS)
    beta_s = np.zeros(p)
    beta_s[rng.choice(p, size=int(round(0.5 * p)), replace=False)] = -1.0 / (0.5 * p)
    beta = np.zeros(p)
    beta[rng.choice(p, size=int(round(0.6 * p)), replace=False)] = np.sqrt(0.7 / (0.6 * p))
    return beta_s, beta


def precision_coefficients(p: int, base_seed: int) -> np.ndarray:
    rng = _stream(base_seed, _PRECISION, p, _P_COEFFS)
    beta = np.zeros(p)
    beta[rng.choice(p, size=int(round(0.6 * p)), replace=False)] = np.sqrt(0.7 / (0.6 * p))
    return beta


@dataclass(frozen=True)
class GeneralizationRep:
    sample: RctSample
    aux: DataMatrix
    truth: float
    sate: float
    n: int


def gen_generalization_rep(
    cfg: GeneralizationConfig, coefficients: tuple[np.ndarray, np.ndarray], rng: np.random.Generator
) -> GeneralizationRep:
    """Draw one replication: selected experiment plus auxiliary sample.

    Candidates have covariates ~ Normal(1, I) and an effect modifier
    ~ Normal(1, 1); selection is Bernoulli through a logistic model tilted
    toward high modifier values, so the selected-sample effect exceeds the
    population effect of 0.5. The auxiliary sample is drawn from the
    population directly and carries untreated outcomes.

    Raises:
        DegenerateSample: when the draw leaves an arm empty (caller
            redraws with a fresh stream).
    """
    beta_s, beta = coefficients
    p = cfg.p
    pool = cfg.candidate_pool
    x = rng.normal(1.0, 1.0, size=(pool, p))
    xs = rng.normal(1.0, 1.0, size=pool)
    logit = cfg.selection_intercept + x @ beta_s + cfg.selection_modifier_coef * xs
    selected = rng.random(pool) < expit(logit)
    n = int(selected.sum())
    if n < 4:
        raise DegenerateSample(f"only {n} subjects selected")
    t = rng.random(n) < 0.5
    if t.all() or not t.any():
        raise DegenerateSample("an experiment arm is empty")
    eps = rng.normal(0.0, np.sqrt(0.3), size=n)
    x_sel = x[selected]
    xs_sel = xs[selected]
    y_c = TRUTH + x_sel @ beta + eps
    y_t = y_c + 0.5 * xs_sel
    y_obs = np.where(t, y_t, y_c)

    x_aux = rng.normal(1.0, 1.0, size=(cfg.m_aux, p))
    xs_aux = rng.normal(1.0, 1.0, size=cfg.m_aux)
    y_aux = TRUTH + x_aux @ beta + rng.normal(0.0, np.sqrt(0.3), size=cfg.m_aux)

    names = ("const", "y") + tuple(f"x{j}" for j in range(1, p + 1)) + ("xs",)
    aux = DataMatrix.from_columns(y_aux, np.column_stack([x_aux, xs_aux]), names)
    sample = RctSample(y=y_obs, t=t.astype(float), x=np.column_stack([x_sel, xs_sel]), pi=0.5)
    return GeneralizationRep(sample=sample, aux=aux, truth=TRUTH, sate=float(0.5 * xs_sel.mean()), n=n)


@dataclass(frozen=True)
class PrecisionGeneration:
    x: np.ndarray
    y_control: np.ndarray
    y_treated: np.ndarray
    aux: DataMatrix
    truth: float


def gen_precision_generation(
    cfg: PrecisionConfig, beta: np.ndarray, rng: np.random.Generator
) -> PrecisionGeneration:
    """Fixed potential outcomes for one generation plus an auxiliary sample.

    Covariates are standard normal in both samples (no covariate shift);
    the treatment effect is homogeneous at 0.5 and the auxiliary study is
    untreated.
    """
    x = rng.normal(0.0, 1.0, size=(cfg.n, cfg.p))
    y_c = TRUTH + x @ beta + rng.normal(0.0, np.sqrt(0.3), size=cfg.n)
    x_aux = rng.normal(0.0, 1.0, size=(cfg.m_aux, cfg.p))
    y_aux = TRUTH + x_aux @ beta + rng.normal(0.0, np.sqrt(0.3), size=cfg.m_aux)
    aux = DataMatrix.from_columns(y_aux, x_aux)
    return PrecisionGeneration(x=x, y_control=y_c, y_treated=y_c + TRUTH, aux=aux, truth=TRUTH)


# ---------------------------------------------------------------------------
# Generalization study
# ---------------------------------------------------------------------------


def _generalization_rep_task(cfg: GeneralizationConfig, coefficients, rep: int) -> dict:
    redraws = 0
    for attempt in range(_MAX_REDRAWS):
        rng = _stream(cfg.base_seed, _GENERALIZATION, cfg.p, _P_DATA, rep, attempt)
        try:
            data = gen_generalization_rep(cfg, coefficients, rng)
            break
        except DegenerateSample:
            redraws += 1
    else:
        raise DegenerateSample(f"rep {rep} failed after {_MAX_REDRAWS} redraws")

    out = {"sate": data.sate, "n": data.n, "redraws": redraws, "cells": {}}
    dm = diff_in_means(data.sample)
    ols = regression_adjusted(data.sample, data.sample.x)
    out["cells"][("dm", "none")] = (dm.tau_hat, dm.ci_low, dm.ci_high)
    out["cells"][("ols_rct", "none")] = (ols.tau_hat, ols.ci_low, ols.ci_high)

    for t_idx, spec in enumerate(cfg.transforms):
        key = ("acw", spec.label)
        try:
            t_rng = _stream(cfg.base_seed, _GENERALIZATION, cfg.p, _P_TRANSFORM, rep, t_idx)
            gram, _ = apply_transform(data.aux, spec, cfg.delta, t_rng)
            aux_mu = partition_gram(gram).mu[1:]
            boot_rng = _stream(cfg.base_seed, _GENERALIZATION, cfg.p, _P_BOOT, rep)
            boot = bootstrap_ci(
                lambda s: acw_pipeline(s, aux_mu).tau_hat,
                data.sample,
                cfg.bootstrap_b,
                0.95,
                boot_rng,
            )
            out["cells"][key] = (boot.point, boot.ci_low, boot.ci_high)
        except NumericalError as exc:
            out["cells"][key] = type(exc).__name__
    return out


def run_generalization_study(cfg: GeneralizationConfig, threads: int = 1) -> StudyResults:
    """Run the coverage study and aggregate MSE, bias, variance, coverage."""
    coefficients = generalization_coefficients(cfg.p, cfg.base_seed)
    task = partial(_generalization_rep_task, cfg, coefficients)
    reps = _map_indexed(task, cfg.reps, threads)

    keys = [("dm", "none"), ("ols_rct", "none")]
    keys += [("acw", spec.label) for spec in cfg.transforms]
    rows = []
    for estimator, transform in keys:
        taus, covered, failures = [], [], 0
        for rep in reps:
            cell = rep["cells"][(estimator, transform)]
            if isinstance(cell, str):
                failures += 1
                continue
            tau, lo, hi = cell
            taus.append(tau)
            covered.append(lo <= TRUTH <= hi)
        if taus:
            mse, bias2, variance = mse_decompose(taus, TRUTH)
            coverage = float(np.mean(covered))
        else:
            mse = bias2 = variance = coverage = None
        rows.append(
            ResultRow(
                study="generalization",
                p=cfg.p,
                estimator=estimator,
                transform=transform,
                mse=mse,
                bias2=bias2,
                variance=variance,
                coverage=coverage,
                failures=failures,
            )
        )
    diagnostics = {
        "mean_sate": float(np.mean([r["sate"] for r in reps])),
        "mean_n": float(np.mean([r["n"] for r in reps])),
        "redraws": int(sum(r["redraws"] for r in reps)),
        "reps": cfg.reps,
    }
    return StudyResults(study="generalization", p=cfg.p, rows=tuple(rows), diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Precision study
# ---------------------------------------------------------------------------


def _selected_covariates(beta: np.ndarray, max_covariates: int) -> np.ndarray:
    """Indices of experiment covariates used by capped estimators.

    When the cap binds, keep covariates with nonzero data-generating
    coefficients (informed selection), in index order.
    """
    p = beta.shape[0]
    if p <= max_covariates:
        return np.arange(p)
    nonzero = np.flatnonzero(beta)
    if nonzero.size >= max_covariates:
        return nonzero[:max_covariates]
    extra = np.setdiff1d(np.arange(p), nonzero)[: max_covariates - nonzero.size]
    return np.sort(np.concatenate([nonzero, extra]))


def _draw_assignments(rng: np.random.Generator, count: int, n: int) -> tuple[np.ndarray, int]:
    t = rng.random((count, n)) < 0.5
    redraws = 0
    while True:
        counts = t.sum(axis=1)
        bad = (counts == 0) | (counts == n)
        if not bad.any():
            return t, redraws
        redraws += int(bad.sum())
        t[bad] = rng.random((int(bad.sum()), n)) < 0.5


def _fwl_tau(t_mat: np.ndarray, y_control: np.ndarray, covariates: np.ndarray) -> np.ndarray:
    """Treatment coefficients across assignments via residualization.

    With a homogeneous effect the observed outcome is ``y_control + 0.5 T``,
    so the coefficient on T equals 0.5 plus the coefficient from
    regressing residualized ``y_control`` on residualized T. The
    non-treatment design is fixed across assignments, which makes the
    whole sweep three matrix products.
    """
    n = y_control.shape[0]
    z = np.column_stack([np.ones(n), covariates])
    zz_inv_zt = np.linalg.solve(z.T @ z, z.T)
    proj = np.eye(n) - z @ zz_inv_zt
    t_res = t_mat @ proj
    y_res = proj @ y_control
    denom = np.einsum("an,an->a", t_res, t_mat.astype(float))
    return TRUTH + (t_res @ y_res) / denom


def _precision_generation_task(cfg: PrecisionConfig, beta: np.ndarray, gen_index: int) -> dict:
    rng = _stream(cfg.base_seed, _PRECISION, cfg.p, _P_DATA, gen_index)
    gen = gen_precision_generation(cfg, beta, rng)
    selected = _selected_covariates(beta, cfg.max_rct_covariates)
    x_sel = gen.x[:, selected]

    predictions: dict[str, np.ndarray] = {}
    failed_transforms: dict[str, str] = {}
    for t_idx, spec in enumerate(cfg.transforms):
        t_rng = _stream(cfg.base_seed, _PRECISION, cfg.p, _P_TRANSFORM, gen_index, t_idx)
        try:
            gram, _ = apply_transform(gen.aux, spec, cfg.delta, t_rng)
            model = ols_from_gram(gram)
            predictions[spec.label] = np.asarray(predict(model, gen.x), dtype=float)
        except NumericalError as exc:
            failed_transforms[spec.label] = type(exc).__name__

    a_rng = _stream(cfg.base_seed, _PRECISION, cfg.p, _P_ASSIGN, gen_index)
    t_mat, assignment_redraws = _draw_assignments(a_rng, cfg.assignments, cfg.n)

    taus: dict[tuple[str, str], np.ndarray] = {}
    failures: dict[tuple[str, str], int] = {}
    t_float = t_mat.astype(float)
    counts = t_mat.sum(axis=1)
    dm = (t_float @ gen.y_treated) / counts - ((1 - t_float) @ gen.y_control) / (cfg.n - counts)
    taus[("dm", "none")] = dm
    taus[("ols_rct", "none")] = _fwl_tau(t_mat, gen.y_control, x_sel)
    for label, pred in predictions.items():
        taus[("ols_aux", label)] = _fwl_tau(t_mat, gen.y_control, pred[:, None])

    if cfg.include_loop:
        for label, pred in predictions.items():
            vals = np.full(cfg.assignments, np.nan)
            failed = 0
            for a in range(cfg.assignments):
                t_a = t_float[a]
                y_obs = gen.y_control + TRUTH * t_a
                try:
                    sample = RctSample(y=y_obs, t=t_a, x=x_sel, pi=0.5)
                    vals[a] = loop_estimate(sample, pred, cfg.max_rct_covariates).tau_hat
                except NumericalError:
                    failed += 1
            taus[("loop", label)] = vals[np.isfinite(vals)]
            failures[("loop", label)] = failed

    out = {"vars": {}, "failures": {}, "assignment_redraws": assignment_redraws}
    for key, values in taus.items():
        if values.size >= 2:
            out["vars"][key] = float(np.var(values, ddof=1))
        out["failures"][key] = failures.get(key, 0)
    for label, kind in failed_transforms.items():
        out["failures"][("ols_aux", label)] = cfg.assignments
        if cfg.include_loop:
            out["failures"][("loop", label)] = cfg.assignments
    return out


def run_precision_study(cfg: PrecisionConfig, threads: int = 1) -> StudyResults:
    """Run the variance study and aggregate mean variances and efficiencies.

    Relative efficiencies are averaged generation by generation, each
    computed against that generation's baseline variance.
    """
    beta = precision_coefficients(cfg.p, cfg.base_seed)
    task = partial(_precision_generation_task, cfg, beta)
    gens = _map_indexed(task, cfg.generations, threads)

    keys: list[tuple[str, str]] = [("dm", "none"), ("ols_rct", "none")]
    keys += [("ols_aux", spec.label) for spec in cfg.transforms]
    if cfg.include_loop:
        keys += [("loop", spec.label) for spec in cfg.transforms]

    rows = []
    for key in keys:
        vars_, re_dm, re_reg = [], [], []
        failures = 0
        for gen in gens:
            failures += gen["failures"].get(key, 0)
            v = gen["vars"].get(key)
            if v is None or v <= 0:
                continue
            vars_.append(v)
            v_dm = gen["vars"].get(("dm", "none"))
            v_reg = gen["vars"].get(("ols_rct", "none"))
            if v_dm:
                re_dm.append(v_dm / v)
            if v_reg:
                re_reg.append(v_reg / v)
        rows.append(
            ResultRow(
                study="precision",
                p=cfg.p,
                estimator=key[0],
                transform=key[1],
                var_tau=float(np.mean(vars_)) if vars_ else None,
                re_dm=float(np.mean(re_dm)) if re_dm else None,
                re_reg=float(np.mean(re_reg)) if re_reg else None,
                failures=failures,
            )
        )
    diagnostics = {
        "generations": cfg.generations,
        "assignments": cfg.assignments,
        "assignment_redraws": int(sum(g["assignment_redraws"] for g in gens)),
    }
    return StudyResults(study="precision", p=cfg.p, rows=tuple(rows), diagnostics=diagnostics)


def _map_indexed(task, count: int, threads: int) -> list:
    if threads <= 1:
        return [task(i) for i in range(count)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(task, range(count)))
