"""Treatment-effect estimators for a randomized experiment, optionally
combined with summaries of an auxiliary observational study.

Baselines (difference in means, covariate-adjusted regression, IPW) use
experiment data alone. Calibration weighting reweights experiment units so
their covariate moments match auxiliary targets; the augmented variant adds
an outcome-model correction evaluated at the auxiliary means. Residualized
IPW subtracts a covariate-based imputation before weighting, and the
leave-one-out ensemble builds that imputation from an auxiliary prediction
blended with experiment covariates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp, softmax
from scipy.stats import norm

from .core_model import solve_normal_equations
from .errors import AllReplicatesFailed, EmptyArm, Infeasible, NumericalError, SingularSystem

# Dual Newton solver settings for calibration weights.
_NEWTON_TOL = 1e-10
_NEWTON_MAX_ITER = 100
_NEWTON_MAX_HALVINGS = 30
_NEWTON_RIDGE = 1e-12

# Ensemble blending grid; ties resolve toward the auxiliary model.
_ALPHA_GRID = np.linspace(0.0, 1.0, 21)


@dataclass(frozen=True)
class RctSample:
    """Randomized-experiment data with known treatment probability."""

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    pi: float

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        t = np.array(self.t, dtype=float).reshape(-1)
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = y.shape[0]
        if t.shape[0] != n or x.shape[0] != n:
            raise ValueError("y, t, and x must have matching lengths")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("sample contains non-finite values")
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("treatment indicator must be 0/1")
        if not 0 < self.pi < 1:
            raise ValueError("pi must lie strictly between 0 and 1")
        if t.sum() == 0 or t.sum() == n:
            raise EmptyArm("need at least one treated and one control unit")
        for name, arr in (("y", y), ("t", t), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_treated(self) -> int:
        return int(self.t.sum())

    def subset(self, indices) -> "RctSample":
        idx = np.asarray(indices, dtype=int)
        return RctSample(self.y[idx], self.t[idx], self.x[idx], self.pi)


@dataclass(frozen=True)
class CalibrationWeights:
    """Entropy-minimizing weights satisfying moment constraints."""

    w: np.ndarray
    eta: np.ndarray
    constraint_residual: float
    iterations: int

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        eta = np.array(self.eta, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1")
        w.setflags(write=False)
        eta.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "eta", eta)

    @property
    def effective_sample_size(self) -> float:
        return float(1.0 / np.sum(self.w**2))


@dataclass(frozen=True)
class EstimateResult:
    """A point estimate with optional uncertainty and diagnostics."""

    tau_hat: float
    estimator_id: str
    variance_hat: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variance_hat is not None and self.variance_hat < 0:
            raise ValueError("variance must be nonnegative")
        if self.ci_low is not None and self.ci_high is not None:
            if not self.ci_low <= self.tau_hat <= self.ci_high:
                raise ValueError("point estimate must lie inside its interval")


def _z_value(level: float) -> float:
    return float(norm.ppf(0.5 + level / 2.0))


def _normal_ci(tau: float, variance: float, level: float) -> tuple[float, float]:
    half = _z_value(level) * np.sqrt(variance)
    return tau - half, tau + half


def diff_in_means(s: RctSample, level: float = 0.95) -> EstimateResult:
    """Treated-minus-control mean with the two-sample variance formula."""
    treated = s.y[s.t == 1]
    control = s.y[s.t == 0]
    if treated.size == 0 or control.size == 0:
        raise EmptyArm("difference in means needs both arms")
    tau = float(treated.mean() - control.mean())
    var_t = float(treated.var(ddof=1)) if treated.size > 1 else 0.0
    var_c = float(control.var(ddof=1)) if control.size > 1 else 0.0
    variance = var_t / treated.size + var_c / control.size
    lo, hi = _normal_ci(tau, variance, level)
    return EstimateResult(
        tau_hat=tau,
        estimator_id="dm",
        variance_hat=variance,
        ci_low=lo,
        ci_high=hi,
        diagnostics={"n_treated": treated.size, "n_control": control.size},
    )


def regression_adjusted(s: RctSample, covariates, level: float = 0.95) -> EstimateResult:
    """Coefficient on treatment in OLS of outcome on treatment and covariates.

    ``covariates`` may be empty (q = 0), the experiment covariates, or a
    single auxiliary-prediction column.
    """
    c = np.asarray(covariates, dtype=float)
    if c.size == 0:
        c = np.empty((s.n, 0))
    elif c.ndim == 1:
        c = c[:, None]
    if c.shape[0] != s.n:
        raise ValueError("covariate rows must match the sample")
    q = c.shape[1]
    if q > s.n - 3:
        raise ValueError(f"too many covariates: q={q} with n={s.n}")

    z = np.column_stack([np.ones(s.n), s.t, c])
    a = z.T @ z
    b = z.T @ s.y
    theta = solve_normal_equations(a, b)
    resid = s.y - z @ theta
    dof = s.n - z.shape[1]
    sigma2 = float(resid @ resid) / dof
    # Var(tau_hat) = sigma2 * [(Z'Z)^-1]_{tt}
    e_t = np.zeros(z.shape[1])
    e_t[1] = 1.0
    variance = sigma2 * float(solve_normal_equations(a, e_t)[1])
    variance = max(variance, 0.0)
    tau = float(theta[1])
    lo, hi = _normal_ci(tau, variance, level)
    return EstimateResult(
        tau_hat=tau,
        estimator_id="ols",
        variance_hat=variance,
        ci_low=lo,
        ci_high=hi,
        diagnostics={"q": q, "residual_sigma2": sigma2},
    )


def _ipw_terms(s: RctSample, y: np.ndarray) -> np.ndarray:
    return s.t * y / s.pi - (1.0 - s.t) * y / (1.0 - s.pi)


def ipw_estimate(s: RctSample, level: float = 0.95) -> EstimateResult:
    """Inverse-probability-weighted mean contrast, normalized by 1/n."""
    u = _ipw_terms(s, s.y)
    tau = float(u.mean())
    variance = float(u.var(ddof=1)) / s.n
    lo, hi = _normal_ci(tau, variance, level)
    return EstimateResult(
        tau_hat=tau, estimator_id="ipw", variance_hat=variance, ci_low=lo, ci_high=hi
    )


def calibration_weights(g_rct, target) -> CalibrationWeights:
    """Solve for weights minimizing sum(w log w) under moment constraints.

    The constraints are w >= 0, sum(w) = 1, and ``w' g = target``. The dual
    is smooth and convex with ``w ~ softmax(g @ eta)``; it is solved by
    Newton iteration with step-halving. The dual gradient equals the
    calibration gap, so convergence at tolerance 1e-10 implies every
    constraint holds well within 1e-8.

    Raises:
        Infeasible: when Newton cannot drive the gap to tolerance (target
            outside the convex hull of the rows of g, or numerically so).
    """
    g = np.asarray(g_rct, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    tgt = np.asarray(target, dtype=float).reshape(-1)
    if g.shape[1] != tgt.shape[0]:
        raise ValueError("target length must match feature count")
    if not np.all(np.isfinite(g)) or not np.all(np.isfinite(tgt)):
        raise ValueError("calibration inputs must be finite")

    h = g - tgt
    n, r = h.shape
    eta = np.zeros(r)

    def dual_value(e):
        return float(logsumexp(h @ e))

    value = dual_value(eta)
    w = np.full(n, 1.0 / n)
    grad = w @ h
    iterations = 0
    for iterations in range(1, _NEWTON_MAX_ITER + 1):
        if np.linalg.norm(grad) <= _NEWTON_TOL:
            break
        centered = h - w @ h
        hess = (centered * w[:, None]).T @ centered + _NEWTON_RIDGE * np.eye(r)
        try:
            step = -solve_normal_equations(hess, grad)
        except SingularSystem:
            raise Infeasible("calibration Hessian is singular")
        scale = 1.0
        for _ in range(_NEWTON_MAX_HALVINGS):
            candidate = eta + scale * step
            if dual_value(candidate) < value:
                break
            scale *= 0.5
        else:
            break
        eta = eta + scale * step
        value = dual_value(eta)
        w = softmax(h @ eta)
        grad = w @ h
    residual = float(np.max(np.abs(grad)))
    if np.linalg.norm(grad) > _NEWTON_TOL:
        raise Infeasible(
            f"calibration did not converge: max constraint gap {residual:.3e} "
            f"after {iterations} iterations"
        )
    return CalibrationWeights(w=w, eta=eta, constraint_residual=residual, iterations=iterations)


def calibration_features(x: np.ndarray, second_moments: bool = False) -> np.ndarray:
    """Feature map for calibration: first moments, optionally squares too."""
    x = np.asarray(x, dtype=float)
    if second_moments:
        return np.column_stack([x, x**2])
    return x


def calibration_target_from_moments(mu, sigma2=None, second_moments: bool = False) -> np.ndarray:
    """Target vector matching ``calibration_features``.

    With second moments the squared-feature targets are ``sigma2 + mu**2``.
    """
    mu = np.asarray(mu, dtype=float)
    if not second_moments:
        return mu
    if sigma2 is None:
        raise ValueError("second-moment calibration needs variances")
    return np.concatenate([mu, np.asarray(sigma2, dtype=float) + mu**2])


def cw_estimate(s: RctSample, weights: CalibrationWeights) -> EstimateResult:
    """Calibration-weighted IPW contrast (weights already sum to one)."""
    tau = float(np.sum(weights.w * _ipw_terms(s, s.y)))
    return EstimateResult(
        tau_hat=tau,
        estimator_id="cw",
        diagnostics={
            "ess": weights.effective_sample_size,
            "constraint_residual": weights.constraint_residual,
        },
    )


def _fit_arm_model(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares fit of y on [1, x]; returns theta of length q + 1."""
    z = np.column_stack([np.ones(x.shape[0]), x])
    return solve_normal_equations(z.T @ z, z.T @ y)


def acw_estimate(s: RctSample, weights: CalibrationWeights, aux_mu) -> EstimateResult:
    """Augmented calibration-weighted estimator.

    Fits linear outcome models on each arm; the augmentation term is their
    contrast evaluated at the auxiliary covariate means (linearity means
    only first moments of the auxiliary study are needed), plus the
    calibration-weighted IPW of the within-arm residuals.
    """
    aux_mu = np.asarray(aux_mu, dtype=float).reshape(-1)
    if aux_mu.shape[0] != s.x.shape[1]:
        raise ValueError("auxiliary mean length must match covariate count")
    treated = s.t == 1
    theta_t = _fit_arm_model(s.x[treated], s.y[treated])
    theta_c = _fit_arm_model(s.x[~treated], s.y[~treated])
    augmentation = float(
        (theta_t[0] - theta_c[0]) + (theta_t[1:] - theta_c[1:]) @ aux_mu
    )
    fitted = np.where(
        treated,
        theta_t[0] + s.x @ theta_t[1:],
        theta_c[0] + s.x @ theta_c[1:],
    )
    resid_term = float(np.sum(weights.w * _ipw_terms(s, s.y - fitted)))
    return EstimateResult(
        tau_hat=augmentation + resid_term,
        estimator_id="acw",
        diagnostics={
            "augmentation": augmentation,
            "ess": weights.effective_sample_size,
        },
    )


def acw_pipeline(
    s: RctSample, aux_mu, aux_sigma2=None, second_moments: bool = False
) -> EstimateResult:
    """Calibrate to auxiliary moments, then run the augmented estimator."""
    features = calibration_features(s.x, second_moments)
    target = calibration_target_from_moments(aux_mu, aux_sigma2, second_moments)
    weights = calibration_weights(features, target)
    return acw_estimate(s, weights, np.asarray(aux_mu, dtype=float))


def fipw_estimate(s: RctSample, f_hat, level: float = 0.95) -> EstimateResult:
    """Residualized IPW: subtract a covariate-based imputation, then weight.

    ``f_hat`` must be computed without unit i's treatment or realized
    outcome (the leave-one-out ensemble enforces this).
    """
    f = np.asarray(f_hat, dtype=float).reshape(-1)
    if f.shape[0] != s.n:
        raise ValueError("f_hat length must match the sample")
    u = _ipw_terms(s, s.y - f)
    tau = float(u.mean())
    variance = float(u.var(ddof=1)) / s.n
    lo, hi = _normal_ci(tau, variance, level)
    return EstimateResult(
        tau_hat=tau, estimator_id="fipw", variance_hat=variance, ci_low=lo, ci_high=hi
    )


def _loo_arm_predictions(z: np.ndarray, y: np.ndarray, arm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fit y on z over ``arm`` rows; return predictions for all rows plus
    leave-one-out predictions for the arm rows themselves.

    Within-arm leave-one-out values use the hat-diagonal identity
    ``yhat_(-i) = (yhat_i - h_i y_i) / (1 - h_i)``.
    """
    za = z[arm]
    a = za.T @ za
    theta = solve_normal_equations(a, za.T @ y[arm])
    pred_all = z @ theta
    inv_za = solve_normal_equations(a, za.T)
    hat = np.sum(za * inv_za.T, axis=1)
    denom = np.clip(1.0 - hat, 1e-12, None)
    loo = (pred_all[arm] - hat * y[arm]) / denom
    return pred_all, loo


def loop_estimate(
    s: RctSample, aux_pred, max_rct_covariates: int = 20, level: float = 0.95
) -> EstimateResult:
    """Leave-one-out ensemble imputation plugged into residualized IPW.

    For each unit the blended potential-outcome mix ``pi*yt + (1-pi)*yc``
    is imputed from arm-wise linear fits that never use the unit's own
    outcome: model A regresses on the auxiliary prediction alone, model B
    on up to ``max_rct_covariates`` experiment covariates. The blend weight
    alpha minimizes the leave-one-out squared error of the observed
    outcomes on a grid, with ties resolved toward the auxiliary model.
    """
    if s.n < 6:
        raise ValueError("need at least 6 units")
    f = np.asarray(aux_pred, dtype=float).reshape(-1)
    if f.shape[0] != s.n:
        raise ValueError("aux_pred length must match the sample")
    x = s.x[:, : max(int(max_rct_covariates), 0)]
    z_a = np.column_stack([np.ones(s.n), f])
    z_b = np.column_stack([np.ones(s.n), x])
    treated = s.t == 1

    m_hat = {}
    own = {}
    for key, z in (("A", z_a), ("B", z_b)):
        pred_t, loo_t = _loo_arm_predictions(z, s.y, treated)
        pred_c, loo_c = _loo_arm_predictions(z, s.y, ~treated)
        yt = pred_t.copy()
        yt[treated] = loo_t
        yc = pred_c.copy()
        yc[~treated] = loo_c
        m_hat[key] = s.pi * yt + (1.0 - s.pi) * yc
        own_pred = np.empty(s.n)
        own_pred[treated] = loo_t
        own_pred[~treated] = loo_c
        own[key] = own_pred

    errors = np.array(
        [np.sum((s.y - (a * own["A"] + (1 - a) * own["B"])) ** 2) for a in _ALPHA_GRID]
    )
    best = len(_ALPHA_GRID) - 1 - int(np.argmin(errors[::-1]))
    alpha = float(_ALPHA_GRID[best])
    imputation = alpha * m_hat["A"] + (1 - alpha) * m_hat["B"]

    u = _ipw_terms(s, s.y - imputation)
    tau = float(u.mean())
    variance = float(u.var(ddof=1)) / s.n
    lo, hi = _normal_ci(tau, variance, level)
    return EstimateResult(
        tau_hat=tau,
        estimator_id="loop",
        variance_hat=variance,
        ci_low=lo,
        ci_high=hi,
        diagnostics={"alpha": alpha},
    )


@dataclass(frozen=True)
class BootstrapCi:
    ci_low: float
    ci_high: float
    point: float
    bootstrap_sd: float
    n_ok: int
    n_failed: int
    failures: dict


def bootstrap_ci(
    estimator: Callable[[RctSample], float],
    s: RctSample,
    b_reps: int,
    level: float,
    rng: np.random.Generator,
) -> BootstrapCi:
    """Normal-approximation bootstrap interval around the full-sample point.

    Resamples experiment rows with replacement; replicates whose
    estimation fails (infeasible calibration, singular fits, an empty arm)
    are dropped and counted. Percentile endpoints would be coarse at small
    replicate counts, so the interval is point +/- z * bootstrap SD.
    """
    if b_reps < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    point = float(estimator(s))
    indices = rng.integers(0, s.n, size=(b_reps, s.n))
    taus = []
    failures: dict[str, int] = {}
    for row in indices:
        try:
            taus.append(float(estimator(s.subset(row))))
        except NumericalError as exc:
            kind = type(exc).__name__
            failures[kind] = failures.get(kind, 0) + 1
    if not taus:
        raise AllReplicatesFailed("every bootstrap replicate failed")
    sd = float(np.std(taus, ddof=1)) if len(taus) > 1 else 0.0
    half = _z_value(level) * sd
    return BootstrapCi(
        ci_low=point - half,
        ci_high=point + half,
        point=point,
        bootstrap_sd=sd,
        n_ok=len(taus),
        n_failed=b_reps - len(taus),
        failures=failures,
    )
