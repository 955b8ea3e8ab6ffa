"""Disclosure-limiting transformations of a data matrix.

Two releases are supported. The ``dp`` route partitions the gram matrix
into means, variances, and the correlation upper triangle, perturbs each
piece with the Gaussian mechanism using exact leave-one-out sensitivities,
and reconstructs a noisy gram. The ``entry-noise`` route perturbs the data
itself before the cross product, so the released matrix stays a true gram
matrix (positive semi-definite) by construction.

Budget bookkeeping is exact: allocation shares are rational fractions, so
ledger totals add back to the stated budget without floating drift.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core_model import (
    DataMatrix,
    GramMatrix,
    MomentSummary,
    Provenance,
    compute_gram,
    partition_gram,
    reconstruct_gram,
)
from .errors import DegenerateColumn, InvalidBudget, TooFewRows

# log(1.25 / delta) must stay positive for the Gaussian noise scale.
_DELTA_CEILING = 1.25

# Noisy variances are floored at this times the pre-noise variance
# (absolute floor when the pre-noise variance is zero).
_VARIANCE_FLOOR_RATIO = 1e-8

#: Budget split modes for the dp transform. ``element`` noises every mean
#: and variance separately with its fractional share; ``block`` releases
#: the mean vector, variance vector, and correlation vector as three
#: queries with block shares; ``per_statistic`` calibrates each of those
#: three queries to the full stated budget (the ledger then reports the
#: true composed spend, three times the nominal budget).
SPLIT_MODES = ("element", "block", "per_statistic")


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) disclosure budget."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not np.isfinite(self.epsilon) or self.epsilon <= 0:
            raise InvalidBudget(f"epsilon must be positive, got {self.epsilon}")
        if not np.isfinite(self.delta) or not 0 < self.delta < 1:
            raise InvalidBudget(f"delta must be in (0, 1), got {self.delta}")

    def scaled(self, fraction: Fraction) -> "PrivacyBudget":
        f = float(fraction)
        return PrivacyBudget(self.epsilon * f, self.delta * f)


@dataclass(frozen=True)
class BudgetAllocation:
    """One released statistic and its rational share of the total budget."""

    label: str
    epsilon_share: Fraction
    delta_share: Fraction


@dataclass(frozen=True)
class BudgetLedger:
    """Exact accounting of budget spent across released statistics."""

    total: PrivacyBudget
    allocations: tuple[BudgetAllocation, ...]

    @property
    def epsilon_fraction(self) -> Fraction:
        return sum((a.epsilon_share for a in self.allocations), Fraction(0))

    @property
    def delta_fraction(self) -> Fraction:
        return sum((a.delta_share for a in self.allocations), Fraction(0))

    @property
    def spent_epsilon(self) -> float:
        return self.total.epsilon * float(self.epsilon_fraction)

    @property
    def spent_delta(self) -> float:
        return self.total.delta * float(self.delta_fraction)

    @property
    def within_budget(self) -> bool:
        return self.epsilon_fraction <= 1 and self.delta_fraction <= 1

    def budget_for(self, label: str) -> PrivacyBudget:
        for a in self.allocations:
            if a.label == label:
                return self.total.scaled(a.epsilon_share)
        raise KeyError(label)

    def rows(self) -> list[tuple[str, float, float]]:
        return [
            (a.label, self.total.epsilon * float(a.epsilon_share), self.total.delta * float(a.delta_share))
            for a in self.allocations
        ]


@dataclass(frozen=True)
class NoiseSpec:
    """Per-column noise variances for the entry-noise transform."""

    per_column_variance: np.ndarray

    def __post_init__(self):
        arr = np.array(self.per_column_variance, dtype=float).reshape(-1)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("noise variances must be finite and nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "per_column_variance", arr)

    @classmethod
    def constant(cls, lam: float, k: int) -> "NoiseSpec":
        return cls(np.full(k, float(lam)))

    @classmethod
    def empirical(cls, d: DataMatrix) -> "NoiseSpec":
        cols = d.data_columns
        return cls(cols.var(axis=0))


def gaussian_gamma(sensitivity: float, budget: PrivacyBudget) -> float:
    """Noise scale of the Gaussian mechanism.

    ``gamma = sensitivity * sqrt(2 * log(1.25 / delta)) / epsilon``; zero
    exactly when the sensitivity is zero.
    """
    if sensitivity < 0:
        raise ValueError("sensitivity must be nonnegative")
    if budget.delta >= _DELTA_CEILING:
        raise InvalidBudget(f"delta must be below {_DELTA_CEILING}")
    if sensitivity == 0:
        return 0.0
    return float(sensitivity * np.sqrt(2.0 * np.log(1.25 / budget.delta)) / budget.epsilon)


def gaussian_mechanism(stat, sensitivity: float, budget: PrivacyBudget, rng: np.random.Generator):
    """Add centered Gaussian noise with scale ``gaussian_gamma`` per coordinate.

    The sensitivity is the L2 leave-one-out sensitivity of the full vector.
    Returns the same shape as the input; scalars come back as floats.
    """
    gamma = gaussian_gamma(sensitivity, budget)
    arr = np.asarray(stat, dtype=float)
    noisy = arr + rng.normal(0.0, gamma, size=arr.shape)
    if arr.ndim == 0:
        return float(noisy)
    return noisy


@dataclass(frozen=True)
class LooSensitivities:
    """Exact leave-one-out sensitivities of the moment partition."""

    mean_element: np.ndarray
    variance_element: np.ndarray
    mean_vector: float
    variance_vector: float
    correlation_vector: float | None


def loo_sensitivities(d: DataMatrix, include_correlation: bool = True) -> LooSensitivities:
    """Maximum change of each moment statistic over all single-row removals.

    Statistics are recomputed on m - 1 rows via exact sum/cross-product
    downdates, chunked so memory stays bounded at large m. Mean and
    variance sensitivities are defined even for constant columns; the
    correlation sensitivity is not and raises ``DegenerateColumn``.
    """
    if d.m < 3:
        raise TooFewRows(f"need at least 3 rows for removal sensitivities, got {d.m}")
    cols = d.data_columns
    m, k = cols.shape
    s1 = cols.sum(axis=0)
    s2 = cols.T @ cols
    mu = s1 / m
    diag_s2 = np.diag(s2).copy()
    sigma2 = diag_s2 / m - mu**2
    iu = np.triu_indices(k, 1)
    corr_flat = None
    if include_correlation:
        if np.any(sigma2 <= 0):
            raise DegenerateColumn("correlation sensitivity undefined for constant columns")
        sd = np.sqrt(sigma2)
        corr_flat = ((s2 / m - np.outer(mu, mu)) / np.outer(sd, sd))[iu]

    mean_el = np.zeros(k)
    var_el = np.zeros(k)
    mean_vec = 0.0
    var_vec = 0.0
    corr_vec = 0.0
    chunk = max(1, int(2**22 // max(k * k, 1)))
    for lo in range(0, m, chunk):
        rows = cols[lo : lo + chunk]
        mu_wo = (s1 - rows) / (m - 1)
        var_wo = (diag_s2 - rows**2) / (m - 1) - mu_wo**2
        d_mu = np.abs(mu_wo - mu)
        d_var = np.abs(var_wo - sigma2)
        mean_el = np.maximum(mean_el, d_mu.max(axis=0))
        var_el = np.maximum(var_el, d_var.max(axis=0))
        mean_vec = max(mean_vec, float(np.sqrt((d_mu**2).sum(axis=1)).max()))
        var_vec = max(var_vec, float(np.sqrt((d_var**2).sum(axis=1)).max()))
        if include_correlation:
            if np.any(var_wo <= 0):
                raise DegenerateColumn("a column becomes constant after removing one row")
            s2_wo = (s2[None, :, :] - rows[:, :, None] * rows[:, None, :]) / (m - 1)
            cov_wo = s2_wo - mu_wo[:, :, None] * mu_wo[:, None, :]
            sd_wo = np.sqrt(var_wo)
            corr_wo = cov_wo / (sd_wo[:, :, None] * sd_wo[:, None, :])
            d_corr = corr_wo[:, iu[0], iu[1]] - corr_flat
            corr_vec = max(corr_vec, float(np.sqrt((d_corr**2).sum(axis=1)).max()))
    return LooSensitivities(
        mean_element=mean_el,
        variance_element=var_el,
        mean_vector=mean_vec,
        variance_vector=var_vec,
        correlation_vector=corr_vec if include_correlation else None,
    )


def loo_sensitivity(d: DataMatrix, block: str, index: int | None = None) -> float:
    """Leave-one-out sensitivity of a single moment block.

    ``block`` is one of ``mean`` / ``variance`` (which need ``index`` into
    the data columns, 0 = outcome), ``mean_vector`` / ``variance_vector``
    (L2 over the whole block), or ``correlation`` (L2 over the off-diagonal
    upper triangle).
    """
    if block in ("mean", "variance"):
        if index is None:
            raise ValueError(f"{block} sensitivity needs a column index")
        sens = loo_sensitivities(d, include_correlation=False)
        arr = sens.mean_element if block == "mean" else sens.variance_element
        return float(arr[index])
    sens_kind = {"mean_vector": "mean_vector", "variance_vector": "variance_vector", "correlation": "correlation_vector"}
    if block not in sens_kind:
        raise ValueError(f"unknown block {block!r}")
    sens = loo_sensitivities(d, include_correlation=(block == "correlation"))
    return float(getattr(sens, sens_kind[block]))


def allocate_budget(total: PrivacyBudget, p: int, split: str = "element") -> BudgetLedger:
    """Divide a budget across the moment statistics of a p-covariate matrix.

    Shares are proportional to element counts over the denominator
    ``p**2 + 5p + 4``: the means and variances blocks each receive
    ``2(p+1)`` parts and the correlation upper triangle ``p**2 + p`` parts,
    so the fractions sum exactly to one. In ``element`` mode the means and
    variances blocks are further divided evenly across their p + 1
    elements. In ``per_statistic`` mode every query is charged the full
    budget and the ledger records the three-fold overspend.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if split not in SPLIT_MODES:
        raise ValueError(f"split must be one of {SPLIT_MODES}")
    k = p + 1
    den = p * p + 5 * p + 4
    allocations: list[BudgetAllocation] = []
    if split == "element":
        el = Fraction(2, den)
        for j in range(k):
            allocations.append(BudgetAllocation(f"mean[{j}]", el, el))
        for j in range(k):
            allocations.append(BudgetAllocation(f"variance[{j}]", el, el))
        allocations.append(
            BudgetAllocation("correlation", Fraction(p * p + p, den), Fraction(p * p + p, den))
        )
    elif split == "block":
        blk = Fraction(2 * k, den)
        corr = Fraction(p * p + p, den)
        allocations = [
            BudgetAllocation("means", blk, blk),
            BudgetAllocation("variances", blk, blk),
            BudgetAllocation("correlation", corr, corr),
        ]
    else:
        one = Fraction(1)
        allocations = [
            BudgetAllocation("means", one, one),
            BudgetAllocation("variances", one, one),
            BudgetAllocation("correlation", one, one),
        ]
    return BudgetLedger(total=total, allocations=tuple(allocations))


def dp_gram_transform(
    d: DataMatrix,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    split: str = "element",
    psd_repair: bool = False,
) -> tuple[GramMatrix, BudgetLedger]:
    """Release a Gaussian-mechanism-noised gram matrix.

    Computes the moment partition, perturbs each piece with its exact
    leave-one-out sensitivity and budget share (see ``allocate_budget``),
    post-processes (variances floored, correlations clamped to [-1, 1],
    the data-independent unit diagonal never noised), and reconstructs.
    The output is symmetric but, unlike the entry-noise route, not
    guaranteed positive semi-definite; ``psd_repair`` optionally clips
    negative eigenvalues for downstream solvers that require it.
    """
    summary = partition_gram(compute_gram(d))
    sens = loo_sensitivities(d)
    ledger = allocate_budget(budget, d.p, split=split)
    k = summary.k

    if split == "element":
        mu_noisy = np.array(
            [
                gaussian_mechanism(summary.mu[j], float(sens.mean_element[j]), ledger.budget_for(f"mean[{j}]"), rng)
                for j in range(k)
            ]
        )
        sig2_noisy = np.array(
            [
                gaussian_mechanism(
                    summary.sigma2[j], float(sens.variance_element[j]), ledger.budget_for(f"variance[{j}]"), rng
                )
                for j in range(k)
            ]
        )
    else:
        mu_noisy = gaussian_mechanism(summary.mu, sens.mean_vector, ledger.budget_for("means"), rng)
        sig2_noisy = gaussian_mechanism(summary.sigma2, sens.variance_vector, ledger.budget_for("variances"), rng)

    iu = np.triu_indices(k, 1)
    corr_noisy_flat = gaussian_mechanism(
        summary.corr[iu], sens.correlation_vector, ledger.budget_for("correlation"), rng
    )

    floor = np.where(summary.sigma2 > 0, _VARIANCE_FLOOR_RATIO * summary.sigma2, _VARIANCE_FLOOR_RATIO)
    sig2_noisy = np.maximum(sig2_noisy, floor)
    corr_noisy_flat = np.clip(corr_noisy_flat, -1.0, 1.0)
    corr_noisy = np.eye(k)
    corr_noisy[iu] = corr_noisy_flat
    corr_noisy[(iu[1], iu[0])] = corr_noisy_flat

    noisy = MomentSummary(mu=mu_noisy, sigma2=sig2_noisy, corr=corr_noisy)
    gram = reconstruct_gram(noisy, m=d.m, provenance=Provenance.DP, column_names=d.column_names)
    if psd_repair:
        gram = _clip_to_psd(gram)
    return gram, ledger


def _clip_to_psd(g: GramMatrix) -> GramMatrix:
    vals, vecs = np.linalg.eigh(g.entries)
    clipped = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    clipped = 0.5 * (clipped + clipped.T)
    return GramMatrix(clipped, m=g.m, provenance=g.provenance, column_names=g.column_names)


def en_transform(
    d: DataMatrix, noise: NoiseSpec | float | None, rng: np.random.Generator
) -> GramMatrix:
    """Release the gram matrix of entry-wise noised data.

    Adds independent ``Normal(0, var_j)`` noise to every entry of data
    column j (the intercept column carries no information and is left
    untouched) and returns the gram of the noised matrix. When ``noise``
    is None the per-column empirical variances are used; a scalar applies
    one variance to every column. The result is a true gram matrix and
    therefore positive semi-definite.
    """
    k = d.p + 1
    if noise is None:
        spec = NoiseSpec.empirical(d)
    elif isinstance(noise, NoiseSpec):
        spec = noise
    else:
        spec = NoiseSpec.constant(float(noise), k)
    if spec.per_column_variance.shape[0] != k:
        raise ValueError(f"noise spec must cover {k} data columns")

    sd = np.sqrt(spec.per_column_variance)
    noised = d.values.copy()
    noised[:, 1:] += rng.normal(0.0, 1.0, size=(d.m, k)) * sd
    raw = noised.T @ noised / d.m
    sym = 0.5 * (raw + raw.T)
    sym[0, 0] = 1.0
    return GramMatrix(sym, m=d.m, provenance=Provenance.ENTRY_NOISE, column_names=d.column_names)
