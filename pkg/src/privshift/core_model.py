"""Data-matrix and gram-matrix algebra.

A data matrix holds one row per subject: a constant 1 in column 0, the
outcome in column 1, and covariates in the remaining columns. Its scaled
cross-product ``D'D / m`` (the gram matrix) carries the first and second
empirical moments of every column and is a sufficient statistic for any
least-squares fit among the columns. This module implements construction,
the moment partition (means / variances / correlations), the inverse
reconstruction, and OLS from gram blocks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateColumn, SingularSystem

# Columns with variance at or below this are treated as constant.
VARIANCE_FLOOR = 1e-12

_RIDGE_SCALE = 1e-8


class Provenance(str, enum.Enum):
    """How a gram matrix was produced."""

    EXACT = "exact"
    ENTRY_NOISE = "entry_noise"
    DP = "dp"
    SYNTHETIC_DERIVED = "synthetic_derived"


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DataMatrix:
    """Subject-level data: intercept column, outcome column, covariates.

    Attributes:
        values: (m, p + 2) float array; column 0 is identically 1, column 1
            is the outcome, columns 2..p+1 are covariates.
        column_names: one label per column.
    """

    values: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 2:
            raise ValueError("data matrix must be two-dimensional")
        m, cols = arr.shape
        if m < 2:
            raise ValueError(f"need at least 2 rows, got {m}")
        if cols < 3:
            raise ValueError("need at least 3 columns (const, outcome, one covariate)")
        if not np.all(np.isfinite(arr)):
            raise ValueError("data matrix contains non-finite entries")
        if not np.all(arr[:, 0] == 1.0):
            raise ValueError("column 0 must be identically 1")
        names = tuple(self.column_names) or default_column_names(cols - 2)
        if len(names) != cols:
            raise ValueError(f"expected {cols} column names, got {len(names)}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "column_names", names)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1] - 2

    @property
    def outcome(self) -> np.ndarray:
        return self.values[:, 1]

    @property
    def covariates(self) -> np.ndarray:
        return self.values[:, 2:]

    @property
    def data_columns(self) -> np.ndarray:
        """Outcome and covariates, without the intercept column."""
        return self.values[:, 1:]

    @classmethod
    def from_columns(cls, outcome, covariates, column_names=()) -> "DataMatrix":
        y = np.asarray(outcome, dtype=float).reshape(-1)
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        values = np.column_stack([np.ones(y.shape[0]), y, x])
        return cls(values, tuple(column_names))


def default_column_names(p: int) -> tuple[str, ...]:
    return ("const", "y") + tuple(f"x{j}" for j in range(1, p + 1))


@dataclass(frozen=True)
class GramMatrix:
    """Scaled cross-product summary ``D'D / m`` with provenance metadata."""

    entries: np.ndarray
    m: int
    provenance: Provenance
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("gram matrix must be square")
        if arr.shape[0] < 3:
            raise ValueError("gram matrix must be at least 3x3")
        if not np.all(np.isfinite(arr)):
            raise ValueError("gram matrix contains non-finite entries")
        if not np.array_equal(arr, arr.T):
            raise ValueError("gram matrix must be stored exactly symmetric")
        prov = Provenance(self.provenance)
        if prov in (Provenance.EXACT, Provenance.ENTRY_NOISE) and arr[0, 0] != 1.0:
            raise ValueError("entry (0, 0) must be exactly 1 for data-derived grams")
        if self.m < 1:
            raise ValueError("m must be positive")
        names = tuple(self.column_names) or default_column_names(arr.shape[0] - 2)
        if len(names) != arr.shape[0]:
            raise ValueError("column name count does not match gram size")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        object.__setattr__(self, "provenance", prov)
        object.__setattr__(self, "column_names", names)

    @property
    def p(self) -> int:
        return self.entries.shape[0] - 2

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])


@dataclass(frozen=True)
class MomentSummary:
    """Column means, variances, and correlation matrix of the data columns.

    ``mu`` and ``sigma2`` cover the outcome followed by the covariates
    (length p + 1); ``corr`` is the matching correlation matrix with an
    exact unit diagonal.
    """

    mu: np.ndarray
    sigma2: np.ndarray
    corr: np.ndarray

    def __post_init__(self):
        mu = _frozen_array(self.mu)
        sigma2 = _frozen_array(self.sigma2)
        corr = np.array(self.corr, dtype=float)
        k = mu.shape[0]
        if mu.ndim != 1 or sigma2.shape != (k,) or corr.shape != (k, k):
            raise ValueError("inconsistent moment summary shapes")
        if np.any(sigma2 < 0):
            raise ValueError("variances must be nonnegative")
        if not np.array_equal(corr, corr.T):
            raise ValueError("correlation matrix must be exactly symmetric")
        if not np.all(np.diag(corr) == 1.0):
            raise ValueError("correlation diagonal must be exactly 1")
        off = np.abs(corr) - 1.0
        if np.any(off > 1e-9):
            raise ValueError("correlations must lie in [-1, 1]")
        # Squash float-level overshoot at the boundary.
        np.clip(corr, -1.0, 1.0, out=corr)
        corr.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "corr", corr)

    @property
    def k(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class LinearModel:
    """Affine model fitted from gram blocks."""

    intercept: float
    coefficients: np.ndarray
    covariate_indices: tuple[int, ...]
    residual_variance: float

    def __post_init__(self):
        coefs = _frozen_array(self.coefficients)
        if coefs.ndim != 1:
            raise ValueError("coefficients must be one-dimensional")
        if len(self.covariate_indices) != coefs.shape[0]:
            raise ValueError("coefficient count must match covariate indices")
        if self.residual_variance < 0:
            raise ValueError("residual variance must be nonnegative")
        object.__setattr__(self, "coefficients", coefs)
        object.__setattr__(self, "covariate_indices", tuple(self.covariate_indices))


def compute_gram(d: DataMatrix) -> GramMatrix:
    """Return ``D'D / m`` with provenance ``exact``.

    The product is symmetrized entry-by-entry so the stored matrix is
    exactly symmetric regardless of BLAS summation order.
    """
    raw = d.values.T @ d.values / d.m
    sym = 0.5 * (raw + raw.T)
    sym[0, 0] = 1.0
    return GramMatrix(sym, m=d.m, provenance=Provenance.EXACT, column_names=d.column_names)


def partition_gram(g: GramMatrix) -> MomentSummary:
    """Split a gram matrix into means, variances, and correlations.

    Raises:
        DegenerateColumn: if a data column is numerically constant.
    """
    k = g.entries.shape[0] - 1
    mu = g.entries[0, 1:].copy()
    sigma2 = np.diag(g.entries)[1:] - mu**2
    if np.any(sigma2 <= VARIANCE_FLOOR):
        bad = [g.column_names[j + 1] for j in np.nonzero(sigma2 <= VARIANCE_FLOOR)[0]]
        raise DegenerateColumn(f"constant column(s): {', '.join(bad)}")
    sd = np.sqrt(sigma2)
    corr = (g.entries[1:, 1:] - np.outer(mu, mu)) / np.outer(sd, sd)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    np.clip(corr, -1.0, 1.0, out=corr)
    assert corr.shape == (k, k)
    return MomentSummary(mu=mu, sigma2=sigma2, corr=corr)


def reconstruct_gram(
    s: MomentSummary, m: int, provenance: Provenance, column_names: tuple[str, ...] = ()
) -> GramMatrix:
    """Rebuild the gram matrix implied by a moment summary.

    The second-moment diagonal is ``sigma2 + mu**2`` and the off-diagonal
    cross moments are ``corr * sigma_l * sigma_j + mu_l * mu_j``.
    """
    k = s.k
    sd = np.sqrt(s.sigma2)
    block = s.corr * np.outer(sd, sd) + np.outer(s.mu, s.mu)
    block = 0.5 * (block + block.T)
    np.fill_diagonal(block, s.sigma2 + s.mu**2)
    out = np.empty((k + 1, k + 1))
    out[0, 0] = 1.0
    out[0, 1:] = s.mu
    out[1:, 0] = s.mu
    out[1:, 1:] = block
    return GramMatrix(out, m=m, provenance=provenance, column_names=column_names)


def solve_normal_equations(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve the symmetric system ``a @ x = b`` with layered fallbacks.

    Tries a positive-definite factorization first, then a symmetric
    indefinite solve (noisy summaries are often indefinite), and finally a
    ridge-jittered retry with ``1e-8 * trace(a) / dim`` added to the
    non-intercept diagonal. Raises ``SingularSystem`` when all fail.
    """
    for attempt in range(3):
        mat = a
        if attempt == 2:
            jitter = _RIDGE_SCALE * np.trace(a) / a.shape[0]
            mat = a.copy()
            mat[1:, 1:] += jitter * np.eye(a.shape[0] - 1)
        assume = "pos" if attempt == 0 else "sym"
        try:
            x = scipy.linalg.solve(mat, b, assume_a=assume)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            continue
        if np.all(np.isfinite(x)):
            return x
    raise SingularSystem("normal equations unsolvable (rank-deficient or noise-corrupted)")


def ols_from_gram(
    g: GramMatrix, outcome_index: int = 1, covariate_indices=None
) -> LinearModel:
    """Fit OLS of one gram column on others, intercept included implicitly.

    Args:
        g: gram matrix (any provenance).
        outcome_index: column index of the dependent variable.
        covariate_indices: column indices of regressors; defaults to every
            data column except the outcome. Index 0 is reserved for the
            intercept and may not appear.

    Returns:
        LinearModel with the residual variance implied by the gram
        identities, clamped at zero (noisy grams can drive it negative).
    """
    size = g.entries.shape[0]
    if covariate_indices is None:
        covariate_indices = [j for j in range(1, size) if j != outcome_index]
    idx = list(covariate_indices)
    if not idx:
        raise ValueError("need at least one covariate index")
    if outcome_index in idx or 0 in idx:
        raise ValueError("covariate indices must exclude the outcome and intercept")
    if not all(0 < j < size for j in idx) or not 0 < outcome_index < size:
        raise ValueError("column index out of range")

    q = len(idx)
    a = np.empty((q + 1, q + 1))
    a[0, 0] = g.entries[0, 0]
    a[0, 1:] = g.entries[0, idx]
    a[1:, 0] = g.entries[idx, 0]
    a[1:, 1:] = g.entries[np.ix_(idx, idx)]
    b = np.empty(q + 1)
    b[0] = g.entries[0, outcome_index]
    b[1:] = g.entries[idx, outcome_index]

    theta = solve_normal_equations(a, b)
    resid_var = float(g.entries[outcome_index, outcome_index] - theta @ b)
    return LinearModel(
        intercept=float(theta[0]),
        coefficients=theta[1:],
        covariate_indices=tuple(idx),
        residual_variance=max(resid_var, 0.0),
    )


def predict(model: LinearModel, covariates) -> float | np.ndarray:
    """Evaluate ``intercept + covariates @ coefficients``.

    Accepts a single covariate vector or a stacked (n, q) matrix.
    """
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != model.coefficients.shape[0]:
            raise ValueError("covariate length does not match model")
        return float(model.intercept + x @ model.coefficients)
    if x.shape[1] != model.coefficients.shape[0]:
        raise ValueError("covariate width does not match model")
    return model.intercept + x @ model.coefficients
