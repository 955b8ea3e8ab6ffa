"""Sequential parametric synthesis of a data matrix.

Columns are generated one at a time: the first data column from a normal
fit of its marginal, each later column from a least-squares fit on the
columns already synthesized, plus Gaussian residual noise. All fits come
from the exact gram matrix, so residual variances use the same 1/m
scaling as the rest of the package.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core_model import (
    VARIANCE_FLOOR,
    DataMatrix,
    GramMatrix,
    LinearModel,
    Provenance,
    compute_gram,
    ols_from_gram,
    predict,
)
from .errors import DegenerateColumn, SingularSystem, TooFewRows


@dataclass(frozen=True)
class SequentialSynthesizer:
    """Fitted column-by-column generator.

    ``column_order`` lists data-column indices of the source matrix
    (1 = outcome). Entry j > 0 of ``models`` regresses column_order[j] on
    the j columns before it in the order.
    """

    column_order: tuple[int, ...]
    first_mean: float
    first_variance: float
    models: tuple[LinearModel, ...]
    column_names: tuple[str, ...]

    def __post_init__(self):
        if self.first_variance < 0:
            raise ValueError("first-column variance must be nonnegative")
        if len(self.models) != len(self.column_order) - 1:
            raise ValueError("need one model per column after the first")
        for j, model in enumerate(self.models, start=1):
            if model.covariate_indices != tuple(self.column_order[:j]):
                raise ValueError(f"model {j} does not condition on the preceding columns")


def fit_sequential(d: DataMatrix, order: tuple[int, ...] | None = None) -> SequentialSynthesizer:
    """Fit the sequential generator on a data matrix.

    Args:
        d: source data.
        order: permutation of the data-column indices 1..p+1; defaults to
            natural order (outcome first, then covariates).

    Raises:
        TooFewRows: if m <= p + 2, too few rows for the deepest fit.
        DegenerateColumn: if a predictor column is constant.
    """
    k = d.p + 1
    if d.m <= d.p + 2:
        raise TooFewRows(f"need more than p + 2 = {d.p + 2} rows, got {d.m}")
    if order is None:
        order = tuple(range(1, k + 1))
    else:
        order = tuple(int(j) for j in order)
        if sorted(order) != list(range(1, k + 1)):
            raise ValueError("order must be a permutation of the data-column indices")

    g = compute_gram(d)
    first = order[0]
    mean = float(g.entries[0, first])
    variance = max(float(g.entries[first, first] - mean**2), 0.0)
    models = []
    for j in range(1, k):
        try:
            models.append(ols_from_gram(g, outcome_index=order[j], covariate_indices=order[:j]))
        except SingularSystem:
            sig2 = np.diag(g.entries)[1:] - g.entries[0, 1:] ** 2
            constant = [d.column_names[c] for c in order[:j] if sig2[c - 1] <= VARIANCE_FLOOR]
            if constant:
                raise DegenerateColumn(f"constant predictor column(s): {', '.join(constant)}")
            raise
    return SequentialSynthesizer(
        column_order=order,
        first_mean=mean,
        first_variance=variance,
        models=tuple(models),
        column_names=d.column_names,
    )


def synthesize(s: SequentialSynthesizer, m_out: int, rng: np.random.Generator) -> DataMatrix:
    """Draw a synthetic data matrix of ``m_out`` rows from a fitted generator."""
    if m_out < 2:
        raise ValueError("m_out must be at least 2")
    k = len(s.column_order)
    values = np.ones((m_out, k + 1))
    values[:, s.column_order[0]] = rng.normal(s.first_mean, np.sqrt(s.first_variance), size=m_out)
    for j, model in enumerate(s.models, start=1):
        prior = values[:, list(s.column_order[:j])]
        mean = predict(model, prior)
        values[:, s.column_order[j]] = mean + rng.normal(
            0.0, np.sqrt(model.residual_variance), size=m_out
        )
    return DataMatrix(values, s.column_names)


def synthetic_gram(d: DataMatrix, m_out: int, rng: np.random.Generator) -> GramMatrix:
    """Gram summary of a synthetic replica, tagged with its provenance."""
    synth = synthesize(fit_sequential(d), m_out, rng)
    return replace(compute_gram(synth), provenance=Provenance.SYNTHETIC_DERIVED)
