import numpy as np
import pytest

from privshift import (
    DataMatrix,
    DegenerateColumn,
    Provenance,
    SingularSystem,
    compute_gram,
    ols_from_gram,
    partition_gram,
    predict,
    reconstruct_gram,
)
from privshift.core_model import MomentSummary, solve_normal_equations


def random_data(rng, m, p):
    x = rng.normal(rng.normal(0, 2, p), rng.uniform(0.5, 3, p), size=(m, p))
    beta = rng.normal(0, 1, p)
    y = rng.normal(0, 1) + x @ beta + rng.normal(0, 1, m)
    return DataMatrix.from_columns(y, x)


class TestComputeGram:
    def test_hand_example(self):
        d = DataMatrix([[1, 2, 0], [1, 4, 2]])
        g = compute_gram(d)
        assert np.array_equal(g.entries, [[1, 3, 1], [3, 10, 4], [1, 4, 2]])
        assert g.provenance == Provenance.EXACT
        assert g.m == 2

    def test_zero_columns(self):
        d = DataMatrix([[1, 0, 0]] * 5)
        g = compute_gram(d)
        assert np.array_equal(g.entries, [[1, 0, 0], [0, 0, 0], [0, 0, 0]])

    def test_psd_and_symmetric(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            d = random_data(rng, m=int(rng.integers(5, 60)), p=int(rng.integers(1, 8)))
            g = compute_gram(d)
            assert np.array_equal(g.entries, g.entries.T)
            assert g.min_eigenvalue() >= -1e-10
            assert g.entries[0, 0] == 1.0

    def test_duplicating_identical_rows_is_a_fixed_point(self):
        row = [1.0, 2.5, -1.0, 0.3]
        before = compute_gram(DataMatrix([row] * 4))
        after = compute_gram(DataMatrix([row] * 5))
        assert np.allclose(before.entries, after.entries, atol=1e-14)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            DataMatrix([[1, 2, np.nan], [1, 0, 1]])
        with pytest.raises(ValueError):
            DataMatrix([[2, 2, 3], [1, 0, 1]])
        with pytest.raises(ValueError):
            DataMatrix([[1, 2, 3]])


class TestPartitionGram:
    def test_two_point_example(self):
        g = compute_gram(DataMatrix([[1, 0, 0], [1, 2, 2]]))
        s = partition_gram(g)
        assert np.allclose(s.mu, [1, 1])
        assert np.allclose(s.sigma2, [1, 1])
        assert np.allclose(s.corr, [[1, 1], [1, 1]])

    def test_standardized_uncorrelated_columns_give_identity(self):
        rng = np.random.default_rng(2)
        z = rng.normal(0, 1, size=(400, 3))
        q, _ = np.linalg.qr(z - z.mean(axis=0))
        cols = q / q.std(axis=0)  # exactly orthogonal, unit variance
        d = DataMatrix.from_columns(cols[:, 0], cols[:, 1:])
        s = partition_gram(compute_gram(d))
        assert np.allclose(s.corr, np.eye(3), atol=1e-10)

    def test_degenerate_column(self):
        d = DataMatrix.from_columns(np.zeros(5), np.arange(5.0))
        with pytest.raises(DegenerateColumn):
            partition_gram(compute_gram(d))

    def test_round_trip_partition_then_reconstruct(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            d = random_data(rng, m=int(rng.integers(5, 80)), p=int(rng.integers(1, 7)))
            g = compute_gram(d)
            s = partition_gram(g)
            back = reconstruct_gram(s, m=g.m, provenance=g.provenance, column_names=g.column_names)
            assert np.max(np.abs(back.entries - g.entries)) < 1e-12

    def test_round_trip_reconstruct_then_partition(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            k = int(rng.integers(2, 6))
            mu = rng.normal(0, 2, k)
            sigma2 = rng.uniform(0.2, 3, k)
            a = rng.normal(0, 1, size=(k, k + 3))
            corr = np.corrcoef(a)
            np.fill_diagonal(corr, 1.0)
            s = MomentSummary(mu=mu, sigma2=sigma2, corr=corr)
            g = reconstruct_gram(s, m=10, provenance=Provenance.EXACT)
            s2 = partition_gram(g)
            assert np.max(np.abs(s2.mu - s.mu)) < 1e-12
            assert np.max(np.abs(s2.sigma2 - s.sigma2)) < 1e-12
            assert np.max(np.abs(s2.corr - s.corr)) < 1e-12


class TestReconstructGram:
    def test_centered_unit_identity(self):
        s = MomentSummary(mu=[0, 0], sigma2=[1, 1], corr=np.eye(2))
        g = reconstruct_gram(s, m=10, provenance=Provenance.EXACT)
        assert np.array_equal(g.entries, np.eye(3))

    def test_cross_moment_formula(self):
        s = MomentSummary(mu=[1, 1], sigma2=[1, 1], corr=[[1, 1], [1, 1]])
        g = reconstruct_gram(s, m=10, provenance=Provenance.EXACT)
        assert g.entries[1, 2] == 2.0


class TestOlsFromGram:
    def test_exact_linear_fit(self):
        d = DataMatrix.from_columns([1, 3, 5], [0, 1, 2])
        model = ols_from_gram(compute_gram(d))
        assert abs(model.intercept - 1) < 1e-10
        assert abs(model.coefficients[0] - 2) < 1e-10
        assert model.residual_variance < 1e-12

    def test_matches_direct_least_squares_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            m = int(rng.integers(5, 201))
            p = int(rng.integers(1, 21))
            if m <= p + 2:
                m = p + 3
            d = random_data(rng, m, p)
            model = ols_from_gram(compute_gram(d))
            z = np.column_stack([np.ones(m), d.covariates])
            theta, *_ = np.linalg.lstsq(z, d.outcome, rcond=None)
            assert abs(model.intercept - theta[0]) < 1e-8
            assert np.max(np.abs(model.coefficients - theta[1:])) < 1e-8

    def test_null_coefficient_is_statistically_zero(self):
        rng = np.random.default_rng(6)
        m = 20000
        x = rng.normal(0, 1, size=(m, 1))
        y = rng.normal(0, 1, size=m)  # independent of x
        d = DataMatrix.from_columns(y, x)
        model = ols_from_gram(compute_gram(d))
        se = 1.0 / np.sqrt(m)
        assert abs(model.coefficients[0]) < 3 * se

    def test_singular_system(self):
        with pytest.raises(SingularSystem):
            solve_normal_equations(np.zeros((3, 3)), np.ones(3))

    def test_index_validation(self):
        g = compute_gram(DataMatrix([[1, 2, 0], [1, 4, 2], [1, 1, 1]]))
        with pytest.raises(ValueError):
            ols_from_gram(g, outcome_index=1, covariate_indices=[1])
        with pytest.raises(ValueError):
            ols_from_gram(g, outcome_index=1, covariate_indices=[0])
        with pytest.raises(ValueError):
            ols_from_gram(g, outcome_index=1, covariate_indices=[])


class TestPredict:
    def test_affine_evaluation(self):
        from privshift import LinearModel

        model = LinearModel(intercept=1.0, coefficients=[2.0], covariate_indices=(2,), residual_variance=0.0)
        assert predict(model, [3.0]) == 7.0

    def test_zero_model(self):
        from privshift import LinearModel

        model = LinearModel(intercept=0.0, coefficients=[0.0, 0.0], covariate_indices=(2, 3), residual_variance=0.0)
        assert predict(model, [5.0, -2.0]) == 0.0

    def test_exact_fit_reproduces_training_outcomes(self):
        rng = np.random.default_rng(7)
        x = rng.normal(0, 1, size=(30, 2))
        y = 0.5 + x @ np.array([1.5, -2.0])  # no noise
        d = DataMatrix.from_columns(y, x)
        model = ols_from_gram(compute_gram(d))
        preds = predict(model, x)
        assert np.max(np.abs(preds - y)) < 1e-10
