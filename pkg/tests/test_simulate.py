import numpy as np
import pytest

from fusedtree.errors import DataError
from fusedtree.estimator import fit_gaussian
from fusedtree.penalty import PenaltyStructure, build_block_design
from fusedtree.simulate import (
    SimConfig,
    _f_full_fusion,
    _f_interaction,
    _f_regpath,
    gen_covariates,
    gen_full_fusion,
    gen_interaction,
    gen_linear,
    gen_regpath,
    run_experiment,
)


class TestGenCovariates:
    def test_identity_correlations_small(self):
        Z, X = gen_covariates(1000, 20, 5, "identity", seed=1)
        corr = np.corrcoef(X, rowvar=False)
        off = corr[~np.eye(20, dtype=bool)]
        assert np.max(np.abs(off)) < 0.15
        assert Z.min() >= 0 and Z.max() <= 1

    def test_ar1_adjacent_correlation(self):
        _, X = gen_covariates(2000, 30, 5, "ar1", rho=0.5, seed=2)
        adj = [np.corrcoef(X[:, j], X[:, j + 1])[0, 1] for j in range(29)]
        assert 0.4 <= np.mean(adj) <= 0.6
        assert min(adj) > 0.3

    def test_deterministic(self):
        a = gen_covariates(50, 10, 3, "ar1", seed=5)
        b = gen_covariates(50, 10, 3, "ar1", seed=5)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_standardized_columns(self):
        _, X = gen_covariates(400, 15, 2, "exchangeable", rho=0.3, seed=3)
        np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(X.std(axis=0), 1.0, atol=1e-12)

    def test_bad_covariance(self):
        with pytest.raises(DataError):
            gen_covariates(20, 5, 2, "wishful", seed=1)


class TestInteraction:
    def test_leaf_means_with_zero_beta(self):
        cfg = SimConfig(experiment="interaction", n=4000, p=8, n_test=100, seed=0)
        rng = np.random.default_rng(42)
        Z, X = gen_covariates(4000, 8, 5, "identity", rng=rng)
        f = _f_interaction(Z, X, np.zeros(8), 2)
        leaves = [
            (Z[:, 0] <= 0.5) & (Z[:, 1] <= 0.5),
            (Z[:, 0] <= 0.5) & (Z[:, 1] > 0.5),
            (Z[:, 0] > 0.5) & (Z[:, 3] <= 0.5),
            (Z[:, 0] > 0.5) & (Z[:, 3] > 0.5),
        ]
        for sel, c in zip(leaves, (-10.0, -5.0, 5.0, 10.0)):
            assert f[sel].mean() == pytest.approx(c + 1.5, abs=0.25)  # E[3 z3] = 1.5

    def test_oracle_recovers_leaf_intercepts(self):
        cfg = SimConfig(experiment="interaction", n=2000, p=40, n_test=100, seed=3)
        rep = gen_interaction(cfg, seed=3)
        leaves = rep.true_tree.assign(rep.Z)
        d = build_block_design(rep.X, leaves, 4, rep.Z[:, 2][:, None])
        pen = PenaltyStructure(1.0, 1.0, 4, 40)
        c, beta = fit_gaussian(d, rep.response.y, pen)
        np.testing.assert_allclose(
            c[:4], [-10 + 1.5, -5 + 1.5, 5 + 1.5, 10 + 1.5], atol=0.5
        )

    def test_signal_bookkeeping_reproducible(self):
        cfg = SimConfig(experiment="interaction", n=200, p=30, n_test=100, seed=5)
        a = gen_interaction(cfg, seed=1)
        b = gen_interaction(cfg, seed=1)
        assert np.array_equal(a.response.y, b.response.y)
        assert np.array_equal(a.beta, b.beta)
        var_ratio = np.var(a.response.y) / cfg.noise_sd**2
        assert np.isfinite(var_ratio) and var_ratio > 1


class TestFullFusion:
    def test_point_value(self):
        Z = np.array([[0.5, 0.5, 0.5, 0.0, 0.0]])
        X = np.zeros((1, 3))
        f = _f_full_fusion(Z, X, np.zeros(3))
        assert f[0] == pytest.approx(15 * np.sin(np.pi / 4) + 0.0 + 2.0 + 0.0, abs=1e-12)

    def test_quadratic_term_vanishes_at_half(self):
        Za = np.array([[0.0, 0.0, 0.5, 0.0, 0.0]])
        Zb = np.array([[0.0, 0.0, 0.9, 0.0, 0.0]])
        X = np.zeros((1, 2))
        fa = _f_full_fusion(Za, X, np.zeros(2))
        fb = _f_full_fusion(Zb, X, np.zeros(2))
        assert fb[0] - fa[0] == pytest.approx(10 * 0.4**2, abs=1e-12)

    def test_no_clinical_omics_interaction(self):
        # The omics coefficient estimated on the two halves split by z1
        # targets the same vector.
        cfg = SimConfig(experiment="full_fusion", n=4000, p=30, n_test=100, seed=9)
        rep = gen_full_fusion(cfg, seed=9)
        clin = _f_full_fusion(rep.Z, np.zeros_like(rep.X), np.zeros(30))
        resid = rep.response.y - clin
        halves = [rep.Z[:, 0] <= 0.5, rep.Z[:, 0] > 0.5]
        coefs = []
        for sel in halves:
            Xh = rep.X[sel]
            bh = np.linalg.solve(
                Xh.T @ Xh + 1e-6 * np.eye(30), Xh.T @ resid[sel]
            )
            coefs.append(bh)
        diff = np.linalg.norm(coefs[0] - coefs[1])
        scale = np.linalg.norm(coefs[0] + coefs[1]) / 2
        assert diff < scale  # same target up to estimation noise


class TestLinear:
    def test_zero_at_origin_and_linearity(self):
        cfg = SimConfig(experiment="linear", n=50, p=10, n_test=10, seed=4)
        rep = gen_linear(cfg, seed=4)
        f = lambda z, x: z @ rep.clinical_coef + x @ rep.beta
        z, x = rep.Z[0], rep.X[0]
        assert f(np.zeros(5), np.zeros(10)) == 0.0
        assert f(2 * z, 2 * x) == pytest.approx(2 * f(z, x), abs=1e-12)

    def test_clinical_explains_more_variance_usually(self):
        hits = 0
        for s in range(50):
            cfg = SimConfig(experiment="linear", n=800, p=100, n_test=10, seed=1)
            rep = gen_linear(cfg, seed=s)
            vc = np.var(rep.Z @ rep.clinical_coef)
            vo = np.var(rep.X @ rep.beta)
            hits += vc > vo
        assert hits >= 30  # >= 60% of 50 seeds


class TestRegpath:
    def test_constant_effects_outside_first_two(self):
        rng = np.random.default_rng(8)
        beta = rng.normal(size=10)
        Z = np.array([[0.2, 0.2, 0.5, 0.9, 0.5], [0.9, 0.2, 0.5, 0.9, 0.5]])
        xa = rng.normal(size=(1, 10))
        xb = xa.copy()
        xb[0, 2:] = rng.normal(size=8)  # change only non-interacting covariates
        fa = _f_regpath(np.tile(Z[0], (1, 1)), xa, beta) - _f_regpath(
            np.tile(Z[1], (1, 1)), xa, beta
        )
        fb = _f_regpath(np.tile(Z[0], (1, 1)), xb, beta) - _f_regpath(
            np.tile(Z[1], (1, 1)), xb, beta
        )
        assert fa[0] == pytest.approx(fb[0], abs=1e-12)

    def test_interacting_coefficient_varies_more_across_leaves(self):
        rep = gen_regpath(seed=2)
        leaves = rep.true_tree.assign(rep.Z)
        d = build_block_design(rep.X, leaves, 4)
        pen = PenaltyStructure(1e-3, 0.0, 4, 10)
        _, beta = fit_gaussian(d, rep.response.y, pen)
        var2 = beta[1].var()  # interacting covariate
        var6 = beta[5].var()  # constant-effect covariate
        assert var2 / max(var6, 1e-12) > 1.0

    def test_fresh_noise_independence(self):
        rep = gen_regpath(seed=6, n_test=5000)
        f_test = _f_regpath(rep.Z_test, rep.X_test, rep.beta)
        eps = rep.response_test.y - f_test
        r = np.corrcoef(f_test, eps)[0, 1]
        assert abs(r) < 0.05


class TestRunExperiment:
    def test_reproducible_and_complete(self):
        cfg = SimConfig(
            experiment="linear", n=60, p=20, n_replications=3, n_test=150, seed=21
        )
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        assert a.rows == b.rows
        assert a.summary == b.summary
        assert len(a.rows) == 3 * len(cfg.models)
        for row in a.rows:
            assert row["error"] == ""
            assert np.isfinite(row["pmse"])

    def test_worker_count_does_not_change_results(self):
        cfg1 = SimConfig(
            experiment="linear", n=60, p=15, n_replications=2, n_test=100, seed=5, n_jobs=1
        )
        cfg2 = SimConfig(
            experiment="linear", n=60, p=15, n_replications=2, n_test=100, seed=5, n_jobs=2
        )
        assert run_experiment(cfg1).rows == run_experiment(cfg2).rows

    def test_summary_is_mean_of_rows(self):
        cfg = SimConfig(
            experiment="regpath", n=200, p=10, n_replications=2, n_test=100, seed=2,
            models=("fusedtree", "ridge"), min_node_size=20,
        )
        res = run_experiment(cfg)
        for name in cfg.models:
            vals = [r["pmse"] for r in res.rows if r["model"] == name]
            assert res.summary[name] == pytest.approx(np.mean(vals))
