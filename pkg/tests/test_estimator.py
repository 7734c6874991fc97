import numpy as np
import pytest
from scipy.special import expit, logit

from fusedtree.data import Response
from fusedtree.errors import DataError
from fusedtree.estimator import (
    breslow_baseline,
    fit_alpha_limit,
    fit_binary,
    fit_cox,
    fit_gaussian,
)
from fusedtree.penalty import PenaltyStructure, build_block_design, gram_at, penalized_grams

from conftest import (
    block_predictors,
    dense_binomial_fit,
    dense_gaussian_fit,
    dense_penalized_loglik_binomial,
    dense_penalty,
    exp_survival,
    random_design,
)


def pen_of(design, lam, alpha):
    return PenaltyStructure(lam, alpha, max(design.n_blocks, 1), design.n_omics)


class TestGaussian:
    def test_no_omics_gives_leaf_means(self, rng):
        y = np.array([1.0, 1.0, 3.0, 3.0])
        d = build_block_design(np.zeros((4, 0)), [0, 0, 1, 1], 2)
        c, beta = fit_gaussian(d, y, pen_of(d, 1.0, 0.0))
        np.testing.assert_allclose(c, [1.0, 3.0], atol=1e-12)
        assert beta.size == 0

    def test_lambda_limit(self, rng):
        d = random_design(rng, 25, 4, 3)
        y = rng.normal(size=25) + d.leaf_assignment.astype(float)
        c, beta = fit_gaussian(d, y, pen_of(d, 1e12, 2.0))
        means = [y[d.leaf_assignment == m].mean() for m in range(3)]
        assert np.max(np.abs(beta)) < 1e-6
        np.testing.assert_allclose(c, means, atol=1e-6)

    def test_matches_dense_joint_solve(self, rng):
        for _ in range(100):
            n = int(rng.integers(8, 31))
            p = int(rng.integers(1, 9))
            m = int(rng.integers(1, 4))
            qc = int(rng.integers(0, 3))
            d = random_design(rng, n, p, m, qc)
            y = rng.normal(size=n)
            lam = float(rng.uniform(0.2, 5.0))
            alpha = float(rng.uniform(0.0, 5.0))
            c, beta = fit_gaussian(d, y, pen_of(d, lam, alpha))
            c0, b0 = dense_gaussian_fit(d, y, lam, alpha)
            assert np.max(np.abs(c - c0)) < 1e-8
            assert np.max(np.abs(beta.ravel() - b0)) < 1e-8

    def test_primal_dual_equivalence(self, rng):
        for _ in range(100):
            n = int(rng.integers(10, 31))
            p = int(rng.integers(1, 9))
            m = int(rng.integers(1, 4))
            d = random_design(rng, n, p, m)
            y = rng.normal(size=n)
            lam, alpha = float(rng.uniform(0.3, 4.0)), float(rng.uniform(0.0, 4.0))
            c, beta = fit_gaussian(d, y, pen_of(d, lam, alpha))
            Xt = d.x_tilde()
            P = dense_penalty(d, lam, alpha)
            primal = np.linalg.solve(Xt.T @ Xt + P, Xt.T @ (y - d.U @ c))
            assert np.max(np.abs(beta.ravel() - primal)) < 1e-8

    def test_residual_orthogonality(self, rng):
        d = random_design(rng, 30, 5, 3, q_c=1)
        y = rng.normal(size=30)
        lam, alpha = 1.2, 0.8
        c, beta = fit_gaussian(d, y, pen_of(d, lam, alpha))
        G = gram_at(penalized_grams(d), d, lam, alpha)
        W = np.linalg.inv(G + np.eye(30))
        resid = y - d.U @ c - d.x_tilde() @ beta.ravel()
        # U' W (y - U c) = 0 at the weighted least squares optimum
        assert np.max(np.abs(d.U.T @ W @ (y - d.U @ c))) < 1e-8
        assert np.isfinite(resid).all()

    def test_objective_optimality(self, rng):
        d = random_design(rng, 20, 3, 2, q_c=1)
        y = rng.normal(size=20)
        lam, alpha = 1.5, 2.0
        c, beta = fit_gaussian(d, y, pen_of(d, lam, alpha))
        Xt = d.x_tilde()
        P = dense_penalty(d, lam, alpha)

        def objective(cc, bb):
            r = y - d.U @ cc - Xt @ bb
            return r @ r + bb @ P @ bb

        base = objective(c, beta.ravel())
        for _ in range(40):
            dc = rng.normal(size=c.size)
            db = rng.normal(size=beta.size)
            norm = np.sqrt(dc @ dc + db @ db)
            dc, db = 1e-3 * dc / norm, 1e-3 * db / norm
            assert objective(c + dc, beta.ravel() + db) >= base - 1e-12

    def test_rank_deficient_clinical_rejected(self, rng):
        X = rng.normal(size=(12, 2))
        dup = rng.normal(size=12)
        d = build_block_design(X, [0, 1] * 6, 2, np.column_stack([dup, dup]))
        with pytest.raises(DataError):
            fit_gaussian(d, rng.normal(size=12), pen_of(d, 1.0, 1.0))


class TestAlphaShrinkage:
    def test_limits_approach_fully_fused(self, rng):
        d = random_design(rng, 40, 10, 3)
        y = rng.normal(size=40) + d.leaf_assignment.astype(float)
        lam = 1.5
        cf, bf, _, _ = fit_alpha_limit(d, Response.gaussian(y), lam)
        gaps = []
        for alpha in [1e2, 1e4, 1e6, 1e8]:
            c, b = fit_gaussian(d, y, pen_of(d, lam, alpha))
            gaps.append(max(np.max(np.abs(c - cf)), np.max(np.abs(b - bf))))
        assert all(g2 <= g1 + 1e-12 for g1, g2 in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-4

    def test_single_leaf_identical_to_plain_fit(self, rng):
        d = random_design(rng, 20, 4, 1)
        y = rng.normal(size=20)
        c, b = fit_gaussian(d, y, pen_of(d, 2.0, 77.0))
        cf, bf, _, _ = fit_alpha_limit(d, Response.gaussian(y), 2.0)
        np.testing.assert_allclose(c, cf, atol=1e-10)
        np.testing.assert_allclose(b, bf, atol=1e-10)

    def test_blocks_replicated_exactly(self, rng):
        d = random_design(rng, 30, 5, 3)
        y = rng.normal(size=30)
        _, bf, _, _ = fit_alpha_limit(d, Response.gaussian(y), 1.0)
        assert bf.shape == (5, 3)
        assert np.all(bf[:, [0]] == bf)

    def test_fusion_contracts_leaf_variance(self, rng):
        d = random_design(rng, 60, 4, 3)
        y = rng.normal(size=60) + d.X[:, 0] * (d.leaf_assignment - 1.0)
        lam = 1.0
        grid = np.geomspace(1e-2, 1e6, 10)
        prev = None
        for alpha in grid:
            _, beta = fit_gaussian(d, y, pen_of(d, lam, alpha))
            var = beta.var(axis=1).sum()
            if prev is not None:
                assert var <= prev + 1e-10
            prev = var


class TestBinomial:
    def test_intercept_only_logit(self):
        y = np.array([1.0, 0.0, 0.0, 0.0])
        d = build_block_design(np.zeros((4, 0)), [0, 0, 0, 0], 1)
        c, beta, _ = fit_binary(d, y, pen_of(d, 1.0, 0.0))
        assert c[0] == pytest.approx(logit(0.25), abs=1e-8)

    def test_lambda_limit_leaf_logits(self, rng):
        d = random_design(rng, 60, 3, 2)
        y = (rng.uniform(size=60) < expit(d.leaf_assignment - 0.5)).astype(float)
        c, beta, _ = fit_binary(d, y, pen_of(d, 1e12, 1.0))
        assert np.max(np.abs(beta)) < 1e-6
        for m in range(2):
            prop = y[d.leaf_assignment == m].mean()
            assert c[m] == pytest.approx(logit(prop), abs=1e-4)

    def test_matches_dense_newton(self, rng):
        d = random_design(rng, 60, 3, 2)
        eta_true = 0.8 * d.X[:, 0] - 0.5 + (d.leaf_assignment == 1)
        y = (rng.uniform(size=60) < expit(eta_true)).astype(float)
        lam, alpha = 1.0, 1.0
        c, beta, state = fit_binary(d, y, pen_of(d, lam, alpha))
        c0, b0 = dense_binomial_fit(d, y, lam, alpha)
        ll_mine = dense_penalized_loglik_binomial(d, y, c, beta, lam, alpha)
        ll_dense = dense_penalized_loglik_binomial(d, y, c0, b0, lam, alpha)
        assert abs(ll_mine - ll_dense) < 1e-6
        assert state.converged

    def test_monotone_trace(self, rng):
        for _ in range(10):
            d = random_design(rng, 40, 4, 2)
            y = (rng.uniform(size=40) < 0.4).astype(float)
            y[:2] = [0.0, 1.0]
            _, _, state = fit_binary(d, y, pen_of(d, 0.7, 0.3))
            diffs = np.diff(state.trace)
            assert np.all(diffs > -1e-8)

    def test_gradient_vanishes_at_convergence(self, rng):
        d = random_design(rng, 50, 3, 2, q_c=1)
        y = (rng.uniform(size=50) < 0.5).astype(float)
        y[:2] = [0.0, 1.0]
        lam, alpha = 1.5, 0.5
        c, beta, _ = fit_binary(d, y, pen_of(d, lam, alpha))
        theta = np.concatenate([c, beta.ravel()])

        def f(th):
            qc = c.size
            return dense_penalized_loglik_binomial(
                d, y, th[:qc], th[qc:], lam, alpha
            )

        g = np.empty(theta.size)
        h = 1e-5
        for j in range(theta.size):
            e = np.zeros(theta.size)
            e[j] = h
            g[j] = (f(theta + e) - f(theta - e)) / (2 * h)
        assert np.linalg.norm(g) < 1e-4

    def test_separated_leaf_warns_and_caps(self, rng):
        d = random_design(rng, 40, 1, 2)
        y = (d.leaf_assignment == 1).astype(float)  # perfectly separated leaves
        with pytest.warns(RuntimeWarning):
            c, _, _ = fit_binary(d, y, pen_of(d, 1e6, 0.0), max_iter=200)
        assert np.max(np.abs(c[:2])) <= 20.0

    def test_single_class_rejected(self, rng):
        d = random_design(rng, 20, 2, 2)
        with pytest.raises(DataError):
            fit_binary(d, np.ones(20), pen_of(d, 1.0, 0.0))


class TestBreslow:
    def test_hand_check(self):
        b = breslow_baseline(np.zeros(3), [1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
        np.testing.assert_allclose(b.jumps, [1 / 3, 1 / 2, 1.0], atol=1e-12)
        np.testing.assert_allclose(b.cumhaz, [1 / 3, 5 / 6, 11 / 6], atol=1e-12)
        assert b.at(3.0) == pytest.approx(11 / 6, abs=1e-12)

    def test_all_censored_is_zero(self):
        b = breslow_baseline(np.zeros(4), [1.0, 2.0, 3.0, 4.0], np.zeros(4))
        assert b.times.size == 0
        assert np.all(b.at([0.5, 2.5]) == 0.0)

    def test_tied_events_share_risk_set(self, rng):
        eta = rng.normal(size=4)
        time = np.array([1.0, 2.0, 2.0, 3.0])
        status = np.array([0.0, 1.0, 1.0, 0.0])
        b = breslow_baseline(eta, time, status)
        risk = np.exp(eta)[time >= 2.0].sum()
        assert b.jumps[0] == pytest.approx(2.0 / risk, abs=1e-12)

    def test_nondecreasing(self, rng):
        resp = exp_survival(rng, 50, np.full(50, 0.8))
        b = breslow_baseline(rng.normal(size=50), resp.y, resp.status)
        assert np.all(np.diff(b.cumhaz) >= 0)
        assert b.at(0.0) <= b.cumhaz[0]


class TestCox:
    def test_lambda_limit_leaf_rates(self, rng):
        d = random_design(rng, 90, 3, 2)
        rate = np.where(d.leaf_assignment == 0, 0.5, 1.3)
        resp = exp_survival(rng, 90, rate)
        c, beta, baseline, _ = fit_cox(d, resp.y, resp.status, pen_of(d, 1e12, 1.0))
        assert np.max(np.abs(beta)) < 1e-6
        # oracle: per-leaf Newton alternated with the Breslow baseline
        cc = np.zeros(2)
        for _ in range(400):
            bl = breslow_baseline(cc[d.leaf_assignment], resp.y, resp.status)
            H = bl.at(resp.y)
            for m in range(2):
                sel = d.leaf_assignment == m
                for _ in range(60):
                    g = resp.status[sel].sum() - np.exp(cc[m]) * H[sel].sum()
                    step = g / (np.exp(cc[m]) * H[sel].sum())
                    cc[m] += step
                    if abs(step) < 1e-14:
                        break
        bl = breslow_baseline(cc[d.leaf_assignment], resp.y, resp.status)
        cc += np.log(bl.at(resp.y).sum() / resp.status.sum())
        np.testing.assert_allclose(c[:2], cc, atol=1e-3)

    def test_monotone_trace_and_convergence(self, rng):
        d = random_design(rng, 80, 4, 2)
        rate = 0.8 * np.exp(0.6 * d.X[:, 0])
        resp = exp_survival(rng, 80, rate)
        _, _, _, state = fit_cox(d, resp.y, resp.status, pen_of(d, 1.0, 1.0))
        assert state.converged
        assert state.trace[-1] >= state.trace[0]
        assert np.all(np.diff(state.trace) > -1e-8)

    def test_gradient_vanishes_at_convergence(self, rng):
        d = random_design(rng, 50, 3, 2)
        rate = 0.9 * np.exp(0.4 * d.X[:, 1])
        resp = exp_survival(rng, 50, rate)
        lam, alpha = 1.2, 0.7
        c, beta, baseline, _ = fit_cox(d, resp.y, resp.status, pen_of(d, lam, alpha))
        Xt = d.x_tilde()
        P = dense_penalty(d, lam, alpha)
        h = baseline.at(resp.y)
        logjump = np.where(resp.status > 0, np.log(baseline.jump_at(resp.y)), 0.0)

        def f(th):
            qc = c.size
            eta = d.U @ th[:qc] + Xt @ th[qc:]
            b = th[qc:]
            return float(
                np.sum(-np.exp(eta) * h + resp.status * eta + logjump)
                - 0.5 * b @ P @ b
            )

        theta = np.concatenate([c, beta.ravel()])
        g = np.empty(theta.size)
        step = 1e-5
        for j in range(theta.size):
            e = np.zeros(theta.size)
            e[j] = step
            g[j] = (f(theta + e) - f(theta - e)) / (2 * step)
        assert np.linalg.norm(g) < 1e-4

    def test_zero_events_rejected(self, rng):
        d = random_design(rng, 20, 2, 2)
        with pytest.raises(DataError):
            fit_cox(d, np.ones(20), np.zeros(20), pen_of(d, 1.0, 0.0))


class TestRemovedBlocks:
    def test_reduced_design_fits_available_blocks(self, rng):
        d = random_design(rng, 40, 3, 3)
        y = rng.normal(size=40) + d.X[:, 0]
        reduced = d.without_leaves({1})
        c, beta = fit_gaussian(reduced, y, pen_of(reduced, 1.0, 1.0))
        assert beta.shape == (3, 2)
        # matches a dense solve on the reduced design
        c0, b0 = dense_gaussian_fit(reduced, y, 1.0, 1.0)
        assert np.max(np.abs(beta.ravel() - b0)) < 1e-8

    def test_predictors_skip_removed_rows(self, rng):
        d = random_design(rng, 30, 2, 2)
        reduced = d.without_leaves({0})
        c = np.zeros(2)
        beta = np.ones((2, 1))
        uc, xb = block_predictors(reduced, np.arange(30), c, beta)
        removed_rows = reduced.block_rows() < 0
        assert np.all(xb[removed_rows] == 0.0)
        assert np.any(xb[~removed_rows] != 0.0)
