"""Penalized estimation of leaf intercepts and omics coefficients.

All response kinds reduce to weighted least squares against the
penalty-whitened omics gram G = X_tilde Lambda^{-1} X_tilde^T:

    c_hat    = (U^T Mt U)^{-1} U^T Mt z,   Mt = (G + W^{-1})^{-1}
    beta_hat = Lambda^{-1} X_tilde^T v,    v  = Mt (z - U c_hat)

which is the dual (Woodbury) form of the joint penalized normal
equations. Only N x N factorizations and O(N p) block products appear;
the Mp x Mp penalty is never materialized.

For binomial and survival responses the weighted problem is iterated
(IRLS). The quadratic penalty enters the likelihood on the half scale,
penalized loglik = loglik - (lambda ||beta||^2 + alpha beta' Omega beta) / 2,
so the normal equations match the squared-error case and lambda is
comparable across response kinds.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import expit

from .errors import ConvergenceError, DataError
from .penalty import PenaltyStructure, gram_at, penalized_grams

_INTERCEPT_CAP = 20.0  # link-scale cap for separated-leaf intercepts
_MIN_WEIGHT = 1e-12


@dataclass
class IRLSState:
    """Diagnostics of one IRLS run."""

    eta: np.ndarray = None
    weights: np.ndarray = None
    working_response: np.ndarray = None
    n_iter: int = 0
    trace: list = field(default_factory=list)
    converged: bool = False


@dataclass(frozen=True)
class BaselineHazard:
    """Breslow estimate of the cumulative baseline hazard.

    ``times`` are the sorted distinct event times; ``cumhaz`` the
    cumulative hazard at each, ``jumps`` the increments.
    """

    times: np.ndarray
    cumhaz: np.ndarray
    jumps: np.ndarray

    def at(self, t):
        """H0(t), right-continuous step function, 0 before first event."""
        t = np.asarray(t, dtype=float)
        pos = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate([[0.0], self.cumhaz])
        return padded[pos]

    def jump_at(self, t):
        """Hazard increment at the largest event time <= t.

        Used to score held-out event times against a training baseline;
        falls back to the first jump for times before any event.
        """
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            return np.zeros_like(t)
        pos = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, None)
        return self.jumps[pos]


def breslow_baseline(eta, time, status):
    """Breslow estimator: jumps d_k / sum_{t_j >= tau_k} exp(eta_j).

    Tied event times share the same risk set.
    """
    eta = np.asarray(eta, dtype=float)
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=float)
    order = np.argsort(time, kind="stable")
    t_sorted = time[order]
    e_sorted = np.exp(eta[order])
    d_sorted = status[order]
    # exp(eta) summed over the risk set {j : t_j >= t} for each position.
    risk_from = np.cumsum(e_sorted[::-1])[::-1]
    uniq = np.unique(t_sorted[d_sorted > 0])
    if uniq.size == 0:
        empty = np.zeros(0)
        return BaselineHazard(times=empty, cumhaz=empty, jumps=empty)
    d_k = np.zeros(uniq.size)
    np.add.at(d_k, np.searchsorted(uniq, t_sorted[d_sorted > 0]), 1.0)
    at = np.searchsorted(t_sorted, uniq, side="left")
    jumps = d_k / risk_from[at]
    return BaselineHazard(times=uniq, cumhaz=np.cumsum(jumps), jumps=jumps)


def _mt_apply(G, w):
    """Factorize Mt = (G + W^{-1})^{-1} and return an apply closure.

    Uses the symmetric scaling W^{1/2} (W^{1/2} G W^{1/2} + I)^{-1} W^{1/2}
    so small weights never produce an explicit W^{-1}.
    """
    n = G.shape[0]
    if w is None:
        A = G + np.eye(n)
        cf = cho_factor(A, lower=True, check_finite=False)

        def apply(M):
            return cho_solve(cf, M, check_finite=False)

        return apply
    sw = np.sqrt(w)
    A = (sw[:, None] * G) * sw[None, :] + np.eye(n)
    cf = cho_factor(A, lower=True, check_finite=False)

    def apply(M):
        scaled = M * sw[:, None] if M.ndim == 2 else M * sw
        out = cho_solve(cf, scaled, check_finite=False)
        return out * sw[:, None] if M.ndim == 2 else out * sw

    return apply


def _wls_core(U, G, z, w=None):
    """Solve the penalized WLS for (c, v).

    c solves U^T Mt U c = U^T Mt z; v = Mt (z - U c) is the dual vector
    from which beta and all penalty quadratics derive.
    """
    mt = _mt_apply(G, w)
    MU = mt(U)
    Mz = mt(z)
    C = U.T @ MU
    try:
        cf = cho_factor(C, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise DataError(
            "clinical design is rank deficient (duplicate columns or a "
            "leaf absent from the data)"
        ) from exc
    c = cho_solve(cf, U.T @ Mz, check_finite=False)
    v = Mz - MU @ c
    return c, v


def recover_beta(block, lam, alpha, v):
    """Map the dual vector v to beta = Lambda^{-1} X_tilde^T v.

    Returns beta as a (p, n_blocks) array; flatten C-order for the
    canonical covariate-major, leaf-fastest vector.
    """
    p = block.n_omics
    mb = block.n_blocks
    if mb == 0 or p == 0:
        return np.zeros((p, mb))
    T = np.zeros((p, mb))
    rows = block.block_rows()
    for m in range(mb):
        sel = rows == m
        if sel.any():
            T[:, m] = block.X[sel].T @ v[sel]
    ls = lam * block.ridge_scale
    beta = T / (ls + alpha)
    beta = beta + ((1.0 / ls - 1.0 / (ls + alpha)) * T.mean(axis=1))[:, None]
    return beta


def linear_predictor(block, c, beta):
    """U c + per-row omics contribution for coefficient array beta (p, M')."""
    eta = block.U @ c
    rows = block.block_rows()
    for m in range(block.n_blocks):
        sel = rows == m
        if sel.any():
            eta[sel] += block.X[sel] @ beta[:, m]
    return eta


def fit_gaussian(block, y, penalties, grams=None):
    """Closed-form penalized least squares estimators.

    Returns (c_hat, beta_hat) with beta_hat shaped (p, n_blocks).
    """
    y = np.asarray(y, dtype=float)
    if grams is None:
        grams = penalized_grams(block)
    G = gram_at(grams, block, penalties.lam, penalties.alpha)
    c, v = _wls_core(block.U, G, y)
    beta = recover_beta(block, penalties.lam, penalties.alpha, v)
    return c, beta


def _penalty_quad(v, G):
    """beta^T Lambda beta expressed through the dual vector."""
    return float(v @ (G @ v))


class _BinomialFamily:
    def __init__(self, y):
        self.y = np.asarray(y, dtype=float)
        if self.y.min() == self.y.max():
            raise DataError("binomial fit requires both classes present")

    def init_c(self, n_cols, n_leaves, leaf_assignment):
        c = np.zeros(n_cols)
        for m in range(n_leaves):
            sel = leaf_assignment == m
            prop = np.clip(self.y[sel].mean(), 0.01, 0.99)
            c[m] = np.log(prop / (1 - prop))
        return c

    def refresh(self, eta):
        pass

    def weights(self, eta):
        mu = expit(eta)
        return mu * (1 - mu), self.y - mu

    def loglik(self, eta):
        return float(np.sum(self.y * eta - np.logaddexp(0.0, eta)))

    def postprocess(self, c, n_leaves):
        leaf = c[:n_leaves]
        if np.any(np.abs(leaf) > _INTERCEPT_CAP):
            warnings.warn(
                "leaf intercept capped at +/-20 on the link scale "
                "(perfectly separated leaf)",
                RuntimeWarning,
            )
            c = c.copy()
            c[:n_leaves] = np.clip(leaf, -_INTERCEPT_CAP, _INTERCEPT_CAP)
        return c


class _CoxFamily:
    def __init__(self, time, status):
        self.time = np.asarray(time, dtype=float)
        self.status = np.asarray(status, dtype=float)
        if self.status.sum() == 0:
            raise DataError("survival fit requires at least one event")
        self.baseline = None
        self._h = None  # H0 at each observed time
        self._logjump = None  # log hazard increment at each event time

    def init_c(self, n_cols, n_leaves, leaf_assignment):
        return np.zeros(n_cols)

    def refresh(self, eta):
        self.baseline = breslow_baseline(eta, self.time, self.status)
        self._h = self.baseline.at(self.time)
        jump = self.baseline.jump_at(self.time)
        self._logjump = np.where(self.status > 0, np.log(jump), 0.0)

    def weights(self, eta):
        w = self._h * np.exp(np.clip(eta, -500, 500))
        return w, self.status - w

    def loglik(self, eta):
        return float(
            np.sum(
                -np.exp(np.clip(eta, -500, 500)) * self._h
                + self.status * eta
                + self._logjump
            )
        )

    def postprocess(self, c, n_leaves):
        return c


def _irls(U, G, family, n_leaves, leaf_assignment, tol, max_iter, raise_on_failure=True):
    """Shared IRLS loop on raw design matrices. Returns (c, v, state)."""
    n = U.shape[0]
    c = family.init_c(U.shape[1], n_leaves, leaf_assignment)
    v = np.zeros(n)
    xb = np.zeros(n)
    eta = U @ c
    family.refresh(eta)
    pen_ll = family.loglik(eta) - 0.5 * _penalty_quad(v, G)
    state = IRLSState(trace=[pen_ll])
    for it in range(max_iter):
        w_raw, resid = family.weights(eta)
        w = np.clip(w_raw, _MIN_WEIGHT, None)
        z = eta + resid / w
        c_new, v_new = _wls_core(U, G, z, w)
        c_new = family.postprocess(c_new, n_leaves)
        xb_new = G @ v_new
        cross = float(v @ xb_new)
        pen_old = float(v @ xb)
        pen_new = float(v_new @ xb_new)
        # Step halving keeps the penalized likelihood monotone when the
        # full Newton step overshoots.
        step = 1.0
        for _ in range(30):
            c_s = c + step * (c_new - c)
            eta_s = U @ c_s + (1 - step) * xb + step * xb_new
            pen_s = (
                (1 - step) ** 2 * pen_old
                + 2 * step * (1 - step) * cross
                + step * step * pen_new
            )
            ll_s = family.loglik(eta_s) - 0.5 * pen_s
            if ll_s >= pen_ll - 1e-10 or step < 1e-8:
                break
            step *= 0.5
        c = c + step * (c_new - c)
        v = v + step * (v_new - v)
        xb = (1 - step) * xb + step * xb_new
        eta = eta_s
        family.refresh(eta)
        new_ll = family.loglik(eta) - 0.5 * (
            (1 - step) ** 2 * pen_old + 2 * step * (1 - step) * cross + step**2 * pen_new
        )
        state.trace.append(new_ll)
        state.n_iter = it + 1
        done = abs(new_ll - pen_ll) < tol
        pen_ll = new_ll
        if done:
            state.converged = True
            break
    if not state.converged and raise_on_failure:
        raise ConvergenceError(
            f"IRLS did not converge in {max_iter} iterations "
            f"(last change {abs(state.trace[-1] - state.trace[-2]):.3e})",
            trace=state.trace,
        )
    w_raw, resid = family.weights(eta)
    state.eta = eta
    state.weights = np.clip(w_raw, _MIN_WEIGHT, None)
    state.working_response = eta + resid / state.weights
    return c, v, state


def fit_binary(block, y, penalties, tol=1e-10, max_iter=100, grams=None):
    """Penalized logistic fit by IRLS.

    Returns (c_hat, beta_hat, state); beta_hat shaped (p, n_blocks).
    """
    if grams is None:
        grams = penalized_grams(block)
    G = gram_at(grams, block, penalties.lam, penalties.alpha)
    family = _BinomialFamily(y)
    c, v, state = _irls(
        block.U, G, family, block.n_leaves, block.leaf_assignment, tol, max_iter
    )
    beta = recover_beta(block, penalties.lam, penalties.alpha, v)
    return c, beta, state


def fit_cox(block, time, status, penalties, tol=1e-10, max_iter=100, grams=None):
    """Penalized proportional hazards fit by IRLS with Breslow baseline.

    Alternates a Breslow baseline update with a weighted least squares
    coefficient update until the penalized full log-likelihood is
    stable. Returns (c_hat, beta_hat, baseline, state).
    """
    if grams is None:
        grams = penalized_grams(block)
    G = gram_at(grams, block, penalties.lam, penalties.alpha)
    family = _CoxFamily(time, status)
    c, v, state = _irls(
        block.U, G, family, block.n_leaves, block.leaf_assignment, tol, max_iter
    )
    beta = recover_beta(block, penalties.lam, penalties.alpha, v)
    c, eta, baseline = _pin_cox_gauge(
        block.n_leaves, c, state.eta, family.time, family.status
    )
    state.eta = eta
    return c, beta, baseline, state


def _pin_cox_gauge(n_leaves, c, eta, time, status):
    """Fix the (c + s, H0 exp(-s)) gauge freedom of the full likelihood.

    The leaf intercepts are shifted so the baseline's total cumulative
    hazard over the sample equals the event count (the scale the null
    Breslow estimator has), making exp(c_m) read as event rates relative
    to a cohort-calibrated baseline. The likelihood is invariant.
    """
    baseline = breslow_baseline(eta, time, status)
    total_h = baseline.at(time).sum()
    shift = float(np.log(total_h / status.sum()))
    c = c.copy()
    c[:n_leaves] += shift
    eta = eta + shift
    return c, eta, breslow_baseline(eta, time, status)


def fit_alpha_limit(block, response, lam, tol=1e-10, max_iter=100):
    """Fully fused fit: one shared omics regression with penalty lam * M.

    Equivalent to the alpha -> infinity limit of the fused estimators.
    Returns coefficients in the shapes of the corresponding fused fit,
    with the shared block replicated into every leaf.
    """
    fused = block.fully_fused()
    pen = PenaltyStructure(
        lam=lam, alpha=0.0, n_leaves=1, n_omics=block.n_omics
    )
    baseline = None
    state = None
    if response.kind == "gaussian":
        c, beta1 = fit_gaussian(fused, response.y, pen)
    elif response.kind == "binomial":
        c, beta1, state = fit_binary(fused, response.y, pen, tol, max_iter)
    else:
        c, beta1, baseline, state = fit_cox(
            fused, response.y, response.status, pen, tol, max_iter
        )
    beta = np.repeat(beta1, block.n_leaves, axis=1)
    return c, beta, baseline, state
