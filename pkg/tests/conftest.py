"""Shared fixtures and independent oracle implementations.

The oracles here deliberately use dense linear algebra on explicitly
materialized matrices (the Mp x Mp penalty included), independent of the
package's N-dimensional computational path.
"""

import numpy as np
import pytest

from fusedtree.data import Response
from fusedtree.penalty import BlockDesign, build_block_design


def dense_omega(n_blocks, n_omics):
    A = np.eye(n_blocks) - np.ones((n_blocks, n_blocks)) / n_blocks
    return np.kron(np.eye(n_omics), A)


def dense_penalty(design, lam, alpha):
    mb = design.n_blocks
    p = design.n_omics
    return lam * design.ridge_scale * np.eye(mb * p) + alpha * dense_omega(mb, p)


def random_design(rng, n, p, n_leaves, q_c=0):
    """A random block design with every leaf populated."""
    X = rng.normal(size=(n, p))
    leaves = rng.integers(0, n_leaves, size=n)
    leaves[:n_leaves] = np.arange(n_leaves)  # every leaf nonempty
    clin = rng.normal(size=(n, q_c)) if q_c else None
    return build_block_design(X, leaves, n_leaves, clin)


def dense_gaussian_fit(design, y, lam, alpha):
    """Joint penalized normal equations solved densely."""
    U = design.U
    Xt = design.x_tilde()
    P = dense_penalty(design, lam, alpha)
    K = np.block([[U.T @ U, U.T @ Xt], [Xt.T @ U, Xt.T @ Xt + P]])
    rhs = np.concatenate([U.T @ y, Xt.T @ y])
    sol = np.linalg.solve(K, rhs)
    qc = U.shape[1]
    return sol[:qc], sol[qc:]


def dense_binomial_fit(design, y, lam, alpha, max_iter=200):
    """Dense Newton on the joint penalized Bernoulli likelihood."""
    U = design.U
    Xt = design.x_tilde()
    D = np.hstack([U, Xt])
    qc = U.shape[1]
    P = np.zeros((D.shape[1], D.shape[1]))
    P[qc:, qc:] = dense_penalty(design, lam, alpha)
    th = np.zeros(D.shape[1])
    for _ in range(max_iter):
        e = D @ th
        mu = 1.0 / (1.0 + np.exp(-e))
        g = D.T @ (y - mu) - P @ th
        H = D.T @ ((mu * (1 - mu))[:, None] * D) + P
        step = np.linalg.solve(H, g)
        th = th + step
        if np.max(np.abs(step)) < 1e-12:
            break
    return th[:qc], th[qc:]


def dense_penalized_loglik_binomial(design, y, c, beta, lam, alpha):
    eta = design.U @ c + design.x_tilde() @ np.ravel(beta)
    P = dense_penalty(design, lam, alpha)
    b = np.ravel(beta)
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * b @ P @ b)


def subset_design(design, idx):
    """Row subset of a design, keeping the leaf-to-block mapping."""
    return BlockDesign(
        X=design.X[idx],
        U=design.U[idx],
        leaf_assignment=design.leaf_assignment[idx],
        n_leaves=design.n_leaves,
        block_of_leaf=design.block_of_leaf,
        n_blocks=design.n_blocks,
        ridge_scale=design.ridge_scale,
        clinical_centers=design.clinical_centers,
    )


def block_predictors(design, idx, c, beta):
    """(U c, X beta) for rows idx of a design, from explicit coefficients."""
    uc = design.U[idx] @ c
    xb = np.zeros(idx.size)
    rows = design.block_rows()[idx]
    beta = np.asarray(beta)
    if beta.ndim == 1 and design.n_blocks:
        beta = beta.reshape(design.n_omics, design.n_blocks)
    for m in range(design.n_blocks):
        sel = rows == m
        if sel.any():
            xb[sel] = design.X[idx][sel] @ beta[:, m]
    return uc, xb


def exp_survival(rng, n, rate):
    """Exponential survival times with exponential censoring."""
    t = rng.exponential(1.0 / rate)
    cens = rng.exponential(2.0 / np.mean(rate), size=n)
    time = np.minimum(t, cens)
    status = (t <= cens).astype(float)
    if status.sum() == 0:
        status[0] = 1.0
    return Response.survival(time, status)


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)
