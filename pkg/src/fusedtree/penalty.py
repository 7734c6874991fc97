"""Fusion penalty construction and the block design it acts on.

The omics coefficients beta live in R^{Mp} with M the number of leaf
blocks and p the number of omics covariates. The canonical coefficient
ordering everywhere in this package is covariate-major with the leaf
index fastest:

    beta = (beta_(1)1, ..., beta_(M)1, beta_(1)2, ..., beta_(M)p)

so the fusion matrix factorizes as Omega = I_p (x) A with
A = I_M - (1/M) 11^T, the centering matrix. The penalized quadratic
lambda * ||beta||^2 + alpha * beta^T Omega beta then has the inverse
and square-root structure exploited below: all estimator and tuning
operations reduce to N x N algebra plus O(p M^2) block work, never
materializing an Mp x Mp matrix.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class PenaltyStructure:
    """Ridge strength ``lam``, fusion strength ``alpha``, and dimensions."""

    lam: float
    alpha: float
    n_leaves: int
    n_omics: int

    def __post_init__(self):
        if not self.lam > 0:
            raise DataError("ridge penalty lambda must be positive")
        if self.alpha < 0:
            raise DataError("fusion penalty alpha must be nonnegative")
        if self.n_leaves < 1:
            raise DataError("need at least one leaf")
        if self.n_omics < 0:
            raise DataError("negative omics dimension")


@dataclass(frozen=True)
class FusionEigen:
    """Eigendecomposition of the M x M centering matrix A.

    ``basis`` has the normalized all-ones vector in column 0 (eigenvalue
    0) followed by a Helmert basis of its orthogonal complement
    (eigenvalue 1 each). The construction is closed-form, so results are
    reproducible across platforms.
    """

    basis: np.ndarray
    values: np.ndarray


def fusion_eigen(n_leaves):
    """Eigendecomposition of A = I_M - (1/M) 11^T for M = ``n_leaves``."""
    m = int(n_leaves)
    if m < 1:
        raise DataError("need at least one leaf")
    basis = np.zeros((m, m))
    basis[:, 0] = 1.0 / np.sqrt(m)
    for k in range(1, m):
        norm = np.sqrt(k * (k + 1.0))
        basis[:k, k] = 1.0 / norm
        basis[k, k] = -k / norm
    values = np.ones(m)
    values[0] = 0.0
    return FusionEigen(basis=basis, values=values)


def fusion_quadratic(beta, alpha, n_leaves, n_omics):
    """Evaluate alpha * sum_j sum_m (beta_(m)j - mean_j)^2.

    Equals alpha * beta^T Omega beta for beta in canonical ordering.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size != n_leaves * n_omics:
        raise DataError(
            f"coefficient length {beta.size} does not match "
            f"{n_leaves} leaves x {n_omics} covariates"
        )
    if beta.size == 0:
        return 0.0
    per_cov = beta.reshape(n_omics, n_leaves)
    dev = per_cov - per_cov.mean(axis=1, keepdims=True)
    return float(alpha * np.sum(dev * dev))


def penalty_inverse_entries(lam, alpha, n_leaves):
    """Closed-form entries of the M x M block of (lambda I + alpha Omega)^{-1}.

    Within each covariate block the inverse has identical diagonal
    entries ``a`` and identical off-diagonal entries ``b``.
    """
    m = n_leaves
    a = 1.0 / lam - alpha * (1.0 - 1.0 / m) / (lam * lam + lam * alpha)
    b = alpha / (lam * lam * m + lam * alpha * m)
    return a, b


# Canonical coefficient ordering used by every module and recorded in
# serialized models: covariate-major with the block (leaf) index fastest.
CANONICAL_ORDERING = "covariate_major_block_fastest"


@dataclass
class BlockDesign:
    """Design matrices induced by a leaf partition.

    Fields
    ------
    X : (N, p) standardized omics matrix.
    U : (N, M + q_c) leaf indicators followed by centered continuous
        clinical columns (unpenalized).
    leaf_assignment : (N,) leaf index per row, in 0..M-1.
    n_leaves : number of leaves M.
    block_of_leaf : (M,) maps each leaf to its omics block in
        0..n_blocks-1, or -1 for leaves whose omics effects are removed.
        The fully fused variant maps every leaf to block 0.
    n_blocks : number of distinct omics blocks M'.
    ridge_scale : multiplier applied to lambda (M for the fully fused
        variant so its penalty is lambda * M, else 1).
    clinical_centers : per-column means subtracted from the appended
        clinical columns (empty when none were given).
    """

    X: np.ndarray
    U: np.ndarray
    leaf_assignment: np.ndarray
    n_leaves: int
    block_of_leaf: np.ndarray
    n_blocks: int
    ridge_scale: float = 1.0
    clinical_centers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ordering: str = CANONICAL_ORDERING

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def n_omics(self):
        return self.X.shape[1]

    @property
    def n_clinical(self):
        return self.U.shape[1] - self.n_leaves

    def block_rows(self):
        """Omics block index per row (-1 for rows in removed leaves)."""
        return self.block_of_leaf[self.leaf_assignment]

    def with_blocks(self, block_of_leaf, ridge_scale=1.0):
        """Copy of this design with a different leaf-to-block mapping."""
        block_of_leaf = np.asarray(block_of_leaf, dtype=int)
        retained = block_of_leaf[block_of_leaf >= 0]
        n_blocks = int(retained.max()) + 1 if retained.size else 0
        return BlockDesign(
            X=self.X,
            U=self.U,
            leaf_assignment=self.leaf_assignment,
            n_leaves=self.n_leaves,
            block_of_leaf=block_of_leaf,
            n_blocks=n_blocks,
            ridge_scale=ridge_scale,
            clinical_centers=self.clinical_centers,
        )

    def fully_fused(self):
        """Variant with one shared omics block and penalty lambda * M."""
        return self.with_blocks(
            np.zeros(self.n_leaves, dtype=int), ridge_scale=float(self.n_leaves)
        )

    def without_leaves(self, removed):
        """Variant with the omics blocks of ``removed`` leaves dropped.

        The fusion penalty couples only the retained leaves.
        """
        removed = set(int(r) for r in removed)
        block_of_leaf = np.full(self.n_leaves, -1, dtype=int)
        nxt = 0
        for m in range(self.n_leaves):
            if m not in removed:
                block_of_leaf[m] = nxt
                nxt += 1
        return self.with_blocks(block_of_leaf)

    def x_tilde(self):
        """Materialize the N x (n_blocks * p) blocked omics design.

        Row i carries x_i in the columns of its block and zeros
        elsewhere (canonical ordering: column j * n_blocks + b). This is
        O(N p M') memory; estimators never call it, it exists for
        inspection and oracle checks.
        """
        n, p = self.X.shape
        mb = self.n_blocks
        out = np.zeros((n, p * mb))
        rows = self.block_rows()
        active = rows >= 0
        if mb and p:
            idx = np.where(active)[0]
            cols = np.arange(p) * mb
            for i in idx:
                out[i, cols + rows[i]] = self.X[i]
        return out


def build_block_design(X, leaf_assignment, n_leaves, clinical_linear=None):
    """Assemble the block design for a leaf partition.

    ``clinical_linear`` optionally supplies continuous clinical columns
    that are appended to the indicator part of U, centered, and left
    unpenalized.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    leaf_assignment = np.asarray(leaf_assignment, dtype=int)
    n = leaf_assignment.shape[0]
    if X.size == 0:
        X = np.zeros((n, 0))
    if X.shape[0] != n:
        raise DataError("omics and leaf assignment lengths differ")
    if leaf_assignment.size and (
        leaf_assignment.min() < 0 or leaf_assignment.max() >= n_leaves
    ):
        raise DataError("leaf index out of range")
    counts = np.bincount(leaf_assignment, minlength=n_leaves)
    if np.any(counts == 0):
        empty = int(np.argmin(counts))
        raise DataError(f"leaf {empty} has no observations")

    U = np.zeros((n, n_leaves))
    U[np.arange(n), leaf_assignment] = 1.0
    centers = np.zeros(0)
    if clinical_linear is not None:
        C = np.atleast_2d(np.asarray(clinical_linear, dtype=float))
        if C.shape[0] != n:
            raise DataError("clinical linear columns have wrong length")
        centers = C.mean(axis=0)
        U = np.hstack([U, C - centers])

    return BlockDesign(
        X=X,
        U=U,
        leaf_assignment=leaf_assignment,
        n_leaves=n_leaves,
        block_of_leaf=np.arange(n_leaves),
        n_blocks=n_leaves,
        clinical_centers=centers,
    )


def transform_design(block, eig, lam, alpha):
    """Compute X_check with X_check X_check^T = X_tilde Lambda^{-1} X_tilde^T.

    Lambda = lambda * ridge_scale * I + alpha * Omega. The transform is
    built per covariate block from the M' x M' eigenbasis, so the cost
    is O(N p M') time and memory; the Mp x Mp basis is never formed.
    """
    if not lam > 0:
        raise DataError("ridge penalty lambda must be positive")
    n, p = block.X.shape
    mb = block.n_blocks
    if p == 0 or mb == 0:
        return np.zeros((n, p * mb))
    scale = 1.0 / np.sqrt(lam * block.ridge_scale + alpha * eig.values)
    B = eig.basis * scale[None, :]
    rows = block.block_rows()
    brows = np.zeros((n, mb))
    active = rows >= 0
    brows[active] = B[rows[active]]
    return np.einsum("ij,ik->ijk", block.X, brows).reshape(n, p * mb)


def penalized_grams(block):
    """Gram matrices (G0, G1) of the penalty-whitened omics design.

    For any lam > 0, alpha >= 0:

        X_tilde Lambda^{-1} X_tilde^T
            = G0 / (lam * ridge_scale) + G1 / (lam * ridge_scale + alpha)

    where G0 projects on the shared (all-ones) fusion direction and G1
    on its complement. Both are N x N and depend only on the design, so
    tuning re-evaluates penalties in O(N^2) regardless of p.
    """
    rows = block.block_rows()
    active = rows >= 0
    Xa = np.where(active[:, None], block.X, 0.0)
    XX = Xa @ Xa.T
    if block.n_blocks == 0:
        z = np.zeros_like(XX)
        return z, z
    G0 = XX / block.n_blocks
    same = rows[:, None] == rows[None, :]
    G1 = np.where(same, XX, 0.0) - G0
    # Rows without an omics block contribute nothing to either part.
    G1[~active, :] = 0.0
    G1[:, ~active] = 0.0
    return G0, G1


def gram_at(grams, block, lam, alpha):
    """Evaluate X_tilde Lambda^{-1} X_tilde^T from precomputed grams."""
    G0, G1 = grams
    ls = lam * block.ridge_scale
    return G0 / ls + G1 / (ls + alpha)
