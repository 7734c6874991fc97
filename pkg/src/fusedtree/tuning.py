"""Cross-validated tuning of the ridge and fusion penalties.

The held-out linear predictors for every fold come from operations in
the training-fold dimension only: the two penalty-whitened gram parts
(G0, G1) are built once per design, after which each (lambda, alpha)
evaluation combines them in O(N^2), factors K training blocks, and
never touches the omics dimension again. Search runs Nelder-Mead on
(log lambda, log alpha) with restarts.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import data as dt
from .errors import DataError
from .estimator import (
    _BinomialFamily,
    _CoxFamily,
    _irls,
    _pin_cox_gauge,
    _wls_core,
)
from .penalty import gram_at, penalized_grams
from .rng import STREAM_TUNE_FOLDS, derived_rng

# Search box on the log scale. The lower lambda bound keeps the N x N
# system G + I numerically meaningful (G scales like p / lambda); the
# upper bounds just stop the simplex from wandering across flat tails.
_LAM_LOG_BOUNDS = (np.log(1e-8), np.log(1e12))
_ALPHA_LOG_BOUNDS = (np.log(1e-10), np.log(1e14))


@dataclass(frozen=True)
class FoldAssignment:
    """A K-fold partition stratified by leaf (and class for binary)."""

    n_folds: int
    fold_of: np.ndarray
    leaf_counts: np.ndarray  # (K, M) rows per leaf per fold
    class_counts: np.ndarray = None  # (K, 2) for binary responses

    def test_indices(self, k):
        return np.where(self.fold_of == k)[0]

    def train_indices(self, k):
        return np.where(self.fold_of != k)[0]


def make_folds(n, n_folds, leaf_assignment, response=None, seed=0):
    """Deterministic stratified fold assignment.

    Rows are dealt per (leaf) stratum, or per (leaf, class) stratum for
    binary responses. Remainders go to the folds that are least loaded
    for, in order of priority, the stratum's leaf, its class, and
    overall, which keeps fold sizes balanced at every level.
    """
    if n_folds < 2:
        raise DataError("need at least 2 folds")
    if n_folds > n:
        raise DataError("more folds than observations")
    leaf_assignment = np.asarray(leaf_assignment, dtype=int)
    n_leaves = int(leaf_assignment.max()) + 1 if leaf_assignment.size else 1
    binary = response is not None and response.kind == dt.BINOMIAL
    classes = response.y.astype(int) if binary else np.zeros(n, dtype=int)

    rng = derived_rng(seed, STREAM_TUNE_FOLDS)
    fold_of = np.empty(n, dtype=int)
    leaf_counts = np.zeros((n_folds, n_leaves), dtype=int)
    class_counts = np.zeros((n_folds, 2), dtype=int)
    totals = np.zeros(n_folds, dtype=int)

    small = [
        m
        for m in range(n_leaves)
        if 0 < np.count_nonzero(leaf_assignment == m) < n_folds
    ]
    if small:
        warnings.warn(
            f"leaves {small} have fewer rows than folds; they contribute "
            "to fewer folds",
            RuntimeWarning,
        )

    for leaf in range(n_leaves):
        for cls in (0, 1) if binary else (0,):
            idx = np.where((leaf_assignment == leaf) & (classes == cls))[0]
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            base, rem = divmod(idx.size, n_folds)
            order = sorted(
                range(n_folds),
                key=lambda f: (
                    leaf_counts[f, leaf],
                    class_counts[f, cls],
                    totals[f],
                    f,
                ),
            )
            take = 0
            for rank, f in enumerate(order):
                cnt = base + (1 if rank < rem else 0)
                sel = idx[take : take + cnt]
                take += cnt
                fold_of[sel] = f
                leaf_counts[f, leaf] += cnt
                class_counts[f, cls] += cnt
                totals[f] += cnt

    if binary:
        _repair_class_balance(fold_of, leaf_assignment, classes, leaf_counts, class_counts)

    return FoldAssignment(
        n_folds=n_folds,
        fold_of=fold_of,
        leaf_counts=leaf_counts,
        class_counts=class_counts if binary else None,
    )


def _repair_class_balance(fold_of, leaf_assignment, classes, leaf_counts, class_counts):
    """Even out per-fold class counts without touching leaf or total counts.

    Swapping the folds of a class-1 and a class-0 row from the same leaf
    moves one unit of class balance between two folds while leaving every
    leaf-per-fold count and fold size unchanged.
    """
    for _ in range(fold_of.size):
        ones = class_counts[:, 1]
        hi, lo = int(np.argmax(ones)), int(np.argmin(ones))
        if ones[hi] - ones[lo] <= 1:
            return
        done = False
        for leaf in range(leaf_counts.shape[1]):
            give = np.where(
                (fold_of == hi) & (leaf_assignment == leaf) & (classes == 1)
            )[0]
            get = np.where(
                (fold_of == lo) & (leaf_assignment == leaf) & (classes == 0)
            )[0]
            if give.size and get.size:
                fold_of[give[0]], fold_of[get[0]] = lo, hi
                class_counts[hi, 1] -= 1
                class_counts[lo, 1] += 1
                class_counts[hi, 0] += 1
                class_counts[lo, 0] -= 1
                done = True
                break
        if not done:
            return


@dataclass
class TuneResult:
    lam: float
    alpha: float
    objective: float
    converged: bool
    trace: list = field(default_factory=list)


class CVEngine:
    """Precomputed fold structure for repeated objective evaluations."""

    def __init__(self, block, response, folds, tol=1e-10, max_iter=100):
        self.block = block
        self.response = response
        self.folds = folds
        self.tol = tol
        self.max_iter = max_iter
        self.grams = penalized_grams(block)
        self.splits = []
        for k in range(folds.n_folds):
            tr = folds.train_indices(k)
            te = folds.test_indices(k)
            present = np.unique(block.leaf_assignment[tr])
            if present.size < block.n_leaves:
                raise DataError(
                    f"fold {k} holds all rows of some leaf; its training "
                    "design is rank deficient"
                )
            self.splits.append((tr, te))

    def linear_predictors(self, lam, alpha):
        """Held-out (U c, X beta) pairs per fold at the given penalties.

        For binomial and survival responses the training-fold IRLS runs
        to convergence with the per-iteration fold formulas; survival
        folds also report their training baseline for the objective.
        """
        G = gram_at(self.grams, self.block, lam, alpha)
        out = []
        for tr, te in self.splits:
            Gtt = G[np.ix_(tr, tr)]
            Gte = G[np.ix_(te, tr)]
            U_tr = self.block.U[tr]
            U_te = self.block.U[te]
            if self.response.kind == dt.GAUSSIAN:
                c, v = _wls_core(U_tr, Gtt, self.response.y[tr])
                out.append((U_te @ c, Gte @ v, None))
                continue
            if self.response.kind == dt.BINOMIAL:
                family = _BinomialFamily(self.response.y[tr])
            else:
                family = _CoxFamily(self.response.y[tr], self.response.status[tr])
            c, v, state = _irls(
                U_tr,
                Gtt,
                family,
                self.block.n_leaves,
                self.block.leaf_assignment[tr],
                self.tol,
                self.max_iter,
                raise_on_failure=False,
            )
            if not state.converged:
                out.append(None)
                continue
            baseline = None
            if self.response.kind == dt.COX:
                c, eta, baseline = _pin_cox_gauge(
                    self.block.n_leaves,
                    c,
                    state.eta,
                    family.time,
                    family.status,
                )
            out.append((U_te @ c, Gte @ v, baseline))
        return out

    def objective(self, lam, alpha):
        """Mean held-out loss; +inf when any training fold fails."""
        preds = self.linear_predictors(lam, alpha)
        total = 0.0
        for (tr, te), pred in zip(self.splits, preds):
            if pred is None:
                return np.inf
            uc, xb, baseline = pred
            eta = uc + xb
            if self.response.kind == dt.GAUSSIAN:
                total += float(np.sum((self.response.y[te] - eta) ** 2))
            elif self.response.kind == dt.BINOMIAL:
                y = self.response.y[te]
                total += float(-np.sum(y * eta - np.logaddexp(0.0, eta)))
            else:
                t = self.response.y[te]
                d = self.response.status[te]
                h = baseline.at(t)
                jump = baseline.jump_at(t)
                ll = np.sum(
                    -np.exp(np.clip(eta, -500, 500)) * h
                    + d * (np.log(np.clip(jump, 1e-300, None)) + eta)
                )
                total += float(-ll)
        return total / self.block.n


def cv_linear_predictors(block, response, lam, alpha, folds):
    """Per-fold held-out linear predictors (U c, X beta)."""
    engine = CVEngine(block, response, folds)
    preds = engine.linear_predictors(lam, alpha)
    if any(p is None for p in preds):
        raise DataError("training-fold IRLS failed to converge")
    return [(uc, xb) for uc, xb, _ in preds]


def cv_objective(lam, alpha, block, response, folds, engine=None):
    """Cross-validated loss at fixed penalties.

    Mean squared held-out error for gaussian responses, negative mean
    held-out log-likelihood for binomial and survival responses.
    """
    if not lam > 0:
        raise DataError("ridge penalty lambda must be positive")
    if alpha < 0:
        raise DataError("fusion penalty alpha must be nonnegative")
    engine = engine or CVEngine(block, response, folds)
    return engine.objective(lam, alpha)


_RESTART_OFFSETS = [(2.0, 2.0), (-2.0, -2.0), (2.0, -2.0)]


def tune(
    block,
    response,
    folds,
    start=None,
    restarts=3,
    fix_alpha=None,
    engine=None,
    maxiter=200,
):
    """Nelder-Mead search for the penalties on the log scale.

    ``fix_alpha`` freezes the fusion penalty (0 for the unfused
    variant), leaving a 1-D search over log lambda. The best vertex
    across the base start and ``restarts`` offset starts is returned,
    together with the full evaluation trace.
    """
    engine = engine or CVEngine(block, response, folds)
    if block.n_omics == 0 or block.n_blocks == 0:
        return TuneResult(
            lam=1.0,
            alpha=0.0 if fix_alpha is None else fix_alpha,
            objective=engine.objective(1.0, 0.0),
            converged=True,
        )
    if start is None:
        start = (np.log(max(block.n_omics, 2)), 0.0)
    trace = []

    def record(x, f):
        trace.append((float(np.exp(x[0])), alpha_of(x), float(f)))

    def alpha_of(x):
        if fix_alpha is not None:
            return float(fix_alpha)
        return float(np.exp(np.clip(x[1], *_ALPHA_LOG_BOUNDS)))

    def fun(x):
        lam = float(np.exp(np.clip(x[0], *_LAM_LOG_BOUNDS)))
        f = engine.objective(lam, alpha_of(x))
        record(x, f)
        return f

    if fix_alpha is not None:
        starts = [np.array([start[0]])]
        for off in _RESTART_OFFSETS[:restarts]:
            starts.append(np.array([start[0] + off[0]]))
    else:
        starts = [np.array(start, dtype=float)]
        for off in _RESTART_OFFSETS[:restarts]:
            starts.append(np.array([start[0] + off[0], start[1] + off[1]]))

    best = None
    any_success = False
    for x0 in starts:
        res = minimize(
            fun,
            x0,
            method="Nelder-Mead",
            options={"maxiter": maxiter, "fatol": 1e-6, "xatol": np.inf},
        )
        any_success = any_success or bool(res.success)
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise DataError("no penalty produced a finite cross-validated objective")
    lam = float(np.exp(np.clip(best.x[0], *_LAM_LOG_BOUNDS)))
    alpha = alpha_of(best.x)
    return TuneResult(
        lam=lam,
        alpha=alpha,
        objective=float(best.fun),
        converged=any_success,
        trace=trace,
    )
