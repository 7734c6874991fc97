"""Per-leaf tests of the overall omics effect and backward node removal.

Each leaf gets a permutation-calibrated score test of whether its omics
block adds explained variation beyond the intercept. Ordering leaves by
p-value (largest first) drives a greedy backward search over M+1 nested
candidate models; the selected model is the simplest one within a 2%
performance margin of the best.
"""

from dataclasses import dataclass

import numpy as np

from . import data as dt
from .errors import DataError
from .estimator import breslow_baseline
from .fit import FitConfig, design_from_model, refit_removed
from .metrics import concordance, pmse
from .rng import STREAM_PERMUTATION, derived_rng
from .tuning import make_folds


@dataclass(frozen=True)
class GlobalTestResult:
    leaf: int
    statistic: float
    p_value: float
    n_permutations: int


def _null_residuals(response):
    """Residuals of the intercept-only null model on the link scale."""
    if response.kind in (dt.GAUSSIAN, dt.BINOMIAL):
        return response.y - response.y.mean()
    base = breslow_baseline(np.zeros(response.n), response.y, response.status)
    return response.status - base.at(response.y)


def global_test(X, response, n_permutations=1999, seed=0, leaf=0):
    """Permutation score test of the leaf's overall omics effect.

    The statistic is ||X^T r||^2 / (n * var(r)) with r the null
    residuals; its null distribution comes from permuting r within the
    leaf. A constant response yields p = 1 by convention.
    """
    if n_permutations < 99:
        raise DataError("use at least 99 permutations")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n < 3:
        raise DataError("need at least 3 rows for the leaf test")
    keep = X.std(axis=0) > 0
    X = X[:, keep]
    r = _null_residuals(response)
    denom = float(np.mean(r * r)) * n
    if denom <= 0 or X.shape[1] == 0:
        return GlobalTestResult(leaf, 0.0, 1.0, n_permutations)
    observed = float(np.sum((X.T @ r) ** 2) / denom)
    rng = derived_rng(seed, STREAM_PERMUTATION, leaf)
    perms = np.empty((n, n_permutations))
    for b in range(n_permutations):
        perms[:, b] = r[rng.permutation(n)]
    stats = np.sum((X.T @ perms) ** 2, axis=0) / denom
    p_value = (1.0 + np.count_nonzero(stats >= observed)) / (1.0 + n_permutations)
    return GlobalTestResult(leaf, observed, float(p_value), n_permutations)


@dataclass
class PathEntry:
    removed: tuple
    lam: float
    alpha: float
    performance: float
    partially_evaluated: bool
    model: object


@dataclass
class RemovalPath:
    tests: list
    order: list  # leaf indices, largest p first
    entries: list  # M+1 nested candidate models
    metric: str  # "pmse" | "neg_loglik" | "cindex"
    higher_is_better: bool
    selected: int = 0


def _test_performance(model, Z, X, response):
    """(value, partially_evaluated) of a model on held-out data."""
    leaves = model.tree.assign(np.atleast_2d(np.asarray(Z, dtype=float)))
    partial = np.unique(leaves).size < model.tree.n_leaves
    eta = model.linear_predictors(Z, X)
    if response.kind == dt.GAUSSIAN:
        return pmse(response.y, eta), partial
    if response.kind == dt.BINOMIAL:
        ll = np.mean(response.y * eta - np.logaddexp(0.0, eta))
        return float(-ll), partial
    return (
        concordance(eta, response.y, response.status, variant="harrell"),
        partial,
    )


def removal_path(
    model,
    Z_train,
    X_train,
    response_train,
    Z_test,
    X_test,
    response_test,
    n_permutations=1999,
    seed=0,
    config=None,
):
    """Fit the M+1 nested candidate models of the backward search.

    Leaf p-values come from ``global_test`` on the training data; each
    reduced model re-tunes its penalties on the reduced design with the
    same fold assignment, warm started from the previous entry.
    """
    config = config or FitConfig(
        seed=model.fit_info.get("seed", 0),
        cv_folds=model.fit_info.get("cv_folds", 5),
    )
    response_train = _as_response(response_train, model.response_kind)
    response_test = _as_response(response_test, model.response_kind)
    Z_train = np.atleast_2d(np.asarray(Z_train, dtype=float))
    leaves = model.tree.assign(Z_train)
    Xs = model.standardization.apply(X_train)

    tests = []
    for m in range(model.tree.n_leaves):
        rows = np.where(leaves == m)[0]
        tests.append(
            global_test(
                Xs[rows],
                response_train.subset(rows),
                n_permutations=n_permutations,
                seed=seed,
                leaf=m,
            )
        )
    # Largest p first; ties broken by leaf index for determinism.
    order = sorted(range(len(tests)), key=lambda m: (-tests[m].p_value, m))

    design = design_from_model(model, Z_train, X_train)
    folds = make_folds(
        design.n, config.cv_folds, leaves, response_train, seed=config.seed
    )

    metric, higher = {
        dt.GAUSSIAN: ("pmse", False),
        dt.BINOMIAL: ("neg_loglik", False),
        dt.COX: ("cindex", True),
    }[model.response_kind]

    perf, partial = _test_performance(model, Z_test, X_test, response_test)
    entries = [
        PathEntry(
            removed=(),
            lam=model.penalties.lam,
            alpha=model.penalties.alpha,
            performance=perf,
            partially_evaluated=partial,
            model=model,
        )
    ]
    warm = (model.penalties.lam, model.penalties.alpha)
    for k in range(1, model.tree.n_leaves + 1):
        removed = tuple(sorted(order[:k]))
        reduced = refit_removed(
            model, design, response_train, folds, config, removed, warm=warm
        )
        perf, partial = _test_performance(reduced, Z_test, X_test, response_test)
        entries.append(
            PathEntry(
                removed=removed,
                lam=reduced.penalties.lam,
                alpha=reduced.penalties.alpha,
                performance=perf,
                partially_evaluated=partial,
                model=reduced,
            )
        )
        warm = (reduced.penalties.lam, reduced.penalties.alpha)

    path = RemovalPath(
        tests=tests,
        order=order,
        entries=entries,
        metric=metric,
        higher_is_better=higher,
    )
    path.selected = select_model(path)
    return path


def _as_response(response, kind):
    if isinstance(response, dt.Response):
        return response
    return dt.Response(kind, response)


def select_model(path, tolerance_fraction=0.02):
    """Index of the simplest model within the performance margin.

    Among models whose performance is at most ``tolerance_fraction``
    worse than the best, the one with the most removed leaves wins.
    """
    values = np.array([e.performance for e in path.entries], dtype=float)
    if path.higher_is_better:
        best = values.max()
        ok = values >= (1.0 - tolerance_fraction) * best
    else:
        best = values.min()
        ok = values <= (1.0 + tolerance_fraction) * best
    return int(np.where(ok)[0].max())
