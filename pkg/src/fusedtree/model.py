"""Fitted model container and prediction."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import data as dt
from .errors import DataError
from .estimator import BaselineHazard
from .penalty import PenaltyStructure
from .tree import Tree


@dataclass(frozen=True)
class Standardization:
    """Training-data standardization of the omics matrix.

    ``kept`` indexes the retained columns of the original matrix;
    zero-variance columns are dropped at fit time.
    """

    mean: np.ndarray
    sd: np.ndarray
    kept: np.ndarray

    def apply(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] < (int(self.kept.max()) + 1 if self.kept.size else 0):
            raise DataError("omics matrix has fewer columns than at fit time")
        return (X[:, self.kept] - self.mean) / self.sd


def standardize_omics(X):
    """Standardize columns to zero mean, unit sd; drop constant columns."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    kept = np.where(sd > 0)[0]
    if kept.size < X.shape[1]:
        warnings.warn(
            f"dropping {X.shape[1] - kept.size} zero-variance omics columns",
            RuntimeWarning,
        )
    std = Standardization(mean=mean[kept], sd=sd[kept], kept=kept)
    return std.apply(X), std


@dataclass
class FusedTreeModel:
    """A fitted model: tree, leaf intercepts, and per-leaf omics effects.

    ``beta`` holds one column per retained omics block; leaves listed in
    ``removed_nodes`` carry no omics effects. ``c_hat`` stacks the M
    leaf intercepts and the coefficients of the centered linear clinical
    columns.
    """

    tree: Tree
    response_kind: str
    c_hat: np.ndarray
    beta: np.ndarray  # (p_kept, n_blocks)
    penalties: PenaltyStructure
    standardization: Standardization
    block_of_leaf: np.ndarray
    removed_nodes: frozenset = frozenset()
    linear_cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    clinical_centers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    baseline: BaselineHazard = None
    horizon: float = None
    fit_info: dict = field(default_factory=dict)

    @property
    def n_leaves(self):
        return self.tree.n_leaves

    @property
    def beta_hat(self):
        """Canonical flat coefficient vector (covariate-major, block fastest)."""
        return self.beta.ravel()

    def linear_predictors(self, Z, X):
        """Raw linear predictor for each row of (Z, X)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        leaves = self.tree.assign(Z)
        eta = self.c_hat[leaves].astype(float)
        if self.linear_cols.size:
            C = Z[:, self.linear_cols] - self.clinical_centers
            eta = eta + C @ self.c_hat[self.n_leaves :]
        if self.beta.size:
            Xs = self.standardization.apply(X)
            blocks = self.block_of_leaf[leaves]
            for m in range(self.beta.shape[1]):
                sel = blocks == m
                if sel.any():
                    eta[sel] += Xs[sel] @ self.beta[:, m]
        return eta

    def predict(self, Z, X, output="response", horizon=None):
        """Predict for new rows.

        ``output``: "linear" returns the linear predictor for any
        response kind. "response" returns the linear predictor
        (gaussian), the event probability (binomial), or the survival
        probability at ``horizon`` (cox). "cumhaz" (cox only) returns
        the cumulative hazard at the horizon.
        """
        eta = self.linear_predictors(Z, X)
        if output == "linear":
            return eta
        if self.response_kind == dt.GAUSSIAN:
            return eta
        if self.response_kind == dt.BINOMIAL:
            return expit(eta)
        if self.baseline is None:
            raise DataError("survival model carries no baseline hazard")
        t_star = horizon if horizon is not None else self.horizon
        if t_star is None:
            raise DataError("survival prediction requires a horizon")
        ch = float(self.baseline.at(t_star)) * np.exp(eta)
        if output == "cumhaz":
            return ch
        return np.exp(-ch)
