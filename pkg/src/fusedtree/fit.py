"""End-to-end model fitting: tree, design, penalty tuning, coefficients."""

from dataclasses import dataclass

import numpy as np

from . import data as dt
from .errors import DataError
from .estimator import fit_binary, fit_cox, fit_gaussian
from .model import FusedTreeModel, standardize_omics
from .penalty import PenaltyStructure, build_block_design
from .tree import TreeConfig, fit_tree, prune
from .tuning import make_folds, tune

VARIANTS = ("fused", "zerofus", "fulfus")


@dataclass
class FitConfig:
    min_node_size: int = 30
    max_depth: int = 6
    cv_folds: int = 5
    seed: int = 0
    lam: float = None  # fixed penalties; None means tune
    alpha: float = None
    include_linear: bool = True
    kappa_grid: list = None
    tol: float = 1e-10
    max_iter: int = 100
    horizon: float = None
    keep_tune_trace: bool = False


def _coefficients(design, response, pen, config):
    """Dispatch to the closed-form or IRLS fit for the response kind."""
    baseline = None
    if response.kind == dt.GAUSSIAN:
        c, beta = fit_gaussian(design, response.y, pen)
    elif response.kind == dt.BINOMIAL:
        c, beta, _ = fit_binary(
            design, response.y, pen, tol=config.tol, max_iter=config.max_iter
        )
    else:
        c, beta, baseline, _ = fit_cox(
            design,
            response.y,
            response.status,
            pen,
            tol=config.tol,
            max_iter=config.max_iter,
        )
    return c, beta, baseline


def tune_design(design, response, folds, config, fix_alpha=None, start=None):
    """Tune penalties on a design, honoring fixed values from the config."""
    if design.n_omics == 0 or design.n_blocks == 0:
        return None
    if config.lam is not None:
        alpha = config.alpha if fix_alpha is None else fix_alpha
        if alpha is None:
            raise DataError("fixed lambda requires a fixed alpha as well")
        return tune_result_fixed(config.lam, alpha)
    return tune(design, response, folds, fix_alpha=fix_alpha, start=start)


def tune_result_fixed(lam, alpha):
    from .tuning import TuneResult

    return TuneResult(lam=lam, alpha=alpha, objective=np.nan, converged=True)


def fit_fused_tree(
    Z,
    X,
    response,
    kinds=None,
    config=None,
    tree=None,
    variant="fused",
):
    """Fit the full pipeline and return a FusedTreeModel.

    ``tree`` may supply a pre-specified tree (skipping induction and
    pruning), e.g. a known true structure. ``variant`` selects the
    penalty treatment: "fused" tunes both penalties, "zerofus" pins
    alpha to zero, "fulfus" fits the fully fused (single shared omics
    block) limit; each with lambda tuned unless fixed in the config.
    """
    if variant not in VARIANTS:
        raise DataError(f"unknown variant: {variant!r}")
    config = config or FitConfig()
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    response = (
        response if isinstance(response, dt.Response) else dt.Response.gaussian(response)
    )
    if np.isnan(Z).any():
        raise DataError("clinical covariates contain missing values")

    tree_cfg = TreeConfig(
        min_node_size=config.min_node_size,
        max_depth=config.max_depth,
        kappa_grid=config.kappa_grid,
        cv_folds=config.cv_folds,
        seed=config.seed,
    )
    if tree is None:
        tree = fit_tree(Z, response, tree_cfg, kinds=kinds)
        tree = prune(tree, Z, response, tree_cfg)
    leaves = tree.assign(Z)

    X = np.atleast_2d(np.asarray(X, dtype=float)) if X is not None else np.zeros((Z.shape[0], 0))
    if X.size == 0:
        X = X.reshape(Z.shape[0], 0)
    if np.isnan(X).any():
        raise DataError("omics covariates contain missing values")
    Xs, std = standardize_omics(X)

    linear_cols = np.zeros(0, dtype=int)
    if config.include_linear:
        if kinds is None:
            linear_cols = np.arange(Z.shape[1])
        else:
            linear_cols = np.array(
                [j for j, k in enumerate(kinds) if k == dt.CONTINUOUS], dtype=int
            )
    clin = Z[:, linear_cols] if linear_cols.size else None
    design = build_block_design(Xs, leaves, tree.n_leaves, clin)

    fit_design = design.fully_fused() if variant == "fulfus" else design
    fix_alpha = 0.0 if variant in ("zerofus", "fulfus") else None

    folds = None
    tune_res = None
    if Xs.shape[1] > 0:
        folds = make_folds(
            design.n, config.cv_folds, leaves, response, seed=config.seed
        )
        tune_res = tune_design(fit_design, response, folds, config, fix_alpha=fix_alpha)
    if tune_res is None:
        lam, alpha = 1.0, 0.0
    else:
        lam, alpha = tune_res.lam, tune_res.alpha

    pen = PenaltyStructure(
        lam=lam,
        alpha=alpha,
        n_leaves=max(fit_design.n_blocks, 1),
        n_omics=max(Xs.shape[1], 0),
    )
    c, beta, baseline = _coefficients(fit_design, response, pen, config)

    block_of_leaf = fit_design.block_of_leaf
    if variant == "fulfus":
        # Replicate the shared block into every leaf.
        beta = np.repeat(beta, design.n_leaves, axis=1)
        block_of_leaf = np.arange(design.n_leaves)
        alpha = np.inf

    horizon = config.horizon
    if response.kind == dt.COX and horizon is None:
        events = response.y[response.status > 0]
        horizon = float(events.max()) if events.size else float(response.y.max())

    tuned = tune_res is not None and not np.isnan(tune_res.objective)
    fit_info = {
        "variant": variant,
        "seed": config.seed,
        "cv_folds": config.cv_folds,
        "n": int(design.n),
        "n_omics_input": int(X.shape[1]),
        "tuned": tuned,
        "cv_objective": float(tune_res.objective) if tuned else None,
    }
    if config.keep_tune_trace and tune_res is not None:
        fit_info["tune_trace"] = tune_res.trace

    return FusedTreeModel(
        tree=tree,
        response_kind=response.kind,
        c_hat=np.asarray(c, dtype=float),
        beta=np.asarray(beta, dtype=float),
        penalties=PenaltyStructure(
            lam=lam,
            alpha=alpha if np.isfinite(alpha) else np.inf,
            n_leaves=tree.n_leaves,
            n_omics=Xs.shape[1],
        ),
        standardization=std,
        block_of_leaf=np.asarray(block_of_leaf, dtype=int),
        removed_nodes=frozenset(),
        linear_cols=linear_cols,
        clinical_centers=design.clinical_centers,
        baseline=baseline,
        horizon=horizon,
        fit_info=fit_info,
    )


def refit_removed(model, design, response, folds, config, removed, warm=None):
    """Refit with the omics blocks of ``removed`` leaves dropped.

    Penalties are re-tuned on the reduced design (the fusion penalty
    couples only retained leaves) with the same fold assignment, warm
    started from ``warm`` = (lam, alpha) when given.
    """
    removed = frozenset(int(r) for r in removed)
    reduced = design.without_leaves(removed)
    variant = model.fit_info.get("variant", "fused")
    fix_alpha = 0.0 if variant in ("zerofus", "fulfus") else None
    tune_res = None
    if reduced.n_blocks > 0 and reduced.n_omics > 0:
        start = None
        if warm is not None:
            lam0, al0 = warm
            al0 = al0 if (fix_alpha is None and np.isfinite(al0) and al0 > 0) else 1.0
            start = (float(np.log(lam0)), float(np.log(al0)))
        tune_res = tune_design(reduced, response, folds, config, fix_alpha, start)
    lam, alpha = (1.0, 0.0) if tune_res is None else (tune_res.lam, tune_res.alpha)
    pen = PenaltyStructure(
        lam=lam,
        alpha=alpha,
        n_leaves=max(reduced.n_blocks, 1),
        n_omics=reduced.n_omics,
    )
    c, beta, baseline = _coefficients(reduced, response, pen, config)
    info = dict(model.fit_info)
    tuned = tune_res is not None and not np.isnan(tune_res.objective)
    info["cv_objective"] = float(tune_res.objective) if tuned else None
    return FusedTreeModel(
        tree=model.tree,
        response_kind=model.response_kind,
        c_hat=np.asarray(c, dtype=float),
        beta=np.asarray(beta, dtype=float),
        penalties=PenaltyStructure(
            lam=lam, alpha=alpha, n_leaves=model.tree.n_leaves, n_omics=reduced.n_omics
        ),
        standardization=model.standardization,
        block_of_leaf=reduced.block_of_leaf.copy(),
        removed_nodes=removed,
        linear_cols=model.linear_cols,
        clinical_centers=model.clinical_centers,
        baseline=baseline,
        horizon=model.horizon,
        fit_info=info,
    )


def design_from_model(model, Z, X):
    """Rebuild the training design of a fitted model on (Z, X)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    leaves = model.tree.assign(Z)
    Xs = model.standardization.apply(X)
    clin = Z[:, model.linear_cols] if model.linear_cols.size else None
    design = build_block_design(Xs, leaves, model.tree.n_leaves, clin)
    if clin is not None:
        # Reproduce the training centering exactly.
        shift = design.clinical_centers - model.clinical_centers
        design.U[:, model.tree.n_leaves :] += shift
        design.clinical_centers = model.clinical_centers.copy()
    return design
