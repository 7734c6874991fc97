"""Trees on clinical covariates, fusion-penalized ridge on omics covariates.

The model partitions observations by a CART tree over low-dimensional
clinical covariates and fits a high-dimensional ridge regression on
omics covariates in every leaf, coupling the per-leaf regressions
through a fusion penalty that shrinks each covariate's leaf effects
toward their common mean.
"""

from .data import Response
from .errors import ConvergenceError, DataError, FusedTreeError
from .estimator import (
    BaselineHazard,
    breslow_baseline,
    fit_alpha_limit,
    fit_binary,
    fit_cox,
    fit_gaussian,
)
from .fit import FitConfig, fit_fused_tree
from .metrics import concordance, pmse, td_auc
from .model import FusedTreeModel, standardize_omics
from .nodetest import GlobalTestResult, RemovalPath, global_test, removal_path, select_model
from .penalty import (
    BlockDesign,
    FusionEigen,
    PenaltyStructure,
    build_block_design,
    fusion_eigen,
    fusion_quadratic,
    transform_design,
)
from .simulate import (
    SimConfig,
    SimReplicate,
    gen_covariates,
    gen_full_fusion,
    gen_interaction,
    gen_linear,
    gen_regpath,
    run_experiment,
)
from .tree import SplitRule, Tree, TreeConfig, best_split, fit_tree, prune
from .tuning import (
    FoldAssignment,
    TuneResult,
    cv_linear_predictors,
    cv_objective,
    make_folds,
    tune,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineHazard",
    "BlockDesign",
    "ConvergenceError",
    "DataError",
    "FitConfig",
    "FoldAssignment",
    "FusedTreeError",
    "FusedTreeModel",
    "FusionEigen",
    "GlobalTestResult",
    "PenaltyStructure",
    "RemovalPath",
    "Response",
    "SimConfig",
    "SimReplicate",
    "SplitRule",
    "Tree",
    "TreeConfig",
    "TuneResult",
    "best_split",
    "breslow_baseline",
    "build_block_design",
    "concordance",
    "cv_linear_predictors",
    "cv_objective",
    "fit_alpha_limit",
    "fit_binary",
    "fit_cox",
    "fit_fused_tree",
    "fit_gaussian",
    "fit_tree",
    "fusion_eigen",
    "fusion_quadratic",
    "gen_covariates",
    "gen_full_fusion",
    "gen_interaction",
    "gen_linear",
    "gen_regpath",
    "global_test",
    "make_folds",
    "pmse",
    "prune",
    "removal_path",
    "run_experiment",
    "select_model",
    "standardize_omics",
    "td_auc",
    "transform_design",
    "tune",
]
