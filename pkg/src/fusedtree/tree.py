"""CART regression trees over clinical covariates.

Greedy binary recursive partitioning with impurity criteria for
continuous (squared error), binary (Gini), and survival responses
(deviance of the node-level exponential full likelihood, Breslow tie
convention), followed by cost-complexity post-pruning with K-fold
cross-validation.

Categorical covariates are split on level subsets after ordering the
levels by their outcome statistic and scanning them as if ordinal, the
classic CART reduction. Numeric (continuous or ordinal) covariates
split at midpoints of adjacent observed values.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import data as dt
from .errors import DataError
from .rng import STREAM_TREE_CV, derived_rng

_EPS = 1e-12


@dataclass(frozen=True)
class SplitRule:
    """A binary splitting rule on one clinical covariate.

    Numeric rules send rows with z <= threshold left. Categorical rules
    send rows whose level code is in ``left_levels`` left; codes unseen
    during training are routed to the child with the larger training
    count (``unseen_left``).
    """

    covariate: int
    kind: str  # "numeric" | "categorical"
    threshold: float = None
    left_levels: frozenset = None
    right_levels: frozenset = None
    unseen_left: bool = True

    def goes_left(self, value):
        if np.isnan(value):
            raise DataError(
                f"missing value in split covariate {self.covariate}"
            )
        if self.kind == "numeric":
            return value <= self.threshold
        if value in self.left_levels:
            return True
        if value in self.right_levels:
            return False
        return self.unseen_left


@dataclass
class TreeNode:
    node_id: int  # rpart-style numbering: root 1, children 2i and 2i+1
    depth: int
    n: int
    impurity: float
    constant: float  # node mean / event proportion / relative event rate
    split: SplitRule = None
    left: int = None  # indices into Tree.nodes
    right: int = None
    leaf_index: int = None  # 0..M-1 for leaves, None for internal nodes


@dataclass
class TreeConfig:
    min_node_size: int = 30
    max_depth: int = 6
    kappa_grid: list = None  # None: derive from the cost-complexity sequence
    cv_folds: int = 5
    seed: int = 0
    # Growth gate: a split must reduce impurity by at least this
    # fraction of the root impurity (the rpart cp default).
    min_impurity_decrease: float = 0.01

    def __post_init__(self):
        if self.min_node_size < 2:
            raise DataError("min_node_size must be at least 2")
        if self.kappa_grid is not None:
            grid = [float(k) for k in self.kappa_grid]
            if sorted(grid) != grid:
                raise DataError("kappa_grid must be sorted ascending")
            self.kappa_grid = grid


class Tree:
    """A fitted binary tree. Immutable once built."""

    def __init__(self, nodes, kappa=0.0):
        self.nodes = nodes
        self.kappa = kappa
        self._leaves = [i for i, nd in enumerate(nodes) if nd.split is None]
        for m, i in enumerate(self._leaves):
            nodes[i].leaf_index = m

    @property
    def n_leaves(self):
        return len(self._leaves)

    @property
    def leaf_node_ids(self):
        return [self.nodes[i].node_id for i in self._leaves]

    @property
    def leaf_counts(self):
        return np.array([self.nodes[i].n for i in self._leaves])

    @property
    def leaf_constants(self):
        return np.array([self.nodes[i].constant for i in self._leaves])

    def split_covariates(self):
        return [nd.split.covariate for nd in self.nodes if nd.split is not None]

    def assign(self, Z):
        """Leaf index in 0..M-1 for each row of Z."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.empty(Z.shape[0], dtype=int)
        stack = [(0, np.arange(Z.shape[0]))]
        while stack:
            i, rows = stack.pop()
            if rows.size == 0:
                continue
            nd = self.nodes[i]
            if nd.split is None:
                out[rows] = nd.leaf_index
                continue
            vals = Z[rows, nd.split.covariate]
            if np.isnan(vals).any():
                raise DataError(
                    f"missing value in split covariate {nd.split.covariate}"
                )
            if nd.split.kind == "numeric":
                left = vals <= nd.split.threshold
            else:
                left = np.isin(vals, list(nd.split.left_levels))
                known_right = np.isin(vals, list(nd.split.right_levels))
                unseen = ~(left | known_right)
                if nd.split.unseen_left:
                    left = left | unseen
            stack.append((nd.left, rows[left]))
            stack.append((nd.right, rows[~left]))
        return out

    def render(self, names=None):
        """Human-readable rendering of the split structure."""
        lines = []

        def label(split, side):
            name = (
                names[split.covariate]
                if names is not None
                else f"z{split.covariate + 1}"
            )
            if split.kind == "numeric":
                op = "<=" if side == "left" else ">"
                return f"{name} {op} {split.threshold:g}"
            levels = split.left_levels if side == "left" else split.right_levels
            shown = ",".join(f"{v:g}" for v in sorted(levels))
            return f"{name} in {{{shown}}}"

        def walk(i, prefix):
            nd = self.nodes[i]
            if nd.split is None:
                lines.append(
                    f"{prefix}leaf [{nd.leaf_index}] node={nd.node_id} "
                    f"n={nd.n} value={nd.constant:.4g}"
                )
                return
            lines.append(f"{prefix}node={nd.node_id} n={nd.n}")
            lines.append(f"{prefix}  if {label(nd.split, 'left')}:")
            walk(nd.left, prefix + "    ")
            lines.append(f"{prefix}  else ({label(nd.split, 'right')}):")
            walk(nd.right, prefix + "    ")

        walk(0, "")
        return "\n".join(lines)

    def to_dict(self):
        nodes = []
        for nd in self.nodes:
            rec = {
                "node_id": nd.node_id,
                "depth": nd.depth,
                "n": nd.n,
                "impurity": nd.impurity,
                "constant": nd.constant,
                "leaf_index": nd.leaf_index,
            }
            if nd.split is not None:
                rec["split"] = {
                    "covariate": nd.split.covariate,
                    "kind": nd.split.kind,
                    "threshold": nd.split.threshold,
                    "left_levels": sorted(nd.split.left_levels or []),
                    "right_levels": sorted(nd.split.right_levels or []),
                    "unseen_left": nd.split.unseen_left,
                }
                rec["left"] = nd.left
                rec["right"] = nd.right
            nodes.append(rec)
        return {"kappa": self.kappa, "nodes": nodes}

    @classmethod
    def from_dict(cls, spec):
        nodes = []
        for rec in spec["nodes"]:
            split = None
            if "split" in rec:
                s = rec["split"]
                split = SplitRule(
                    covariate=s["covariate"],
                    kind=s["kind"],
                    threshold=s["threshold"],
                    left_levels=frozenset(s["left_levels"]),
                    right_levels=frozenset(s["right_levels"]),
                    unseen_left=s["unseen_left"],
                )
            nodes.append(
                TreeNode(
                    node_id=rec["node_id"],
                    depth=rec["depth"],
                    n=rec["n"],
                    impurity=rec["impurity"],
                    constant=rec["constant"],
                    split=split,
                    left=rec.get("left"),
                    right=rec.get("right"),
                )
            )
        return cls(nodes, kappa=spec.get("kappa", 0.0))


# ---------------------------------------------------------------------------
# Impurity machinery
# ---------------------------------------------------------------------------


def _node_stats(response, idx):
    """(impurity, constant) of the node holding rows ``idx``."""
    if response.kind == dt.GAUSSIAN:
        y = response.y[idx]
        mean = y.mean()
        return float(np.sum((y - mean) ** 2)), float(mean)
    if response.kind == dt.BINOMIAL:
        y = response.y[idx]
        n = y.size
        n1 = y.sum()
        return float(n - (n1 * n1 + (n - n1) ** 2) / n), float(n1 / n)
    # Survival: deviance of the node exponential model with rate d/T.
    d = response.status[idx].sum()
    t = response.y[idx]
    total_time = t.sum()
    if d == 0:
        return 0.0, 0.0
    log_rate = math.log(d / total_time)
    sum_log_t = float(np.log(t[response.status[idx] > 0]).sum())
    return -2.0 * (d * log_rate + sum_log_t), float(d / total_time)


def _scan_terms(response, order):
    """Cumulative statistics used to score every split position at once.

    Returns (left_impurity, right_impurity) arrays indexed by the
    boundary position i (left child = sorted rows 0..i).
    """
    n = order.size
    pos = np.arange(1, n)  # left sizes at boundary i = pos
    if response.kind == dt.GAUSSIAN:
        y = response.y[order]
        cs = np.cumsum(y)[:-1]
        cs2 = np.cumsum(y * y)[:-1]
        tot, tot2 = y.sum(), np.sum(y * y)
        left = cs2 - cs * cs / pos
        right = (tot2 - cs2) - (tot - cs) ** 2 / (n - pos)
        return left, right
    if response.kind == dt.BINOMIAL:
        y = response.y[order]
        c1 = np.cumsum(y)[:-1]
        t1 = y.sum()
        c0 = pos - c1
        r1 = t1 - c1
        r0 = (n - pos) - r1
        left = pos - (c1 * c1 + c0 * c0) / pos
        right = (n - pos) - (r1 * r1 + r0 * r0) / (n - pos)
        return left, right
    # Survival: deviance of the child exponential models, matching
    # _node_stats so reductions are true impurity differences.
    d = response.status[order]
    t = response.y[order]
    cd = np.cumsum(d)[:-1]
    ct = np.cumsum(t)[:-1]
    dlt = np.cumsum(d * np.log(t))[:-1]
    td, tt, tdlt = d.sum(), t.sum(), np.sum(d * np.log(t))

    def dev(dd, ttime, dlogt):
        out = np.zeros_like(ttime)
        ok = dd > 0
        out[ok] = -2.0 * (dd[ok] * np.log(dd[ok] / ttime[ok]) + dlogt[ok])
        return out

    left = dev(cd, ct, dlt)
    right = dev(td - cd, tt - ct, tdlt - dlt)
    return left, right


def _category_order(response, z, idx):
    """Deterministic level ordering by outcome statistic, then code."""
    levels = np.unique(z[idx])
    stats = []
    for lv in levels:
        rows = idx[z[idx] == lv]
        if response.kind == dt.COX:
            tsum = response.y[rows].sum()
            stat = response.status[rows].sum() / tsum if tsum > 0 else 0.0
        else:
            stat = response.y[rows].mean()
        stats.append(stat)
    order = np.lexsort((levels, np.asarray(stats)))
    return levels[order]


def best_split(Z, response, idx, kinds, min_node_size):
    """Best admissible split of the node holding rows ``idx``.

    Scans every covariate; numeric thresholds are midpoints of adjacent
    observed values, categorical subsets come from the ordered-level
    scan. Returns (SplitRule, impurity_reduction) or (None, 0.0) when no
    admissible split strictly reduces impurity.
    """
    n = idx.size
    if n < 2 * min_node_size:
        return None, 0.0
    parent_imp, _ = _node_stats(response, idx)
    node_resp = response.subset(idx)
    best = None
    best_red = _EPS
    for j in range(Z.shape[1]):
        z = Z[idx, j]
        categorical = kinds is not None and kinds[j] == dt.CATEGORICAL
        if categorical:
            level_order = _category_order(response, Z[:, j], idx)
            if level_order.size < 2:
                continue
            rank = {lv: r for r, lv in enumerate(level_order)}
            keys = np.array([rank[v] for v in z], dtype=float)
        else:
            keys = z
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        left_imp, right_imp = _scan_terms(node_resp, order)
        pos = np.arange(1, n)
        valid = (
            (sk[:-1] < sk[1:])
            & (pos >= min_node_size)
            & ((n - pos) >= min_node_size)
        )
        if not valid.any():
            continue
        red = np.where(valid, parent_imp - left_imp - right_imp, -np.inf)
        b = int(np.argmax(red))
        if red[b] > best_red:
            best_red = float(red[b])
            if categorical:
                n_left = int(sk[b]) + 1  # boundary rank, not row index
                left_lv = frozenset(float(v) for v in level_order[:n_left])
                right_lv = frozenset(float(v) for v in level_order[n_left:])
                rule = SplitRule(
                    covariate=j,
                    kind="categorical",
                    left_levels=left_lv,
                    right_levels=right_lv,
                    unseen_left=(b + 1) > (n - b - 1),
                )
            else:
                thr = 0.5 * (sk[b] + sk[b + 1])
                rule = SplitRule(covariate=j, kind="numeric", threshold=float(thr))
            best = rule
    if best is None:
        return None, 0.0
    return best, best_red


def fit_tree(Z, response, config=None, kinds=None):
    """Grow a tree by greedy recursive partitioning.

    Splitting stops when no admissible split reduces impurity, a child
    would fall under ``min_node_size``, or ``max_depth`` is reached.
    """
    config = config or TreeConfig()
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n = Z.shape[0]
    if n == 0:
        raise DataError("empty data")
    if n < config.min_node_size:
        raise DataError("fewer rows than min_node_size")
    if response.kind == dt.COX and response.status.sum() == 0:
        raise DataError("all survival times are censored")

    nodes = []
    root_imp, _ = _node_stats(response, np.arange(n))
    gate = config.min_impurity_decrease * root_imp

    def grow(idx, depth, node_id):
        imp, const = _node_stats(response, idx)
        me = len(nodes)
        nodes.append(
            TreeNode(node_id=node_id, depth=depth, n=idx.size, impurity=imp, constant=const)
        )
        if depth >= config.max_depth:
            return me
        rule, red = best_split(Z, response, idx, kinds, config.min_node_size)
        if rule is None or red < gate:
            return me
        go_left = np.array([rule.goes_left(v) for v in Z[idx, rule.covariate]])
        nodes[me].split = rule
        nodes[me].left = grow(idx[go_left], depth + 1, 2 * node_id)
        nodes[me].right = grow(idx[~go_left], depth + 1, 2 * node_id + 1)
        return me

    grow(np.arange(n), 0, 1)
    tree = Tree(nodes)
    tree._kinds = kinds
    if response.kind == dt.COX:
        # Store every node constant as a rate relative to the root so
        # pruning (which turns internal nodes into leaves) stays
        # consistent.
        root_rate = float(response.status.sum() / response.y.sum())
        for nd in nodes:
            nd.constant = float(nd.constant / root_rate)
        tree._root_rate = root_rate
    return tree


# ---------------------------------------------------------------------------
# Cost-complexity pruning
# ---------------------------------------------------------------------------


def _subtree_leaf_stats(tree):
    """Per node: (summed leaf impurity, leaf count) of its subtree."""
    n = len(tree.nodes)
    imp = np.zeros(n)
    cnt = np.zeros(n, dtype=int)

    def walk(i):
        nd = tree.nodes[i]
        if nd.split is None:
            imp[i], cnt[i] = nd.impurity, 1
            return
        walk(nd.left)
        walk(nd.right)
        imp[i] = imp[nd.left] + imp[nd.right]
        cnt[i] = cnt[nd.left] + cnt[nd.right]

    walk(0)
    return imp, cnt


def cost_complexity_sequence(tree):
    """Weakest-link pruning breakpoints.

    Returns a list of (kappa, collapsed_node_indices) pairs, kappa
    strictly increasing, where collapsing the listed internal nodes (and
    all earlier ones) yields the subtree optimal for penalties at and
    above that kappa. The full tree is optimal on [0, first kappa).
    """
    collapsed = set()
    seq = []
    last_bk = 0.0
    while True:
        live_internal = [
            i
            for i, nd in enumerate(tree.nodes)
            if nd.split is not None and i not in collapsed and not _under(tree, i, collapsed)
        ]
        if not live_internal:
            break
        g = {}
        for i in live_internal:
            imp, cnt = _collapsed_stats(tree, i, collapsed)
            g[i] = (tree.nodes[i].impurity - imp) / max(cnt - 1, 1)
        gmin = min(g.values())
        batch = [i for i in live_internal if g[i] <= gmin + 1e-15]
        collapsed.update(batch)
        # Drop internal nodes living under a freshly collapsed one.
        collapsed.update(
            i
            for i, nd in enumerate(tree.nodes)
            if nd.split is not None and _under(tree, i, collapsed)
        )
        last_bk = max(gmin, 0.0, last_bk)
        seq.append((last_bk, sorted(collapsed)))
        if _under(tree, 0, collapsed) or 0 in collapsed:
            break
    return seq


def _under(tree, i, collapsed):
    """True when node i sits strictly below a collapsed node."""
    nid = tree.nodes[i].node_id
    anc = nid // 2
    ids = {tree.nodes[c].node_id for c in collapsed}
    while anc >= 1:
        if anc in ids:
            return True
        anc //= 2
    return False


def _collapsed_stats(tree, i, collapsed):
    """Leaf impurity sum and count of the subtree at i after collapsing."""

    def walk(k):
        nd = tree.nodes[k]
        if nd.split is None or k in collapsed:
            return nd.impurity, 1
        li, lc = walk(nd.left)
        ri, rc = walk(nd.right)
        return li + ri, lc + rc

    return walk(i)


def prune_at(tree, kappa):
    """Subtree optimal for penalty ``kappa`` (impurity + kappa * leaves)."""
    collapsed = set()
    for bk, batch in cost_complexity_sequence(tree):
        if bk <= kappa + 1e-15:
            collapsed = set(batch)
        else:
            break
    return _apply_collapse(tree, collapsed)


def _apply_collapse(tree, collapsed):
    new_nodes = []
    remap = {}

    def walk(i):
        nd = tree.nodes[i]
        me = len(new_nodes)
        remap[i] = me
        leafed = nd.split is None or i in collapsed
        new_nodes.append(
            TreeNode(
                node_id=nd.node_id,
                depth=nd.depth,
                n=nd.n,
                impurity=nd.impurity,
                constant=nd.constant,
                split=None if leafed else nd.split,
            )
        )
        if not leafed:
            new_nodes[me].left = walk(nd.left)
            new_nodes[me].right = walk(nd.right)
        return me

    walk(0)
    return Tree(new_nodes, kappa=tree.kappa)


def _holdout_loss(tree, Z, response, idx):
    """Held-out impurity of ``tree`` evaluated on rows idx."""
    assignment = tree.assign(Z[idx])
    consts = tree.leaf_constants
    if response.kind == dt.GAUSSIAN:
        pred = consts[assignment]
        return float(np.sum((response.y[idx] - pred) ** 2))
    if response.kind == dt.BINOMIAL:
        p = np.clip(consts[assignment], 1e-12, 1 - 1e-12)
        y = response.y[idx]
        return float(-2.0 * np.sum(y * np.log(p) + (1 - y) * np.log(1 - p)))
    # Survival: exponential deviance with training leaf rates. Leaf
    # constants are rates relative to the training root rate.
    rates = consts * _tree_root_rate(tree)
    rates = np.clip(rates, 1e-12, None)
    lam = rates[assignment]
    t = response.y[idx]
    d = response.status[idx]
    return float(2.0 * np.sum(lam * t - d - d * np.log(np.clip(lam * t, 1e-300, None))))


def _tree_root_rate(tree):
    # Stash the absolute root event rate on the tree when first needed.
    return getattr(tree, "_root_rate", 1.0)


def prune(tree, Z, response, config=None):
    """Cost-complexity prune with the K-fold cross-validated minimum rule.

    Candidate penalties come from the breakpoints of the full tree's
    cost-complexity sequence (geometric midpoints between consecutive
    breakpoints, as in CART), normalized by root impurity so the same
    relative penalty applies to fold trees of smaller size.
    """
    config = config or TreeConfig()
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if response.kind == dt.COX:
        tree._root_rate = float(response.status.sum() / response.y.sum())
    seq = cost_complexity_sequence(tree)
    root_imp = max(tree.nodes[0].impurity, _EPS)
    if config.kappa_grid is not None:
        rel_grid = [k / root_imp for k in config.kappa_grid]
    else:
        if not seq:
            return tree
        bks = [bk / root_imp for bk, _ in seq]
        rel_grid = [0.0]
        for a, b in zip(bks[:-1], bks[1:]):
            rel_grid.append(math.sqrt(max(a, _EPS * 1e-3) * b))
        # The top candidate compares genuinely root-only trees on every
        # fold, whatever the fold tree's own breakpoints are.
        rel_grid.append(math.inf)
    if len(rel_grid) == 1:
        return prune_at(tree, rel_grid[0] * root_imp)

    n = Z.shape[0]
    rng = derived_rng(config.seed, STREAM_TREE_CV)
    fold_of = np.repeat(np.arange(config.cv_folds), -(-n // config.cv_folds))[:n]
    rng.shuffle(fold_of)
    losses = np.zeros(len(rel_grid))
    for f in range(config.cv_folds):
        train = np.where(fold_of != f)[0]
        test = np.where(fold_of == f)[0]
        if train.size < config.min_node_size or test.size == 0:
            continue
        sub = response.subset(train)
        if sub.kind == dt.COX and sub.status.sum() == 0:
            continue
        ft = fit_tree(Z[train], sub, config, kinds=getattr(tree, "_kinds", None))
        if sub.kind == dt.COX:
            ft._root_rate = float(sub.status.sum() / sub.y.sum())
        f_root = max(ft.nodes[0].impurity, _EPS)
        for gi, rel in enumerate(rel_grid):
            pt = prune_at(ft, rel * f_root)
            if sub.kind == dt.COX:
                pt._root_rate = ft._root_rate
            losses[gi] += _holdout_loss(pt, Z, response, test)
    # Minimum rule; ties go to the larger penalty (simpler tree).
    tol = 1e-9 * max(1.0, abs(float(losses.min())))
    best = int(np.where(losses <= losses.min() + tol)[0].max())
    kappa = rel_grid[best] * root_imp
    if not math.isfinite(kappa):
        kappa = seq[-1][0] if seq else 0.0
    pruned = prune_at(tree, kappa)
    pruned.kappa = kappa
    if response.kind == dt.COX:
        pruned._root_rate = tree._root_rate
    return pruned
