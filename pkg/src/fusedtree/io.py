"""Delimited-text input, model-file serialization, and schema parsing.

The model file is versioned JSON with coefficients at full binary64
precision (shortest round-trip decimal), so deserializing reproduces
predictions bit for bit. Values that are not portable JSON (infinite
fusion penalty) are encoded as null plus the variant tag.
"""

import csv
import json

import numpy as np

from . import data as dt
from .errors import DataError
from .estimator import BaselineHazard
from .model import FusedTreeModel, Standardization
from .penalty import PenaltyStructure
from .tree import Tree

MODEL_FORMAT_VERSION = 1


def parse_number(text, where=""):
    """Strict float parsing; localized decimal commas are rejected."""
    s = text.strip()
    if "," in s:
        raise DataError(
            f"value {text!r}{where} uses a decimal comma; use '.' as the "
            "decimal separator"
        )
    try:
        return float(s)
    except ValueError as exc:
        raise DataError(f"could not parse number {text!r}{where}") from exc


def read_table(path, delimiter=","):
    """Read a delimited text file with one header row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: empty file (expected a header row)")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(field.strip() for field in r)]
    for r in body:
        if len(r) != len(header):
            raise DataError(f"{path}: row with {len(r)} fields, header has {len(header)}")
    return header, body


class ClinicalSchema:
    """Declared clinical columns: name, kind, and categorical levels."""

    def __init__(self, names, kinds, levels=None):
        self.names = list(names)
        self.kinds = list(kinds)
        self.levels = levels or {}
        for k in self.kinds:
            if k not in dt.CLINICAL_KINDS:
                raise DataError(f"unknown clinical kind: {k!r}")

    @classmethod
    def parse(cls, spec):
        """Parse "age:continuous,stage:ordinal,site:categorical"."""
        names, kinds = [], []
        for part in spec.split(","):
            part = part.strip()
            if not part:
                continue
            if ":" not in part:
                raise DataError(
                    f"clinical column {part!r} needs a kind, e.g. {part}:continuous"
                )
            name, kind = part.rsplit(":", 1)
            names.append(name.strip())
            kinds.append(kind.strip())
        if not names:
            raise DataError("no clinical columns declared")
        return cls(names, kinds)

    def encode(self, header, rows, path="", fit=False):
        """Extract and encode the clinical matrix from parsed rows.

        Categorical levels are mapped to training codes; at prediction
        time unseen levels get the sentinel -1 (routed by the tree's
        majority rule).
        """
        idx = []
        for name in self.names:
            if name not in header:
                raise DataError(f"{path}: clinical column {name!r} not in header")
            idx.append(header.index(name))
        Z = np.empty((len(rows), len(self.names)))
        for j, (name, kind, col) in enumerate(zip(self.names, self.kinds, idx)):
            raw = [r[col].strip() for r in rows]
            if kind == dt.CATEGORICAL:
                if fit:
                    known = sorted(set(raw))
                    self.levels[name] = known
                table = {lv: float(c) for c, lv in enumerate(self.levels.get(name, []))}
                Z[:, j] = [table.get(v, -1.0) for v in raw]
            else:
                Z[:, j] = [
                    parse_number(v, f" (column {name!r}{', ' + path if path else ''})")
                    for v in raw
                ]
        return Z

    def to_dict(self):
        return {"names": self.names, "kinds": self.kinds, "levels": self.levels}

    @classmethod
    def from_dict(cls, spec):
        return cls(spec["names"], spec["kinds"], spec.get("levels", {}))


def extract_columns(header, rows, names, path=""):
    """Numeric matrix from the named columns."""
    idx = []
    for name in names:
        if name not in header:
            raise DataError(f"{path}: column {name!r} not in header")
        idx.append(header.index(name))
    out = np.empty((len(rows), len(names)))
    for j, (name, col) in enumerate(zip(names, idx)):
        out[:, j] = [
            parse_number(r[col], f" (column {name!r})") for r in rows
        ]
    return out


def column_range(header, spec, path=""):
    """Expand "first:last" to the contiguous header slice, inclusive."""
    if ":" not in spec:
        raise DataError(f"omics column range {spec!r} must be FIRST:LAST")
    first, last = (s.strip() for s in spec.split(":", 1))
    for name in (first, last):
        if name not in header:
            raise DataError(f"{path}: column {name!r} not in header")
    a, b = header.index(first), header.index(last)
    if b < a:
        raise DataError(f"omics range {spec!r} is reversed in the header")
    return header[a : b + 1]


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------


def _arr(x):
    return np.asarray(x).tolist()


def model_to_dict(model):
    pen_alpha = model.penalties.alpha
    from .penalty import CANONICAL_ORDERING

    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "response_kind": model.response_kind,
        "coefficient_ordering": CANONICAL_ORDERING,
        "tree": model.tree.to_dict(),
        "leaf_node_ids": model.tree.leaf_node_ids,
        "c_hat": _arr(model.c_hat),
        "beta_blocks": [_arr(model.beta[:, b]) for b in range(model.beta.shape[1])],
        "block_of_leaf": _arr(model.block_of_leaf),
        "removed_nodes": sorted(int(m) for m in model.removed_nodes),
        "penalties": {
            "lambda": model.penalties.lam,
            "alpha": None if np.isinf(pen_alpha) else pen_alpha,
        },
        "standardization": {
            "mean": _arr(model.standardization.mean),
            "sd": _arr(model.standardization.sd),
            "kept": _arr(model.standardization.kept),
        },
        "linear_cols": _arr(model.linear_cols),
        "clinical_centers": _arr(model.clinical_centers),
        "baseline": None
        if model.baseline is None
        else {
            "times": _arr(model.baseline.times),
            "cumhaz": _arr(model.baseline.cumhaz),
            "jumps": _arr(model.baseline.jumps),
        },
        "horizon": model.horizon,
        "fit_info": {k: v for k, v in model.fit_info.items() if k != "tune_trace"},
    }
    return doc


def model_from_dict(doc):
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(
            f"unsupported model format version: {doc.get('format_version')!r}"
        )
    tree = Tree.from_dict(doc["tree"])
    beta_blocks = doc["beta_blocks"]
    n_blocks = len(beta_blocks)
    p = len(beta_blocks[0]) if n_blocks else len(doc["standardization"]["mean"])
    beta = np.zeros((p, n_blocks))
    for b, col in enumerate(beta_blocks):
        beta[:, b] = col
    pen = doc["penalties"]
    alpha = np.inf if pen["alpha"] is None else float(pen["alpha"])
    baseline = None
    if doc.get("baseline") is not None:
        b = doc["baseline"]
        baseline = BaselineHazard(
            times=np.asarray(b["times"], dtype=float),
            cumhaz=np.asarray(b["cumhaz"], dtype=float),
            jumps=np.asarray(b["jumps"], dtype=float),
        )
    return FusedTreeModel(
        tree=tree,
        response_kind=doc["response_kind"],
        c_hat=np.asarray(doc["c_hat"], dtype=float),
        beta=beta,
        penalties=PenaltyStructure(
            lam=float(pen["lambda"]),
            alpha=alpha,
            n_leaves=tree.n_leaves,
            n_omics=p,
        ),
        standardization=Standardization(
            mean=np.asarray(doc["standardization"]["mean"], dtype=float),
            sd=np.asarray(doc["standardization"]["sd"], dtype=float),
            kept=np.asarray(doc["standardization"]["kept"], dtype=int),
        ),
        block_of_leaf=np.asarray(doc["block_of_leaf"], dtype=int),
        removed_nodes=frozenset(doc.get("removed_nodes", [])),
        linear_cols=np.asarray(doc.get("linear_cols", []), dtype=int),
        clinical_centers=np.asarray(doc.get("clinical_centers", []), dtype=float),
        baseline=baseline,
        horizon=doc.get("horizon"),
        fit_info=doc.get("fit_info", {}),
    )


def save_model(model, path, extra=None):
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_dict(doc)


def write_csv(path, header, rows):
    """Write rows of already-formatted strings."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def fmt(x):
    """Shortest decimal that round-trips the float exactly."""
    if isinstance(x, float):
        return repr(x)
    return str(x)
