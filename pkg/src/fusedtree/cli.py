"""Command-line interface.

Subcommands: fit, predict, tune, nodetest, paths, simulate.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

import argparse
import json
import sys

import numpy as np

from . import data as dt
from .errors import ConvergenceError, DataError
from .fit import FitConfig, fit_fused_tree
from .io import (
    ClinicalSchema,
    column_range,
    extract_columns,
    fmt,
    load_model,
    parse_number,
    read_table,
    save_model,
    write_csv,
)
from .nodetest import removal_path
from .penalty import PenaltyStructure, build_block_design
from .simulate import EXPERIMENTS, SimConfig, run_experiment
from .estimator import fit_gaussian


def _add_io_flags(p):
    p.add_argument("--delimiter", default=",", help="field delimiter (default ',')")
    p.add_argument("--tab", action="store_true", help="tab-delimited input")
    p.add_argument("--config", help="JSON config file; explicit flags win")


def _add_data_flags(p, response=True):
    p.add_argument("--data", required=True, help="delimited text file with header")
    p.add_argument("--omics-file", help="separate wide omics file, rows aligned")
    p.add_argument("--omics-cols", help="contiguous omics columns, FIRST:LAST")
    if response:
        p.add_argument("--kind", choices=dt.RESPONSE_KINDS, default=dt.GAUSSIAN)
        p.add_argument("--response", help="response column (gaussian/binomial)")
        p.add_argument("--time-col", help="survival time column")
        p.add_argument("--status-col", help="survival status column (0/1)")
        p.add_argument(
            "--clinical",
            help="clinical columns with kinds, e.g. age:continuous,stage:ordinal",
        )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fusedtree",
        description=(
            "Regression trees on clinical covariates with fusion-penalized "
            "ridge regressions on omics covariates in the leaves"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("fit", help="fit a model and write a model file")
    _add_data_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, help="fixed ridge penalty")
    p.add_argument("--alpha", type=float, help="fixed fusion penalty")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-node-size", type=int, default=30)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--no-linear", action="store_true", help="skip linear clinical effects")
    p.add_argument("--variant", choices=("fused", "zerofus", "fulfus"), default="fused")
    p.add_argument("--horizon", type=float, help="survival prediction horizon")
    p.add_argument("--model-out", required=True)
    p.add_argument("--report-out", help="fit report path (default: stdout)")
    _add_io_flags(p)
    subparsers["fit"] = p

    p = sub.add_parser("predict", help="predict new rows with a model file")
    p.add_argument("--model", required=True)
    _add_data_flags(p, response=False)
    p.add_argument("--out", required=True)
    p.add_argument("--horizon", type=float)
    p.add_argument(
        "--output",
        choices=("response", "linear", "cumhaz"),
        default="response",
    )
    _add_io_flags(p)
    subparsers["predict"] = p

    p = sub.add_parser("tune", help="tune penalties only and report them")
    _add_data_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-node-size", type=int, default=30)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--no-linear", action="store_true")
    p.add_argument("--variant", choices=("fused", "zerofus", "fulfus"), default="fused")
    p.add_argument("--out", required=True, help="tuning report JSON")
    p.add_argument("--trace", action="store_true", help="include the optimizer trace")
    _add_io_flags(p)
    subparsers["tune"] = p

    p = sub.add_parser("nodetest", help="node removal path on train/test data")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train-omics-file")
    p.add_argument("--test-omics-file")
    p.add_argument("--permutations", type=int, default=1999)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report-out", required=True)
    p.add_argument("--selected-out", help="write the selected model here")
    _add_io_flags(p)
    subparsers["nodetest"] = p

    p = sub.add_parser("paths", help="fusion-penalty regularization paths")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, help="fixed ridge penalty")
    p.add_argument("--alphas", help="comma-separated fusion penalties")
    p.add_argument("--alpha-grid", help="LOW:HIGH:COUNT, log-spaced")
    p.add_argument("--out", required=True)
    _add_io_flags(p)
    subparsers["paths"] = p

    p = sub.add_parser("simulate", help="run a simulation experiment")
    p.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--p", type=int, default=500)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--n-test", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--covariance", default="ar1:0.5", help="identity | ar1:RHO | exchangeable:RHO")
    p.add_argument("--models", help="comma-separated subset of models")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_io_flags(p)
    subparsers["simulate"] = p

    return parser, subparsers


def _merge_config(args, subparser):
    if not getattr(args, "config", None):
        return args
    with open(args.config) as fh:
        cfg = json.load(fh)
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise DataError(f"config key {key!r} is not a flag of this command")
        if getattr(args, dest) == subparser.get_default(dest):
            setattr(args, dest, value)
    return args


def _delimiter(args):
    return "\t" if args.tab else args.delimiter


def _load_frame(path, args, schema, fit_schema):
    """(Z, omics matrix, omics names, header, rows) for one data file."""
    delim = _delimiter(args)
    header, rows = read_table(path, delim)
    Z = schema.encode(header, rows, path, fit=fit_schema)
    omics_file = getattr(args, "omics_file", None)
    omics_cols = getattr(args, "omics_cols", None)
    if omics_file:
        oh, orows = read_table(omics_file, delim)
        if len(orows) != len(rows):
            raise DataError("omics file and data file have different row counts")
        names = oh
        X = extract_columns(oh, orows, names, omics_file)
    elif omics_cols:
        names = column_range(header, omics_cols, path)
        X = extract_columns(header, rows, names, path)
    else:
        names = []
        X = np.zeros((len(rows), 0))
    return Z, X, names, header, rows


def _load_response(args, header, rows, path):
    if args.kind == dt.COX:
        if not args.time_col or not args.status_col:
            raise DataError("survival input needs --time-col and --status-col")
        t = extract_columns(header, rows, [args.time_col], path)[:, 0]
        s = extract_columns(header, rows, [args.status_col], path)[:, 0]
        return dt.Response.survival(t, s)
    if not args.response:
        raise DataError("--response is required for gaussian/binomial input")
    y = extract_columns(header, rows, [args.response], path)[:, 0]
    return dt.Response.gaussian(y) if args.kind == dt.GAUSSIAN else dt.Response.binomial(y)


def _schema_from_args(args):
    if getattr(args, "clinical", None):
        return ClinicalSchema.parse(args.clinical)
    raise DataError("--clinical is required (column:kind list)")


def _fit_config(args):
    return FitConfig(
        min_node_size=args.min_node_size,
        max_depth=args.max_depth,
        cv_folds=args.folds,
        seed=args.seed,
        lam=getattr(args, "lam", None),
        alpha=getattr(args, "alpha", None),
        include_linear=not args.no_linear,
        horizon=getattr(args, "horizon", None),
    )


def _fit_report(model, schema, out=None, training=None):
    lines = []
    lines.append(f"response: {model.response_kind}")
    info = model.fit_info
    lines.append(
        f"n: {info.get('n')}  omics columns: {info.get('n_omics_input')} "
        f"(kept {model.standardization.kept.size})"
    )
    lines.append(f"variant: {info.get('variant')}")
    if training is not None:
        lines.append(f"training {training[0]}: {training[1]!r}")
    lines.append(f"leaves: M={model.tree.n_leaves}  pruning kappa={model.tree.kappa:.6g}")
    alpha = model.penalties.alpha
    alpha_s = "inf" if np.isinf(alpha) else f"{alpha:.6g}"
    lines.append(f"lambda: {model.penalties.lam:.6g}  alpha: {alpha_s}")
    if info.get("cv_objective") is not None:
        lines.append(f"cv objective: {info['cv_objective']:.6g}")
    lines.append("leaf  node  n     intercept")
    counts = model.tree.leaf_counts
    for m, node_id in enumerate(model.tree.leaf_node_ids):
        removed = "  [omics removed]" if m in model.removed_nodes else ""
        lines.append(
            f"{m:<5d} {node_id:<5d} {counts[m]:<5d} {model.c_hat[m]: .6g}{removed}"
        )
    lines.append("")
    lines.append(model.tree.render(names=schema.names if schema else None))
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_fit(args):
    schema = _schema_from_args(args)
    Z, X, omics_names, header, rows = _load_frame(args.data, args, schema, True)
    response = _load_response(args, header, rows, args.data)
    config = _fit_config(args)
    model = fit_fused_tree(Z, X, response, schema.kinds, config, variant=args.variant)
    save_model(
        model,
        args.model_out,
        extra={
            "clinical_schema": schema.to_dict(),
            "omics_names": omics_names,
            "response_spec": {
                "response": args.response,
                "time_col": args.time_col,
                "status_col": args.status_col,
            },
        },
    )
    _fit_report(model, schema, args.report_out, training=_training_metric(model, Z, X, response))
    return 0


def _training_metric(model, Z, X, response):
    """(name, value) of the in-sample fit quality shown in the report."""
    eta = model.linear_predictors(Z, X)
    if response.kind == dt.GAUSSIAN:
        return "pmse", float(np.mean((response.y - eta) ** 2))
    if response.kind == dt.BINOMIAL:
        ll = np.mean(response.y * eta - np.logaddexp(0.0, eta))
        return "neg_loglik", float(-ll)
    from .metrics import concordance

    return "cindex", float(
        concordance(eta, response.y, response.status, variant="harrell")
    )


def _load_for_model(args, model_doc, data_path, omics_file=None):
    schema = ClinicalSchema.from_dict(model_doc["clinical_schema"])
    delim = _delimiter(args)
    header, rows = read_table(data_path, delim)
    Z = schema.encode(header, rows, data_path, fit=False)
    names = model_doc.get("omics_names", [])
    if names:
        if omics_file:
            oh, orows = read_table(omics_file, delim)
            if len(orows) != len(rows):
                raise DataError("omics file and data file have different row counts")
            X = extract_columns(oh, orows, names, omics_file)
        else:
            X = extract_columns(header, rows, names, data_path)
    else:
        X = np.zeros((len(rows), 0))
    return schema, header, rows, Z, X


def cmd_predict(args):
    with open(args.model) as fh:
        doc = json.load(fh)
    model = load_model(args.model)
    schema, header, rows, Z, X = _load_for_model(
        args, doc, args.data, getattr(args, "omics_file", None)
    )
    if len(rows) == 0:
        write_csv(args.out, ["prediction"], [])
        return 0
    pred = model.predict(Z, X, output=args.output, horizon=args.horizon)
    write_csv(args.out, ["prediction"], [[fmt(float(v))] for v in pred])
    return 0


def cmd_tune(args):
    schema = _schema_from_args(args)
    Z, X, omics_names, header, rows = _load_frame(args.data, args, schema, True)
    response = _load_response(args, header, rows, args.data)
    config = _fit_config(args)
    config.keep_tune_trace = args.trace
    model = fit_fused_tree(Z, X, response, schema.kinds, config, variant=args.variant)
    doc = {
        "lambda": model.penalties.lam,
        "alpha": None if np.isinf(model.penalties.alpha) else model.penalties.alpha,
        "cv_objective": model.fit_info.get("cv_objective"),
        "n_leaves": model.tree.n_leaves,
        "variant": args.variant,
    }
    if args.trace:
        doc["trace"] = model.fit_info.get("tune_trace", [])
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")
    return 0


def cmd_nodetest(args):
    with open(args.model) as fh:
        doc = json.load(fh)
    model = load_model(args.model)
    kind = model.response_kind
    ns = argparse.Namespace(**vars(args))
    ns.kind = kind
    schema = ClinicalSchema.from_dict(doc["clinical_schema"])
    resp_args = doc.get("response_spec", {})
    for key in ("response", "time_col", "status_col"):
        if not hasattr(ns, key) or getattr(ns, key, None) is None:
            setattr(ns, key, resp_args.get(key))

    _, h_tr, r_tr, Z_tr, X_tr = _load_for_model(
        args, doc, args.train, args.train_omics_file
    )
    _, h_te, r_te, Z_te, X_te = _load_for_model(
        args, doc, args.test, args.test_omics_file
    )
    resp_tr = _load_response(ns, h_tr, r_tr, args.train)
    resp_te = _load_response(ns, h_te, r_te, args.test)

    path = removal_path(
        model,
        Z_tr,
        X_tr,
        resp_tr,
        Z_te,
        X_te,
        resp_te,
        n_permutations=args.permutations,
        seed=args.seed,
    )
    node_ids = model.tree.leaf_node_ids
    rows = []
    for k, entry in enumerate(path.entries):
        leaf = path.order[k - 1] if k >= 1 else None
        rows.append(
            [
                k,
                "" if leaf is None else node_ids[leaf],
                "" if leaf is None else fmt(path.tests[leaf].p_value),
                ";".join(str(node_ids[m]) for m in entry.removed),
                fmt(entry.lam),
                "inf" if np.isinf(entry.alpha) else fmt(entry.alpha),
                path.metric,
                fmt(entry.performance),
                int(entry.partially_evaluated),
                int(k == path.selected),
            ]
        )
    write_csv(
        args.report_out,
        [
            "step",
            "removed_node",
            "p_value",
            "removed_set",
            "lambda",
            "alpha",
            "metric",
            "performance",
            "partially_evaluated",
            "selected",
        ],
        rows,
    )
    if args.selected_out:
        selected = path.entries[path.selected].model
        save_model(
            selected,
            args.selected_out,
            extra={
                "clinical_schema": doc["clinical_schema"],
                "omics_names": doc.get("omics_names", []),
            },
        )
    return 0


def _alpha_list(args):
    if args.alphas:
        return [parse_number(a, " (--alphas)") for a in args.alphas.split(",")]
    if args.alpha_grid:
        parts = args.alpha_grid.split(":")
        if len(parts) != 3:
            raise DataError("--alpha-grid must be LOW:HIGH:COUNT")
        lo = parse_number(parts[0], " (--alpha-grid)")
        hi = parse_number(parts[1], " (--alpha-grid)")
        cnt = int(parts[2])
        if lo <= 0 or hi <= lo or cnt < 2:
            raise DataError("--alpha-grid needs 0 < LOW < HIGH and COUNT >= 2")
        return list(np.geomspace(lo, hi, cnt))
    raise DataError("paths needs --alphas or --alpha-grid")


def cmd_paths(args):
    with open(args.model) as fh:
        doc = json.load(fh)
    model = load_model(args.model)
    if model.response_kind != dt.GAUSSIAN:
        raise DataError("regularization paths are computed for gaussian models")
    schema, header, rows, Z, X = _load_for_model(
        args, doc, args.data, getattr(args, "omics_file", None)
    )
    yname = doc.get("response_spec", {}).get("response") or args.response
    if not yname:
        raise DataError("--response is required (response column of the data)")
    y = extract_columns(header, rows, [yname], args.data)[:, 0]
    lam = args.lam if args.lam is not None else model.penalties.lam
    alphas = _alpha_list(args)

    leaves = model.tree.assign(Z)
    Xs = model.standardization.apply(X)
    clin = Z[:, model.linear_cols] if model.linear_cols.size else None
    design = build_block_design(Xs, leaves, model.tree.n_leaves, clin)
    if model.removed_nodes:
        design = design.without_leaves(model.removed_nodes)

    node_ids = model.tree.leaf_node_ids
    blocks = [m for m in range(model.tree.n_leaves) if design.block_of_leaf[m] >= 0]
    omics_names = doc.get("omics_names", [])
    header_out = ["alpha"]
    header_out += [f"c_n{node_ids[m]}" for m in range(model.tree.n_leaves)]
    for j in range(design.n_omics):
        nm = omics_names[j] if j < len(omics_names) else f"x{j + 1}"
        header_out += [f"beta_{nm}_n{node_ids[m]}" for m in blocks]
    out_rows = []
    for alpha in alphas:
        pen = PenaltyStructure(
            lam=lam, alpha=alpha, n_leaves=max(design.n_blocks, 1), n_omics=design.n_omics
        )
        c, beta = fit_gaussian(design, y, pen)
        row = [fmt(float(alpha))]
        row += [fmt(float(c[m])) for m in range(model.tree.n_leaves)]
        for j in range(design.n_omics):
            row += [fmt(float(beta[j, design.block_of_leaf[m]])) for m in blocks]
        out_rows.append(row)
    write_csv(args.out, header_out, out_rows)
    return 0


def _parse_covariance(spec):
    if ":" in spec:
        kind, rho = spec.split(":", 1)
        return kind, parse_number(rho, " (--covariance)")
    return spec, 0.5


def cmd_simulate(args):
    kind, rho = _parse_covariance(args.covariance)
    config = SimConfig(
        experiment=args.experiment,
        n=args.n,
        p=args.p,
        n_replications=args.reps,
        n_test=args.n_test,
        seed=args.seed,
        covariance=kind,
        cov_rho=rho,
        models=tuple(args.models.split(",")) if args.models else None,
        n_jobs=args.threads,
    )
    result = run_experiment(config)
    header = ["replication", "model", "pmse", "lambda", "alpha", "n_leaves", "error"]
    rows = []
    for r in result.rows:
        rows.append(
            [
                r["replication"],
                r["model"],
                fmt(r["pmse"]),
                fmt(r["lambda"]),
                fmt(r["alpha"]),
                r["n_leaves"],
                r["error"],
            ]
        )
    for name in config.models:
        rows.append(["mean", name, fmt(result.summary[name]), "", "", "", ""])
    write_csv(args.out, header, rows)
    return 0


_HANDLERS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "tune": cmd_tune,
    "nodetest": cmd_nodetest,
    "paths": cmd_paths,
    "simulate": cmd_simulate,
}


def main(argv=None):
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, subparsers[args.command])
        return _HANDLERS[args.command](args)
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
