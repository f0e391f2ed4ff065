"""Command-line surface: fit, simulate, elicit, summarize.

Every command resolves its configuration, runs from a single seed, writes
machine-readable CSV/JSON outputs into --out-dir, and records a manifest
(resolved configuration, seed, version, output digests) sufficient to replay
the run byte-for-byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    ConstraintConfig,
    CsvSchema,
    Dataset,
    SamplerConfig,
    load_config_file,
    load_csv,
)
from .elicitation import ELICIT_COLUMNS, ElicitationGrid, elicit, recommend
from .errors import DataError, ConfigurationError, StripEmptyError, EstimationError
from .inference import fit_summary_tree, subgroup_contrast, summarize_chain
from .models import ESTIMATORS, PosteriorDraws, fit_estimator
from .simlab import (
    METRICS_COLUMNS,
    RESULT_COLUMNS,
    DgpConfig,
    compute_metrics,
    run_replications,
)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int, outputs: list[Path]) -> Path:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "version": __version__,
        "created_unix": time.time(),
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = out_dir / "manifest.json"
    _write_json(path, manifest)
    return path


def _resolve_configs(args) -> tuple[SamplerConfig, ConstraintConfig]:
    if getattr(args, "config", None):
        scfg, ccfg = load_config_file(args.config)
    else:
        scfg, ccfg = SamplerConfig(), ConstraintConfig()
    if args.seed is not None:
        scfg = replace(scfg, seed=args.seed)
    elif not getattr(args, "config", None):
        scfg = replace(scfg, seed=int.from_bytes(os.urandom(4), "big"))
    return scfg, ccfg


def _load_dataset(args) -> tuple[Dataset, list[str]]:
    covs = args.covariates.split(",") if args.covariates else None
    schema = CsvSchema(outcome=args.outcome_col, running=args.running_col, covariates=covs)
    ds = load_csv(args.data, schema, cutoff=args.cutoff)
    if covs is None:
        with open(args.data, encoding="utf-8") as fh:
            header = next(csv.reader(fh))
        covs = [h.strip() for h in header if h.strip() not in (args.outcome_col, args.running_col)]
    return ds, covs


def cmd_fit(args) -> int:
    scfg, ccfg = _resolve_configs(args)
    ds, cov_names = _load_dataset(args)
    draws = fit_estimator(args.estimator, ds, scfg, ccfg)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    chain_names = sorted(draws.chain)
    header = ["draw", "ate", *chain_names]
    rows = []
    for s in range(draws.num_draws):
        rows.append([s, draws.ate[s], *(draws.chain[c][s] for c in chain_names)])
    draws_path = out / "draws.csv"
    _write_csv(draws_path, header, rows)
    outputs.append(draws_path)

    cate_path = out / "cate_draws.csv"
    _write_csv(
        cate_path,
        [f"unit_{u}" for u in draws.strip_unit_ids],
        draws.cate,
    )
    outputs.append(cate_path)

    units_path = out / "strip_units.csv"
    unit_rows = []
    for u in draws.strip_unit_ids:
        unit_rows.append([u, ds.x[u], *ds.w[u], ds.z[u]])
    _write_csv(units_path, ["unit", args.running_col, *cov_names, "z"], unit_rows)
    outputs.append(units_path)

    forests_path = out / "forests.json"
    _write_json(
        forests_path,
        {
            "estimator": draws.estimator,
            "forests": {
                key: [f.to_json_obj() for f in forests]
                for key, forests in draws.forests.items()
            },
        },
    )
    outputs.append(forests_path)

    ate_summary = summarize_chain(draws.ate, level=args.level).as_dict()
    summary_path = out / "ate_summary.json"
    _write_json(summary_path, ate_summary)
    outputs.append(summary_path)

    config_doc = {
        **asdict(scfg),
        **asdict(ccfg),
        "estimator": args.estimator,
        "cutoff": args.cutoff,
        "data": str(args.data),
        "outcome_col": args.outcome_col,
        "running_col": args.running_col,
        "covariates": cov_names,
        "level": args.level,
        "invalid_leaf_total": draws.invalid_leaf_total,
    }
    _write_manifest(out, "fit", config_doc, scfg.seed, outputs)
    print(json.dumps(ate_summary, sort_keys=True))
    if draws.invalid_leaf_total:
        print(
            f"warning: {draws.invalid_leaf_total} forced invalid leaves across retained sweeps",
            file=sys.stderr,
        )
    return 0


def cmd_simulate(args) -> int:
    scfg, ccfg = _resolve_configs(args)
    estimators = args.estimators.split(",")
    for name in estimators:
        if name not in ESTIMATORS:
            raise ConfigurationError(f"unknown estimator {name!r}")
    tau_bars = [float(v) for v in args.tau_bar.split(",")]
    delta_mus = [float(v) for v in args.delta_mu.split(",")]
    delta_taus = [float(v) for v in args.delta_tau.split(",")]

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    raw_rows_all = []
    metric_rows_all = []
    for tb in tau_bars:
        for dm in delta_mus:
            for dt in delta_taus:
                dgp = DgpConfig(
                    n=args.n, tau_bar=tb, delta_mu=dm, delta_tau=dt, seed=scfg.seed
                )
                raw = run_replications(
                    dgp, estimators, args.reps, workers=args.workers, scfg=scfg, ccfg=ccfg
                )
                cell = {"tau_bar": tb, "delta_mu": dm, "delta_tau": dt}
                for row in raw:
                    raw_rows_all.append({**cell, **row})
                for m in compute_metrics(raw):
                    metric_rows_all.append({**cell, **m.as_dict()})

    cell_cols = ["tau_bar", "delta_mu", "delta_tau"]
    raw_path = out / "results_raw.csv"
    _write_csv(
        raw_path,
        cell_cols + RESULT_COLUMNS,
        ([r[c] for c in cell_cols + RESULT_COLUMNS] for r in raw_rows_all),
    )
    metrics_path = out / "metrics.csv"
    _write_csv(
        metrics_path,
        cell_cols + METRICS_COLUMNS,
        ([r[c] for c in cell_cols + METRICS_COLUMNS] for r in metric_rows_all),
    )
    config_doc = {
        **asdict(scfg),
        **asdict(ccfg),
        "estimators": estimators,
        "n": args.n,
        "reps": args.reps,
        "workers": args.workers,
        "tau_bar": tau_bars,
        "delta_mu": delta_mus,
        "delta_tau": delta_taus,
    }
    _write_manifest(out, "simulate", config_doc, scfg.seed, [raw_path, metrics_path])
    print(f"wrote {metrics_path}")
    return 0


def cmd_elicit(args) -> int:
    scfg, _ = _resolve_configs(args)
    ds, cov_names = _load_dataset(args)
    grid = ElicitationGrid(
        h_values=tuple(float(v) for v in args.h_values.split(",")),
        n_omin_values=tuple(int(v) for v in args.n_omin_values.split(",")),
        alpha_values=tuple(float(v) for v in args.alpha_values.split(",")),
        s=args.synthetic_samples,
    )
    table = elicit(ds.x, ds.w, ds.cutoff, grid, scfg, workers=args.workers)
    rec = recommend(table, sensitivity_multiple=args.sensitivity_multiple)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table_path = out / "elicitation.csv"
    _write_csv(
        table_path,
        ELICIT_COLUMNS,
        ([r.as_dict()[c] for c in ELICIT_COLUMNS] for r in table),
    )
    rec_path = out / "recommendation.json"
    _write_json(rec_path, rec.as_dict())
    config_doc = {
        **asdict(scfg),
        "h_values": list(grid.h_values),
        "n_omin_values": list(grid.n_omin_values),
        "alpha_values": list(grid.alpha_values),
        "synthetic_samples": grid.s,
        "sensitivity_multiple": args.sensitivity_multiple,
        "data": str(args.data),
        "cutoff": args.cutoff,
        "covariates": cov_names,
    }
    _write_manifest(out, "elicit", config_doc, scfg.seed, [table_path, rec_path])
    print(json.dumps(rec.as_dict(), sort_keys=True))
    return 0


def _parse_predicate(text: str, columns: list[str]):
    for op in ("<=", ">=", "!=", "==", "<", ">"):
        if op in text:
            name, value = text.split(op, 1)
            name = name.strip()
            if name not in columns:
                raise ConfigurationError(
                    f"predicate references unknown column {name!r}; "
                    f"available: {', '.join(columns)}"
                )
            v = float(value)
            col = columns.index(name)
            fns = {
                "<=": lambda arr: arr[:, col] <= v,
                ">=": lambda arr: arr[:, col] >= v,
                "!=": lambda arr: arr[:, col] != v,
                "==": lambda arr: arr[:, col] == v,
                "<": lambda arr: arr[:, col] < v,
                ">": lambda arr: arr[:, col] > v,
            }
            return fns[op]
    raise ConfigurationError(f"cannot parse predicate {text!r} (expected column<op>value)")


def cmd_summarize(args) -> int:
    fit_dir = Path(args.fit_dir)
    cate_path = fit_dir / "cate_draws.csv"
    units_path = fit_dir / "strip_units.csv"
    for p in (cate_path, units_path):
        if not p.exists():
            raise DataError(f"missing fit artifact {p}")
    cate = np.loadtxt(cate_path, delimiter=",", skiprows=1, ndmin=2)
    with open(units_path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        unit_header = next(reader)
        unit_rows = np.array([[float(v) for v in row] for row in reader])
    # drop the leading unit-id column and the trailing z column for the tree
    cov_names = unit_header[2:-1]
    covs = unit_rows[:, 2:-1]

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    point = cate.mean(axis=0)
    tree = fit_summary_tree(
        point,
        covs,
        max_depth=args.tree_max_depth,
        min_leaf=args.tree_min_leaf,
        feature_names=cov_names,
    )
    tree_txt = out / "summary_tree.txt"
    tree_txt.write_text(tree.render() + "\n", encoding="utf-8")
    outputs.append(tree_txt)
    tree_json = out / "summary_tree.json"
    _write_json(tree_json, tree.node_list())
    outputs.append(tree_json)
    print(tree.render())

    contrast_doc = None
    if args.group_a or args.group_b:
        if not (args.group_a and args.group_b):
            raise ConfigurationError("--group-a and --group-b must be given together")
        pred_cols = unit_header
        table = unit_rows
        fa = _parse_predicate(args.group_a, pred_cols)
        fb = _parse_predicate(args.group_b, pred_cols)
        ga = np.flatnonzero(fa(table))
        gb = np.flatnonzero(fb(table))
        if ga.size == 0 or gb.size == 0:
            raise ConfigurationError("a subgroup predicate selected no units")
        overlap = np.intersect1d(ga, gb)
        if overlap.size:
            raise ConfigurationError("subgroup predicates overlap; groups must be disjoint")

        class _D:
            pass

        dd = _D()
        dd.cate = cate
        diff, p_pos = subgroup_contrast(dd, ga, gb)
        contrast_doc = {
            "group_a": args.group_a,
            "group_b": args.group_b,
            "n_a": int(ga.size),
            "n_b": int(gb.size),
            "mean_difference": float(diff.mean()),
            "p_positive": p_pos,
            "difference_draws": [float(v) for v in diff],
        }
        contrast_path = out / "contrast.json"
        _write_json(contrast_path, contrast_doc)
        outputs.append(contrast_path)
        print(json.dumps({k: v for k, v in contrast_doc.items() if k != "difference_draws"}, sort_keys=True))

    config_doc = {
        "fit_dir": str(fit_dir),
        "tree_max_depth": args.tree_max_depth,
        "tree_min_leaf": args.tree_min_leaf,
        "group_a": args.group_a,
        "group_b": args.group_b,
    }
    _write_manifest(out, "summarize", config_doc, seed=0, outputs=outputs)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rddtrees",
        description="Overlap-constrained Bayesian tree ensembles for sharp discontinuity designs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, data=True):
        p.add_argument("--out-dir", required=True, help="directory for outputs + manifest")
        p.add_argument("--seed", type=int, default=None, help="root seed (drawn and recorded if omitted)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--config", default=None, help="flat JSON config file")
        if data:
            p.add_argument("--data", required=True, help="input CSV")
            p.add_argument("--cutoff", type=float, default=0.0)
            p.add_argument("--outcome-col", default="y")
            p.add_argument("--running-col", default="x")
            p.add_argument("--covariates", default=None, help="comma-separated covariate columns")

    p_fit = sub.add_parser("fit", help="fit one estimator to a CSV dataset")
    add_common(p_fit)
    p_fit.add_argument("--estimator", choices=sorted(ESTIMATORS), default="bart-rdd")
    p_fit.add_argument("--level", type=float, default=0.95)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="replicated estimator comparison on the benchmark DGP")
    add_common(p_sim, data=False)
    p_sim.add_argument("--estimators", default="bart-rdd,s-bart,t-bart")
    p_sim.add_argument("--reps", type=int, default=50)
    p_sim.add_argument("--n", type=int, default=1000)
    p_sim.add_argument("--tau-bar", default="0.2")
    p_sim.add_argument("--delta-mu", default="0.5")
    p_sim.add_argument("--delta-tau", default="0.1")
    p_sim.set_defaults(func=cmd_simulate)

    p_el = sub.add_parser("elicit", help="prior predictive grid search for (h, n_omin, alpha)")
    add_common(p_el)
    p_el.add_argument("--h-values", default="0.05,0.1,0.15,0.2")
    p_el.add_argument("--n-omin-values", default="1,5,10")
    p_el.add_argument("--alpha-values", default="0.6,0.75,0.9")
    p_el.add_argument("--synthetic-samples", type=int, default=20)
    p_el.add_argument("--sensitivity-multiple", type=float, default=3.0)
    p_el.set_defaults(func=cmd_elicit)

    p_sum = sub.add_parser("summarize", help="summary tree and subgroup contrasts from a fit")
    p_sum.add_argument("--fit-dir", required=True, help="directory written by `fit`")
    p_sum.add_argument("--out-dir", required=True)
    p_sum.add_argument("--tree-max-depth", type=int, default=3)
    p_sum.add_argument("--tree-min-leaf", type=int, default=None)
    p_sum.add_argument("--group-a", default=None, help="predicate, e.g. 'w1<=0.5'")
    p_sum.add_argument("--group-b", default=None)
    p_sum.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ConfigurationError, StripEmptyError, EstimationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
