"""Command-line surface.

Commands: split, preprocess, features, train, predict, explain, evaluate,
compare, synth, run. Run configuration comes from a JSON file (--config-file)
with flag overrides; --config selects the feature configuration by name.
Exit codes: 0 success, 2 validation error, 3 data error, 4 internal error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import pandas as pd

from . import __version__
from .aggregate import CONFIGS
from .attribution import group_attribution, tree_shap
from .errors import DataError, MorphomlError, ValidationError
from .evaluation import paired_test_and_tost
from .gbdt import load_model
from . import io as mio
from .pipeline import STAGES, RunConfig, run_pipeline, run_stage
from .synth import SynthSpec, generate_cohort

GBDT_FLAG_MAP = {
    "rounds": "num_rounds",
    "leaves": "num_leaves",
    "depth": "max_depth",
    "lr": "learning_rate",
    "gamma": "gamma",
}


def _add_config_args(parser):
    parser.add_argument("--config-file", required=True, help="run configuration JSON")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--seed", type=int, help="override the top-level seed")
    parser.add_argument("--threads", type=int, help="worker threads (also MORPHOML_THREADS)")
    parser.add_argument(
        "--config",
        dest="feature_config",
        choices=sorted(CONFIGS),
        help="feature configuration name",
    )
    parser.add_argument("--folds", type=int, help="cross-validation folds")
    parser.add_argument("--rounds", type=int, help="boosting rounds")
    parser.add_argument("--leaves", type=int, help="max leaves per tree")
    parser.add_argument("--depth", type=int, help="max tree depth (0 = unlimited)")
    parser.add_argument("--lr", type=float, help="learning rate")
    parser.add_argument("--gamma", type=float, help="focal loss exponent")


def _build_config(args) -> RunConfig:
    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.feature_config is not None:
        overrides["feature_config"] = args.feature_config
    if args.folds is not None:
        overrides["n_folds"] = args.folds
    with open(args.config_file, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    gbdt = dict(doc.get("gbdt", {}))
    for flag, param in GBDT_FLAG_MAP.items():
        value = getattr(args, flag, None)
        if value is not None:
            gbdt[param] = value
    if gbdt:
        overrides["gbdt"] = gbdt
    doc.update(overrides)
    return RunConfig.from_dict(doc)


def _cmd_stage(args) -> int:
    run_stage(_build_config(args), args.command)
    return 0


def _cmd_run(args) -> int:
    out = run_pipeline(_build_config(args), from_stage=args.from_stage)
    print(out)
    return 0


def _cmd_synth(args) -> int:
    spec = SynthSpec.from_json(args.spec)
    seed = args.seed if args.seed is not None else None
    manifest = generate_cohort(spec, args.out, seed=seed)
    print(manifest)
    return 0


def _cmd_evaluate(args) -> int:
    config = _build_config(args)
    run_stage(config, "evaluate")
    with open(os.path.join(config.out_dir, "report.json"), "r", encoding="utf-8") as fh:
        report = json.load(fh)
    for name, (point, lo, hi) in sorted(report["metrics"].items()):
        print(f"{name}: {point:.4f} (95% CI {lo:.4f}..{hi:.4f})")
    return 0


def _cmd_compare(args) -> int:
    preds_a = mio.load_predictions(args.a)
    preds_b = mio.load_predictions(args.b)
    result = paired_test_and_tost(
        preds_a,
        preds_b,
        delta=args.delta,
        metric=args.metric,
        n_replicates=args.replicates,
        seed=args.seed or 0,
    )
    row = {
        "metric": result.metric,
        "difference": result.difference,
        "ci95": list(result.ci95),
        "ci90": list(result.ci90),
        "delta": result.delta,
        "significant": result.significant,
        "equivalent": result.equivalent,
        "non_inferior": result.non_inferior,
        "conclusions": list(result.conclusions),
        "n_cases": result.n_cases,
    }
    print(json.dumps(row, sort_keys=True))
    return 0


def _resolve_groups(groups_doc: dict, columns) -> dict:
    index = {name: i for i, name in enumerate(columns)}
    resolved = {}
    for group, members in groups_doc.items():
        idx = []
        for m in members:
            if isinstance(m, int):
                idx.append(m)
            elif m in index:
                idx.append(index[m])
            else:
                raise ValidationError(f"group {group!r}: unknown feature {m!r}")
        resolved[group] = idx
    return resolved


def _cmd_explain(args) -> int:
    config = _build_config(args)
    registry = config.registry()
    model_path = args.model or os.path.join(config.out_dir, "model.json")
    model = load_model(model_path)
    model.check_schema(registry.hash())
    table, _ = mio.load_feature_table(
        os.path.join(config.out_dir, "features.csv"), registry.hash()
    )
    from .cohort import load_split

    assignment = load_split(os.path.join(config.out_dir, "split.csv"))
    rows = table[[assignment.get(c) == args.split for c in table["case_id"]]]
    if not len(rows):
        raise DataError(f"no rows in split {args.split!r}")
    rows = rows.iloc[: args.rows]
    X = rows[list(registry.columns)].to_numpy(dtype=np.float64)

    groups = None
    if args.groups:
        with open(args.groups, "r", encoding="utf-8") as fh:
            groups = _resolve_groups(json.load(fh), registry.columns)

    n_classes = model.n_classes
    mean_abs = np.zeros((n_classes, len(registry.columns)))
    group_abs = {g: np.zeros(n_classes) for g in groups} if groups else None
    samples = []
    for row_id, x in zip(rows.index, X):
        report = tree_shap(model, x)
        mean_abs += np.abs(report.values)
        if groups:
            sums = group_attribution(report, groups)
            for g, per_class in sums.items():
                group_abs[g] += np.abs(per_class)
        samples.append(
            {
                "row_id": str(row_id),
                "base_values": [float(v) for v in report.base_values],
                "margins": [float(v) for v in report.margins],
                "values": [[float(v) for v in row] for row in report.values],
            }
        )
    mean_abs /= len(rows)

    out_csv = args.out_csv or os.path.join(config.out_dir, "shap.csv")
    records = []
    for c, cls in enumerate(model.class_names):
        order = np.argsort(-mean_abs[c], kind="stable")
        for f in order:
            records.append((cls, registry.columns[f], mean_abs[c, f]))
    pd.DataFrame(records, columns=["class", "feature", "mean_abs_shap"]).to_csv(
        out_csv, index=False, lineterminator="\n"
    )
    with open(os.path.join(config.out_dir, "shap_samples.json"), "w", encoding="utf-8") as fh:
        json.dump({"class_names": list(model.class_names), "samples": samples}, fh, sort_keys=True)
        fh.write("\n")
    if groups:
        grecords = []
        for g in sorted(group_abs):
            for c, cls in enumerate(model.class_names):
                grecords.append((cls, g, group_abs[g][c] / len(rows)))
        pd.DataFrame(grecords, columns=["class", "group", "mean_abs_shap"]).to_csv(
            os.path.join(config.out_dir, "shap_groups.csv"), index=False, lineterminator="\n"
        )
    print(out_csv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morphoml",
        description="Morphometric lymphoma subtyping pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        if stage == "evaluate":
            continue
        p = sub.add_parser(stage, help=f"run only the {stage} stage")
        _add_config_args(p)
        p.set_defaults(func=_cmd_stage)

    p_run = sub.add_parser("run", help="run the full pipeline")
    _add_config_args(p_run)
    p_run.add_argument("--from", dest="from_stage", default="split", choices=STAGES,
                       help="resume from this stage")
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("evaluate", help="evaluate predictions with bootstrap CIs")
    _add_config_args(p_eval)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="paired bootstrap test between two prediction sets")
    p_cmp.add_argument("--a", required=True, help="first predictions CSV")
    p_cmp.add_argument("--b", required=True, help="second predictions CSV")
    p_cmp.add_argument("--delta", type=float, default=0.05, help="equivalence margin")
    p_cmp.add_argument("--metric", default="accuracy")
    p_cmp.add_argument("--replicates", type=int, default=1000)
    p_cmp.add_argument("--seed", type=int, default=0)
    p_cmp.set_defaults(func=_cmd_compare)

    p_synth = sub.add_parser("synth", help="generate a synthetic cohort")
    p_synth.add_argument("--spec", required=True, help="synthesis spec JSON")
    p_synth.add_argument("--out", required=True, help="cohort output directory")
    p_synth.add_argument("--seed", type=int, help="override the seed in the --spec file")
    p_synth.set_defaults(func=_cmd_synth)

    p_explain = sub.add_parser("explain", help="Shapley attributions for a trained model")
    _add_config_args(p_explain)
    p_explain.add_argument("--model", help="model path (default: <out_dir>/model.json)")
    p_explain.add_argument("--split", default="val", choices=("train", "val", "test"))
    p_explain.add_argument("--rows", type=int, default=50, help="max rows to explain")
    p_explain.add_argument("--groups", help="JSON feature partition for grouped report")
    p_explain.add_argument("--out-csv", help="attribution CSV path (default: <out_dir>/shap.csv)")
    p_explain.set_defaults(func=_cmd_explain)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MorphomlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit code 4
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
