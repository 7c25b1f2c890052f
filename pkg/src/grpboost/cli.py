"""Command line entry points.

Eight subcommands cover the workflow end to end: preprocess raw
gridded data, select thresholds, fit the sub-models, predict daily
parameters, simulate conditional scenarios, evaluate on held-out
days, explain single predictions, and run the synthetic parameter
recovery study. Every failure is reported as one JSON object on
stderr and the process exit code identifies the error class.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
from scipy.special import expit

from .boosting import TrainConfig
from .config import ConfigMap
from .data import (GriddedDataset, _atomic_write, detrend, load_dataset,
                   rolling_mean, save_dataset, season_mask,
                   standardized_anomalies)
from .errors import ConfigError, DataError, GrpboostError
from .evaluation import (StudyConfig, brier, permutation_test, qq_tail,
                         roc_auc, save_score_report, simulation_study,
                         tree_shap)
from .pipeline import (FitSettings, SubModelBundle, ThresholdSpec,
                       assemble_predictors, compute_risk_series, day_inputs,
                       fit_all, generate_scenarios, predict_day,
                       select_thresholds)
from .svgplot import box_plot


def _write_csv(path: str, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
            for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _load_config(path: str | None) -> ConfigMap:
    if path is None:
        return ConfigMap.parse("", source="<empty>")
    return ConfigMap.load(path)


def _str_list(cfg: ConfigMap, key: str) -> list[str]:
    raw = cfg.get_str(key, default="")
    return [part.strip() for part in raw.split(",") if part.strip()]


# ----------------------------------------------------------------------
# preprocess


def cmd_preprocess(args) -> int:
    cfg = _load_config(args.config)
    ds = load_dataset(args.input)
    dates = ds.dates()

    include_current = cfg.get_bool("preprocess.rolling_include_current",
                                   default=True)
    for name in sorted(ds.variables):
        key = f"preprocess.rolling_{name}"
        if cfg.get_str(key, default="") == "":
            continue
        width = cfg.get_int(key)
        ds.variables[name] = rolling_mean(ds.variables[name], width,
                                          include_current=include_current)
        ds.with_note("rolling_mean", variable=name, width=width,
                     include_current=include_current)

    anomaly_vars = _str_list(cfg, "preprocess.anomaly_variables")
    if anomaly_vars:
        lo = cfg.get_int("preprocess.reference_start", required=True)
        hi = cfg.get_int("preprocess.reference_end", required=True)
        window = cfg.get_int("preprocess.window", default=31)
        for name in anomaly_vars:
            if name not in ds.variables:
                raise DataError(f"anomaly variable {name!r} not in dataset")
            ds.variables[name] = standardized_anomalies(
                ds.variables[name], dates, (lo, hi), window=window)
            ds.with_note("standardized_anomalies", variable=name,
                         reference=[lo, hi], window=window)

    for name in _str_list(cfg, "preprocess.detrend_variables"):
        if name not in ds.variables:
            raise DataError(f"detrend variable {name!r} not in dataset")
        ds.variables[name] = detrend(ds.variables[name])
        ds.with_note("detrend", variable=name)

    months = cfg.get_int_list("preprocess.months", default=[])
    if len(months):
        keep = season_mask(dates, tuple(int(m) for m in months))
        if not keep.any():
            raise DataError(f"season filter {months.tolist()} keeps no days")
        ds = ds.subset_days(keep)
        ds.with_note("season_filter", months=months.tolist())

    if cfg.get_bool("preprocess.drop_incomplete", default=True):
        complete = np.ones(ds.n_days, dtype=bool)
        for arr in ds.variables.values():
            complete &= ~np.isnan(arr).any(axis=1)
        if not complete.any():
            raise DataError("every day has incomplete values")
        if not complete.all():
            ds = ds.subset_days(complete)
            ds.with_note("drop_incomplete",
                         dropped=int((~complete).sum()))

    save_dataset(ds, args.output)
    print(f"wrote {ds.n_days} days, {len(ds.variables)} variables "
          f"to {args.output}")
    return 0


# ----------------------------------------------------------------------
# thresholds


def _target_region(cfg: ConfigMap) -> np.ndarray:
    return np.array(cfg.get_int_list("model.target_region", required=True),
                    dtype=int)


def cmd_thresholds(args) -> int:
    cfg = _load_config(args.config)
    ds = load_dataset(args.data)
    spec = select_thresholds(
        ds, _target_region(cfg),
        risk_level=cfg.get_float("model.risk_level", default=0.95),
        variable=cfg.get_str("model.response", default="response"))
    doc = {"format": 1, "thresholds": spec.to_dict()}
    _atomic_write(args.output, json.dumps(doc, sort_keys=True, indent=1)
                  + "\n")
    print(f"u={spec.u!r} q_prime={spec.q_prime!r} "
          f"n_exceedances={spec.n_exceedances}")
    return 0


def load_thresholds(path: str) -> ThresholdSpec:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != 1:
        raise DataError(f"unsupported thresholds format {doc.get('format')!r}")
    return ThresholdSpec.from_dict(doc["thresholds"])


# ----------------------------------------------------------------------
# fit


def _fit_settings(cfg: ConfigMap) -> FitSettings:
    return FitSettings(
        target_region=_target_region(cfg),
        risk_level=cfg.get_float("model.risk_level", default=0.95),
        xi=cfg.get_float("model.xi", default=-0.3),
        alpha=cfg.get_float("model.alpha", default=1.27),
        theta_scale=cfg.get_float("model.theta_scale", default=-0.07),
        vecchia_k=cfg.get_int("model.vecchia_k", default=20),
        occurrence=cfg.train_config("occurrence"),
        intensity=cfg.train_config("intensity"),
        dependence=cfg.train_config("dependence"),
        n_folds=cfg.get_int("fit.n_folds", default=5),
        response_var=cfg.get_str("model.response", default="response"),
        z500_var=cfg.get_str("model.z500", default="z500"),
        sm_var=cfg.get_str("model.sm", default="sm"),
        prefit_dependence=cfg.get_bool("model.prefit_dependence",
                                       default=False))


def _date_window(ds: GriddedDataset, cfg: ConfigMap) -> GriddedDataset:
    start = cfg.get_str("fit.train_start", default="")
    end = cfg.get_str("fit.train_end", default="")
    if not start and not end:
        return ds
    keep = np.ones(ds.n_days, dtype=bool)
    if start:
        keep &= np.array([d >= start for d in ds.days])
    if end:
        keep &= np.array([d <= end for d in ds.days])
    if not keep.any():
        raise ConfigError(
            f"date window [{start or '...'}, {end or '...'}] keeps no days")
    return ds.subset_days(keep)


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    ds = _date_window(load_dataset(args.data), cfg)
    settings = _fit_settings(cfg)
    thresholds = load_thresholds(args.thresholds) if args.thresholds else None
    bundle = fit_all(ds, settings, thresholds=thresholds)
    bundle.save(args.output)
    stages = bundle.meta["stages"]
    for name in ("occurrence", "intensity", "dependence"):
        print(f"{name}: {stages[name]['n_trees']} trees")
    print(f"wrote {args.output}")
    return 0


# ----------------------------------------------------------------------
# predict


def cmd_predict(args) -> int:
    bundle = SubModelBundle.load(args.bundle)
    ds = load_dataset(args.data)
    tables = assemble_predictors(ds, bundle.schema)
    rows, int_rows = [], []
    for t, date in enumerate(ds.days):
        p, theta_int, theta_ext = predict_day(
            bundle, tables.occurrence[t], tables.intensity_day(t),
            tables.dependence[t])
        rows.append([date, p, theta_ext])
        if args.intensity_output:
            for d in range(ds.grid.n_points):
                int_rows.append([date, d, theta_int[d]])
    _write_csv(args.output, ["date", "p_exceed", "theta_extent"], rows)
    if args.intensity_output:
        _write_csv(args.intensity_output, ["date", "id", "theta_int"],
                   int_rows)
    print(f"wrote {len(rows)} days to {args.output}")
    return 0


# ----------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    bundle = SubModelBundle.load(args.bundle)
    ds = load_dataset(args.data)
    if args.n < 0:
        raise ConfigError("scenario count must be nonnegative")
    occ, rows, dep = day_inputs(ds, bundle, args.date)
    fields, risks = generate_scenarios(
        bundle, occ, rows, dep, n=args.n, seed=args.seed,
        override_extent=args.override_extent)
    out = []
    for s in range(args.n):
        for d in range(ds.grid.n_points):
            out.append([s, d, fields[s, d]])
    _write_csv(args.output, ["sim", "id", "value"], out)
    if args.n:
        print(f"{args.n} scenarios, mean target risk {float(risks.mean())!r}")
    else:
        print("0 scenarios")
    return 0


# ----------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    bundle = SubModelBundle.load(args.bundle)
    ds = load_dataset(args.data)
    os.makedirs(args.output, exist_ok=True)
    tables = assemble_predictors(ds, bundle.schema)
    risk = compute_risk_series(ds, bundle.schema.target_region,
                               bundle.schema.response_var)
    labels = (risk >= bundle.thresholds.u).astype(float)
    probs = expit(bundle.occurrence.predict(tables.occurrence))
    base_rate = float(expit(bundle.occurrence.base_score))

    if len(np.unique(labels)) < 2:
        raise DataError("evaluation days contain a single outcome class")
    auc, fpr, tpr = roc_auc(labels, probs)
    _write_csv(os.path.join(args.output, "roc.csv"),
               ["fpr", "tpr"], list(zip(fpr, tpr)))

    model = brier(labels, probs)
    baseline = brier(labels, np.full(len(labels), base_rate))
    p_value = permutation_test(model.contributions, baseline.contributions,
                               n_perm=args.n_perm, seed=args.seed)
    report = dataclasses.replace(model, p_value=p_value, n_perm=args.n_perm)
    save_score_report(report, os.path.join(args.output,
                                           "occurrence_scores.csv"))

    qq_point = args.qq_point
    if qq_point is None:
        qq_point = int(bundle.schema.target_region[0])
    model_q, emp, lo, hi = qq_tail(bundle, ds, qq_point, seed=args.seed)
    _write_csv(os.path.join(args.output, f"qq_point_{qq_point}.csv"),
               ["model_q", "empirical", "lower", "upper"],
               list(zip(model_q, emp, lo, hi)))

    summary = {
        "auc": auc, "brier": model.value, "brier_baseline": baseline.value,
        "p_value": p_value, "n_perm": args.n_perm,
        "n_days": int(ds.n_days),
        "n_exceedances": int(labels.sum()), "qq_point": qq_point,
    }
    _atomic_write(os.path.join(args.output, "summary.json"),
                  json.dumps(summary, sort_keys=True, indent=1) + "\n")
    print(f"auc={auc!r} brier={model.value!r} "
          f"baseline={baseline.value!r} p={p_value!r}")
    return 0


# ----------------------------------------------------------------------
# explain


def cmd_explain(args) -> int:
    bundle = SubModelBundle.load(args.bundle)
    ds = load_dataset(args.data)
    tables = assemble_predictors(ds, bundle.schema)
    t = ds.day_position(args.date)
    if args.submodel == "occurrence":
        row, names = tables.occurrence[t], tables.occ_names
        ensemble = bundle.occurrence
    elif args.submodel == "dependence":
        row, names = tables.dependence[t], tables.dep_names
        ensemble = bundle.dependence
    elif args.submodel == "intensity":
        if args.point is None:
            raise ConfigError("intensity explanations need --point")
        if not 0 <= args.point < ds.grid.n_points:
            raise ConfigError(f"point {args.point} outside the grid")
        row, names = tables.intensity_day(t)[args.point], tables.int_names
        ensemble = bundle.intensity
    else:
        raise ConfigError(f"unknown sub-model {args.submodel!r}")

    attr = tree_shap(ensemble, row)
    anchors = tables.anchors(args.submodel)
    rows = []
    for i, name in enumerate(names):
        rows.append([name, int(anchors[i]), row[i], attr.contributions[i]])
    rows.append(["__base__", -1, 0.0, attr.base_value])
    _write_csv(args.output,
               ["feature", "anchor_id", "input_value", "contribution"],
               rows)
    print(f"prediction {attr.prediction!r} "
          f"(base {float(attr.base_value)!r}) -> {args.output}")
    return 0


# ----------------------------------------------------------------------
# synthstudy


def cmd_synthstudy(args) -> int:
    cfg = _load_config(args.config)
    if cfg.get_str("study.train.n_trees", default=""):
        train = cfg.train_config("study.train")
    else:
        train = TrainConfig(n_trees=190, max_depth=4, learning_rate=0.05,
                            min_child_hessian=1e-3)
    study = StudyConfig(
        n_reps=cfg.get_int("study.n_reps", default=args.reps),
        n_days=cfg.get_int("study.n_days", default=272),
        nx=cfg.get_int("study.nx", default=10),
        ny=cfg.get_int("study.ny", default=5),
        n_predictors=cfg.get_int("study.n_predictors", default=242),
        alpha=cfg.get_float("study.alpha", default=1.0),
        theta_scale=cfg.get_float("study.theta_scale", default=0.0),
        xi=cfg.get_float("study.xi", default=-0.3),
        vecchia_k=cfg.get_int("study.vecchia_k", default=10),
        iterations=(cfg.get_int("study.early", default=5),
                    cfg.get_int("study.late", default=190)),
        train=train)
    report = simulation_study(study, seed=args.seed)
    os.makedirs(args.output, exist_ok=True)

    rows = []
    for rep in range(report.pi_late.shape[0]):
        for day in range(report.pi_late.shape[1]):
            rows.append([rep, day, report.truth_pi[day],
                         report.pi_early[rep, day],
                         report.pi_late[rep, day]])
    _write_csv(os.path.join(args.output, "replicates.csv"),
               ["rep", "day", "truth", "pi_early", "pi_late"], rows)

    summary = {
        "coverage_early": report.coverage_early,
        "coverage_late": report.coverage_late,
        "median_abs_bias_early": report.median_abs_bias_early,
        "median_abs_bias_late": report.median_abs_bias_late,
        "iterations": list(report.iterations),
        "n_reps": int(report.pi_late.shape[0]),
        "n_days": int(report.pi_late.shape[1]),
    }
    _atomic_write(os.path.join(args.output, "summary.json"),
                  json.dumps(summary, sort_keys=True, indent=1) + "\n")

    order = np.argsort(report.truth_pi)
    show = order[np.linspace(0, len(order) - 1, min(20, len(order)),
                             dtype=int)]
    boxes = []
    for day in show:
        est = report.pi_late[:, day]
        q1, med, q3 = np.quantile(est, [0.25, 0.5, 0.75])
        boxes.append({"lo": float(est.min()), "q1": float(q1),
                      "median": float(med), "q3": float(q3),
                      "hi": float(est.max())})
    box_plot(os.path.join(args.output, "recovery.svg"),
             np.arange(len(show), dtype=float), boxes,
             title="Pairwise dependence recovery",
             xlabel="days ordered by truth", ylabel="pi",
             truth=report.truth_pi[show])
    print(f"coverage_late={report.coverage_late!r} "
          f"bias_early={report.median_abs_bias_early!r} "
          f"bias_late={report.median_abs_bias_late!r}")
    return 0


# ----------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="grpboost",
        description="boosted sub-models for spatially compounding "
                    "extremes")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess",
                        help="detrend, roll, standardize and filter a "
                             "dataset directory")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("thresholds",
                        help="select the risk threshold and per-point "
                             "margins")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--output", required=True)
    sp.set_defaults(func=cmd_thresholds)

    sp = sub.add_parser("fit", help="fit the three sub-models")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--thresholds",
                    help="reuse thresholds from a previous run")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict",
                        help="per-day probabilities and parameters")
    sp.add_argument("--data", required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--intensity-output",
                    help="also write per-point theta_int rows")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("simulate",
                        help="conditional scenarios for one day")
    sp.add_argument("--data", required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--date", required=True)
    sp.add_argument("-n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)
    sp.add_argument("--override-extent", type=float, default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("evaluate",
                        help="scores and tail diagnostics on a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--n-perm", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--qq-point", type=int, default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("explain",
                        help="per-feature contributions for one day")
    sp.add_argument("--data", required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--date", required=True)
    sp.add_argument("--submodel", required=True,
                    choices=["occurrence", "intensity", "dependence"])
    sp.add_argument("--point", type=int, default=None)
    sp.add_argument("--output", required=True)
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("synthstudy",
                        help="synthetic dependence recovery study")
    sp.add_argument("--output", required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--reps", type=int, default=100)
    sp.set_defaults(func=cmd_synthstudy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GrpboostError as e:
        payload = {"error": type(e).__name__, "message": str(e)}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
