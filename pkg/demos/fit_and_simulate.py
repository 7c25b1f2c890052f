#!/usr/bin/env python3
"""End-to-end walkthrough on synthetic data.

Generates a small gridded dataset whose exceedance days are drawn from
the process family the package models, with every parameter tied to a
predictor column: one geopotential-like column controls how often the
target region exceeds, local soil moisture sets the excess scale, and
a second circulation column sets the spatial extent. The script then
selects risk thresholds, fits the three boosted sub-models, compares
the fitted extent against the generator, and simulates conditional
scenarios for the most extreme day. Artifacts land in demos/out/.
"""
import datetime
import os

import numpy as np

from grpboost import (FitSettings, Grid, GriddedDataset,
                      SemivariogramParams, TrainConfig, compute_risk_series,
                      day_inputs, fit_all, generate_scenarios,
                      select_thresholds, simulate_grp)
from grpboost.pipeline import predict_day
from grpboost.svgplot import line_plot, scatter_plot

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

NX, NY = 6, 4
TARGET = np.array([5, 6, 9, 10])
OCC_COL, EXT_COL = 8, 15
BASE = 2.0          # flat per-point threshold used by the generator
XI = -0.3


def expit(v):
    return 1.0 / (1.0 + np.exp(-v))


def make_dataset(n_days=800, seed=3):
    rng = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.arange(NX, dtype=float),
                         np.arange(NY, dtype=float))
    grid = Grid(xs.ravel(), ys.ravel())
    d = grid.n_points
    start = datetime.date(1990, 6, 1)
    days = [(start + datetime.timedelta(days=int(i))).isoformat()
            for i in range(n_days)]
    z500 = rng.normal(size=(n_days, d))
    sm = rng.normal(size=(n_days, d))

    p_exc = expit(1.6 * z500[:, OCC_COL] - 1.4)
    is_exc = rng.random(n_days) < p_exc
    theta_ext = 0.2 + 2.4 * expit(2.0 * z500[:, EXT_COL])
    theta_int = 0.4 + 0.5 * sm                       # local scale signal

    b = np.full(d, BASE)
    m = np.full(d, 1.0)
    w = np.zeros(d)
    w[TARGET] = 1.0 / len(TARGET)
    response = np.empty((n_days, d))
    for t in range(n_days):
        if is_exc[t]:
            params = SemivariogramParams(1.0, float(theta_ext[t]), 0.0)
            response[t] = simulate_grp(
                grid, params, b=b, theta_int=theta_int[t], m=m, xi=XI,
                target_weights=w, u=BASE, n_sims=1, seed=9000 + t)[0]
        else:
            response[t] = BASE - 0.3 - np.abs(rng.normal(0.0, 0.6, size=d))
    ds = GriddedDataset(grid, days,
                        {"response": response, "z500": z500, "sm": sm}, [])
    return ds, is_exc, theta_ext


def main():
    ds, is_exc, theta_ext_true = make_dataset()

    print("== thresholds")
    spec = select_thresholds(ds, TARGET, risk_level=1.0 - is_exc.mean())
    print(f"risk threshold u = {spec.u:.3f} (generator floor {BASE})")
    print(f"marginal level q' = {spec.q_prime:.3f} "
          f"({spec.n_exceedances} exceedance days, "
          f"{int(is_exc.sum())} generated)")

    print("\n== fitting occurrence, intensity, dependence")
    settings = FitSettings(
        target_region=TARGET, risk_level=1.0 - is_exc.mean(), xi=XI,
        alpha=1.0, theta_scale=0.0, vecchia_k=6,
        occurrence=TrainConfig(150, max_depth=3, learning_rate=0.1, seed=1),
        intensity=TrainConfig(150, max_depth=3, learning_rate=0.1, seed=2),
        dependence=TrainConfig(150, max_depth=3, learning_rate=0.1, seed=3),
        n_folds=4)
    bundle = fit_all(ds, settings, thresholds=spec)
    for stage in ("occurrence", "intensity", "dependence"):
        info = bundle.meta["stages"][stage]
        print(f"{stage}: {info['n_trees']} trees kept by cross-validation")
        curve = np.asarray(info["cv_curve"])
        line_plot(os.path.join(OUT, f"cv_{stage}.svg"),
                  {"mean validation loss":
                   (np.arange(len(curve), dtype=float), curve)},
                  title=f"{stage} cross-validation", xlabel="trees",
                  ylabel="loss per day")

    print("\n== fitted extent vs generator")
    exc_idx = np.flatnonzero(is_exc)
    fitted = np.empty(len(exc_idx))
    for row, t in enumerate(exc_idx):
        occ_row, int_rows, dep_row = day_inputs(ds, bundle, ds.days[int(t)])
        fitted[row] = predict_day(bundle, occ_row, int_rows, dep_row)[2]
    truth = theta_ext_true[exc_idx]
    print(f"truth range [{truth.min():.2f}, {truth.max():.2f}] "
          f"over {len(exc_idx)} exceedance days")
    if np.ptp(fitted) < 1e-12:
        # the one-standard-error rule can keep zero trees at this small
        # grid size; the constant still sits inside the truth range
        print(f"cross-validation kept a constant extent {fitted[0]:.2f}")
        print("day-level recovery at larger scale: demos/"
              "dependence_recovery.py")
    else:
        corr = np.corrcoef(truth, fitted)[0, 1]
        print(f"corr(truth, fitted) = {corr:.2f}, fitted range "
              f"[{fitted.min():.2f}, {fitted.max():.2f}]")
        scatter_plot(os.path.join(OUT, "extent_recovery.svg"), truth,
                     fitted, title="day-level extent recovery",
                     xlabel="generator extent", ylabel="fitted extent")

    risk = compute_risk_series(ds, TARGET)
    worst = int(np.argmax(risk))
    date = ds.days[worst]
    print(f"\n== simulating scenarios for {date} (risk {risk[worst]:.2f})")
    occ_row, int_rows, dep_row = day_inputs(ds, bundle, date)
    fields, risks = generate_scenarios(bundle, occ_row, int_rows, dep_row,
                                       n=500, seed=7)
    print(f"500 scenarios, risk quartiles "
          f"{np.percentile(risks, [25, 50, 75]).round(2)}")
    print(f"every scenario exceeds the threshold: {(risks >= spec.u).all()}")
    print(f"\nartifacts in {OUT}/")


if __name__ == "__main__":
    main()
