#!/usr/bin/env python3
"""Accuracy and speed of the sparse dependence-score evaluation.

The gradient score needs a D x D precision solve per day; conditioning
each point on its k nearest already-ordered neighbours replaces that
with D small k x k factorizations. This script measures the error
against the dense reference as k grows, then times both routes at a
size where the dense solve hurts.
"""
import time

import numpy as np

from grpboost import (Grid, ScoreGeometry, SemivariogramParams,
                      score_dense_reference, simulate_grp)
from grpboost.brown_resnick import score_eval

ALPHA, THETA, SCALE = 1.0, 1.0, 0.0


def grid_of(n_side):
    xs, ys = np.meshgrid(np.arange(n_side, dtype=float),
                         np.arange(n_side, dtype=float))
    return Grid(xs.ravel(), ys.ravel())


def unit_fields(grid, n, seed=0):
    d = grid.n_points
    params = SemivariogramParams(ALPHA, THETA, SCALE)
    f = simulate_grp(grid, params, b=np.zeros(d),
                     theta_int=np.full(d, np.log(0.7)), m=np.ones(d),
                     xi=-0.3, target_weights=np.full(d, 1.0 / d), u=1.2,
                     n_sims=n, seed=seed)
    return np.exp(np.log1p(-0.3 * f) / -0.3)


def main():
    grid = grid_of(6)                      # D = 36
    z = unit_fields(grid, 40)
    dense = np.array([score_dense_reference(
        zt, THETA, alpha=ALPHA, theta_scale=SCALE, grid=grid)
        for zt in z])
    print("D = 36, 40 simulated exceedance fields")
    print(" k   max relative error vs dense")
    for k in (1, 5, 10, 20, 35):
        geo = ScoreGeometry(grid, ALPHA, SCALE, k)
        loss, _, _ = score_eval(geo.coefficient_table(z),
                                np.full(len(z), THETA), ALPHA)
        err = np.max(np.abs(loss - dense) / np.abs(dense))
        print(f"{k:2d}   {err:.3e}")

    big = grid_of(11)                      # D = 121
    zb = unit_fields(big, 20, seed=1)
    geo = ScoreGeometry(big, ALPHA, SCALE, 20)
    geo.coefficient_table(zb[:1])          # pay one-time factorization
    t0 = time.time()
    for _ in range(3):
        geo.coefficient_table(zb)
    sparse_t = (time.time() - t0) / 3
    t0 = time.time()
    for zt in zb:
        score_dense_reference(zt, THETA, alpha=ALPHA, theta_scale=SCALE,
                              grid=big)
    dense_t = time.time() - t0
    print(f"\nD = 121, 20 fields: sparse k=20 {sparse_t * 1e3:.1f} ms, "
          f"dense {dense_t * 1e3:.1f} ms, "
          f"speedup {dense_t / sparse_t:.0f}x")


if __name__ == "__main__":
    main()
