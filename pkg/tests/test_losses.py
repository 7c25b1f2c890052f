"""Loss adapter tests.

Closed-form spot values, finite-difference derivative checks through
the engine hook, GPD estimator recovery on simulated data, and a
proper-scoring check that the dependence score is minimized at the
generating range parameter.
"""
import math

import numpy as np
import pytest

from grpboost.boosting import check_gradients
from grpboost.brown_resnick import (ScoreGeometry, SemivariogramParams,
                                    grp_gradient_score, simulate_grp)
from grpboost.errors import ConfigError, DataError, NumericError
from grpboost.losses import (DependenceScoreLoss, GPDFit, GPDLoss,
                             OccurrenceLoss, dump_diagnostics, gpd_mle,
                             gpd_pwm, transform_to_z)
from grpboost.spatial import Grid

XI = -0.3


class TestOccurrenceLoss:
    def test_known_values(self):
        loss = OccurrenceLoss(np.array([1.0]))
        pred = np.zeros(1)
        assert loss.loss(pred) == pytest.approx(math.log(2.0))
        g, h = loss.grad_hess(pred)
        assert g[0] == pytest.approx(-0.5)
        assert h[0] == pytest.approx(0.25)

    def test_confident_correct_loss_vanishes(self):
        loss = OccurrenceLoss(np.array([0.0]))
        assert loss.loss(np.array([-40.0])) < 1e-15

    def test_labels_validated(self):
        with pytest.raises(DataError):
            OccurrenceLoss(np.array([0.0, 0.5]))

    def test_finite_difference(self):
        rng = np.random.default_rng(3)
        y = (rng.uniform(size=40) < 0.4).astype(float)
        g_err, h_err = check_gradients(OccurrenceLoss(y), seed=1)
        assert g_err <= 1e-6
        assert h_err <= 1e-6

    def test_subset_and_groups(self):
        y = np.array([0.0, 1.0, 1.0, 0.0])
        groups = np.array([7, 7, 9, 9])
        loss = OccurrenceLoss(y, groups)
        sub = loss.subset(np.array([1, 2]))
        assert sub.n_rows == 2
        np.testing.assert_array_equal(sub.groups, [7, 9])
        assert sub.loss(np.zeros(2)) == pytest.approx(2 * math.log(2.0))


class TestGPDPWM:
    def test_hand_case(self):
        # x = (1,2,3,4): b0 = 2.5, b1 = 5/6, so sigma = 5 and xi = -1
        sigma, xi = gpd_pwm(np.array([1.0, 2.0, 3.0, 4.0]))
        assert sigma == pytest.approx(5.0)
        assert xi == pytest.approx(-1.0)

    def test_order_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.exponential(size=50)
        sa, xa = gpd_pwm(x)
        sb, xb = gpd_pwm(x[::-1].copy())
        assert sa == pytest.approx(sb)
        assert xa == pytest.approx(xb)

    def test_degenerate_rejected(self):
        with pytest.raises(DataError):
            gpd_pwm(np.array([2.0, 2.0, 2.0]))
        with pytest.raises(DataError):
            gpd_pwm(np.array([1.0]))


def gpd_sample(n, sigma, xi, rng):
    u = rng.uniform(size=n)
    return sigma * ((1.0 - u) ** (-xi) - 1.0) / xi


class TestGPDMLE:
    def test_exponential_recovery(self):
        rng = np.random.default_rng(42)
        x = rng.exponential(scale=1.0, size=5000)
        fit = gpd_mle(x)
        assert fit.method == "mle"
        assert -0.05 < fit.xi < 0.05
        assert 0.95 < fit.sigma < 1.05
        assert fit.grad_norm <= 1e-6

    def test_negative_shape_recovery(self):
        rng = np.random.default_rng(43)
        x = gpd_sample(5000, 1.0, XI, rng)
        fit = gpd_mle(x)
        # 4 asymptotic standard errors for (sigma, xi) at xi = -0.3
        n = 5000
        se_xi = math.sqrt((1 - XI) ** 2 * (1 + XI) / n)
        se_sigma = math.sqrt(2 * (1 - XI) / n)
        assert abs(fit.xi - XI) <= 4 * se_xi
        assert abs(fit.sigma - 1.0) <= 4 * se_sigma
        assert fit.method == "mle"

    def test_small_sample_falls_back_to_pwm(self):
        rng = np.random.default_rng(44)
        fit = gpd_mle(rng.exponential(size=6))
        assert fit.method == "pwm"

    def test_degenerate_rejected(self):
        with pytest.raises(DataError):
            gpd_mle(np.full(30, 1.5))
        with pytest.raises(DataError):
            gpd_mle(np.array([]))
        with pytest.raises(DataError):
            gpd_mle(np.array([1.0, -2.0, 3.0]))

    def test_frozen_result(self):
        fit = GPDFit(sigma=1.0, xi=-0.2, method="pwm", grad_norm=0.0)
        with pytest.raises(AttributeError):
            fit.sigma = 2.0


class TestGPDLoss:
    def make_loss(self, y, b, m=2.0, xi=XI):
        y = np.asarray(y, dtype=float)
        b = np.asarray(b, dtype=float)
        return GPDLoss(y, b, np.full_like(y, m), xi)

    def test_known_value(self):
        # theta = ln 0.4 with m = 2 gives scale a = 0.4 + 0.6 = 1
        loss = self.make_loss([0.5], [0.0])
        theta = np.array([math.log(0.4)])
        want = (XI + 1) / XI * math.log(1.0 + XI * 0.5)
        assert loss.loss(theta) == pytest.approx(want, abs=1e-12)

    def test_excess_at_zero_leaves_scale_term(self):
        # just above the threshold the loss approaches ln a
        loss = self.make_loss([1e-12], [0.0])
        theta = np.array([math.log(0.4)])
        assert loss.loss(theta) == pytest.approx(0.0, abs=1e-9)  # ln 1

    def test_rows_at_or_below_threshold_are_inert(self):
        loss = self.make_loss([1.0, 0.5, -3.0], [1.0, 0.0, 0.0])
        theta = np.zeros(3)
        g, h = loss.grad_hess(theta)
        assert g[0] == 0.0 and h[0] == 0.0
        assert g[2] == 0.0 and h[2] == 0.0
        assert g[1] != 0.0

    def test_location_equivariance(self):
        rng = np.random.default_rng(6)
        y = rng.uniform(0.1, 1.5, size=20)
        theta = rng.normal(scale=0.3, size=20)
        a = self.make_loss(y, np.zeros(20))
        bshift = self.make_loss(y + 7.25, np.full(20, 7.25))
        assert a.loss(theta) == pytest.approx(bshift.loss(theta))
        ga, ha = a.grad_hess(theta)
        gb, hb = bshift.grad_hess(theta)
        np.testing.assert_allclose(ga, gb)
        np.testing.assert_allclose(ha, hb)

    def test_finite_difference(self):
        rng = np.random.default_rng(7)
        n = 30
        y = rng.uniform(0.05, 1.8, size=n)   # excesses < m = 2, support safe
        loss = self.make_loss(y, np.zeros(n))
        g_err, h_err = check_gradients(loss, seed=2)
        assert g_err <= 1e-4
        assert h_err <= 1e-4

    def test_support_violation_raises(self):
        # excess beyond a/|xi| for the given theta
        loss = self.make_loss([10.0], [0.0])
        with pytest.raises(NumericError, match="row 0"):
            loss.loss(np.array([math.log(0.1)]))

    def test_nonpositive_scale_raises(self):
        y = np.array([0.5])
        loss = GPDLoss(y, np.zeros(1), np.full(1, 2.0), 0.4)
        # a = exp(theta) - 2 * 0.4 <= 0 for small theta
        with pytest.raises(NumericError, match="scale"):
            loss.loss(np.array([-3.0]))

    def test_bound_must_be_positive(self):
        with pytest.raises(ConfigError):
            GPDLoss(np.array([0.5]), np.zeros(1), np.array([-2.0]), XI)

    def test_subset(self):
        y = np.array([0.5, 0.7, 0.2])
        loss = self.make_loss(y, np.zeros(3))
        sub = loss.subset(np.array([2, 0]))
        theta = np.array([0.1, -0.2])
        full = loss.row_losses(np.array([-0.2, 0.0, 0.1]))
        assert sub.loss(theta) == pytest.approx(full[2] + full[0])


class TestTransformToZ:
    def test_threshold_maps_to_one(self):
        z = transform_to_z(np.array([4.0]), np.array([4.0]),
                           np.array([0.3]), XI)
        assert z[0] == pytest.approx(1.0)

    def test_beyond_endpoint_truncates_to_zero(self):
        # with xi < 0 the bracket goes nonpositive past the upper
        # endpoint; such rows are zeroed so later stages skip them
        z = transform_to_z(np.array([50.0]), np.array([0.0]),
                           np.array([0.0]), XI)
        assert z[0] == 0.0

    def test_known_value(self):
        z = transform_to_z(np.array([1.0]), np.array([0.0]),
                           np.array([0.0]), XI)
        assert z[0] == pytest.approx(0.7 ** (-10.0 / 3.0))

    def test_gpd_scale_switch(self):
        y = np.array([1.0])
        b = np.array([0.0])
        theta = np.array([0.2])
        m = np.array([2.0])
        plain = transform_to_z(y, b, theta, XI)
        shifted = transform_to_z(y, b, theta, XI, use_gpd_scale=True, m=m)
        a = math.exp(0.2) - 2.0 * XI
        assert shifted[0] == pytest.approx((1.0 + XI / a) ** (1.0 / XI))
        assert plain[0] == pytest.approx((1.0 + XI / math.exp(0.2)) ** (1.0 / XI))
        assert shifted[0] != plain[0]

    def test_zero_shape_rejected(self):
        with pytest.raises(ConfigError):
            transform_to_z(np.array([1.0]), np.zeros(1), np.zeros(1), 0.0)

    def test_gpd_scale_requires_bound(self):
        with pytest.raises(ConfigError):
            transform_to_z(np.array([1.0]), np.zeros(1), np.zeros(1), XI,
                           use_gpd_scale=True)


def small_grid(nx=3, ny=3, step=1.0):
    xs, ys = np.meshgrid(np.arange(nx) * step, np.arange(ny) * step)
    return Grid(xs.ravel(), ys.ravel())


def simulate_z_days(grid, params, n_days, seed, u=1.2):
    """Unit-scale fields from the generating process.

    With b = 0 and marginal scale 1 the standardized field equals the
    underlying unit-Pareto-like profile, so no fitted margins enter.
    """
    d = grid.n_points
    m = np.full(d, 1.0)
    # exp(theta) - m*xi = 1, so the marginal scale is exactly one
    theta_int = np.full(d, math.log(1.0 + m[0] * XI))
    w = np.full(d, 1.0 / d)
    fields = simulate_grp(grid, params, b=np.zeros(d), theta_int=theta_int,
                          m=m, xi=XI, target_weights=w, u=u,
                          n_sims=n_days, seed=seed)
    z = np.exp(np.log1p(XI * fields) / XI)
    return z


class TestDependenceScoreLoss:
    PARAMS = SemivariogramParams(alpha=1.27, theta_extent=0.4,
                                 theta_scale=-0.07)

    def test_matches_direct_score(self):
        grid = small_grid()
        z = simulate_z_days(grid, self.PARAMS, 6, seed=77)
        loss = DependenceScoreLoss(z, grid, alpha=1.27, theta_scale=-0.07,
                                   vecchia_k=4)
        rng = np.random.default_rng(8)
        theta = rng.normal(0.4, 0.1, size=loss.n_rows)
        want_total = 0.0
        want_g = np.empty(loss.n_rows)
        want_h = np.empty(loss.n_rows)
        geom = ScoreGeometry(grid, alpha=1.27, theta_scale=-0.07, k=4)
        for i in range(loss.n_rows):
            li, gi, hi = grp_gradient_score(z[i], theta[i], alpha=1.27,
                                            theta_scale=-0.07, grid=grid,
                                            vecchia_k=4, geometry=geom)
            want_total += li
            want_g[i] = gi
            want_h[i] = hi
        assert loss.loss(theta) == pytest.approx(want_total, rel=1e-12)
        g, h = loss.grad_hess(theta)
        np.testing.assert_allclose(g, want_g, rtol=1e-12)
        np.testing.assert_allclose(h, want_h, rtol=1e-12)

    def test_subset_slices_days(self):
        grid = small_grid()
        z = simulate_z_days(grid, self.PARAMS, 5, seed=78)
        loss = DependenceScoreLoss(z, grid, alpha=1.27, theta_scale=-0.07,
                                   vecchia_k=4)
        sub = loss.subset(np.array([4, 1]))
        assert sub.n_rows == 2
        theta = np.array([0.3, 0.5])
        full_theta = np.full(5, np.nan)
        full_theta[4], full_theta[1] = theta
        g_full, _ = loss.grad_hess(np.nan_to_num(full_theta, nan=0.0))
        g_sub, _ = sub.grad_hess(theta)
        assert g_sub[0] == pytest.approx(g_full[4])
        assert g_sub[1] == pytest.approx(g_full[1])

    def test_finite_difference(self):
        grid = small_grid()
        z = simulate_z_days(grid, self.PARAMS, 12, seed=79)
        loss = DependenceScoreLoss(z, grid, alpha=1.27, theta_scale=-0.07,
                                   vecchia_k=4)
        g_err, h_err = check_gradients(loss, seed=3)
        assert g_err <= 1e-4
        assert h_err <= 1e-4

    def test_proper_scoring_minimized_at_truth(self):
        # mean score over many generated days must dip at the true
        # range parameter within Monte Carlo resolution
        grid = small_grid()
        true_theta = 0.4
        z = simulate_z_days(grid, self.PARAMS, 2000, seed=80)
        loss = DependenceScoreLoss(z, grid, alpha=1.27, theta_scale=-0.07,
                                   vecchia_k=8)
        grid_t = np.linspace(true_theta - 0.5, true_theta + 0.5, 21)
        curve = [loss.loss(np.full(loss.n_rows, t)) for t in grid_t]
        best = grid_t[int(np.argmin(curve))]
        assert abs(best - true_theta) <= 0.101

    def test_weight_function_changes_score(self):
        grid = small_grid()
        z = simulate_z_days(grid, self.PARAMS, 4, seed=81)
        plain = DependenceScoreLoss(z, grid, alpha=1.27, theta_scale=-0.07,
                                    vecchia_k=4)
        bounded = DependenceScoreLoss(
            z, grid, alpha=1.27, theta_scale=-0.07, vecchia_k=4,
            weight=(lambda v: v / (1.0 + v),
                    lambda v: 1.0 / (1.0 + v) ** 2))
        theta = np.full(plain.n_rows, 0.4)
        assert plain.loss(theta) != pytest.approx(bounded.loss(theta))


class TestDiagnosticsDump:
    def test_writes_csv(self, tmp_path):
        path = tmp_path / "diag.csv"
        loss = OccurrenceLoss(np.array([1.0, 0.0]))
        dump_diagnostics(loss, np.array([0.0, 0.0]), str(path))
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "row,loss,grad,hess"
        assert len(lines) == 3
        row1 = lines[1].split(",")
        assert float(row1[1]) == pytest.approx(math.log(2.0))
        assert float(row1[2]) == pytest.approx(-0.5)
