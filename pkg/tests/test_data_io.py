"""Dataset I/O, preprocessing, configuration and SVG chart tests."""
import datetime as dt
import math
import os

import numpy as np
import pytest

from grpboost.config import ConfigMap
from grpboost.data import (GriddedDataset, detrend, load_dataset, load_grid,
                           load_variable, rolling_mean, save_dataset,
                           save_grid, season_mask, standardized_anomalies)
from grpboost.errors import ConfigError, DataError
from grpboost.spatial import Grid
from grpboost.svgplot import box_plot, line_plot, scatter_plot


def tiny_dataset():
    grid = Grid(np.array([0.0, 1.0]), np.array([0.0, 0.0]))
    days = ["2020-06-01", "2020-06-02", "2020-06-03"]
    resp = np.array([[1.0, 2.0], [3.5, -1.25], [0.0, 7.0]])
    z = np.arange(6.0).reshape(3, 2)
    return GriddedDataset(grid, days, {"response": resp, "z500": z})


class TestDatasetType:
    def test_day_order_enforced(self):
        grid = Grid(np.array([0.0]), np.array([0.0]))
        with pytest.raises(DataError, match="increasing"):
            GriddedDataset(grid, ["2020-06-02", "2020-06-01"],
                           {"response": np.zeros((2, 1))})
        with pytest.raises(DataError, match="increasing"):
            GriddedDataset(grid, ["2020-06-01", "2020-06-01"],
                           {"response": np.zeros((2, 1))})

    def test_shape_enforced(self):
        grid = Grid(np.array([0.0]), np.array([0.0]))
        with pytest.raises(DataError, match="shape"):
            GriddedDataset(grid, ["2020-06-01"],
                           {"response": np.zeros((2, 1))})

    def test_bad_date_rejected(self):
        grid = Grid(np.array([0.0]), np.array([0.0]))
        with pytest.raises(DataError, match="ISO"):
            GriddedDataset(grid, ["06/01/2020"],
                           {"response": np.zeros((1, 1))})

    def test_subset_days(self):
        ds = tiny_dataset()
        sub = ds.subset_days(np.array([0, 2]))
        assert sub.days == ["2020-06-01", "2020-06-03"]
        np.testing.assert_array_equal(sub.variables["z500"],
                                      ds.variables["z500"][[0, 2]])


class TestRoundTrip:
    def test_save_load_bit_identical(self, tmp_path):
        ds = tiny_dataset()
        ds.with_note("detrend", baseline="full")
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        save_dataset(ds, str(d1))
        again = load_dataset(str(d1))
        save_dataset(again, str(d2))
        for name in ("grid.csv", "response.csv", "z500.csv",
                     "provenance.json"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
        assert again.provenance == ds.provenance

    def test_grid_round_trip_with_geo(self, tmp_path):
        grid = Grid(np.array([0.0, 1.0]), np.array([2.0, 3.0]),
                    np.array([-3.5, -1.875]), np.array([48.0, 48.0]))
        path = tmp_path / "grid.csv"
        save_grid(grid, str(path))
        back = load_grid(str(path))
        np.testing.assert_array_equal(back.lon, grid.lon)
        np.testing.assert_array_equal(back.lat, grid.lat)

    def test_missing_cell_named(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("date,id,value\n2020-06-01,0,1.0\n")
        grid = Grid(np.array([0.0, 1.0]), np.array([0.0, 0.0]))
        with pytest.raises(DataError, match=r"2020-06-01, id 1"):
            load_variable(str(path), grid)

    def test_duplicate_cell_line_numbered(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("date,id,value\n"
                        "2020-06-01,0,1.0\n"
                        "2020-06-01,0,2.0\n")
        grid = Grid(np.array([0.0]), np.array([0.0]))
        with pytest.raises(DataError, match="line 3"):
            load_variable(str(path), grid)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("day,id,value\n")
        grid = Grid(np.array([0.0]), np.array([0.0]))
        with pytest.raises(DataError, match="line 1"):
            load_variable(str(path), grid)

    def test_large_load_speed(self, tmp_path):
        import time
        rng = np.random.default_rng(0)
        d, t = 120, 5000
        grid = Grid(np.arange(d, dtype=float), np.zeros(d))
        base = dt.date(2000, 1, 1)
        days = [(base + dt.timedelta(days=i)).isoformat() for i in range(t)]
        ds = GriddedDataset(grid, days, {"response": rng.normal(size=(t, d))})
        save_dataset(ds, str(tmp_path / "big"))
        t0 = time.monotonic()
        back = load_dataset(str(tmp_path / "big"))
        elapsed = time.monotonic() - t0
        assert elapsed < 5.0
        np.testing.assert_array_equal(back.variables["response"],
                                      ds.variables["response"])


class TestDetrend:
    def test_exact_line_zeroed(self):
        t = np.arange(50.0)
        series = (2.0 + 0.3 * t)[:, None]
        out = detrend(series)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_constant_zeroed(self):
        out = detrend(np.full((30, 2), 4.5))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_residual_moments(self):
        rng = np.random.default_rng(1)
        series = rng.normal(size=(200, 3)) + 0.1 * np.arange(200)[:, None]
        out = detrend(series)
        t = np.arange(200.0)
        t -= t.mean()
        assert abs(out.mean()) <= 1e-10
        assert np.all(np.abs(t @ out / (t @ t)) <= 1e-10)

    def test_slope_recovery(self):
        rng = np.random.default_rng(2)
        n = 500
        t = np.arange(n, dtype=float)
        noise = rng.normal(scale=1.0, size=n)
        b = 0.05
        series = (1.0 + b * t + noise)[:, None]
        resid = detrend(series)[:, 0]
        tc = t - t.mean()
        fitted_slope = b + (tc @ noise) / (tc @ tc) - 0.0
        # the removed slope equals the OLS closed form
        removed = (tc @ (series[:, 0] - series.mean())) / (tc @ tc)
        se = 1.0 / math.sqrt(tc @ tc)
        assert abs(removed - b) <= 4 * se
        assert abs(removed - fitted_slope) <= 1e-12
        assert abs(resid.mean()) <= 1e-10


def june_august_days(years):
    days = []
    for y in years:
        d = dt.date(y, 6, 1)
        while d.month <= 8:
            days.append(d)
            d += dt.timedelta(days=1)
    return days


class TestStandardizedAnomalies:
    def test_own_climatology_is_zero(self):
        # one value per day-of-year in each year, same across years:
        # anomaly of the climatology itself is 0/SD only if SD > 0, so
        # add year-dependent wiggle with zero mean instead
        dates = june_august_days([2000, 2001, 2002, 2003])
        doy = np.array([d.timetuple().tm_yday for d in dates])
        year = np.array([d.year for d in dates])
        wiggle = {2000: -1.5, 2001: 0.5, 2002: 0.5, 2003: 0.5}
        vals = (np.sin(doy / 20.0)
                + np.array([wiggle[y] for y in year]))[:, None]
        out = standardized_anomalies(vals, dates, (2000, 2003), window=31)
        # symmetric construction: mean anomaly over reference years ~ 0
        assert abs(out.mean()) < 0.2

    def test_climatology_plus_c_sd_gives_c(self):
        # recover mu, sigma for one evaluation day through the public
        # interface, then check anomaly(mu + c*sigma) = c exactly
        rng = np.random.default_rng(3)
        dates = june_august_days([2000, 2001, 2002, 2010])
        n = len(dates)
        base = rng.normal(size=(n, 1))
        probe = n - 10                       # a 2010 day, outside reference

        def anomaly_of(value):
            v = base.copy()
            v[probe, 0] = value
            return standardized_anomalies(v, dates, (2000, 2002))[probe, 0]

        a0, a1 = anomaly_of(0.0), anomaly_of(1.0)
        sigma = 1.0 / (a1 - a0)
        mu = -a0 * sigma
        c = 2.75
        assert anomaly_of(mu + c * sigma) == pytest.approx(c, abs=1e-9)

    def test_seasonal_cycle_standardizes(self):
        dates = june_august_days(range(1991, 2021))
        doy = np.array([d.timetuple().tm_yday for d in dates])
        rng = np.random.default_rng(4)
        # annual-period cycle: intra-window drift stays small next to
        # the noise, the regime the running-window convention assumes
        vals = (10.0 + 3.0 * np.sin(2 * np.pi * doy / 365.0)
                + rng.normal(scale=2.0, size=len(dates)))[:, None]
        out = standardized_anomalies(vals, dates, (1991, 2020))
        ref_years = np.array([d.year for d in dates])
        sel = (ref_years >= 1991) & (ref_years <= 2020)
        m = out[sel].mean()
        s = out[sel].std()
        n = sel.sum()
        assert abs(m) <= 3.0 / math.sqrt(n)
        assert abs(s - 1.0) <= 0.1

    def test_no_reference_days_rejected(self):
        dates = june_august_days([2000])
        with pytest.raises(DataError, match="reference"):
            standardized_anomalies(np.zeros((len(dates), 1)), dates,
                                   (1990, 1995))

    def test_zero_sd_reported(self):
        dates = june_august_days([2000, 2001])
        vals = np.ones((len(dates), 1))
        with pytest.raises(DataError, match="zero climatological SD"):
            standardized_anomalies(vals, dates, (2000, 2001))

    def test_even_window_rejected(self):
        dates = june_august_days([2000])
        with pytest.raises(ConfigError):
            standardized_anomalies(np.zeros((len(dates), 1)), dates,
                                   (2000, 2000), window=30)


class TestRollingMean:
    def test_all_ones(self):
        out = rolling_mean(np.ones((10, 2)), 3)
        assert np.isnan(out[:3]).all()
        np.testing.assert_allclose(out[3:], 1.0)

    def test_width_one_is_lag(self):
        series = np.arange(5.0)[:, None]
        out = rolling_mean(series, 1)
        assert np.isnan(out[0, 0])
        np.testing.assert_allclose(out[1:, 0], series[:-1, 0])

    def test_matches_recomputation(self):
        rng = np.random.default_rng(5)
        series = rng.normal(size=(40, 3))
        width = 5
        out = rolling_mean(series, width)
        for t in range(40):
            if t < width:
                assert np.isnan(out[t]).all()
            else:
                np.testing.assert_allclose(
                    out[t], series[t - width:t].mean(axis=0), atol=1e-12)

    def test_include_current(self):
        series = np.arange(6.0)[:, None]
        out = rolling_mean(series, 2, include_current=True)
        assert np.isnan(out[0, 0])
        np.testing.assert_allclose(out[1:, 0], [0.5, 1.5, 2.5, 3.5, 4.5])

    def test_bad_width(self):
        with pytest.raises(ConfigError):
            rolling_mean(np.ones((3, 1)), 0)


class TestSeasonMask:
    def test_summer_filter(self):
        dates = [dt.date(2020, m, 15) for m in range(1, 13)]
        mask = season_mask(dates, (6, 7, 8))
        assert mask.sum() == 3
        assert mask[5] and mask[6] and mask[7]


class TestConfigMap:
    def test_parse_and_access(self):
        text = """
        # comment
        paths.data = /tmp/x
        model.risk_level = 0.95
        model.k = 20
        region.target = 3,4,5
        flags.prefit = true
        """
        cfg = ConfigMap.parse(text)
        assert cfg.get_str("paths.data") == "/tmp/x"
        assert cfg.get_float("model.risk_level") == 0.95
        assert cfg.get_int("model.k") == 20
        np.testing.assert_array_equal(cfg.get_int_list("region.target"),
                                      [3, 4, 5])
        assert cfg.get_bool("flags.prefit") is True
        assert cfg.get_float("absent", 1.5) == 1.5

    def test_errors(self):
        with pytest.raises(ConfigError, match="line 1"):
            ConfigMap.parse("no equals sign")
        with pytest.raises(ConfigError, match="duplicate"):
            ConfigMap.parse("a = 1\na = 2")
        cfg = ConfigMap.parse("a = x")
        with pytest.raises(ConfigError, match="not a number"):
            cfg.get_float("a")
        with pytest.raises(ConfigError, match="missing required"):
            cfg.get_str("b", required=True)

    def test_train_config_section(self):
        cfg = ConfigMap.parse("fit.occ.n_trees = 50\nfit.occ.max_depth = 3")
        tc = cfg.train_config("fit.occ")
        assert tc.n_trees == 50
        assert tc.max_depth == 3
        assert tc.learning_rate == 0.05

    def test_save_load_round_trip(self, tmp_path):
        cfg = ConfigMap.parse("b = 2\na = 1")
        path = tmp_path / "run.cfg"
        cfg.save(str(path))
        text = path.read_text()
        assert text == "a = 1\nb = 2\n"
        back = ConfigMap.load(str(path))
        assert back.entries == cfg.entries

    def test_unused_keys(self):
        cfg = ConfigMap.parse("a = 1\nb = 2")
        cfg.get_int("a")
        assert cfg.unused_keys() == ["b"]


class TestSvgPlots:
    def test_line_plot_deterministic(self, tmp_path):
        x = np.linspace(0, 1, 20)
        series = {"train": (x, x ** 2), "valid": (x, x ** 1.5)}
        p1, p2 = tmp_path / "a.svg", tmp_path / "b.svg"
        line_plot(str(p1), series, "curves", "x", "loss")
        line_plot(str(p2), series, "curves", "x", "loss")
        body = p1.read_text()
        assert body == p2.read_text()
        assert body.startswith("<svg")
        assert "data-table" in body
        assert "train,0,0" in body          # embedded table rows

    def test_scatter_with_bands(self, tmp_path):
        x = np.linspace(1, 2, 10)
        path = tmp_path / "qq.svg"
        scatter_plot(str(path), x, x * 1.02, "qq", "model", "empirical",
                     bands=(x * 0.9, x * 1.1), diagonal=True)
        body = path.read_text()
        assert body.count("<circle") == 10
        assert "lower,upper" in body

    def test_box_plot(self, tmp_path):
        boxes = [{"lo": 0.0, "q1": 1.0, "median": 1.5, "q3": 2.0, "hi": 3.0},
                 {"lo": 1.0, "q1": 2.0, "median": 2.5, "q3": 3.0, "hi": 4.0}]
        path = tmp_path / "box.svg"
        box_plot(str(path), np.array([1.0, 2.0]), boxes, "study",
                 truth=np.array([1.4, 2.6]))
        body = path.read_text()
        assert body.count("<rect") >= 3     # frame + two boxes
        assert "truth" in body

    def test_empty_series_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            line_plot(str(tmp_path / "x.svg"), {}, "t")
