"""Three-sub-model orchestration.

Threshold selection fixes the exceedance geometry (u, per-point b,
GPD margins), predictor assembly builds the per-sub-model design
matrices, and fitting proceeds sequentially: occurrence, intensity,
marginal standardization, spatial dependence. A fitted bundle is an
immutable JSON-serializable artifact.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .boosting import TrainConfig, TreeEnsemble, boost, cross_validate
from .brown_resnick import ScoreGeometry, simulate_grp
from .data import GriddedDataset, _atomic_write
from .errors import ConfigError, DataError, NumericError
from .losses import (DependenceScoreLoss, GPDLoss, OccurrenceLoss, gpd_mle,
                     transform_to_z)
from .spatial import Grid, SemivariogramParams

_BUNDLE_FORMAT = 1


@dataclass(frozen=True)
class ThresholdSpec:
    u: float
    q_prime: float
    b: np.ndarray
    m: np.ndarray
    sigma_hat: np.ndarray
    xi_hat: np.ndarray
    risk_level: float
    n_exceedances: int
    m_fallback: np.ndarray    # True where xi_hat >= 0 forced a bound

    def to_dict(self) -> dict:
        return {
            "u": self.u, "q_prime": self.q_prime,
            "b": self.b.tolist(), "m": self.m.tolist(),
            "sigma_hat": self.sigma_hat.tolist(),
            "xi_hat": self.xi_hat.tolist(),
            "risk_level": self.risk_level,
            "n_exceedances": self.n_exceedances,
            "m_fallback": [bool(v) for v in self.m_fallback],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSpec":
        return cls(u=float(d["u"]), q_prime=float(d["q_prime"]),
                   b=np.array(d["b"], dtype=float),
                   m=np.array(d["m"], dtype=float),
                   sigma_hat=np.array(d["sigma_hat"], dtype=float),
                   xi_hat=np.array(d["xi_hat"], dtype=float),
                   risk_level=float(d["risk_level"]),
                   n_exceedances=int(d["n_exceedances"]),
                   m_fallback=np.array(d["m_fallback"], dtype=bool))


def compute_risk_series(dataset: GriddedDataset, target_region: np.ndarray,
                        variable: str = "response") -> np.ndarray:
    """Per-day risk: the spatial mean of the response over the target."""
    target = np.asarray(target_region, dtype=int)
    if len(target) == 0:
        raise ConfigError("target region must be nonempty")
    if len(np.unique(target)) != len(target):
        raise ConfigError("target region has duplicate ids")
    if target.min() < 0 or target.max() >= dataset.grid.n_points:
        raise ConfigError("target region ids outside the grid")
    if variable not in dataset.variables:
        raise DataError(f"variable {variable!r} not in dataset")
    return dataset.variables[variable][:, target].mean(axis=1)


def select_thresholds(dataset: GriddedDataset, target_region: np.ndarray,
                      risk_level: float = 0.95,
                      variable: str = "response",
                      min_mle: int = 10) -> ThresholdSpec:
    """Risk threshold, per-point thresholds and GPD margins.

    u is the empirical risk_level quantile of the risk series. The
    marginal level q' is found by bisection so that the spatial mean
    of the per-point q'-quantiles over exceedance days equals u. Each
    point's excesses over b_d get a GPD fit; the upper-bound
    correction is m_d = sigma_d / |xi_d|. A nonnegative fitted shape
    has no finite endpoint, so those points fall back to five times
    the largest observed excess and are flagged.
    """
    if not 0.0 < risk_level < 1.0:
        raise ConfigError("risk_level must lie in (0, 1)")
    y = dataset.variables.get(variable)
    if y is None:
        raise DataError(f"variable {variable!r} not in dataset")
    if np.isnan(y).any():
        raise DataError("response contains NaN; preprocess first")
    if dataset.n_days < 100:
        raise DataError(
            f"threshold selection needs at least 100 days, "
            f"got {dataset.n_days}")
    target = np.asarray(target_region, dtype=int)
    risk = compute_risk_series(dataset, target, variable)
    u = float(np.quantile(risk, risk_level))
    exceed = risk >= u
    n_exc = int(exceed.sum())
    y_exc = y[exceed]                      # (n_exc, D)

    def r_of_b(q: float) -> tuple[float, np.ndarray]:
        b = np.quantile(y_exc, q, axis=0)
        return float(b[target].mean()), b

    r_lo, _ = r_of_b(0.0)
    r_hi, _ = r_of_b(1.0)
    if np.all(np.ptp(y_exc, axis=1) == 0):
        # spatially flat fields: r(b) >= u for every level, so the
        # crossing does not exist; fall back to the risk level itself
        q_prime = risk_level
        _, b = r_of_b(q_prime)
    elif r_lo > u or r_hi < u:
        raise NumericError(
            f"threshold bisection cannot bracket u={u!r}: achievable "
            f"r(b) range is [{r_lo!r}, {r_hi!r}]")
    else:
        lo, hi = 0.0, 1.0
        tol = 1e-9 * (1.0 + abs(u))
        q_prime, b = 0.5, None
        for _ in range(200):
            q_prime = 0.5 * (lo + hi)
            val, b = r_of_b(q_prime)
            if abs(val - u) <= tol:
                break
            if val < u:
                lo = q_prime
            else:
                hi = q_prime
        else:
            raise NumericError(
                "threshold bisection failed to reach tolerance")

    d = dataset.grid.n_points
    sigma = np.full(d, np.nan)
    xi = np.full(d, np.nan)
    m = np.empty(d)
    fallback = np.zeros(d, dtype=bool)
    for pt in range(d):
        excess = y_exc[:, pt] - b[pt]
        excess = excess[excess > 0]
        if len(excess) < 2 or np.ptp(excess) == 0:
            # nothing to fit; the bound only matters where excesses exist
            m[pt] = float(excess.max()) * 5.0 if len(excess) else 1.0
            fallback[pt] = True
            continue
        fit = gpd_mle(excess, min_mle=min_mle)
        sigma[pt] = fit.sigma
        xi[pt] = fit.xi
        cand = fit.sigma / abs(fit.xi) if fit.xi < 0 else np.inf
        if fit.xi < 0 and cand > excess.max():
            m[pt] = cand
        else:
            # no finite endpoint, or a fitted endpoint below the data
            # (possible for moment-based fits): keep the loss feasible
            m[pt] = float(excess.max()) * 5.0
            fallback[pt] = True
    return ThresholdSpec(u=u, q_prime=float(q_prime), b=b, m=m,
                         sigma_hat=sigma, xi_hat=xi,
                         risk_level=risk_level, n_exceedances=n_exc,
                         m_fallback=fallback)


# ----------------------------------------------------------------------
# predictor assembly


def rectangle_partition(grid: Grid) -> list[np.ndarray]:
    """Axis-aligned 2x2 split of the bounding box into four id sets."""
    xmid = 0.5 * (grid.x.min() + grid.x.max())
    ymid = 0.5 * (grid.y.min() + grid.y.max())
    quads = []
    for ywest in (False, True):
        for xwest in (False, True):
            sel = ((grid.x <= xmid) == xwest) & ((grid.y <= ymid) == ywest)
            quads.append(np.flatnonzero(sel))
    return quads


@dataclass(frozen=True)
class PredictorSchema:
    target_region: np.ndarray
    z500_var: str = "z500"
    sm_var: str = "sm"
    response_var: str = "response"
    rectangles: tuple = ()      # four id arrays, filled by make_schema

    def to_dict(self) -> dict:
        return {"target_region": [int(i) for i in self.target_region],
                "z500_var": self.z500_var, "sm_var": self.sm_var,
                "response_var": self.response_var,
                "rectangles": [[int(i) for i in r] for r in self.rectangles]}

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorSchema":
        return cls(target_region=np.array(d["target_region"], dtype=int),
                   z500_var=d["z500_var"], sm_var=d["sm_var"],
                   response_var=d["response_var"],
                   rectangles=tuple(np.array(r, dtype=int)
                                    for r in d["rectangles"]))


def make_schema(grid: Grid, target_region: np.ndarray,
                z500_var: str = "z500", sm_var: str = "sm",
                response_var: str = "response") -> PredictorSchema:
    return PredictorSchema(
        target_region=np.asarray(target_region, dtype=int),
        z500_var=z500_var, sm_var=sm_var, response_var=response_var,
        rectangles=tuple(rectangle_partition(grid)))


@dataclass
class PredictorTables:
    occurrence: np.ndarray          # (T, D + 1)
    dependence: np.ndarray          # (T, D + 4)
    occ_names: list[str]
    int_names: list[str]
    dep_names: list[str]
    _z500: np.ndarray
    _sm: np.ndarray
    _grid: Grid

    def intensity_day(self, t: int) -> np.ndarray:
        """(D, p) rows for one day: Z500 field, local SM, lat, lon."""
        d = self._grid.n_points
        lat = self._grid.lat if self._grid.lat is not None else self._grid.y
        lon = self._grid.lon if self._grid.lon is not None else self._grid.x
        rows = np.empty((d, d + 3))
        rows[:, :d] = self._z500[t][None, :]
        rows[:, d] = self._sm[t]
        rows[:, d + 1] = lat
        rows[:, d + 2] = lon
        return rows

    def anchors(self, which: str) -> np.ndarray:
        """Grid id each feature refers to, -1 for non-spatial ones."""
        d = self._grid.n_points
        spatial = np.arange(d)
        if which == "occurrence":
            return np.concatenate([spatial, [-1]])
        if which == "intensity":
            return np.concatenate([spatial, [-1, -1, -1]])
        if which == "dependence":
            return np.concatenate([spatial, [-1, -1, -1, -1]])
        raise ConfigError(f"unknown sub-model {which!r}")


def assemble_predictors(dataset: GriddedDataset,
                        schema: PredictorSchema) -> PredictorTables:
    for var in (schema.z500_var, schema.sm_var):
        if var not in dataset.variables:
            raise DataError(
                f"predictor variable {var!r} missing from dataset")
    z500 = dataset.variables[schema.z500_var]
    sm = dataset.variables[schema.sm_var]
    d = dataset.grid.n_points
    t = dataset.n_days
    occ = np.empty((t, d + 1))
    occ[:, :d] = z500
    occ[:, d] = sm[:, schema.target_region].mean(axis=1)
    dep = np.empty((t, d + 4))
    dep[:, :d] = z500
    for k, rect in enumerate(schema.rectangles):
        if len(rect) == 0:
            dep[:, d + k] = np.nan
        else:
            dep[:, d + k] = sm[:, rect].mean(axis=1)
    zn = [f"z500_{i:03d}" for i in range(d)]
    return PredictorTables(
        occurrence=occ, dependence=dep,
        occ_names=zn + ["sm_target_mean"],
        int_names=zn + ["sm_local", "lat", "lon"],
        dep_names=zn + [f"sm_rect_{k}" for k in range(4)],
        _z500=z500, _sm=sm, _grid=dataset.grid)


# ----------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitSettings:
    target_region: np.ndarray
    risk_level: float = 0.95
    xi: float = -0.3
    alpha: float = 1.27
    theta_scale: float = -0.07
    vecchia_k: int = 20
    occurrence: TrainConfig = field(default_factory=lambda: TrainConfig(200))
    intensity: TrainConfig = field(default_factory=lambda: TrainConfig(200))
    dependence: TrainConfig = field(default_factory=lambda: TrainConfig(200))
    n_folds: int = 5
    response_var: str = "response"
    z500_var: str = "z500"
    sm_var: str = "sm"
    prefit_dependence: bool = False


@dataclass
class SubModelBundle:
    occurrence: TreeEnsemble
    intensity: TreeEnsemble
    dependence: TreeEnsemble
    thresholds: ThresholdSpec
    xi: float
    alpha: float
    theta_scale: float
    vecchia_k: int
    grid: Grid
    schema: PredictorSchema
    meta: dict

    def to_json(self) -> str:
        doc = {
            "format": _BUNDLE_FORMAT,
            "occurrence": json.loads(self.occurrence.to_json()),
            "intensity": json.loads(self.intensity.to_json()),
            "dependence": json.loads(self.dependence.to_json()),
            "thresholds": self.thresholds.to_dict(),
            "xi": self.xi, "alpha": self.alpha,
            "theta_scale": self.theta_scale, "vecchia_k": self.vecchia_k,
            "grid": {
                "x": self.grid.x.tolist(), "y": self.grid.y.tolist(),
                "lon": None if self.grid.lon is None else self.grid.lon.tolist(),
                "lat": None if self.grid.lat is None else self.grid.lat.tolist(),
            },
            "schema": self.schema.to_dict(),
            "meta": self.meta,
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SubModelBundle":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataError(f"bundle is not valid JSON: {e}")
        if doc.get("format") != _BUNDLE_FORMAT:
            raise DataError(
                f"unsupported bundle format {doc.get('format')!r}")
        g = doc["grid"]
        grid = Grid(np.array(g["x"]), np.array(g["y"]),
                    None if g["lon"] is None else np.array(g["lon"]),
                    None if g["lat"] is None else np.array(g["lat"]))
        return cls(
            occurrence=TreeEnsemble.from_json(json.dumps(doc["occurrence"])),
            intensity=TreeEnsemble.from_json(json.dumps(doc["intensity"])),
            dependence=TreeEnsemble.from_json(json.dumps(doc["dependence"])),
            thresholds=ThresholdSpec.from_dict(doc["thresholds"]),
            xi=float(doc["xi"]), alpha=float(doc["alpha"]),
            theta_scale=float(doc["theta_scale"]),
            vecchia_k=int(doc["vecchia_k"]), grid=grid,
            schema=PredictorSchema.from_dict(doc["schema"]),
            meta=doc["meta"])

    def save(self, path: str) -> None:
        _atomic_write(path, self.to_json() + "\n")

    @classmethod
    def load(cls, path: str) -> "SubModelBundle":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(f.read())


def _cv_then_fit(x, loss, config: TrainConfig, n_folds: int, names,
                 stage: str):
    try:
        cv = cross_validate(x, loss, config, n_folds=n_folds)
        chosen = dataclasses.replace(config, n_trees=cv.n_trees)
        ens = boost(x, loss, chosen, feature_names=list(names))
    except (ConfigError, DataError, NumericError) as e:
        raise type(e)(f"{stage} stage: {e}")
    return ens, cv


def exceedance_mask(dataset: GriddedDataset, settings: FitSettings,
                    thresholds: ThresholdSpec) -> np.ndarray:
    risk = compute_risk_series(dataset, settings.target_region,
                               settings.response_var)
    return risk >= thresholds.u


def standardized_fields(dataset: GriddedDataset, bundle_like,
                        tables: PredictorTables,
                        exceed_idx: np.ndarray) -> np.ndarray:
    """z fields on exceedance days from intensity predictions.

    Divides by the full fitted excess scale, not exp(theta) alone, so
    the map inverts exactly what the simulator and the intensity loss
    use; fitting fields simulated from the package's own model then
    recovers their dependence parameters without systematic bias.
    """
    thresholds = bundle_like.thresholds
    xi = bundle_like.xi
    y = dataset.variables[bundle_like.schema.response_var]
    z = np.zeros((len(exceed_idx), dataset.grid.n_points))
    for row, t in enumerate(exceed_idx):
        theta = bundle_like.intensity.predict(tables.intensity_day(t))
        z[row] = transform_to_z(y[t], thresholds.b, theta, xi,
                                m=thresholds.m, use_gpd_scale=True)
    return z


@dataclass
class _Partial:
    """Upstream stages during sequential fitting."""
    thresholds: ThresholdSpec
    intensity: TreeEnsemble
    schema: PredictorSchema
    xi: float


def fit_all(dataset: GriddedDataset, settings: FitSettings,
            thresholds: ThresholdSpec | None = None) -> SubModelBundle:
    """Sequential fit of the three sub-models.

    Occurrence sees every day; intensity sees positive excesses on
    exceedance days with day-grouped cross-validation; the dependence
    stage is fit on fields standardized by the intensity predictions.
    """
    if thresholds is None:
        thresholds = select_thresholds(dataset, settings.target_region,
                                       settings.risk_level,
                                       settings.response_var)
    schema = make_schema(dataset.grid, settings.target_region,
                         settings.z500_var, settings.sm_var,
                         settings.response_var)
    tables = assemble_predictors(dataset, schema)
    y = dataset.variables[settings.response_var]
    if np.isnan(y).any():
        raise DataError("response contains NaN; preprocess first")
    risk = compute_risk_series(dataset, settings.target_region,
                               settings.response_var)
    labels = (risk >= thresholds.u).astype(float)
    exceed_idx = np.flatnonzero(labels == 1)

    occ_ens, occ_cv = _cv_then_fit(
        tables.occurrence, OccurrenceLoss(labels), settings.occurrence,
        settings.n_folds, tables.occ_names, "occurrence")

    # intensity rows: one per positive excess, grouped by day
    rows, targets, b_rows, m_rows, groups = [], [], [], [], []
    for t in exceed_idx:
        day_x = tables.intensity_day(t)
        active = np.flatnonzero(y[t] > thresholds.b)
        for d in active:
            rows.append(day_x[d])
            targets.append(y[t, d])
            b_rows.append(thresholds.b[d])
            m_rows.append(thresholds.m[d])
            groups.append(t)
    if not rows:
        raise DataError("no positive excesses to fit the intensity model")
    int_x = np.array(rows)
    int_loss = GPDLoss(np.array(targets), np.array(b_rows),
                       np.array(m_rows), settings.xi,
                       groups=np.array(groups))
    int_ens, int_cv = _cv_then_fit(int_x, int_loss, settings.intensity,
                                   settings.n_folds, tables.int_names,
                                   "intensity")

    partial = _Partial(thresholds, int_ens, schema, settings.xi)
    z = standardized_fields(dataset, partial, tables, exceed_idx)
    alpha, theta_scale = settings.alpha, settings.theta_scale
    if settings.prefit_dependence:
        alpha, theta_scale, _ = prefit_dependence_params(
            z, dataset.grid, settings.vecchia_k)
    dep_x = tables.dependence[exceed_idx]
    dep_loss = DependenceScoreLoss(z, dataset.grid, alpha, theta_scale,
                                   settings.vecchia_k)
    dep_ens, dep_cv = _cv_then_fit(dep_x, dep_loss, settings.dependence,
                                   settings.n_folds, tables.dep_names,
                                   "dependence")

    meta = {
        "risk_level": settings.risk_level,
        "n_folds": settings.n_folds,
        "stages": {
            "occurrence": {"n_trees": len(occ_ens.trees),
                           "seed": settings.occurrence.seed,
                           "cv_curve": occ_cv.mean_curve.tolist()},
            "intensity": {"n_trees": len(int_ens.trees),
                          "seed": settings.intensity.seed,
                          "cv_curve": int_cv.mean_curve.tolist()},
            "dependence": {"n_trees": len(dep_ens.trees),
                           "seed": settings.dependence.seed,
                           "cv_curve": dep_cv.mean_curve.tolist()},
        },
        "variables": {"response": settings.response_var,
                      "z500": settings.z500_var, "sm": settings.sm_var},
        "prefit_dependence": settings.prefit_dependence,
    }
    return SubModelBundle(
        occurrence=occ_ens, intensity=int_ens, dependence=dep_ens,
        thresholds=thresholds, xi=settings.xi, alpha=alpha,
        theta_scale=theta_scale, vecchia_k=settings.vecchia_k,
        grid=dataset.grid, schema=schema, meta=meta)


def refit_dependence(bundle: SubModelBundle, dataset: GriddedDataset,
                     config: TrainConfig, n_folds: int = 5
                     ) -> SubModelBundle:
    """Refit only the dependence stage with frozen upstream stages."""
    tables = assemble_predictors(dataset, bundle.schema)
    risk = compute_risk_series(dataset, bundle.schema.target_region,
                               bundle.schema.response_var)
    exceed_idx = np.flatnonzero(risk >= bundle.thresholds.u)
    z = standardized_fields(dataset, bundle, tables, exceed_idx)
    dep_loss = DependenceScoreLoss(z, dataset.grid, bundle.alpha,
                                   bundle.theta_scale, bundle.vecchia_k)
    dep_ens, dep_cv = _cv_then_fit(tables.dependence[exceed_idx], dep_loss,
                                   config, n_folds, tables.dep_names,
                                   "dependence")
    meta = dict(bundle.meta)
    stages = dict(meta.get("stages", {}))
    stages["dependence"] = {"n_trees": len(dep_ens.trees),
                            "seed": config.seed,
                            "cv_curve": dep_cv.mean_curve.tolist()}
    meta["stages"] = stages
    return dataclasses.replace(bundle, dependence=dep_ens, meta=meta)


# ----------------------------------------------------------------------
# prediction and scenarios


def predict_day(bundle: SubModelBundle, occ_row: np.ndarray,
                intensity_rows: np.ndarray, dep_row: np.ndarray):
    """(exceedance probability, theta_int field, theta_extent)."""
    occ_row = np.asarray(occ_row, dtype=float)
    dep_row = np.asarray(dep_row, dtype=float)
    intensity_rows = np.atleast_2d(np.asarray(intensity_rows, dtype=float))
    if intensity_rows.shape[0] != bundle.grid.n_points:
        raise ConfigError(
            f"intensity rows must cover all {bundle.grid.n_points} "
            f"grid points")
    logit = bundle.occurrence.predict(occ_row[None, :])[0]
    theta_int = bundle.intensity.predict(intensity_rows)
    theta_extent = bundle.dependence.predict(dep_row[None, :])[0]
    return float(expit(logit)), theta_int, float(theta_extent)


def day_inputs(dataset: GriddedDataset, bundle: SubModelBundle, date: str):
    """Assembled (occ_row, intensity_rows, dep_row) for one date."""
    tables = assemble_predictors(dataset, bundle.schema)
    t = dataset.day_position(date)
    return (tables.occurrence[t], tables.intensity_day(t),
            tables.dependence[t])


def generate_scenarios(bundle: SubModelBundle, occ_row, intensity_rows,
                       dep_row, n: int, seed: int,
                       override_extent: float | None = None):
    """Conditional exceedance fields for one day's predictors.

    Returns (fields, risks): n simulated response-scale fields and
    each one's target-region average.
    """
    _, theta_int, theta_extent = predict_day(bundle, occ_row,
                                             intensity_rows, dep_row)
    if override_extent is not None:
        theta_extent = float(override_extent)
    target = bundle.schema.target_region
    d = bundle.grid.n_points
    w = np.zeros(d)
    w[target] = 1.0 / len(target)
    params = SemivariogramParams(bundle.alpha, theta_extent,
                                 bundle.theta_scale)
    if n == 0:
        return np.empty((0, d)), np.empty(0)
    fields = simulate_grp(bundle.grid, params, b=bundle.thresholds.b,
                          theta_int=theta_int, m=bundle.thresholds.m,
                          xi=bundle.xi, target_weights=w,
                          u=bundle.thresholds.u, n_sims=n, seed=seed)
    risks = fields[:, target].mean(axis=1)
    return fields, risks


# ----------------------------------------------------------------------
# stationary pre-fit of (alpha, theta_scale)


def prefit_dependence_params(z_days: np.ndarray, grid: Grid,
                             vecchia_k: int,
                             alpha_grid: np.ndarray | None = None,
                             scale_grid: np.ndarray | None = None,
                             refine: int = 2):
    """Fix (alpha, theta_scale) by minimum summed gradient score.

    Fits the predictor-free stationary model: for each candidate pair
    the optimal constant extent has a closed form, and the pair with
    the lowest attained score wins. `refine` recursions shrink the
    grid around the winner.
    """
    if alpha_grid is None:
        alpha_grid = np.linspace(0.6, 1.9, 8)
    if scale_grid is None:
        scale_grid = np.linspace(-0.6, 0.6, 7)

    def attained(alpha: float, scale: float):
        geom = ScoreGeometry(grid, float(alpha), float(scale), vecchia_k)
        c = geom.coefficient_table(z_days)
        c0, c1, c2 = c[:, 0].sum(), c[:, 1].sum(), c[:, 2].sum()
        if c2 <= 0:
            return np.inf, 0.0
        e_star = -c1 / (2.0 * c2)
        if e_star <= 0:
            return np.inf, 0.0
        theta = math.log(e_star) / float(alpha)
        return c0 + c1 * e_star + c2 * e_star ** 2, theta

    best = (np.inf, None)
    for _ in range(refine + 1):
        for a in alpha_grid:
            if not 0 < a <= 2:
                continue
            for s in scale_grid:
                val, theta = attained(a, s)
                if val < best[0]:
                    best = (val, (float(a), float(s), theta))
        if best[1] is None:
            raise NumericError(
                "stationary dependence pre-fit found no usable "
                "parameters")
        a0, s0, _ = best[1]
        da = (alpha_grid[1] - alpha_grid[0]) if len(alpha_grid) > 1 else 0.1
        ds = (scale_grid[1] - scale_grid[0]) if len(scale_grid) > 1 else 0.1
        alpha_grid = np.linspace(a0 - da, a0 + da, 5)
        scale_grid = np.linspace(s0 - ds, s0 + ds, 5)
    a, s, theta = best[1]
    return a, s, theta
