"""Second-order gradient tree boosting with pluggable per-row losses.

The engine is deliberately small: exact greedy split search over all
unique feature values (no histogram sketch, no column subsampling),
regularized second-order gains, learned default directions for missing
values, and day-grouped cross-validation with the one-standard-error
rule. Losses are adapters exposing per-row gradients and hessians; rows
themselves are opaque to the engine.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import ConfigError, DataError, NumericError

__all__ = [
    "LossAdapter",
    "TrainConfig",
    "RegressionTree",
    "TreeEnsemble",
    "CVResult",
    "init_estimate",
    "fit_tree",
    "boost",
    "predict",
    "cross_validate",
    "check_gradients",
]

log = logging.getLogger(__name__)

HESSIAN_FLOOR = 1e-6


@runtime_checkable
class LossAdapter(Protocol):
    """Behavioral contract for losses.

    n_rows rows are indexed 0..n_rows-1; predictions are one real per
    row. groups labels rows that must travel together in CV shuffling
    (days, for losses with several rows per day).
    """

    @property
    def n_rows(self) -> int: ...

    @property
    def groups(self) -> np.ndarray: ...

    def loss(self, predictions: np.ndarray) -> float: ...

    def grad_hess(self, predictions: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    def subset(self, indices: np.ndarray) -> "LossAdapter": ...


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int
    max_depth: int = 6
    learning_rate: float = 0.05
    lam: float = 1.0
    gamma_complexity: float = 0.0
    min_child_hessian: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ConfigError("n_trees must be >= 0")
        if not (1 <= self.max_depth <= 32):
            raise ConfigError("max_depth must lie in [1, 32]")
        if not (0 < self.learning_rate <= 1):
            raise ConfigError("learning_rate must lie in (0, 1]")
        if self.lam < 0 or self.gamma_complexity < 0 or self.min_child_hessian < 0:
            raise ConfigError("regularization settings must be nonnegative")


class RegressionTree:
    """Binary tree stored as parallel arrays; node 0 is the root.

    feature[i] == -1 marks a leaf. Internal nodes carry a threshold
    (values <= threshold go left), a learned default direction for
    missing values and both child ids. cover is the training row count.
    """

    __slots__ = ("feature", "threshold", "left", "right", "default_left",
                 "weight", "cover")

    def __init__(self, feature, threshold, left, right, default_left, weight, cover):
        self.feature = np.asarray(feature, dtype=int)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=int)
        self.right = np.asarray(right, dtype=int)
        self.default_left = np.asarray(default_left, dtype=bool)
        self.weight = np.asarray(weight, dtype=float)
        self.cover = np.asarray(cover, dtype=float)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=int)
        out = 0
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[i] + 1
                d[self.right[i]] = d[i] + 1
            else:
                out = max(out, d[i])
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        node = np.zeros(len(x), dtype=int)
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                break
            rows = np.flatnonzero(internal)
            nid = node[rows]
            v = x[rows, self.feature[nid]]
            miss = np.isnan(v)
            go_left = np.where(miss, self.default_left[nid], v <= self.threshold[nid])
            node[rows] = np.where(go_left, self.left[nid], self.right[nid])
        return self.weight[node]

    def leaf_index(self, x: np.ndarray) -> np.ndarray:
        """Node id of the leaf each row lands in."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        node = np.zeros(len(x), dtype=int)
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                break
            rows = np.flatnonzero(internal)
            nid = node[rows]
            v = x[rows, self.feature[nid]]
            miss = np.isnan(v)
            go_left = np.where(miss, self.default_left[nid], v <= self.threshold[nid])
            node[rows] = np.where(go_left, self.left[nid], self.right[nid])
        return node

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                nodes.append({"leaf": float(self.weight[i]),
                              "cover": float(self.cover[i])})
            else:
                nodes.append({"feature": int(self.feature[i]),
                              "threshold": float(self.threshold[i]),
                              "left": int(self.left[i]),
                              "right": int(self.right[i]),
                              "default_left": bool(self.default_left[i]),
                              "cover": float(self.cover[i])})
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        nodes = d["nodes"]
        n = len(nodes)
        feature = np.full(n, -1, dtype=int)
        threshold = np.full(n, np.nan)
        left = np.full(n, -1, dtype=int)
        right = np.full(n, -1, dtype=int)
        default_left = np.zeros(n, dtype=bool)
        weight = np.zeros(n)
        cover = np.zeros(n)
        for i, nd in enumerate(nodes):
            cover[i] = nd.get("cover", 0.0)
            if "leaf" in nd:
                weight[i] = nd["leaf"]
            else:
                feature[i] = nd["feature"]
                threshold[i] = nd["threshold"]
                left[i] = nd["left"]
                right[i] = nd["right"]
                default_left[i] = nd["default_left"]
        return cls(feature, threshold, left, right, default_left, weight, cover)


@dataclass
class TreeEnsemble:
    base_score: float
    learning_rate: float
    trees: list[RegressionTree] = field(default_factory=list)
    feature_names: list[str] | None = None
    n_features: int | None = None
    fit_report: dict = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.n_features is not None and x.shape[1] != self.n_features:
            raise ConfigError(
                f"expected {self.n_features} features, got {x.shape[1]}")
        out = np.full(len(x), float(self.base_score))
        for tree in self.trees:          # fixed left-to-right summation
            out = out + self.learning_rate * tree.predict(x)
        return out

    def staged_predict(self, x: np.ndarray) -> np.ndarray:
        """(n_trees + 1, n_rows) prediction after 0, 1, ... trees."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((len(self.trees) + 1, len(x)))
        cur = np.full(len(x), float(self.base_score))
        out[0] = cur
        for t, tree in enumerate(self.trees):
            cur = cur + self.learning_rate * tree.predict(x)
            out[t + 1] = cur
        return out

    def truncated(self, n_trees: int) -> "TreeEnsemble":
        return TreeEnsemble(self.base_score, self.learning_rate,
                            self.trees[:n_trees], self.feature_names,
                            self.n_features, dict(self.fit_report))

    def to_json(self) -> str:
        names = self.feature_names
        if names is None and self.n_features is not None:
            names = [f"f{i}" for i in range(self.n_features)]
        return json.dumps({
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_names": names,
            "trees": [t.to_dict() for t in self.trees],
        })

    @classmethod
    def from_json(cls, text: str) -> "TreeEnsemble":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise DataError(f"invalid ensemble JSON: {e}") from None
        names = d.get("feature_names")
        return cls(base_score=float(d["base_score"]),
                   learning_rate=float(d["learning_rate"]),
                   trees=[RegressionTree.from_dict(t) for t in d["trees"]],
                   feature_names=names,
                   n_features=len(names) if names else None)


def init_estimate(loss: LossAdapter, max_iter: int = 200) -> float:
    """Constant prediction minimizing the empirical loss.

    Safeguarded Newton from 0: the root of the total gradient is first
    bracketed by doubling steps, then polished by Newton with bisection
    whenever an iterate leaves the bracket. Stops when the total gradient
    is below 1e-8 (1 + |value|) or the bracket is narrower than 1e-10.
    """
    if loss.n_rows == 0:
        raise ConfigError("cannot initialize on zero rows")

    def total_grad(v):
        g, h = loss.grad_hess(np.full(loss.n_rows, v))
        return float(g.sum()), float(h.sum())

    g0, _ = total_grad(0.0)
    if abs(g0) <= 1e-8:
        return 0.0
    # expand in the downhill direction until the gradient changes sign
    step = 1.0
    lo, hi = (0.0, 0.0)
    glo = ghi = g0
    direction = -np.sign(g0)
    v = 0.0
    for _ in range(60):
        nxt = v + direction * step
        gn, _ = total_grad(nxt)
        if not np.isfinite(gn):
            raise ConfigError("loss has no finite minimizer along constants")
        if gn * g0 < 0:
            lo, hi = (v, nxt) if v < nxt else (nxt, v)
            glo, ghi = (g0, gn) if v < nxt else (gn, g0)
            break
        v = nxt
        step *= 2.0
    else:
        raise ConfigError("loss gradient never changes sign; no finite minimizer")

    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        gx, hx = total_grad(x)
        if abs(gx) <= 1e-8 * (1.0 + abs(x)) or hi - lo <= 1e-10:
            return float(x)
        if gx * glo < 0:
            hi, ghi = x, gx
        else:
            lo, glo = x, gx
        if hx > 0:
            cand = x - gx / hx
        else:
            cand = np.nan
        x = cand if np.isfinite(cand) and lo < cand < hi else 0.5 * (lo + hi)
    return float(x)


def _presort(x: np.ndarray) -> list[np.ndarray]:
    # NaNs sort to the end under numpy's ordering, which the scan relies on
    return [np.argsort(x[:, j], kind="stable") for j in range(x.shape[1])]


def _best_split(x, g, h, rows_mask, order_j, j, lam, gamma, min_child):
    order = order_j[rows_mask[order_j]]
    vals = x[order, j]
    miss_start = int(np.searchsorted(np.isnan(vals), True))
    present = order[:miss_start]
    if len(present) < 2:
        return None
    vp = vals[:miss_start]
    gp = np.cumsum(g[present])
    hp = np.cumsum(h[present])
    g_all = gp[-1]
    h_all = hp[-1]
    g_miss = float(g[order[miss_start:]].sum())
    h_miss = float(h[order[miss_start:]].sum())
    gtot, htot = g_all + g_miss, h_all + h_miss
    cut = np.flatnonzero(vp[:-1] < vp[1:])
    if len(cut) == 0:
        return None
    parent = gtot ** 2 / (htot + lam)
    gl, hl = gp[cut], hp[cut]
    gr, hr = g_all - gl, h_all - hl

    def gains(gl_, hl_, gr_, hr_):
        ok = (hl_ >= min_child) & (hr_ >= min_child)
        val = 0.5 * (gl_ ** 2 / (hl_ + lam) + gr_ ** 2 / (hr_ + lam) - parent) - gamma
        return np.where(ok, val, -np.inf)

    gain_l = gains(gl + g_miss, hl + h_miss, gr, hr)          # missing goes left
    gain_r = gains(gl, hl, gr + g_miss, hr + h_miss)          # missing goes right
    both = np.maximum(gain_l, gain_r)
    best = int(np.argmax(both))
    if not np.isfinite(both[best]) or both[best] <= 0:
        return None
    go_left = gain_l[best] >= gain_r[best]
    thr = 0.5 * (vp[cut[best]] + vp[cut[best] + 1])
    return float(both[best]), thr, bool(go_left)


def fit_tree(x: np.ndarray, g: np.ndarray, h: np.ndarray, config: TrainConfig,
             presorted: list[np.ndarray] | None = None) -> RegressionTree:
    """One regression tree on second-order statistics.

    Greedy depth-first growth; each node scans every feature's unique
    values exactly, with missing rows routed to the gain-maximizing
    side. Split gain must be strictly positive and both children must
    carry at least min_child_hessian of (floored) hessian mass. Ties
    break to the lowest feature index, then the lowest threshold, then
    a left default direction.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, p = x.shape
    if n == 0:
        raise ConfigError("cannot fit a tree on zero rows")
    g = np.asarray(g, dtype=float)
    h = np.maximum(np.asarray(h, dtype=float), HESSIAN_FLOOR)
    if g.shape != (n,) or h.shape != (n,):
        raise ConfigError("g and h must have one entry per row")
    if presorted is None:
        presorted = _presort(x)

    feature, threshold, left, right = [], [], [], []
    default_left, weight, cover = [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        default_left.append(False)
        weight.append(0.0)
        cover.append(0.0)
        return len(feature) - 1

    def grow(node_id, rows, depth):
        gs, hs = float(g[rows].sum()), float(h[rows].sum())
        weight[node_id] = -gs / (hs + config.lam)
        cover[node_id] = float(len(rows))
        if depth >= config.max_depth or len(rows) < 2:
            return
        mask = np.zeros(n, dtype=bool)
        mask[rows] = True
        best = None
        for j in range(p):
            cand = _best_split(x, g, h, mask, presorted[j], j,
                               config.lam, config.gamma_complexity,
                               config.min_child_hessian)
            if cand is not None and (best is None or cand[0] > best[1]):
                best = (j, *cand)
        if best is None:
            return
        j, _, thr, miss_left = best
        v = x[rows, j]
        miss = np.isnan(v)
        goes_left = np.where(miss, miss_left, v <= thr)
        rows_l, rows_r = rows[goes_left], rows[~goes_left]
        if len(rows_l) == 0 or len(rows_r) == 0:
            return
        feature[node_id] = j
        threshold[node_id] = thr
        default_left[node_id] = miss_left
        lid, rid = new_node(), new_node()
        left[node_id], right[node_id] = lid, rid
        grow(lid, rows_l, depth + 1)
        grow(rid, rows_r, depth + 1)

    root = new_node()
    grow(root, np.arange(n), 0)
    return RegressionTree(feature, threshold, left, right, default_left,
                          weight, cover)


def boost(x: np.ndarray, loss: LossAdapter, config: TrainConfig,
          feature_names: list[str] | None = None) -> TreeEnsemble:
    """Fit a boosted ensemble by iterated second-order tree fitting.

    Deterministic given inputs and config. Training loss is tracked per
    iteration; any increase (possible since the step is a second-order
    approximation) is logged and recorded in fit_report.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    if n == 0:
        raise ConfigError("at least one row required")
    if loss.n_rows != n:
        raise ConfigError("loss rows and predictor rows disagree")
    base = init_estimate(loss)
    pred = np.full(n, base)
    presorted = _presort(x)
    trees: list[RegressionTree] = []
    losses = [loss.loss(pred)]
    increases = []
    for t in range(config.n_trees):
        g, h = loss.grad_hess(pred)
        bad = ~(np.isfinite(g) & np.isfinite(h))
        if bad.any():
            raise NumericError(
                f"non-finite gradient at iteration {t}, row {int(np.flatnonzero(bad)[0])}")
        tree = fit_tree(x, g, h, config, presorted)
        trees.append(tree)
        pred = pred + config.learning_rate * tree.predict(x)
        cur = loss.loss(pred)
        if cur > losses[-1] + 1e-12 * (1 + abs(losses[-1])):
            increases.append(t)
            log.warning("training loss increased at iteration %d: %.6g -> %.6g",
                        t, losses[-1], cur)
        losses.append(cur)
    return TreeEnsemble(base, config.learning_rate, trees, feature_names,
                        x.shape[1], {"train_loss": losses,
                                     "loss_increases": increases})


def predict(ensemble: TreeEnsemble, x: np.ndarray) -> np.ndarray:
    return ensemble.predict(x)


@dataclass
class CVResult:
    n_trees: int
    mean_curve: np.ndarray          # validation loss after 0..n_trees trees
    fold_curves: np.ndarray         # (n_folds, n_trees + 1)
    se_at_min: float


def cross_validate(x: np.ndarray, loss: LossAdapter, config: TrainConfig,
                   n_folds: int = 5) -> CVResult:
    """Grouped K-fold selection of the tree count.

    Groups (days) are shuffled with the config seed and dealt into
    n_folds nearly equal folds; all rows of a group stay together. The
    returned count is the smallest whose mean validation loss is within
    one standard error of the minimum (standard error measured across
    folds at the minimizer).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    groups = np.asarray(loss.groups)
    uniq = np.unique(groups)
    if len(uniq) < n_folds:
        raise ConfigError(f"need at least {n_folds} groups, have {len(uniq)}")
    rng = np.random.default_rng(config.seed)
    shuffled = rng.permutation(uniq)
    fold_of = {gid: i % n_folds for i, gid in enumerate(shuffled)}
    fold_ids = np.array([fold_of[gid] for gid in groups])
    curves = np.empty((n_folds, config.n_trees + 1))
    for f in range(n_folds):
        tr = np.flatnonzero(fold_ids != f)
        va = np.flatnonzero(fold_ids == f)
        ens = boost(x[tr], loss.subset(tr), config)
        val_loss = loss.subset(va)
        staged = ens.staged_predict(x[va])
        curves[f] = [val_loss.loss(staged[t]) / len(va)
                     for t in range(config.n_trees + 1)]
    mean_curve = curves.mean(axis=0)
    t_min = int(np.argmin(mean_curve))
    se = float(np.std(curves[:, t_min], ddof=1) / np.sqrt(n_folds))
    chosen = int(np.flatnonzero(mean_curve <= mean_curve[t_min] + se)[0])
    return CVResult(chosen, mean_curve, curves, se)


def check_gradients(loss: LossAdapter, n_vectors: int = 20, step: float = 1e-5,
                    seed: int = 0, coords_per_vector: int = 4):
    """Central finite differences of the loss against the adapter's
    gradients and hessians. Returns the worst relative errors (g, h)."""
    rng = np.random.default_rng(seed)
    n = loss.n_rows
    worst_g = worst_h = 0.0
    for _ in range(n_vectors):
        pred = rng.normal(scale=0.5, size=n)
        g, h = loss.grad_hess(pred)
        for i in rng.choice(n, size=min(coords_per_vector, n), replace=False):
            e = np.zeros(n)
            e[i] = step
            lp, lm = loss.loss(pred + e), loss.loss(pred - e)
            gp = loss.grad_hess(pred + e)[0][i]
            gm = loss.grad_hess(pred - e)[0][i]
            fd_g = (lp - lm) / (2 * step)
            fd_h = (gp - gm) / (2 * step)
            worst_g = max(worst_g, abs(fd_g - g[i]) / (1 + abs(g[i])))
            worst_h = max(worst_h, abs(fd_h - h[i]) / (1 + abs(h[i])))
    return worst_g, worst_h
