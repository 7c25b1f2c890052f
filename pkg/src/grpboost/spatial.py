"""Grids, anisotropic distances, semivariograms and orderings.

The spatial backbone: planar grids in units of 100 km, the powered
exponential semivariogram with geometric anisotropy on the y axis, the
analytic pairwise extremal-dependence limit, and the maximin point
ordering with nearest-previous neighbor sets used by the sparse
precision factorization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .errors import ConfigError, DataError

__all__ = [
    "Grid",
    "SemivariogramParams",
    "Ordering",
    "anisotropic_distance",
    "distance_matrix",
    "semivariogram",
    "semivariogram_matrix",
    "pairwise_limit_prob",
    "maximin_ordering",
    "neighbor_sets",
]


@dataclass(frozen=True)
class Grid:
    """Fixed spatial grid. Coordinates are planar, in units of 100 km.

    Point ids are implicit: point d has id d, 0 <= d < n_points.
    Longitude/latitude are optional metadata carried through untouched.
    """

    x: np.ndarray
    y: np.ndarray
    lon: np.ndarray | None = None
    lat: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if x.ndim != 1 or x.shape != y.shape:
            raise DataError("grid coordinates must be 1-d arrays of equal length")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise DataError("grid coordinates must be finite")
        coords = np.column_stack([x, y])
        if len(np.unique(coords, axis=0)) != len(coords):
            raise DataError("grid contains duplicate (x, y) points")
        for name in ("lon", "lat"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                object.__setattr__(self, name, v)
                if v.shape != x.shape:
                    raise DataError(f"{name} metadata length does not match grid size")

    @property
    def n_points(self) -> int:
        return len(self.x)

    def coords(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])


@dataclass(frozen=True)
class SemivariogramParams:
    """Powered exponential semivariogram parameters.

    gamma(s1, s2) = (h / exp(theta_extent))^alpha where h is the
    anisotropic distance; alpha in (0, 2]; theta_scale multiplies the
    y-coordinate difference by exp(theta_scale).
    """

    alpha: float
    theta_extent: float
    theta_scale: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 2.0):
            raise ConfigError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not (np.isfinite(self.theta_extent) and np.isfinite(self.theta_scale)):
            raise ConfigError("theta_extent and theta_scale must be finite")


@dataclass
class Ordering:
    """A permutation of grid ids plus, per position, the ids of up to k
    previously ordered nearest points."""

    permutation: np.ndarray
    neighbor_ids: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.permutation = np.asarray(self.permutation, dtype=int)
        d = len(self.permutation)
        if sorted(self.permutation.tolist()) != list(range(d)):
            raise DataError("ordering permutation must be a bijection on 0..D-1")


def _scaled_coords(grid: Grid, params: SemivariogramParams | None) -> np.ndarray:
    c = grid.coords().copy()
    if params is not None:
        c[:, 1] *= np.exp(params.theta_scale)
    return c


def anisotropic_distance(s1, s2, params: SemivariogramParams) -> float:
    """Euclidean distance after scaling the y-difference by exp(theta_scale)."""
    dx = s1[0] - s2[0]
    dy = (s1[1] - s2[1]) * np.exp(params.theta_scale)
    return float(np.hypot(dx, dy))


def distance_matrix(grid: Grid, params: SemivariogramParams | None = None) -> np.ndarray:
    c = _scaled_coords(grid, params)
    diff = c[:, None, :] - c[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def semivariogram(s1, s2, params: SemivariogramParams) -> float:
    h = anisotropic_distance(s1, s2, params)
    return float((h / np.exp(params.theta_extent)) ** params.alpha)


def semivariogram_matrix(grid: Grid, params: SemivariogramParams) -> np.ndarray:
    h = distance_matrix(grid, params)
    return (h / np.exp(params.theta_extent)) ** params.alpha


def pairwise_limit_prob(gamma):
    """Limiting conditional exceedance probability 2(1 - Phi(sqrt(gamma/2))).

    The probability that one site exceeds a high threshold given that
    another does, in the limit of increasingly extreme thresholds, as a
    function of the semivariogram value between the two sites.
    """
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ConfigError("semivariogram value must be nonnegative")
    # 2 (1 - Phi(t)) = erfc(t / sqrt 2)
    out = erfc(np.sqrt(g / 2.0) / np.sqrt(2.0))
    return float(out) if np.isscalar(gamma) or np.ndim(gamma) == 0 else out


def maximin_ordering(grid: Grid, params: SemivariogramParams | None = None) -> Ordering:
    """Greedy maximin ordering of the grid points.

    The first point minimizes the distance to the grid centroid; each
    subsequent point maximizes the minimum distance to all points
    already selected. Ties are broken by lowest id. Exact greedy; cost
    O(D^2), intended for D up to a few hundred.
    """
    d = grid.n_points
    if d == 0:
        raise DataError("cannot order an empty grid")
    c = _scaled_coords(grid, params)
    centroid = c.mean(axis=0)
    start = int(np.argmin(np.linalg.norm(c - centroid, axis=1)))
    perm = [start]
    mind = np.linalg.norm(c - c[start], axis=1)
    mind[start] = -np.inf
    for _ in range(d - 1):
        nxt = int(np.argmax(mind))  # argmax takes the lowest index on ties
        perm.append(nxt)
        mind = np.minimum(mind, np.linalg.norm(c - c[nxt], axis=1))
        mind[nxt] = -np.inf
    return Ordering(np.array(perm))


def neighbor_sets(ordering: Ordering, grid: Grid, k: int,
                  params: SemivariogramParams | None = None) -> Ordering:
    """Fill the ordering with, per position j, the min(j, k) previously
    ordered points nearest in anisotropic distance. Ties: lowest id."""
    if k < 1:
        raise ConfigError("k must be a positive integer")
    c = _scaled_coords(grid, params)
    perm = ordering.permutation
    neigh: list[np.ndarray] = []
    for j, pid in enumerate(perm):
        prev = perm[:j]
        if j == 0:
            neigh.append(np.empty(0, dtype=int))
            continue
        dd = np.linalg.norm(c[prev] - c[pid], axis=1)
        m = min(j, k)
        # stable sort on (distance, id) for deterministic ties
        order = np.lexsort((prev, dd))[:m]
        neigh.append(np.sort(prev[order]))
    return Ordering(perm.copy(), neigh)
