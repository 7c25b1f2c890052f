"""Grid geometry, semivariogram and ordering tests.

Oracle values here are either worked by hand or recomputed through an
independent route (math.erf instead of scipy, brute-force greedy search
instead of the vectorized implementation).
"""
import math

import numpy as np
import pytest

from grpboost.errors import ConfigError, DataError
from grpboost.spatial import (Grid, SemivariogramParams, anisotropic_distance,
                              distance_matrix, maximin_ordering, neighbor_sets,
                              pairwise_limit_prob, semivariogram,
                              semivariogram_matrix)


def small_grid(nx=4, ny=3):
    xs, ys = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float))
    return Grid(xs.ravel(), ys.ravel())


def random_grid(rng, n=10):
    pts = rng.uniform(0, 5, size=(n, 2))
    return Grid(pts[:, 0], pts[:, 1])


class TestGrid:
    def test_basic_properties(self):
        g = small_grid()
        assert g.n_points == 12
        assert g.coords().shape == (12, 2)

    def test_rejects_duplicates(self):
        with pytest.raises(DataError):
            Grid(np.array([0.0, 1.0, 0.0]), np.array([0.0, 1.0, 0.0]))

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            Grid(np.array([0.0, np.nan]), np.array([0.0, 1.0]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(DataError):
            Grid(np.array([0.0, 1.0]), np.array([0.0]))


class TestDistance:
    def test_pythagorean_example(self):
        # 3-4-5 triangle with no anisotropy
        p = SemivariogramParams(alpha=1.0, theta_extent=0.0, theta_scale=0.0)
        d = anisotropic_distance(np.array([0.0, 0.0]), np.array([3.0, 4.0]), p)
        assert d == pytest.approx(5.0, abs=1e-14)

    def test_anisotropy_stretches_y(self):
        # theta_scale = ln 2 doubles the y separation: sqrt(3^2 + 8^2)
        p = SemivariogramParams(alpha=1.0, theta_extent=0.0, theta_scale=math.log(2.0))
        d = anisotropic_distance(np.array([0.0, 0.0]), np.array([3.0, 4.0]), p)
        assert d == pytest.approx(math.sqrt(73.0), rel=1e-14)

    def test_matrix_matches_pairwise_calls(self):
        rng = np.random.default_rng(5)
        g = random_grid(rng, 8)
        p = SemivariogramParams(1.3, 0.2, -0.4)
        dm = distance_matrix(g, p)
        c = g.coords()
        for i in range(8):
            for j in range(8):
                assert dm[i, j] == pytest.approx(
                    anisotropic_distance(c[i], c[j], p), abs=1e-13)


class TestSemivariogram:
    def test_hand_worked_value(self):
        # h = 5, extent e^{ln 5} = 5, alpha = 1.27: (5/5)^1.27 = 1
        p = SemivariogramParams(alpha=1.27, theta_extent=math.log(5.0), theta_scale=0.0)
        v = semivariogram(np.array([0.0, 0.0]), np.array([3.0, 4.0]), p)
        assert v == pytest.approx(1.0, rel=1e-14)

    def test_power_law(self):
        p = SemivariogramParams(alpha=1.5, theta_extent=0.0, theta_scale=0.0)
        v = semivariogram(np.array([0.0, 0.0]), np.array([0.0, 2.0]), p)
        assert v == pytest.approx(2.0 ** 1.5, rel=1e-14)

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        p = SemivariogramParams(0.9, -0.3, 0.25)
        for _ in range(20):
            a, b = rng.normal(size=2), rng.normal(size=2)
            assert semivariogram(a, b, p) == semivariogram(b, a, p)

    def test_scale_identity(self):
        # multiplying coordinates by c equals subtracting ln c from theta_extent
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=2), rng.normal(size=2)
        for c in (0.5, 2.0, 17.3):
            p1 = SemivariogramParams(1.27, 0.4, -0.07)
            p2 = SemivariogramParams(1.27, 0.4 - math.log(c), -0.07)
            v1 = semivariogram(a * c, b * c, p1)
            v2 = semivariogram(a, b, p2)
            assert v1 == pytest.approx(v2, rel=1e-12)

    def test_alpha_bounds(self):
        with pytest.raises(ConfigError):
            SemivariogramParams(alpha=0.0, theta_extent=0.0)
        with pytest.raises(ConfigError):
            SemivariogramParams(alpha=2.5, theta_extent=0.0)
        SemivariogramParams(alpha=2.0, theta_extent=0.0)  # boundary is allowed

    def test_matrix_zero_diagonal(self):
        g = small_grid()
        p = SemivariogramParams(1.27, 0.1, -0.07)
        m = semivariogram_matrix(g, p)
        assert np.all(np.diag(m) == 0)
        assert np.allclose(m, m.T)


class TestPairwiseLimitProb:
    def test_known_value(self):
        # gamma = 2: 2 * (1 - Phi(1)) computed through math.erf
        phi_1 = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        expected = 2.0 * (1.0 - phi_1)
        assert pairwise_limit_prob(2.0) == pytest.approx(expected, abs=1e-15)
        assert pairwise_limit_prob(2.0) == pytest.approx(0.31731, abs=5e-6)

    def test_independent_erf_oracle(self):
        for gamma in (0.0, 0.1, 1.0, 3.7, 25.0):
            expected = 2.0 * (1.0 - 0.5 * (1.0 + math.erf(math.sqrt(gamma / 2.0) / math.sqrt(2.0))))
            assert pairwise_limit_prob(gamma) == pytest.approx(expected, abs=1e-15)

    def test_limits(self):
        assert pairwise_limit_prob(0.0) == 1.0
        assert pairwise_limit_prob(1e8) < 1e-10

    def test_rejects_negative(self):
        with pytest.raises(ConfigError):
            pairwise_limit_prob(-0.5)

    def test_monotone_along_ray(self):
        # probability decays with distance from a fixed point
        p = SemivariogramParams(1.27, 0.0, -0.07)
        origin = np.array([0.0, 0.0])
        probs = [pairwise_limit_prob(semivariogram(origin, np.array([t, 0.5 * t]), p))
                 for t in np.linspace(0.1, 10, 25)]
        assert all(a > b for a, b in zip(probs, probs[1:]))


def brute_force_maximin(coords, start):
    """Greedy maximin by exhaustive search, ties to the lowest index."""
    n = len(coords)
    chosen = [start]
    remaining = set(range(n)) - {start}
    while remaining:
        best, best_d = None, -1.0
        for i in sorted(remaining):
            d = min(np.linalg.norm(coords[i] - coords[j]) for j in chosen)
            if d > best_d + 1e-15:
                best, best_d = i, d
        chosen.append(best)
        remaining.discard(best)
    return chosen


class TestMaximinOrdering:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        g = random_grid(rng, 10)
        c = g.coords()
        start = int(np.argmin(np.linalg.norm(c - c.mean(axis=0), axis=1)))
        expected = brute_force_maximin(c, start)
        got = maximin_ordering(g).permutation.tolist()
        assert got == expected

    def test_is_permutation(self):
        g = small_grid(5, 5)
        perm = maximin_ordering(g).permutation
        assert sorted(perm.tolist()) == list(range(25))

    def test_starts_near_centroid(self):
        g = small_grid(3, 3)
        # centroid is (1, 1), which is grid id 4 in row-major layout
        assert maximin_ordering(g).permutation[0] == 4

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        g = random_grid(rng, 15)
        a = maximin_ordering(g).permutation
        b = maximin_ordering(g).permutation
        assert np.array_equal(a, b)


class TestNeighborSets:
    def test_exhaustive_oracle(self):
        rng = np.random.default_rng(13)
        g = random_grid(rng, 12)
        p = SemivariogramParams(1.27, 0.0, 0.3)
        ordering = maximin_ordering(g, p)
        nb = neighbor_sets(ordering, g, k=3, params=p)
        dm = distance_matrix(g, p)
        perm = ordering.permutation
        for pos in range(12):
            prev = perm[:pos]
            want = min(pos, 3)
            got = nb.neighbor_ids[pos]
            assert len(got) == want
            if want:
                # k nearest previous, distance ties broken by lowest id
                order = sorted(prev.tolist(),
                               key=lambda q: (dm[perm[pos], q], q))[:want]
                assert sorted(got.tolist()) == sorted(order)

    def test_first_point_has_no_neighbors(self):
        g = small_grid()
        ordering = maximin_ordering(g)
        nb = neighbor_sets(ordering, g, k=4)
        assert len(nb.neighbor_ids[0]) == 0

    def test_k_caps_at_position(self):
        g = small_grid(2, 2)
        ordering = maximin_ordering(g)
        nb = neighbor_sets(ordering, g, k=10)
        sizes = sorted(len(nb.neighbor_ids[pos]) for pos in range(4))
        assert sizes == [0, 1, 2, 3]
