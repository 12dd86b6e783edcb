"""
Test rational linear foliations: leaves, plaques and quotient coordinates
"""

import numpy as np
import pytest

from app.core.errors import InvalidInput, Unsupported
from app.services.foliation import FoliationKind, LinearFoliation, integer_kernel
from app.services.torus import torus_dist


class TestDegenerateFoliations:
    """Points and whole-torus foliations"""

    @pytest.fixture
    def rng(self):
        return np.random.default_rng(11)

    def test_points_plaque_is_point_distance(self, rng):
        F = LinearFoliation.points(2)
        x, y = rng.random((2, 1000, 2))
        assert np.allclose(F.plaque_distances(x, y, 0.3), torus_dist(x, y))
        assert F.same_leaf(x[0], x[0])
        assert not F.same_leaf(x[0], x[1])

    def test_whole_plaque_is_ball(self, rng):
        F = LinearFoliation.whole(2)
        x, y = rng.random((2, 1000, 2))
        expected = np.maximum(0.0, torus_dist(x, y) - 0.1)
        assert np.allclose(F.plaque_distances(x, y, 0.1), expected)
        assert F.same_leaf(x[0], x[1])

    def test_whole_has_no_quotient(self):
        with pytest.raises(Unsupported):
            LinearFoliation.whole(2).quotient_project([0.1, 0.2])


class TestLinearFoliation:
    """Circle and diagonal foliations"""

    @pytest.fixture
    def vertical(self):
        return LinearFoliation.linear(2, [[0, 1]])

    @pytest.fixture
    def diagonal(self):
        return LinearFoliation.linear(2, [[1, 1]])

    def test_from_spec(self):
        F = LinearFoliation.from_spec({"kind": "linear", "directions": [[0, 0, 1]]}, 3)
        assert F.kind == FoliationKind.LINEAR
        assert F.leaf_dim == 1
        assert F.transverse_dim == 2

    def test_transverse_basis_annihilates_direction(self, diagonal):
        assert np.all(diagonal.transverse_basis @ diagonal.directions.T == 0)
        assert np.array_equal(integer_kernel([[0, 1]], 2), np.array([[1, 0]]))

    def test_same_leaf_vertical(self, vertical):
        assert vertical.same_leaf([0.2, 0.3], [0.2, 0.9])
        assert not vertical.same_leaf([0.2, 0.3], [0.25, 0.3])

    def test_intrinsic_distance_wraps_around_circle(self, vertical):
        assert vertical.intrinsic_leaf_dist([0.2, 0.1], [0.2, 0.9]) == pytest.approx(0.2)
        assert vertical.intrinsic_leaf_dist([0.2, 0.1], [0.3, 0.1]) == float("inf")

    def test_intrinsic_distance_diagonal(self, diagonal):
        assert diagonal.same_leaf([0.0, 0.0], [0.5, 0.5])
        assert diagonal.intrinsic_leaf_dist([0.0, 0.0], [0.5, 0.5]) == pytest.approx(np.sqrt(0.5))

    def test_plaque_distance_in_leaf_excess(self, vertical):
        """A point on the same circle but 0.2 away along it sits 0.1 outside a 0.1-plaque"""
        assert vertical.plaque_distances([0.2, 0.1], [0.2, 0.9], 0.1) == pytest.approx(0.1)
        assert vertical.plaque_distances([0.2, 0.1], [0.25, 0.1], 0.1) == pytest.approx(0.05)

    def test_plaque_membership(self, vertical):
        P = vertical.plaque([0.2, 0.1], 0.15)
        assert vertical.membership_in_plaque(P, [0.2, 0.2])
        assert not vertical.membership_in_plaque(P, [0.2, 0.4])
        assert not vertical.membership_in_plaque(P, [0.21, 0.1])

    def test_plaque_distance_monotone_in_radius(self, diagonal):
        """Growing plaques never move away from a point"""
        rng = np.random.default_rng(5)
        c, y = rng.random((2, 1000, 2))
        small = diagonal.plaque_distances(c, y, 0.05)
        large = diagonal.plaque_distances(c, y, 0.2)
        assert np.all(large <= small + 1e-12)

    def test_quotient_distance_is_transverse_gap(self, vertical):
        a, b = np.array([0.1, 0.3]), np.array([0.95, 0.8])
        gap = torus_dist(vertical.quotient_project(a), vertical.quotient_project(b))
        assert gap == pytest.approx(0.15)
        assert vertical.transverse_gap(a, b) == pytest.approx(0.15)

    def test_leaf_samples_stay_on_leaf(self, vertical):
        samples = vertical.leaf_samples([0.3, 0.2], 8)
        assert samples.shape == (8, 2)
        assert np.allclose(samples[:, 0], 0.3)

    def test_invalid_directions(self):
        with pytest.raises(InvalidInput):
            LinearFoliation.linear(2, [[0, 2]])
        with pytest.raises(InvalidInput):
            LinearFoliation.linear(2, [[1, 0], [0, 1]])
        with pytest.raises(InvalidInput):
            LinearFoliation.linear(3, [[1, 0, 0], [2, 0, 0]])


def sampled_plaque_distance(F, center, y, radius, step):
    """Distance from y to a dense sample of the flat plaque disk around center"""
    B = F.tangent_basis
    axis = np.arange(-radius, radius + step / 2, step)
    coords = np.array(np.meshgrid(*([axis] * F.leaf_dim), indexing="ij")).reshape(F.leaf_dim, -1).T
    coords = coords[np.linalg.norm(coords, axis=1) <= radius]
    return float(np.min(torus_dist(center + coords @ B, y)))


class TestPlaqueOracle:
    """Closed-form plaque distances against sampled plaques"""

    @pytest.fixture
    def rng(self):
        return np.random.default_rng(29)

    @pytest.mark.parametrize("dim,directions,step", [
        (2, [[0, 1]], 1e-4),
        (2, [[1, 1]], 1e-4),
        (3, [[1, 2, 0]], 1e-4),
        (3, [[1, 0, 0], [0, 1, 1]], 2e-3),
    ])
    def test_matches_sampled_plaque(self, rng, dim, directions, step):
        F = LinearFoliation.linear(dim, directions)
        radius = 0.1
        for _ in range(100):
            c, y = rng.random((2, dim))
            y = c + 0.3 * (y - 0.5)
            exact = F.dist_to_plaque(F.plaque(c, radius), y)
            sampled = sampled_plaque_distance(F, c, y, radius, step)
            assert exact <= sampled + 1e-12
            assert sampled - exact <= step * F.leaf_dim ** 0.5

    def test_one_lipschitz_in_point(self, rng):
        for F in (LinearFoliation.linear(2, [[1, 1]]), LinearFoliation.linear(3, [[1, 0, 0], [0, 1, 1]]),
                  LinearFoliation.points(2), LinearFoliation.whole(3)):
            c = rng.random((1000, F.dim))
            y = rng.random((1000, F.dim))
            z = y + rng.normal(scale=0.05, size=y.shape)
            gap = np.abs(F.plaque_distances(c, y, 0.1) - F.plaque_distances(c, z, 0.1))
            assert np.all(gap <= torus_dist(y, z) + 1e-12)


class TestLeafRelation:
    """same_leaf is an equivalence relation that the quotient projection detects"""

    @pytest.fixture
    def rng(self):
        return np.random.default_rng(31)

    @pytest.fixture(params=[(2, [[1, 1]]), (3, [[0, 0, 1]]), (3, [[1, 0, 0], [0, 1, 1]])])
    def foliation(self, request):
        dim, directions = request.param
        return LinearFoliation.linear(dim, directions)

    def _along_leaf(self, F, x, rng):
        t = rng.uniform(-2.0, 2.0, F.leaf_dim)
        return x + t @ F.directions.astype(float)

    def test_equivalence(self, foliation, rng):
        F = foliation
        for _ in range(1000):
            x = rng.random(F.dim)
            y = self._along_leaf(F, x, rng)
            z = self._along_leaf(F, y, rng)
            other = rng.random(F.dim)
            assert F.same_leaf(x, x)
            assert F.same_leaf(x, y) and F.same_leaf(y, x)
            assert F.same_leaf(y, z) and F.same_leaf(x, z)
            assert F.same_leaf(x, other) == F.same_leaf(other, x)
            if not F.same_leaf(x, other):
                assert not F.same_leaf(z, other)

    def test_quotient_equal_iff_same_leaf(self, foliation, rng):
        F = foliation
        for _ in range(1000):
            x = rng.random(F.dim)
            y = self._along_leaf(F, x, rng) if rng.random() < 0.5 else rng.random(F.dim)
            gap = torus_dist(F.quotient_project(x), F.quotient_project(y))
            assert (gap <= 1e-9) == F.same_leaf(x, y)


class TestTwoDimensionalLeaves:
    """Planes in T^3"""

    @pytest.fixture
    def horizontal(self):
        return LinearFoliation.linear(3, [[1, 0, 0], [0, 1, 0]])

    @pytest.fixture
    def tilted(self):
        return LinearFoliation.linear(3, [[1, 0, 0], [0, 1, 1]])

    def test_dimensions(self, horizontal, tilted):
        assert horizontal.leaf_dim == 2
        assert horizontal.transverse_dim == 1
        assert np.abs(horizontal.transverse_basis).tolist() == [[0, 0, 1]]
        assert np.all(tilted.transverse_basis @ tilted.directions.T == 0)

    def test_intrinsic_distance_wraps(self, horizontal):
        a, b = [0.1, 0.1, 0.3], [0.9, 0.2, 0.3]
        assert horizontal.same_leaf(a, b)
        assert horizontal.intrinsic_leaf_dist(a, b) == pytest.approx(np.sqrt(0.05))
        assert horizontal.intrinsic_leaf_dist(a, [0.1, 0.1, 0.4]) == float("inf")

    def test_tilted_leaf_distance(self, tilted):
        a = np.array([0.2, 0.1, 0.3])
        b = a + np.array([0.1, 0.2, 0.2])
        assert tilted.same_leaf(a, b)
        assert tilted.intrinsic_leaf_dist(a, b) == pytest.approx(np.sqrt(0.01 + 0.08))
        assert tilted.transverse_gap(a, a + np.array([0.0, 0.0, 0.1])) == pytest.approx(0.1)

    def test_plaque_membership(self, horizontal):
        P = horizontal.plaque([0.5, 0.5, 0.5], 0.1)
        assert horizontal.membership_in_plaque(P, [0.56, 0.56, 0.5])
        assert not horizontal.membership_in_plaque(P, [0.58, 0.58, 0.5])
        assert horizontal.plaque_distances([0.5, 0.5, 0.5], [0.5, 0.5, 0.55], 0.1) == pytest.approx(0.05)

    def test_leaf_samples_cover_plane(self, horizontal):
        samples = horizontal.leaf_samples([0.3, 0.2, 0.7], 4)
        assert samples.shape == (16, 3)
        assert np.allclose(samples[:, 2], 0.7)


class TestLeafCoords:

    def test_vertical_circles(self):
        transverse, tangent = LinearFoliation.linear(2, [[0, 1]]).leaf_coords([0.3, 0.7])
        assert np.allclose(transverse, [0.3])
        assert np.allclose(np.abs(tangent), [0.7])

    def test_points_transverse_is_point(self):
        transverse, tangent = LinearFoliation.points(2).leaf_coords([0.2, 0.4])
        assert np.allclose(transverse, [0.2, 0.4])
        assert tangent.shape == (0,)

    def test_diagonal(self):
        transverse, _ = LinearFoliation.linear(2, [[1, 1]]).leaf_coords([0.5, 0.0])
        assert np.allclose(transverse, [0.5])

    def test_whole_unsupported(self):
        with pytest.raises(Unsupported):
            LinearFoliation.whole(2).leaf_coords([0.1, 0.2])
