"""
Test quotient systems on the leaf space and the transfer of shadowing
"""

import numpy as np
import pytest

from app.core.errors import InvalidInput, NotInvariant, Unsupported
from app.services.foliation import LinearFoliation
from app.services.grid import Grid
from app.services.orbits import Trajectory, is_exact_orbit, is_foliated_orbit, is_pseudo_orbit
from app.services.quotient import (
    QuotientSystem,
    build_quotient_system,
    leaf_hausdorff_dist,
    random_pseudo_orbit,
    transfer_shadowing_check,
)
from app.services.toral_maps import ToralMap

CAT = [[2, 1], [1, 1]]
CAT_TIMES_ID = [[2, 1, 0], [1, 1, 0], [0, 0, 1]]


@pytest.fixture
def center_circles():
    """Vertical circles in T^3"""
    return LinearFoliation.linear(3, [[0, 0, 1]])


@pytest.fixture
def cat_times_id():
    return ToralMap(CAT_TIMES_ID)


class TestQuotientSystem:

    def test_cat_times_identity(self, cat_times_id, center_circles):
        QS = build_quotient_system(cat_times_id, center_circles, np.random.default_rng(1))

        assert QS.Q.matrix.tolist() == CAT
        assert QS.commuting_defect <= 1e-9
        assert QS.distortion == pytest.approx(1.0)
        assert QS.to_dict()["samples"] == 200

    def test_points_quotient_is_the_map(self):
        f = ToralMap(CAT)
        QS = build_quotient_system(f, LinearFoliation.points(2))
        assert QS.Q is f
        assert QS.commuting_defect == 0.0
        assert np.allclose(QS.project([1.25, 0.5]), [0.25, 0.5])

    def test_height_dependent_perturbation_not_invariant(self, center_circles):
        f = ToralMap.from_spec({
            "matrix": CAT_TIMES_ID,
            "perturbation": [{"freq": [0, 0, 1], "coeff": [0.01, 0.0, 0.0], "phase": "sin"}],
        })
        with pytest.raises(NotInvariant) as exc:
            build_quotient_system(f, center_circles)
        assert len(exc.value.payload["witness"]) == 3

    def test_single_leaf_has_no_quotient(self):
        with pytest.raises(Unsupported):
            build_quotient_system(ToralMap(CAT), LinearFoliation.whole(2))

    def test_foliated_orbits_project_to_orbits(self, cat_times_id, center_circles):
        """In-leaf kicks of size eps vanish downstairs on 100 random (F, eps)-orbits"""
        QS = build_quotient_system(cat_times_id, center_circles)
        rng = np.random.default_rng(13)
        eps = 0.05
        for _ in range(100):
            points = [rng.random(3)]
            for _ in range(10):
                points.append(cat_times_id.apply(points[-1]) + np.array([0.0, 0.0, rng.uniform(-eps, eps)]))
            upstairs = Trajectory(np.array(points))
            assert is_foliated_orbit(cat_times_id, center_circles, upstairs, eps).valid
            downstairs = Trajectory(QS.project(upstairs.points))
            assert is_pseudo_orbit(QS.Q, downstairs, QS.distortion * eps).valid
            assert is_exact_orbit(QS.Q, downstairs).valid


class TestTransferShadowing:

    def test_projected_shadows_stay_close(self, cat_times_id, center_circles):
        QS = build_quotient_system(cat_times_id, center_circles)
        report = transfer_shadowing_check(QS, 0.005, 0.05, Grid(3, 32), np.random.default_rng(5), trials=3, length=8,
                                          leaf_tol=1e-6)

        # Assertions
        assert report["passed"] is True
        assert len(report["trials"]) == 3
        for row in report["trials"]:
            assert row["shadowed"]
            assert row["projected_max_offset"] <= report["bound"]
            assert row["projected_step_defect"] <= 1e-6

    def test_single_leaf_rejected(self):
        f = ToralMap(CAT)
        QS = QuotientSystem(f=f, F=LinearFoliation.whole(2), Q=f, commuting_defect=0.0, samples=0)
        with pytest.raises(InvalidInput):
            transfer_shadowing_check(QS, 0.005, 0.05, Grid(2, 8), np.random.default_rng(0))


class TestHelpers:

    def test_random_pseudo_orbit(self):
        f = ToralMap(CAT)
        pseudo = random_pseudo_orbit(f, np.random.default_rng(9), 0.01, 15)
        assert len(pseudo) == 16
        assert is_pseudo_orbit(f, pseudo, 0.01).valid

    def test_random_pseudo_orbit_length(self):
        with pytest.raises(InvalidInput):
            random_pseudo_orbit(ToralMap(CAT), np.random.default_rng(0), 0.01, 0)

    def test_leaf_hausdorff(self, center_circles):
        d = leaf_hausdorff_dist(center_circles, [0.1, 0.2, 0.3], [0.15, 0.2, 0.9])
        assert d == pytest.approx(0.05, abs=1 / 64)

    def test_same_leaf_distance_zero(self, center_circles):
        assert leaf_hausdorff_dist(center_circles, [0.1, 0.2, 0.0], [0.1, 0.2, 0.5]) == pytest.approx(0.0, abs=1e-12)
