"""
Test the set-valued semiconjugacy and the stability contract checks
"""

import numpy as np
import pytest

from app.core.errors import EmptyImage, InvalidInput, MissingSample
from app.services.foliation import LinearFoliation
from app.services.grid import Grid
from app.services.orbits import Trajectory, is_exact_orbit, is_foliated_chain, is_foliated_orbit, orbit_segment
from app.services.semiconjugation import (
    SampleSet,
    SemiconjugationBuilder,
    construct_semiconjugation,
    continuity_sweep_checks,
    forward_closed_samples,
    shadow_via_stability,
    verify_foliated_continuity,
    verify_stability_contract,
    verify_valuation,
)
from app.services.toral_maps import ToralMap
from app.services.torus import torus_dist, wrap

CAT = [[2, 1], [1, 1]]


@pytest.fixture
def cat():
    return ToralMap(CAT)


@pytest.fixture
def perturbed_cat():
    """Cat map plus a 0.002 sine displacement in the first coordinate"""
    return ToralMap.from_spec({"matrix": CAT, "perturbation": [{"freq": [0, 1], "coeff": [0.002, 0.0], "phase": "sin"}]})


@pytest.fixture
def seeds():
    return np.random.default_rng(21).random((2, 2))


class TestSamples:

    def test_forward_closed_segments(self, cat, seeds):
        samples = forward_closed_samples(cat, seeds, 3)

        assert len(samples) == 6
        assert samples.terminal.tolist() == [False, False, True, False, False, True]
        assert samples.successor.tolist() == [1, 2, -1, 4, 5, -1]
        assert torus_dist(cat.apply(samples.points[0]), samples.points[1]) <= 1e-12

    def test_length_must_be_positive(self, cat, seeds):
        with pytest.raises(InvalidInput):
            forward_closed_samples(cat, seeds, 0)

    def test_plain_points_get_matched_successors(self, cat):
        x = np.array([0.13, 0.71])
        points = np.vstack([x, cat.apply(x)])
        H = construct_semiconjugation(cat, LinearFoliation.points(2), cat, 0.04, 2, Grid(2, 64), points)
        assert H.samples.successor.tolist() == [1, -1]
        assert H.samples.terminal.tolist() == [False, True]


class TestUnperturbed:
    """With g = f the image of every sample is the sample itself"""

    @pytest.fixture
    def H(self, cat, seeds):
        samples = forward_closed_samples(cat, seeds, 3)
        return construct_semiconjugation(cat, LinearFoliation.points(2), cat, 0.04, 4, Grid(2, 64), samples)

    def test_images_are_singletons(self, H):
        assert H.image_sizes().tolist() == [1] * 6
        for i, x in enumerate(H.samples.points):
            assert torus_dist(H.images[i][0], x) <= 1e-9

    def test_contract_holds(self, H, cat):
        report = verify_stability_contract(H, cat, cat, LinearFoliation.points(2), 0.32)

        assert report.c0_bound <= 1e-9
        assert report.step_inclusion_defect <= 1e-9
        assert report.witness_step_defect <= 1e-9
        assert report.valuation_defect == 0.0
        assert report.passed

    def test_summary(self, H):
        data = H.to_dict()
        assert data["samples"] == 6
        assert data["image_size_max"] == 1
        assert data["image_spread_max"] == 0.0

    def test_missing_successor_sample(self, cat):
        points = np.random.default_rng(2).random((2, 2))
        samples = SampleSet(points, np.array([False, True]), np.array([-1, -1], dtype=np.int64))
        H = construct_semiconjugation(cat, LinearFoliation.points(2), cat, 0.04, 2, Grid(2, 64), samples)
        with pytest.raises(MissingSample):
            verify_stability_contract(H, cat, cat, LinearFoliation.points(2), 0.32)


class TestPerturbed:

    @pytest.fixture
    def perturbed_H(self, cat, perturbed_cat, seeds):
        samples = forward_closed_samples(perturbed_cat, seeds, 3)
        return construct_semiconjugation(cat, LinearFoliation.points(2), perturbed_cat, 0.02, 6, Grid(2, 128),
                                         samples, leaf_tol=1e-6)

    def test_contract_holds_for_small_perturbation(self, cat, perturbed_cat, perturbed_H):
        F = LinearFoliation.points(2)
        report = verify_stability_contract(perturbed_H, cat, perturbed_cat, F, 0.16, tol=1e-6)

        # Assertions
        assert report.c0_bound <= 0.02 + 1e-9
        assert report.step_inclusion_defect <= Grid(2, 128).cell_diameter
        assert report.witness_step_defect <= 1e-6
        assert verify_valuation(perturbed_H, F, 0.16) <= 1e-6
        assert report.passed

    def test_shifted_witness_shadows_successor(self, cat, perturbed_cat, perturbed_H):
        """Dropping the first point of a witness for x gives a witness for g(x) one step shorter"""
        F = LinearFoliation.points(2)
        samples = perturbed_H.samples
        checked = 0
        for i, witnesses in enumerate(perturbed_H.witnesses):
            if samples.terminal[i]:
                continue
            successor = samples.points[samples.successor[i]]
            target = orbit_segment(perturbed_cat, successor, perturbed_H.horizon - 1)
            for w in witnesses:
                shifted = Trajectory(w.points[1:], index_offset=w.index_offset)
                assert torus_dist(shifted.at(0), w.at(1)) == 0.0
                assert is_foliated_orbit(cat, F, shifted, 0.02, 1e-6).valid
                overlap = shifted.points[1:]
                assert np.max(torus_dist(overlap, target.points)) <= 0.02 + 1e-6
                checked += 1
        assert checked > 0

    def test_map_distance_is_checked(self, cat, perturbed_cat, perturbed_H):
        F = LinearFoliation.points(2)
        close = verify_stability_contract(perturbed_H, cat, perturbed_cat, F, 0.16, tol=1e-6, delta=0.0025)
        far = verify_stability_contract(perturbed_H, cat, perturbed_cat, F, 0.16, tol=1e-6, delta=0.001)

        assert close.map_distance[0] == pytest.approx(0.002, abs=1e-5)
        assert close.map_distance[0] <= close.map_distance[1] <= 0.0025
        assert close.passed
        assert not far.map_distance_ok
        assert not far.passed
        assert far.to_dict()["map_distance_ok"] is False

    def test_step_inclusion_uses_stored_images(self, cat, perturbed_cat, perturbed_H):
        F = LinearFoliation.points(2)
        perturbed_H.images[1] = wrap(perturbed_H.images[1] + np.array([0.05, 0.0]))
        report = verify_stability_contract(perturbed_H, cat, perturbed_cat, F, 0.16, tol=1e-6)

        assert report.step_inclusion_defect == pytest.approx(0.05, abs=1e-3)
        assert report.witness_step_defect <= 1e-6
        assert not report.passed

    def test_builder_rejects_bad_radius(self, cat):
        with pytest.raises(InvalidInput):
            SemiconjugationBuilder(cat, LinearFoliation.points(2), cat, 0.0, 4, Grid(2, 16))

    def test_empty_image_at_coarse_grid(self, cat):
        builder = SemiconjugationBuilder(cat, LinearFoliation.points(2), cat, 1e-4, 2, Grid(2, 8))
        with pytest.raises(EmptyImage):
            builder.image([0.3, 0.3])


class TestContinuity:

    def test_observed_rho_tracks_delta(self, cat):
        builder = SemiconjugationBuilder(cat, LinearFoliation.points(2), cat, 0.04, 4, Grid(2, 64))
        base = np.random.default_rng(4).random((3, 2))
        rows = verify_foliated_continuity(builder, LinearFoliation.points(2), 0.32, 0.05, [0.01, 0.2], base,
                                          np.random.default_rng(5), delta_contract=0.01)

        assert [row["in_contract"] for row in rows] == [True, False]
        assert rows[0]["observed_rho"] == pytest.approx(0.01, abs=1e-9)
        assert rows[0]["passed"] is True
        assert rows[1]["passed"] is True

    def test_negative_delta_rejected(self, cat):
        builder = SemiconjugationBuilder(cat, LinearFoliation.points(2), cat, 0.04, 2, Grid(2, 32))
        with pytest.raises(InvalidInput):
            verify_foliated_continuity(builder, LinearFoliation.points(2), 0.32, 0.05, [-0.1], [[0.1, 0.1]],
                                       np.random.default_rng(0), delta_contract=0.01)

    @staticmethod
    def sweep_rows(values):
        """Rows {horizon, delta, observed_rho} from a {(horizon, delta): rho} table"""
        return [{"horizon": N, "delta": d, "observed_rho": rho} for (N, d), rho in values.items()]

    def test_sweep_accepts_shrinking_rho(self):
        rows = self.sweep_rows({(10, 0.1): 0.1, (10, 0.01): 0.0101, (20, 0.1): 0.1, (20, 0.01): 0.0100})
        checks = continuity_sweep_checks(rows, 1e-6)

        assert checks["monotone_in_delta"] is True
        assert checks["nonincreasing_in_horizon"] is True
        assert checks["passed"] is True

    def test_sweep_flags_growth_with_horizon(self):
        rows = self.sweep_rows({(10, 0.01): 0.0100, (40, 0.01): 0.0102})
        checks = continuity_sweep_checks(rows, 1e-6)

        assert checks["nonincreasing_in_horizon"] is False
        assert checks["worst_horizon_increase"] == pytest.approx(2e-4)
        assert continuity_sweep_checks(rows, 1e-3)["passed"] is True

    def test_sweep_flags_growth_as_delta_shrinks(self):
        rows = self.sweep_rows({(10, 0.1): 0.01, (10, 0.001): 0.02})
        assert continuity_sweep_checks(rows, 1e-6)["monotone_in_delta"] is False

    def test_empty_sweep_passes(self):
        assert continuity_sweep_checks([], 1e-6)["passed"] is True

    def test_measured_sweep_is_monotone(self, cat):
        base = np.random.default_rng(4).random((3, 2))
        rows = []
        for N in (2, 4):
            builder = SemiconjugationBuilder(cat, LinearFoliation.points(2), cat, 0.04, N, Grid(2, 64))
            for row in verify_foliated_continuity(builder, LinearFoliation.points(2), 0.32, 0.05, [0.1, 0.01], base,
                                                  np.random.default_rng(5), delta_contract=0.01):
                rows.append({"horizon": N, **row})
        assert continuity_sweep_checks(rows, 1e-9)["passed"] is True


class TestShadowViaStability:

    @pytest.fixture
    def chain(self):
        """Cat-map chain from (0.1, 0.2) with a 0.0003 kick after each step"""
        return Trajectory(np.array([[0.1, 0.2], [0.4003, 0.3], [0.1006, 0.7006], [0.9018, 0.8015]]))

    def test_chain_is_shadowed(self, cat, chain):
        F = LinearFoliation.points(2)
        solution = shadow_via_stability(cat, F, chain, 0.2, Grid(2, 64), leaf_tol=1e-6)

        assert solution.source == "stability"
        assert solution.max_offset <= 0.2
        assert is_foliated_chain(cat, F, solution.trajectory, 0.2, 1e-6).valid

    def test_single_point_rejected(self, cat):
        with pytest.raises(InvalidInput):
            shadow_via_stability(cat, LinearFoliation.points(2), Trajectory(np.array([[0.1, 0.2]])), 0.2, Grid(2, 16))

    def test_witness_comes_from_perturbed_map(self, cat, chain, monkeypatch):
        builders = []
        image = SemiconjugationBuilder.image

        def recording_image(builder, x):
            builders.append(builder)
            return image(builder, x)

        monkeypatch.setattr(SemiconjugationBuilder, "image", recording_image)
        solution = shadow_via_stability(cat, LinearFoliation.points(2), chain, 0.2, Grid(2, 64), leaf_tol=1e-6)

        # Assertions
        assert len(builders) == 1
        builder = builders[0]
        assert builder.g is not cat
        assert is_exact_orbit(builder.g, chain, 1e-6).valid
        assert builder.eps_prime == pytest.approx(0.025)
        assert builder.horizon == len(chain) - 1
        assert solution.max_offset <= 0.025 + 1e-9
        assert len(solution.trajectory) == len(chain)
