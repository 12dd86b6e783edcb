"""
Test the grid chain graph, recurrent cells, chain loops and periodic-leaf certificates
"""

import numpy as np
import pytest

from app.core.errors import InvalidInput
from app.services.chain_recurrence import (
    build_chain_graph,
    certify_recurrent_cells,
    chain_loop,
    chain_recurrent_cells,
    chain_related,
    detect_leaf_periodic,
    loop_trajectory,
    periodic_leaf_from_chain,
)
from app.services.foliation import LinearFoliation
from app.services.grid import Grid
from app.services.toral_maps import ToralMap, integer_periodic_points
from app.services.torus import torus_dist

CAT = [[2, 1], [1, 1]]
CAT_TIMES_ID = [[2, 1, 0], [1, 1, 0], [0, 0, 1]]


@pytest.fixture
def north_south():
    """x -> x + 0.1 sin(2 pi x): repelling fixed point at 0, attracting at 1/2"""
    return ToralMap.from_spec({"matrix": [[1]], "perturbation": [{"freq": [1], "coeff": [0.1], "phase": "sin"}]})


class TestGrid:

    def test_cells_and_centers(self):
        grid = Grid(2, 4)
        assert grid.size == 16
        assert grid.cell_diameter == pytest.approx(np.sqrt(2) / 4)
        assert np.allclose(grid.centers[0], [0.125, 0.125])
        assert int(grid.flat_of([0.9, 0.1])) == 12

    def test_cell_center_wraps(self):
        grid = Grid(2, 4)
        assert np.allclose(grid.cell_center([1, 2]), [0.375, 0.625])
        assert np.allclose(grid.cell_center([[-1, 4]]), [[0.875, 0.125]])
        assert np.allclose(grid.cell_center(grid.cell_of([0.9, 0.1])), grid.centers[12])

    def test_cells_within_wraps(self):
        grid = Grid(1, 10)
        cells = grid.cells_within([0.0], 0.06)
        assert cells.tolist() == [0, 9]


class TestChainRecurrence:
    """Recurrent cells of the chain graph"""

    @pytest.fixture
    def circle_graph(self, north_south):
        return build_chain_graph(north_south, LinearFoliation.points(1), 0.002, Grid(1, 100))

    def test_recurrence_at_fixed_points(self, circle_graph):
        result = chain_recurrent_cells(circle_graph)
        assert result.cells.size > 0
        centers = circle_graph.grid.centers[result.cells][:, 0]
        gaps = np.minimum(np.abs(centers - 0.5), np.minimum(centers, 1.0 - centers))
        assert np.all(gaps <= 0.05)
        assert result.recurrent_mask[0]
        assert result.recurrent_mask[50]

    def test_recurrent_set_monotone_in_delta(self, north_south):
        F = LinearFoliation.points(1)
        grid = Grid(1, 100)
        small = chain_recurrent_cells(build_chain_graph(north_south, F, 0.002, grid))
        large = chain_recurrent_cells(build_chain_graph(north_south, F, 0.02, grid))
        assert set(small.cells.tolist()) <= set(large.cells.tolist())

    def test_cat_map_is_chain_transitive(self):
        G = build_chain_graph(ToralMap(CAT), LinearFoliation.points(2), 0.05, Grid(2, 32))
        result = chain_recurrent_cells(G)
        assert result.recurrent_mask.all()
        assert result.scc_count == 1
        assert chain_related(G, [0.1, 0.1], [0.7, 0.4], result)

    def test_chain_related_needs_same_component(self, circle_graph):
        result = chain_recurrent_cells(circle_graph)
        assert chain_related(circle_graph, [0.004], [0.004], result)
        assert not chain_related(circle_graph, [0.004], [0.5], result)

    def test_invalid_delta(self, north_south):
        with pytest.raises(InvalidInput):
            build_chain_graph(north_south, LinearFoliation.points(1), 0.0, Grid(1, 10))

    def test_resolution_limited_flag(self, circle_graph):
        assert chain_recurrent_cells(circle_graph).resolution_limited

    def test_matches_transitive_closure(self, north_south):
        """Recurrence and strong components agree with a dense closure of the adjacency"""
        G = build_chain_graph(north_south, LinearFoliation.points(1), 0.01, Grid(1, 40))
        result = chain_recurrent_cells(G)
        A = G.adjacency.toarray().astype(np.int64) > 0
        reach = A.copy()
        while True:
            grown = reach | ((reach.astype(np.int64) @ A.astype(np.int64)) > 0)
            if np.array_equal(grown, reach):
                break
            reach = grown

        # Assertions
        assert np.array_equal(result.recurrent_mask, np.diag(reach))
        mutual = (reach & reach.T) | np.eye(G.grid.size, dtype=bool)
        same_label = result.labels[:, None] == result.labels[None, :]
        assert np.array_equal(same_label, mutual)

    @pytest.mark.parametrize("case", ["cat", "north_south"])
    def test_periodic_cells_are_recurrent(self, case, north_south):
        """Cells holding periodic points lie on cycles once delta covers the Lipschitz slack"""
        if case == "cat":
            f, grid, delta = ToralMap(CAT), Grid(2, 32), 0.05
            periodic = np.vstack([integer_periodic_points(CAT, k) for k in (1, 2, 3)])
        else:
            f, grid, delta = north_south, Grid(1, 100), 0.004
            periodic = np.array([[0.0], [0.5]])
        F = LinearFoliation.points(f.dim)
        result = chain_recurrent_cells(build_chain_graph(f, F, delta, grid))

        for x in periodic:
            assert detect_leaf_periodic(f, F, x, 3) is not None
        assert result.recurrent_mask[grid.flat_of(periodic)].all()


class TestChainLoop:

    def test_self_loop_at_fixed_point(self, north_south):
        G = build_chain_graph(north_south, LinearFoliation.points(1), 0.002, Grid(1, 100))
        assert chain_loop(G, 50) == [50, 50]

    def test_loop_closes(self):
        G = build_chain_graph(ToralMap(CAT), LinearFoliation.points(2), 0.05, Grid(2, 16))
        loop = chain_loop(G, 37)
        assert loop[0] == loop[-1] == 37
        for a, b in zip(loop[:-1], loop[1:]):
            assert G.adjacency[a, b]
        assert len(loop_trajectory(G, loop)) == len(loop)

    def test_non_recurrent_cell(self, north_south):
        G = build_chain_graph(north_south, LinearFoliation.points(1), 0.002, Grid(1, 100))
        with pytest.raises(InvalidInput):
            chain_loop(G, 25)


class TestPeriodicLeaves:
    """Leaf-periodic detection and certificates"""

    def test_periodic_points_are_leaf_periodic(self):
        """Every exact periodic point of period k has a leaf period dividing k"""
        f = ToralMap(CAT)
        foliations = [LinearFoliation.points(2), LinearFoliation.whole(2)]
        for k in (1, 2, 3):
            for x in integer_periodic_points(CAT, k):
                for F in foliations:
                    period = detect_leaf_periodic(f, F, x, k)
                    assert period is not None
                    assert k % period == 0

    def test_center_leaves_are_fixed(self):
        f = ToralMap(CAT_TIMES_ID)
        F = LinearFoliation.linear(3, [[0, 0, 1]])
        assert detect_leaf_periodic(f, F, [0.0, 0.0, 0.37], 3) == 1
        assert detect_leaf_periodic(f, F, [0.123, 0.456, 0.1], 3) is None

    def test_certificate_at_attracting_fixed_point(self, north_south):
        grid = Grid(1, 100)
        G = build_chain_graph(north_south, LinearFoliation.points(1), 0.002, grid)
        loop = loop_trajectory(G, chain_loop(G, 50))
        cert = periodic_leaf_from_chain(north_south, LinearFoliation.points(1), loop, 0.05, grid)
        assert cert["period"] == 1
        assert torus_dist(np.array(cert["point"]), np.array([0.5])) < 1e-9
        assert cert["return_defect"] <= 1e-6
        assert cert["offset"] <= 0.05
        assert cert["minimal_period"] == 1


class TestCertifyRecurrentCells:
    """Certificates for every recurrent cell around the attracting fixed point"""

    @pytest.fixture
    def attracting_cells(self, north_south):
        grid = Grid(1, 100)
        G = build_chain_graph(north_south, LinearFoliation.points(1), 0.002, grid)
        cells = chain_recurrent_cells(G).cells
        near = [int(c) for c in cells if abs(grid.centers[c, 0] - 0.5) <= 0.05]
        # the cell holding the fixed point goes first so the others reuse its leaf
        return G, [50] + [c for c in near if c != 50]

    def test_every_cell_certified(self, north_south, attracting_cells):
        G, cells = attracting_cells
        certificates, failures = certify_recurrent_cells(north_south, LinearFoliation.points(1), G, cells, 0.05)

        # Assertions
        assert failures == []
        assert [c["cell"] for c in certificates] == cells
        for cert in certificates:
            assert cert["source_cell"] == 50
            assert cert["period"] == 1
            assert cert["return_defect"] <= 1e-6
            assert cert["offset"] <= 0.05
            assert torus_dist(np.array(cert["point"]), np.array([0.5])) < 1e-9

    def test_fresh_certificate_keeps_loop(self, north_south, attracting_cells):
        G, cells = attracting_cells
        certificates, _ = certify_recurrent_cells(north_south, LinearFoliation.points(1), G, cells[:1], 0.05)
        assert certificates[0]["loop"] == [50, 50]
        assert certificates[0]["minimal_period"] == 1

    def test_failure_is_recorded(self, north_south, attracting_cells):
        """The only periodic leaf sits 0.005 from the cell center, outside a 0.004 ball"""
        G, cells = attracting_cells
        certificates, failures = certify_recurrent_cells(north_south, LinearFoliation.points(1), G, cells[:1], 0.004)
        assert certificates == []
        assert failures[0]["cell"] == 50
        assert failures[0]["error"] in ("LeafReturnFailed", "ShadowNotFound")
