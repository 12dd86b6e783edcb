"""
Chain Recurrence Service
Grid-discretized chain graph, its recurrent set, and periodic-leaf certificates
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import sparse
from scipy.sparse.csgraph import breadth_first_order, connected_components

from app.core.config import resolve_threads
from app.core.errors import InvalidInput, LeafReturnFailed, ShadowNotFound
from app.services.foliation import FoliationKind, LinearFoliation
from app.services.grid import Grid
from app.services.orbits import Trajectory
from app.services.shadowing import ShadowingEngine
from app.services.toral_maps import ToralMap, induced_quotient_map
from app.services.torus import as_point, torus_dist, wrap, wrap_diff

SOURCE_CHUNK = 512
EDGE_PAIRS = 100_000


class ChainGraph:
    """Directed graph on grid cells: c -> c' iff f(center c) is within delta + eta of plaque(center c', delta + eta)"""

    def __init__(self, f: ToralMap, F: LinearFoliation, delta: float, grid: Grid, adjacency: sparse.csr_matrix):
        self.f = f
        self.F = F
        self.delta = float(delta)
        self.grid = grid
        self.eta = grid.cell_diameter
        self.adjacency = adjacency

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.nnz)

    def successors(self, cell: int) -> np.ndarray:
        row = self.adjacency.getrow(int(cell))
        return np.sort(row.indices)

    def to_dict(self) -> Dict:
        return {"delta": self.delta, "eta": self.eta, "cells": self.grid.size, "edges": self.edge_count}


def _edges_for_chunk(f: ToralMap, F: LinearFoliation, grid: Grid, sources: np.ndarray, radius: float, bound: float,
                     offsets: np.ndarray):
    images = f.apply(grid.centers[sources])
    base = grid.cell_of(images)
    cand_cells = (base[:, None, :] + offsets[None, :, :]) % grid.n
    cand = grid.flat_index(cand_cells)
    dist = F.plaque_distances(grid.centers[cand], images[:, None, :], radius)
    hit = dist <= bound
    rows = np.repeat(sources, cand.shape[1]).reshape(cand.shape)[hit]
    return rows, cand[hit], dist[hit]


def cell_step_edges(f: ToralMap, F: LinearFoliation, grid: Grid, radius: float, bound: float,
                    threads: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique (source, target, defect) triples with dist(f(center source), plaque(center target, radius)) <= bound"""
    reach = bound if F.kind == FoliationKind.POINTS else radius + bound
    offsets = grid.box_offsets([reach] * grid.dim)
    size = max(1, min(SOURCE_CHUNK, EDGE_PAIRS // len(offsets)))
    chunks = [np.arange(s, min(s + size, grid.size)) for s in range(0, grid.size, size)]
    n_jobs = resolve_threads(threads)
    if n_jobs > 1:
        parts = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_edges_for_chunk)(f, F, grid, chunk, radius, bound, offsets) for chunk in chunks)
    else:
        parts = [_edges_for_chunk(f, F, grid, chunk, radius, bound, offsets) for chunk in chunks]
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    dists = np.concatenate([p[2] for p in parts])
    keys, first = np.unique(rows * grid.size + cols, return_index=True)
    return keys // grid.size, keys % grid.size, dists[first]


def build_chain_graph(f: ToralMap, F: LinearFoliation, delta: float, grid: Grid, threads: Optional[int] = None) -> ChainGraph:
    if delta <= 0:
        raise InvalidInput("delta must be positive")
    if f.dim != F.dim or f.dim != grid.dim:
        raise InvalidInput("map, foliation and grid disagree on dimension")
    slack = delta + grid.cell_diameter
    rows, cols, _ = cell_step_edges(f, F, grid, slack, slack, threads)
    adjacency = sparse.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(grid.size, grid.size))
    return ChainGraph(f, F, delta, grid, adjacency)


@dataclass(eq=False)
class RecurrenceResult:
    cells: np.ndarray
    labels: np.ndarray
    recurrent_mask: np.ndarray
    scc_count: int
    component_count: int
    delta: float
    eta: float

    @property
    def resolution_limited(self) -> bool:
        return self.delta <= self.eta

    def to_dict(self) -> Dict:
        total = self.recurrent_mask.size
        return {
            "recurrent_cells": int(self.cells.size),
            "total_cells": int(total),
            "fraction": float(self.cells.size / total) if total else 0.0,
            "recurrent_components": self.scc_count,
            "strong_components": self.component_count,
            "delta": self.delta,
            "eta": self.eta,
            "resolution_limited": self.resolution_limited,
        }


def chain_recurrent_cells(G: ChainGraph) -> RecurrenceResult:
    """Cells on a directed cycle: strong components of size >= 2 or carrying a self-loop"""
    count, labels = connected_components(G.adjacency, directed=True, connection="strong")
    sizes = np.bincount(labels, minlength=count)
    self_loop = G.adjacency.diagonal() > 0
    mask = (sizes[labels] >= 2) | self_loop
    cells = np.flatnonzero(mask)
    return RecurrenceResult(
        cells=cells,
        labels=labels,
        recurrent_mask=mask,
        scc_count=int(np.unique(labels[cells]).size),
        component_count=int(count),
        delta=G.delta,
        eta=G.eta,
    )


def chain_related(G: ChainGraph, x, y, result: Optional[RecurrenceResult] = None) -> bool:
    if result is None:
        result = chain_recurrent_cells(G)
    cx = int(G.grid.flat_of(as_point(x, G.grid.dim)))
    cy = int(G.grid.flat_of(as_point(y, G.grid.dim)))
    if result.labels[cx] != result.labels[cy]:
        return False
    return cx != cy or bool(result.recurrent_mask[cx])


def chain_loop(G: ChainGraph, cell: int) -> List[int]:
    """Shortest cycle c_0 = cell, ..., c_r = cell in the chain graph"""
    cell = int(cell)
    if G.adjacency[cell, cell]:
        return [cell, cell]
    order, predecessors = breadth_first_order(G.adjacency, cell, directed=True, return_predecessors=True)
    reached = np.zeros(G.grid.size, dtype=bool)
    reached[order] = True
    into_cell = G.adjacency.getcol(cell).tocoo().row
    into_cell = into_cell[reached[into_cell]]
    if into_cell.size == 0:
        raise InvalidInput(f"cell {cell} is not chain recurrent at delta={G.delta}")
    # BFS rank is monotone in hop distance
    rank = np.full(G.grid.size, np.iinfo(np.int64).max)
    rank[order] = np.arange(order.size)
    last = int(into_cell[np.argmin(rank[into_cell])])
    path = [last]
    while path[-1] != cell:
        path.append(int(predecessors[path[-1]]))
    return path[::-1] + [cell]


def loop_trajectory(G: ChainGraph, loop: List[int]) -> Trajectory:
    return Trajectory(G.grid.centers[np.asarray(loop, dtype=np.int64)])


def detect_leaf_periodic(f: ToralMap, F: LinearFoliation, x, kmax: int, tol: float = 1e-9) -> Optional[int]:
    """Smallest k in 1..kmax with f^k(x) on the leaf of x, or None"""
    if kmax < 1:
        raise InvalidInput("kmax must be >= 1")
    x = as_point(x, f.dim)
    cur = x
    for k in range(1, kmax + 1):
        cur = f.apply(cur)
        if F.same_leaf(cur, x, tol):
            return k
    return None


def _quotient_periodic_point(Q: ToralMap, q0: np.ndarray, r: int, iterations: int = 40, tol: float = 1e-13) -> np.ndarray:
    """Newton solve of Q^r(q) = q started at q0"""
    q = q0.astype(float).copy()
    eye = np.eye(Q.dim)
    for _ in range(iterations):
        orbit = [q]
        for _ in range(r):
            orbit.append(Q.lift(orbit[-1]))
        residual = wrap_diff(orbit[-1] - q)
        if np.max(np.abs(residual)) <= tol:
            break
        J = eye.copy()
        for point in orbit[:-1]:
            J = Q.jacobian(wrap(point)) @ J
        step = np.linalg.lstsq(J - eye, residual, rcond=None)[0]
        q = q - step
    return wrap(q)


def _return_defect(f: ToralMap, F: LinearFoliation, point: np.ndarray, period: int) -> float:
    image = f.iterate(point, period)
    if F.kind == FoliationKind.POINTS:
        return float(torus_dist(image, point))
    return float(F.transverse_gap(image, point))


def periodic_leaf_from_chain(
    f: ToralMap,
    F: LinearFoliation,
    loop: Trajectory,
    eps: float,
    grid: Grid,
    leaf_tol: float = 1e-6,
    horizon: Optional[int] = None,
) -> Dict:
    """Certificate for a leaf L with f^r(L) = L passing within eps of the loop start.

    The periodized loop is shadowed first; the resulting point is then pulled
    onto an exactly periodic leaf by Newton on the quotient and lifted back
    transversally.
    """
    r = len(loop) - 1
    if r < 1:
        raise InvalidInput("a loop needs at least one step")
    N = horizon if horizon is not None else r * max(1, int(np.ceil(4 / r)))
    engine = ShadowingEngine(f, F, grid, leaf_tol)
    shadow = engine.shadow_periodized(loop, eps, N, require_orbit=True)
    y0 = shadow.trajectory.at(0)

    if F.kind == FoliationKind.WHOLE:
        point = y0
    else:
        Q = induced_quotient_map(f, F)
        q0 = F.quotient_project(y0) if F.kind == FoliationKind.LINEAR else y0
        q = _quotient_periodic_point(Q, q0, r)
        if F.kind == FoliationKind.POINTS:
            point = q
        else:
            lift = np.linalg.pinv(F.transverse_basis.astype(float))
            point = wrap(y0 + lift @ wrap_diff(q - q0))

    return_defect = _return_defect(f, F, point, r)
    offset = float(torus_dist(point, loop.points[0]))
    payload = {
        "period": r,
        "point": point.tolist(),
        "return_defect": return_defect,
        "offset": offset,
        "shadow_max_offset": shadow.max_offset,
    }
    if return_defect > leaf_tol:
        raise LeafReturnFailed(f"leaf return defect {return_defect:.3g} exceeds {leaf_tol:.3g}", payload)
    if offset > eps + leaf_tol:
        raise LeafReturnFailed(f"periodic leaf point drifted {offset:.3g} from the loop start", payload)
    payload["minimal_period"] = detect_leaf_periodic(f, F, point, r, max(leaf_tol, 1e-9))
    return payload


def _reuse_certificate(f: ToralMap, F: LinearFoliation, x: np.ndarray, points: List[np.ndarray], periods: List[int],
                       origins: List[int], eps: float, leaf_tol: float) -> Optional[Dict]:
    """Nearest already-certified leaf through the eps-ball around x, if any"""
    P = np.asarray(points)
    moved = wrap(P + F.project_along_leaf(wrap_diff(x - P))) if F.kind == FoliationKind.LINEAR else P
    offsets = np.atleast_1d(torus_dist(moved, x))
    best = int(np.argmin(offsets))
    if offsets[best] > eps:
        return None
    point, period = moved[best], periods[best]
    return_defect = _return_defect(f, F, point, period)
    if return_defect > leaf_tol:
        return None
    return {
        "source_cell": origins[best],
        "period": period,
        "point": point.tolist(),
        "return_defect": return_defect,
        "offset": float(offsets[best]),
    }


def certify_recurrent_cells(f: ToralMap, F: LinearFoliation, G: ChainGraph, cells, eps: float,
                            leaf_tol: float = 1e-6) -> Tuple[List[Dict], List[Dict]]:
    """Periodic-leaf certificate for every listed cell.

    A leaf certified earlier is reused when it passes within eps of the cell
    center; otherwise a fresh certificate is built from the cell's chain loop.
    Returns (certificates, failures).
    """
    certificates, failures = [], []
    points, periods, origins = [], [], []
    for cell in np.asarray(cells, dtype=np.int64):
        cell = int(cell)
        cert = None
        if points:
            cert = _reuse_certificate(f, F, G.grid.centers[cell], points, periods, origins, eps, leaf_tol)
        if cert is None:
            try:
                loop = chain_loop(G, cell)
                cert = periodic_leaf_from_chain(f, F, loop_trajectory(G, loop), eps, G.grid, leaf_tol)
            except (LeafReturnFailed, ShadowNotFound) as e:
                failures.append({"cell": cell, "error": type(e).__name__, "detail": e.detail, **e.payload})
                continue
            cert = {"source_cell": cell, "loop": loop, **cert}
            points.append(np.asarray(cert["point"], dtype=float))
            periods.append(cert["period"])
            origins.append(cell)
        certificates.append({"cell": cell, **cert})
    return certificates, failures
