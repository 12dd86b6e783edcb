"""
Expansivity Lab Service
Finite-horizon search for pairs of foliated orbits that never separate, and the
uniform expansivity estimate built on top of it
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse

from app.core.config import get_settings
from app.core.errors import InvalidInput, NotCertified, Timeout
from app.services.chain_recurrence import cell_step_edges
from app.services.foliation import LinearFoliation
from app.services.grid import Grid
from app.services.orbits import Trajectory, is_foliated_orbit
from app.services.shadowing import refine_foliated
from app.services.toral_maps import ToralMap
from app.services.torus import torus_dist


@dataclass(eq=False)
class ExpansivityWitness:
    """Two (F, e)-orbits over [-N, N] that stay e-close while y_0 sits off the eps0-plaque of x_0"""
    x: Trajectory
    y: Trajectory
    pair_distance: float
    defect: float
    e: float
    eps0: float
    rho: float
    cells: Tuple[List[int], List[int]] = field(default_factory=lambda: ([], []))

    def to_dict(self) -> Dict:
        return {
            "x": self.x.to_list(),
            "y": self.y.to_list(),
            "index_offset": self.x.index_offset,
            "pair_distance": self.pair_distance,
            "defect": self.defect,
            "e": self.e,
            "eps0": self.eps0,
            "rho": self.rho,
            "x_cells": list(self.cells[0]),
            "y_cells": list(self.cells[1]),
        }


@dataclass
class SearchOutcome:
    """Result of one (e, N) search; witness is None for NoneFound at this resolution"""
    e: float
    eps0: float
    rho: float
    horizon: int
    grid_n: int
    states: int
    viable_pairs: int
    candidates: int
    candidates_tried: int
    witness: Optional[ExpansivityWitness] = None

    @property
    def found(self) -> bool:
        return self.witness is not None

    def to_dict(self) -> Dict:
        out = {
            "result": "witness" if self.found else "none_found",
            "e": self.e,
            "eps0": self.eps0,
            "rho": self.rho,
            "horizon": self.horizon,
            "grid_n": self.grid_n,
            "states": self.states,
            "viable_pairs": self.viable_pairs,
            "candidates": self.candidates,
            "candidates_tried": self.candidates_tried,
        }
        if self.witness is not None:
            out["witness"] = self.witness.to_dict()
        return out


def _pair_mask(grid: Grid, radius: float) -> sparse.csr_matrix:
    """Cell pairs (a, b) whose centers lie within radius"""
    rows, cols = [], []
    for a in range(grid.size):
        near = grid.cells_within(grid.centers[a], radius)
        rows.append(np.full(near.size, a, dtype=np.int64))
        cols.append(near)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sparse.csr_matrix((np.ones(rows.size, dtype=np.float32), (rows, cols)), shape=(grid.size, grid.size))


def _as_mask(M: sparse.spmatrix) -> sparse.csr_matrix:
    M = sparse.csr_matrix(M)
    M.eliminate_zeros()
    M.data = np.ones_like(M.data, dtype=np.float32)
    return M


class ProductGraphSearch:
    """Forward and backward viability of cell pairs in the product of the cell-step graph with itself"""

    def __init__(self, f: ToralMap, F: LinearFoliation, grid: Grid, e: float, leaf_tol: float = 1e-9,
                 threads: Optional[int] = None, max_states: Optional[int] = None):
        if e <= 0:
            raise InvalidInput("e must be positive")
        self.f = f
        self.F = F
        self.grid = grid
        self.e = float(e)
        self.leaf_tol = leaf_tol
        self.max_states = get_settings().max_states if max_states is None else int(max_states)
        rows, cols, dists = cell_step_edges(f, F, grid, self.e, grid.cell_diameter, threads)
        shape = (grid.size, grid.size)
        self.step = sparse.csr_matrix((np.ones(rows.size, dtype=np.float32), (rows, cols)), shape=shape)
        self.step_defect = sparse.csr_matrix((dists + 1.0, (rows, cols)), shape=shape)
        self.pairs = _pair_mask(grid, self.e)
        self.states = 0
        self.total_states = 0

    def _charge(self, M: sparse.csr_matrix):
        self.states += int(M.nnz)
        if self.states > self.max_states:
            budget = self.max_states
            raise Timeout(f"product-graph search exceeded {budget} states",
                          {"explored": self.states, "budget": budget, "total_states": self.total_states,
                           "explored_fraction": self.states / max(self.total_states, 1)})

    def viability(self, N: int) -> Tuple[List[sparse.csr_matrix], List[sparse.csr_matrix]]:
        """R[m]: pairs that can be continued m steps forward; B[m]: m steps backward"""
        self.total_states = 2 * N * int(self.pairs.nnz)
        A = self.step
        forward = [self.pairs]
        backward = [self.pairs]
        for _ in range(N):
            nxt_f = _as_mask((A @ forward[-1] @ A.T).multiply(self.pairs))
            nxt_b = _as_mask((A.T @ backward[-1] @ A).multiply(self.pairs))
            self._charge(nxt_f)
            self._charge(nxt_b)
            stable = (nxt_f != forward[-1]).nnz == 0 and (nxt_b != backward[-1]).nnz == 0
            forward.append(nxt_f)
            backward.append(nxt_b)
            if stable:
                break
        return forward, backward

    @staticmethod
    def _level(levels: List[sparse.csr_matrix], m: int) -> sparse.csr_matrix:
        return levels[min(m, len(levels) - 1)]

    def _walk(self, a: int, b: int, levels: List[sparse.csr_matrix], N: int, transpose: bool) -> Tuple[List[int], List[int]]:
        """Greedy pair path of N steps, preferring the successor pair with the smallest step defect"""
        defect = self.step_defect.T.tocsr() if transpose else self.step_defect
        xs, ys = [a], [b]
        for k in range(N):
            allowed = self._level(levels, N - 1 - k)
            ra = defect.getrow(xs[-1])
            rb = defect.getrow(ys[-1])
            best = None
            for ia, da in zip(ra.indices, ra.data):
                for ib, db in zip(rb.indices, rb.data):
                    if allowed[ia, ib]:
                        key = (da + db, ia, ib)
                        if best is None or key < best:
                            best = key
            if best is None:
                break
            xs.append(int(best[1]))
            ys.append(int(best[2]))
        return xs, ys

    def pair_path(self, a: int, b: int, forward, backward, N: int) -> Tuple[List[int], List[int]]:
        fx, fy = self._walk(a, b, forward, N, transpose=False)
        bx, by = self._walk(a, b, backward, N, transpose=True)
        return bx[::-1] + fx[1:], by[::-1] + fy[1:]


def _refined_orbit(f: ToralMap, F: LinearFoliation, centers: np.ndarray, e: float, offset: int) -> Trajectory:
    return Trajectory(refine_foliated(f, F, centers, centers, e), index_offset=offset)


def expansivity_violation_search(
    f: ToralMap,
    F: LinearFoliation,
    e: float,
    eps0: float,
    rho: float,
    N: int,
    grid: Grid,
    max_candidates: int = 32,
    leaf_tol: float = 1e-9,
    threads: Optional[int] = None,
    max_states: Optional[int] = None,
) -> SearchOutcome:
    if min(e, eps0, rho) <= 0:
        raise InvalidInput("e, eps0 and rho must be positive")
    if N < 1:
        raise InvalidInput("horizon N must be >= 1")
    search = ProductGraphSearch(f, F, grid, e, leaf_tol, threads, max_states)
    forward, backward = search.viability(N)
    viable = _as_mask(ProductGraphSearch._level(forward, N).multiply(ProductGraphSearch._level(backward, N))).tocoo()
    centers = grid.centers
    defects = np.atleast_1d(F.plaque_distances(centers[viable.row], centers[viable.col], eps0))
    pair_dist = np.atleast_1d(torus_dist(centers[viable.row], centers[viable.col]))
    transverse = np.atleast_1d(F.transverse_gap(centers[viable.row], centers[viable.col]))
    # pairs whose defect is all transverse come first
    in_leaf_excess = np.abs(defects - transverse) > get_settings().tau_geom
    mask = defects > rho
    order = np.lexsort((viable.col[mask], viable.row[mask], -defects[mask],
                        pair_dist[mask] > e - grid.cell_diameter, in_leaf_excess[mask]))
    cand_a = viable.row[mask][order]
    cand_b = viable.col[mask][order]

    outcome = SearchOutcome(e=float(e), eps0=float(eps0), rho=float(rho), horizon=int(N), grid_n=grid.n,
                            states=search.states, viable_pairs=int(viable.nnz), candidates=int(cand_a.size),
                            candidates_tried=0)
    for a, b in zip(cand_a[:max_candidates], cand_b[:max_candidates]):
        outcome.candidates_tried += 1
        xs, ys = search.pair_path(int(a), int(b), forward, backward, N)
        if len(xs) != 2 * N + 1:
            continue
        witness = _validate_pair(f, F, centers[xs], centers[ys], e, eps0, rho, N, leaf_tol)
        if witness is not None:
            witness.cells = (xs, ys)
            outcome.witness = witness
            break
    outcome.states = search.states
    return outcome


def _validate_pair(f, F, cx, cy, e, eps0, rho, N, leaf_tol) -> Optional[ExpansivityWitness]:
    X = _refined_orbit(f, F, cx, e, N)
    Y = _refined_orbit(f, F, cy, e, N)
    if not is_foliated_orbit(f, F, X, e, leaf_tol).valid or not is_foliated_orbit(f, F, Y, e, leaf_tol).valid:
        return None
    pair_distance = float(np.max(torus_dist(X.points, Y.points)))
    if pair_distance > e:
        return None
    defect = float(F.plaque_distances(X.at(0), Y.at(0), eps0))
    if defect <= rho:
        return None
    return ExpansivityWitness(X, Y, pair_distance, defect, float(e), float(eps0), float(rho))


def verify_witness(f: ToralMap, F: LinearFoliation, w: ExpansivityWitness, leaf_tol: float = 1e-9) -> bool:
    """Independent re-check of both orbit clauses, the pairing bound and the defect"""
    if len(w.x) != len(w.y):
        return False
    ok_orbits = is_foliated_orbit(f, F, w.x, w.e, leaf_tol).valid and is_foliated_orbit(f, F, w.y, w.e, leaf_tol).valid
    close = float(np.max(torus_dist(w.x.points, w.y.points))) <= w.e
    defect = float(F.plaque_distances(w.x.at(0), w.y.at(0), w.eps0))
    return bool(ok_orbits and close and defect > w.rho)


def uniform_expansivity_estimate(
    f: ToralMap,
    F: LinearFoliation,
    eps0: float,
    rho: float,
    N_max: int,
    grid: Grid,
    e_start: Optional[float] = None,
    max_candidates: int = 32,
    leaf_tol: float = 1e-9,
    threads: Optional[int] = None,
    max_states: Optional[int] = None,
) -> Dict:
    """Halve e from e_start down to 2 eta, doubling N up to N_max, until a search finds nothing"""
    if rho <= 0:
        raise InvalidInput("rho must be positive")
    e = 2.0 * eps0 if e_start is None else float(e_start)
    floor = 2.0 * grid.cell_diameter
    table = []
    while e >= floor:
        N = 1
        while N <= N_max:
            try:
                outcome = expansivity_violation_search(f, F, e, eps0, rho, N, grid, max_candidates, leaf_tol,
                                                       threads, max_states)
            except Timeout as err:
                table.append({"e": e, "horizon": N, "result": "timeout", "detail": err.detail})
                break
            table.append({"e": e, "horizon": N, "result": outcome.to_dict()["result"], "states": outcome.states})
            if not outcome.found:
                return {"e": e, "horizon": N, "eps0": eps0, "rho": rho, "grid_n": grid.n, "table": table}
            N *= 2
        e /= 2.0
    raise NotCertified(f"no (e, N) certified down to e = {floor:.4g} and N = {N_max}", {"table": table})


def quotient_consistency(F: LinearFoliation, w: ExpansivityWitness) -> Dict:
    """Quotient-space gaps along a witness pair, and the gap between its defect and
    the transverse separation of x_0 and y_0"""
    qx = F.quotient_project(w.x.points)
    qy = F.quotient_project(w.y.points)
    gaps = np.atleast_1d(torus_dist(qx, qy))
    separation = float(F.transverse_gap(w.x.at(0), w.y.at(0)))
    return {
        "quotient_gap": float(gaps.max()),
        "quotient_gap_spread": float(gaps.max() - gaps.min()),
        "transverse_separation": separation,
        "defect_mismatch": abs(w.defect - separation),
    }
