"""
Shadowing Engine Service
Layered-graph search for foliated shadows, continuous refinement, and the exact
shadowing oracle for hyperbolic linear maps
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed
from scipy import sparse
from scipy.sparse.linalg import lsqr

from app.core.config import get_settings, resolve_threads
from app.core.errors import InvalidInput, ShadowNotFound, Unsupported
from app.services.foliation import FoliationKind, LinearFoliation
from app.services.grid import Grid
from app.services.orbits import (
    Trajectory,
    is_foliated_chain,
    is_foliated_orbit,
    periodize,
    plaque_step_defects,
    step_defects,
)
from app.services.toral_maps import ToralMap, spectral_splitting
from app.services.torus import torus_dist, wrap, wrap_diff

EDGE_PAIRS = 100_000


@dataclass(eq=False)
class ShadowProblem:
    f: ToralMap
    F: LinearFoliation
    target: Trajectory
    eps: float
    grid: Grid
    leaf_tol: float = 1e-9
    require_orbit: bool = False

    def __post_init__(self):
        if self.eps <= 0:
            raise InvalidInput("shadow radius must be positive")
        if self.target.dim != self.f.dim or self.grid.dim != self.f.dim or self.F.dim != self.f.dim:
            raise InvalidInput("map, foliation, grid and target disagree on dimension")

    @property
    def resolution_limited(self) -> bool:
        return self.eps <= self.grid.cell_diameter

    @property
    def target_delta(self) -> float:
        defects = step_defects(self.f, self.target)
        return float(defects.max()) if defects.size else 0.0


@dataclass(eq=False)
class ShadowSolution:
    trajectory: Trajectory
    defects: np.ndarray
    offsets: np.ndarray
    source: str
    cells: List[int] = field(default_factory=list)
    resolution_limited: bool = False
    target_delta: float = 0.0

    @property
    def max_offset(self) -> float:
        return float(self.offsets.max()) if self.offsets.size else 0.0

    def to_dict(self) -> Dict:
        return {
            "trajectory": self.trajectory.to_list(),
            "index_offset": self.trajectory.index_offset,
            "defects": self.defects.tolist(),
            "offsets": self.offsets.tolist(),
            "max_offset": self.max_offset,
            "source": self.source,
            "cells": list(self.cells),
            "resolution_limited": self.resolution_limited,
            "target_delta": self.target_delta,
        }


def refine_foliated(
    f: ToralMap,
    F: LinearFoliation,
    init: np.ndarray,
    anchors: np.ndarray,
    radius: float,
    iterations: int = 12,
    residual_tol: float = 1e-13,
) -> np.ndarray:
    """Minimal-norm Gauss-Newton on the transverse step equations, then in-leaf
    anchoring and a forward clamp of the in-leaf steps to radius"""
    anchors = np.asarray(anchors, dtype=float)
    Y = anchors + wrap_diff(np.asarray(init, dtype=float) - anchors)
    n, d = Y.shape
    if n < 2:
        return wrap(Y)

    if F.kind != FoliationKind.WHOLE:
        W = F.transverse_basis.astype(float)
        r = W.shape[0]
        for _ in range(iterations):
            residual = wrap_diff(f.lift(Y[:-1]) - Y[1:]) @ W.T
            if np.max(np.abs(residual)) <= residual_tol:
                break
            J = f.jacobian(Y[:-1])
            WJ = np.einsum("ij,kjl->kil", W, J)
            rows, cols, vals = [], [], []
            for k in range(n - 1):
                base_r = k * r
                for i in range(r):
                    for j in range(d):
                        rows.append(base_r + i); cols.append(k * d + j); vals.append(WJ[k, i, j])
                        rows.append(base_r + i); cols.append((k + 1) * d + j); vals.append(-W[i, j])
            A = sparse.csr_matrix((vals, (rows, cols)), shape=((n - 1) * r, n * d))
            step = lsqr(A, -residual.reshape(-1), atol=1e-15, btol=1e-15, iter_lim=20 * n * d)[0]
            Y = Y + step.reshape(n, d)

    if F.kind == FoliationKind.LINEAR:
        Y = Y + F.project_along_leaf(wrap_diff(anchors - Y))
    elif F.kind == FoliationKind.WHOLE:
        Y = anchors.copy()

    if F.kind != FoliationKind.POINTS:
        target_radius = radius * (1.0 - 1e-9)
        for k in range(n - 1):
            gap = wrap_diff(f.lift(Y[k]) - Y[k + 1])
            u = F.project_along_leaf(gap) if F.kind == FoliationKind.LINEAR else gap
            norm = float(np.linalg.norm(u))
            if norm > target_radius:
                Y[k + 1] = Y[k + 1] + u * (1.0 - target_radius / norm)
    return wrap(Y)


def _edge_matrix(F: LinearFoliation, images: np.ndarray, targets: np.ndarray, radius: float, bound: float) -> np.ndarray:
    """Boolean matrix [a, b]: dist(images[a], plaque(targets[b], radius)) <= bound"""
    out = np.zeros((images.shape[0], targets.shape[0]), dtype=bool)
    step = max(1, EDGE_PAIRS // max(1, targets.shape[0]))
    for start in range(0, images.shape[0], step):
        chunk = images[start:start + step]
        dist = F.plaque_distances(targets[None, :, :], chunk[:, None, :], radius)
        out[start:start + step] = dist <= bound
    return out


class ShadowingEngine:
    """Finds (F, eps)-chains shadowing a target sequence on a fixed grid"""

    def __init__(self, f: ToralMap, F: LinearFoliation, grid: Grid, leaf_tol: float = 1e-9, threads: Optional[int] = None):
        self.f = f
        self.F = F
        self.grid = grid
        self.leaf_tol = leaf_tol
        self.threads = resolve_threads(threads)

    def _layers(self, target: Trajectory, eps: float) -> List[np.ndarray]:
        layers = [self.grid.cells_within(x, eps) for x in target.points]
        for k, layer in enumerate(layers):
            if layer.size == 0:
                raise ShadowNotFound(f"no grid cell within {eps:.4g} of target point {k}",
                                     {"layer": k, "resolution_limited": True})
        return layers

    def _adjacency(self, layers: List[np.ndarray], eps: float) -> List[np.ndarray]:
        centers = self.grid.centers
        bound = eps + self.grid.cell_diameter

        def build(k: int) -> np.ndarray:
            images = self.f.apply(centers[layers[k]])
            return _edge_matrix(self.F, images, centers[layers[k + 1]], eps, bound)

        if self.threads > 1 and len(layers) > 2:
            return Parallel(n_jobs=self.threads, prefer="threads")(delayed(build)(k) for k in range(len(layers) - 1))
        return [build(k) for k in range(len(layers) - 1)]

    def search(self, target: Trajectory, eps: float):
        """Layered DAG and backward viability; raises ShadowNotFound when no path exists"""
        layers = self._layers(target, eps)
        adjacency = self._adjacency(layers, eps)
        alive = [None] * len(layers)
        alive[-1] = np.ones(layers[-1].size, dtype=bool)
        for k in range(len(layers) - 2, -1, -1):
            alive[k] = adjacency[k][:, alive[k + 1]].any(axis=1)
            if not alive[k].any():
                raise ShadowNotFound(f"layered graph has no path through layer {k}",
                                     {"layer": k, "resolution_limited": eps <= self.grid.cell_diameter})
        return layers, adjacency, alive

    @staticmethod
    def path_from(layers, adjacency, alive, start: int) -> List[int]:
        """Lexicographically smallest viable path starting at position start of layer 0"""
        positions = [start]
        for k in range(len(layers) - 1):
            options = np.flatnonzero(adjacency[k][positions[-1]] & alive[k + 1])
            positions.append(int(options[0]))
        return [int(layers[k][p]) for k, p in enumerate(positions)]

    def closest_path(self, target: Trajectory, layers, adjacency) -> List[int]:
        """Viable path minimizing the largest center offset from the target;
        lexicographically smallest among the minimizers"""
        centers = self.grid.centers
        offsets = [np.atleast_1d(torus_dist(centers[layer], x)) for layer, x in zip(layers, target.points)]
        best = [None] * len(layers)
        best[-1] = offsets[-1]
        for k in range(len(layers) - 2, -1, -1):
            reach = np.where(adjacency[k], best[k + 1][None, :], np.inf).min(axis=1)
            best[k] = np.maximum(offsets[k], reach)
        bound = float(best[0].min())
        positions = [int(np.flatnonzero(best[0] <= bound)[0])]
        for k in range(len(layers) - 1):
            options = np.flatnonzero(adjacency[k][positions[-1]] & (best[k + 1] <= bound))
            positions.append(int(options[0]))
        return [int(layers[k][p]) for k, p in enumerate(positions)]

    def _solution(self, target: Trajectory, points: np.ndarray, eps: float, source: str, cells=None,
                  require_orbit: bool = False) -> Optional[ShadowSolution]:
        T = Trajectory(points, index_offset=target.index_offset)
        report = is_foliated_chain(self.f, self.F, T, eps, self.leaf_tol)
        offsets = np.atleast_1d(torus_dist(T.points, target.points))
        if not report.valid or offsets.max() > eps + get_settings().tau_geom:
            return None
        if require_orbit and not is_foliated_orbit(self.f, self.F, T, eps, self.leaf_tol).valid:
            return None
        return ShadowSolution(
            trajectory=T,
            defects=plaque_step_defects(self.f, self.F, T, eps),
            offsets=offsets,
            source=source,
            cells=list(cells or []),
            resolution_limited=eps <= self.grid.cell_diameter,
            target_delta=float(step_defects(self.f, target).max()) if len(target) > 1 else 0.0,
        )

    def finite_shadow(self, target: Trajectory, eps: float, require_orbit: bool = False) -> ShadowSolution:
        """Shadow by an (F, eps)-chain, or by an (F, eps)-orbit when require_orbit is set.

        A target that already is an (F, eps)-orbit is its own shadow. Otherwise
        the layered search picks a grid path and returns its cell centers; the
        refined candidates are tried only when the centers do not re-validate.
        """
        exact = self._solution(target, target.points, eps, "target", require_orbit=True)
        if exact is not None:
            return exact
        layers, adjacency, _ = self.search(target, eps)
        cells = self.closest_path(target, layers, adjacency)
        path_points = self.grid.centers[cells]
        candidates = [
            ("grid_path", lambda: path_points),
            ("refined_path", lambda: refine_foliated(self.f, self.F, path_points, path_points, eps)),
            ("refined_target", lambda: refine_foliated(self.f, self.F, target.points, target.points, eps)),
        ]
        for source, build in candidates:
            solution = self._solution(target, build(), eps, source, cells, require_orbit)
            if solution is not None:
                return solution
        raise ShadowNotFound("grid path exists but no candidate re-validates at this resolution",
                             {"resolution_limited": True, "cells": cells})

    def shadow_family(self, target: Trajectory, eps: float, max_paths: int, orbit_tol: Optional[float] = None) -> List[ShadowSolution]:
        """Refined (F, eps)-orbit shadows started from distinct feasible cells of layer 0"""
        if orbit_tol is None:
            orbit_tol = self.leaf_tol
        layers, adjacency, alive = self.search(target, eps)
        starts = np.flatnonzero(alive[0])
        picks = np.unique(np.linspace(0, starts.size - 1, num=min(max_paths, starts.size)).round().astype(int))
        solutions = []
        for pick in picks:
            start = int(starts[pick])
            cells = self.path_from(layers, adjacency, alive, start)
            shift = self._leaf_shift(self.grid.centers[layers[0][start]], target.points[0])
            anchors = target.points + shift
            for init in (anchors, self.grid.centers[cells]):
                points = refine_foliated(self.f, self.F, init, anchors, eps)
                solution = self._solution(target, points, eps, "refined_family", cells)
                if solution is None:
                    continue
                if is_foliated_orbit(self.f, self.F, solution.trajectory, eps, orbit_tol).valid:
                    solutions.append(solution)
                    break
        return solutions

    def _leaf_shift(self, center: np.ndarray, x: np.ndarray) -> np.ndarray:
        gap = wrap_diff(center - x)
        if self.F.kind == FoliationKind.LINEAR:
            return self.F.project_along_leaf(gap)
        if self.F.kind == FoliationKind.WHOLE:
            return gap
        return np.zeros_like(gap)

    def shadow_periodized(self, loop: Trajectory, eps: float, N: int, require_orbit: bool = False) -> ShadowSolution:
        return self.finite_shadow(periodize(loop, N), eps, require_orbit)

    def windowed_shadow_report(self, loop: Trajectory, L: int, eps: float) -> Dict:
        """Shadow every length-L window of the periodized loop, then the periodized loop itself"""
        r = len(loop) - 1
        if r < 1 or L < 1:
            raise InvalidInput("need a loop with at least one step and L >= 1")
        base = loop.points[:-1]
        windows = []
        for phase in range(r):
            idx = np.mod(np.arange(phase, phase + L), r)
            try:
                self.finite_shadow(Trajectory(base[idx]), eps)
                windows.append(True)
            except ShadowNotFound:
                windows.append(False)
        N = r * int(np.ceil(L / r))
        periodized_ok = False
        detail = None
        if N <= 5 * L:
            try:
                solution = self.shadow_periodized(loop, eps, N)
                periodized_ok = True
                detail = solution.max_offset
            except ShadowNotFound as e:
                detail = e.detail
        return {
            "loop_length": r,
            "window_length": L,
            "windows_ok": windows,
            "all_windows_ok": bool(all(windows)),
            "horizon": N,
            "periodized_ok": periodized_ok,
            "periodized_detail": detail,
        }


def finite_shadow(P: ShadowProblem, threads: Optional[int] = None) -> ShadowSolution:
    engine = ShadowingEngine(P.f, P.F, P.grid, P.leaf_tol, threads)
    solution = engine.finite_shadow(P.target, P.eps, P.require_orbit)
    solution.target_delta = P.target_delta
    return solution


def shadow_periodized(f: ToralMap, F: LinearFoliation, loop: Trajectory, eps: float, N: int, grid: Grid,
                      leaf_tol: float = 1e-9, require_orbit: bool = False) -> ShadowSolution:
    return ShadowingEngine(f, F, grid, leaf_tol).shadow_periodized(loop, eps, N, require_orbit)


def hyperbolic_constant(matrix) -> float:
    """K_A = 1/(1 - lambda) + 1/(1 - 1/mu)"""
    split = spectral_splitting(ToralMap(matrix))
    if split.dims[1] > 0 or split.lam is None or split.mu is None:
        raise Unsupported("matrix is not hyperbolic")
    return 1.0 / (1.0 - split.lam) + 1.0 / (1.0 - 1.0 / split.mu)


def exact_shadow_hyperbolic(matrix, pseudo: Trajectory) -> Trajectory:
    """True orbit near a pseudo-orbit of a hyperbolic automorphism.

    Stable error components are propagated forward from zero at the first
    index, unstable components backward from zero at the last index.
    """
    A = np.asarray(matrix, dtype=np.int64)
    split = spectral_splitting(ToralMap(A))
    if split.dims[1] > 0:
        raise Unsupported("matrix has eigenvalues of modulus 1")
    S, U = split.stable, split.unstable
    P = np.hstack([S, U])
    s = S.shape[1]
    Af = A.astype(float)
    A_s = np.linalg.pinv(S) @ Af @ S if s else np.zeros((0, 0))
    A_u = np.linalg.pinv(U) @ Af @ U if U.shape[1] else np.zeros((0, 0))
    A_u_inv = np.linalg.inv(A_u) if U.shape[1] else A_u

    pts = pseudo.points
    n = len(pts)
    if n < 2:
        return Trajectory(pts.copy(), pseudo.index_offset)
    errors = wrap_diff(pts[1:] - pts[:-1] @ Af.T)
    coords = np.linalg.solve(P, errors.T).T
    e_s, e_u = coords[:, :s], coords[:, s:]

    a = np.zeros((n, s))
    for k in range(n - 1):
        a[k + 1] = A_s @ a[k] - e_s[k]
    b = np.zeros((n, U.shape[1]))
    for k in range(n - 2, -1, -1):
        b[k] = A_u_inv @ (b[k + 1] + e_u[k])
    correction = a @ S.T + b @ U.T
    return Trajectory(wrap(pts + correction), pseudo.index_offset)
