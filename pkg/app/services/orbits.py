"""
Orbit Kit Service
Trajectories and verifiers for pseudo-orbits, chains and foliated orbits
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.config import get_settings
from app.core.errors import InvalidInput
from app.models.schemas import ChainReport
from app.services.foliation import LinearFoliation
from app.services.toral_maps import ToralMap
from app.services.torus import torus_dist, wrap


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Finite ordered sequence of torus points; index_offset marks index 0"""
    points: np.ndarray
    index_offset: int = 0

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1 or pts.size == 0:
            raise InvalidInput("trajectory needs at least one point")
        object.__setattr__(self, "points", wrap(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def at(self, k: int) -> np.ndarray:
        """Point with signed index k"""
        return self.points[k + self.index_offset]

    def to_list(self) -> list:
        return self.points.tolist()


def _report(defects: np.ndarray, valid_steps: np.ndarray) -> ChainReport:
    if defects.size == 0:
        return ChainReport(valid=True, worst_index=-1, worst_defect=0.0)
    worst = int(np.argmax(defects))
    return ChainReport(valid=bool(np.all(valid_steps)), worst_index=worst, worst_defect=float(defects[worst]))


def step_defects(f: ToralMap, T: Trajectory) -> np.ndarray:
    """d(f(x_i), x_{i+1}) for every step"""
    if len(T) < 2:
        return np.zeros(0)
    pts = T.points
    return np.atleast_1d(torus_dist(f.apply(pts[:-1]), pts[1:]))


def is_pseudo_orbit(f: ToralMap, T: Trajectory, delta: float) -> ChainReport:
    if delta < 0:
        raise InvalidInput("delta must be >= 0")
    defects = step_defects(f, T)
    return _report(defects, defects <= delta + get_settings().tau_geom)


def plaque_step_defects(f: ToralMap, F: LinearFoliation, T: Trajectory, radius: float) -> np.ndarray:
    """dist(f(x_i), plaque(x_{i+1}, radius)) for every step"""
    if len(T) < 2:
        return np.zeros(0)
    pts = T.points
    return np.atleast_1d(F.plaque_distances(pts[1:], f.apply(pts[:-1]), radius))


def is_foliated_orbit(f: ToralMap, F: LinearFoliation, T: Trajectory, eps: float, tol: Optional[float] = None) -> ChainReport:
    if eps < 0:
        raise InvalidInput("eps must be >= 0")
    if tol is None:
        tol = get_settings().tau_geom
    if len(T) < 2:
        return _report(np.zeros(0), np.zeros(0, dtype=bool))
    images = f.apply(T.points[:-1])
    defects = plaque_step_defects(f, F, T, eps)
    valid = np.array([
        F.membership_in_plaque(F.plaque(T.points[k + 1], eps), images[k], tol)
        for k in range(len(T) - 1)
    ])
    return _report(defects, valid)


def is_foliated_chain(f: ToralMap, F: LinearFoliation, T: Trajectory, delta: float, tol: Optional[float] = None) -> ChainReport:
    if delta < 0:
        raise InvalidInput("delta must be >= 0")
    if tol is None:
        tol = get_settings().tau_geom
    defects = plaque_step_defects(f, F, T, delta)
    return _report(defects, defects <= delta + tol)


def orbit_segment(g: ToralMap, x, N: int) -> Trajectory:
    """Two-sided segment g^k(x) for k = -N..N"""
    if N < 0:
        raise InvalidInput("horizon N must be >= 0")
    x = wrap(np.asarray(x, dtype=float))
    forward = [x]
    for _ in range(N):
        forward.append(g.apply(forward[-1]))
    backward = []
    cur = x
    for _ in range(N):
        cur = g.apply_inverse(cur)
        backward.append(cur)
    points = np.vstack(backward[::-1] + forward) if backward else np.vstack(forward)
    return Trajectory(points, index_offset=N)


def max_offset(A: Trajectory, B: Trajectory) -> float:
    if len(A) != len(B):
        raise InvalidInput("trajectories differ in length")
    return float(np.max(np.atleast_1d(torus_dist(A.points, B.points))))


def is_exact_orbit(f: ToralMap, T: Trajectory, tol: Optional[float] = None) -> ChainReport:
    if tol is None:
        tol = get_settings().tau_geom
    defects = step_defects(f, T)
    return _report(defects, defects <= tol)


def periodize(loop: Trajectory, N: int) -> Trajectory:
    """Sequence x_k = x_(k mod r) for k = -N..N, r = len(loop) - 1"""
    r = len(loop) - 1
    if r < 1:
        raise InvalidInput("a loop needs at least one step")
    if N % r != 0:
        raise InvalidInput(f"horizon {N} is not a multiple of the loop length {r}")
    idx = np.mod(np.arange(-N, N + 1), r)
    return Trajectory(loop.points[:-1][idx], index_offset=N)

