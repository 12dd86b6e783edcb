"""
Quotient Dynamics Service
Induced maps on the leaf space of compact linear foliations and transfer checks
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from app.core.config import get_settings
from app.core.errors import InvalidInput, NotInvariant, ShadowNotFound
from app.services.foliation import FoliationKind, LinearFoliation
from app.services.grid import Grid
from app.services.orbits import Trajectory, step_defects
from app.services.shadowing import ShadowingEngine
from app.services.toral_maps import ToralMap, induced_quotient_map
from app.services.torus import hausdorff_dist, random_points, torus_dist, wrap


@dataclass(eq=False)
class QuotientSystem:
    f: ToralMap
    F: LinearFoliation
    Q: ToralMap
    commuting_defect: float
    samples: int

    @property
    def distortion(self) -> float:
        """Operator norm of the transverse projection"""
        if self.F.kind == FoliationKind.POINTS:
            return 1.0
        return float(np.linalg.norm(self.F.transverse_basis.astype(float), 2))

    def project(self, x) -> np.ndarray:
        if self.F.kind == FoliationKind.POINTS:
            return wrap(np.asarray(x, dtype=float))
        return self.F.quotient_project(x)

    def to_dict(self) -> Dict:
        return {
            "foliation": self.F.to_dict(),
            "quotient_map": self.Q.to_dict(),
            "commuting_defect": self.commuting_defect,
            "samples": self.samples,
            "distortion": self.distortion,
        }


def build_quotient_system(f: ToralMap, F: LinearFoliation, rng: Optional[np.random.Generator] = None,
                          samples: int = 200) -> QuotientSystem:
    """Wrap induced_quotient_map with a commuting-diagram certificate on random samples"""
    Q = induced_quotient_map(f, F)
    if rng is None:
        rng = np.random.default_rng(0)
    points = random_points(rng, samples, f.dim)
    system = QuotientSystem(f=f, F=F, Q=Q, commuting_defect=0.0, samples=samples)
    upstairs = system.project(f.apply(points))
    downstairs = Q.apply(system.project(points))
    defect = float(np.max(np.atleast_1d(torus_dist(upstairs, downstairs))))
    tol = max(10.0 * f.tau_inv, get_settings().tau_geom)
    if defect > tol:
        worst = int(np.argmax(np.atleast_1d(torus_dist(upstairs, downstairs))))
        raise NotInvariant(f"quotient diagram fails to commute by {defect:.3g}",
                           {"witness": points[worst].tolist(), "defect": defect})
    system.commuting_defect = defect
    return system


def random_pseudo_orbit(f: ToralMap, rng: np.random.Generator, delta: float, length: int) -> Trajectory:
    """x_{k+1} = f(x_k) + a random kick of norm at most delta"""
    if length < 1:
        raise InvalidInput("length must be >= 1")
    points = [rng.random(f.dim)]
    for _ in range(length):
        kick = rng.normal(size=f.dim)
        kick *= delta * rng.random() / max(np.linalg.norm(kick), 1e-300)
        points.append(wrap(f.apply(points[-1]) + kick))
    return Trajectory(np.array(points))


def transfer_shadowing_check(QS: QuotientSystem, delta: float, eps: float, grid: Grid, rng: np.random.Generator,
                             trials: int = 20, length: int = 20, leaf_tol: float = 1e-9) -> Dict:
    """Shadow random delta-pseudo-orbits upstairs and check the projections downstairs"""
    if QS.F.kind == FoliationKind.WHOLE:
        raise InvalidInput("the one-leaf foliation has a one-point quotient")
    engine = ShadowingEngine(QS.f, QS.F, grid, leaf_tol)
    bound = QS.distortion * eps + get_settings().tau_geom
    rows: List[Dict] = []
    for trial in range(trials):
        pseudo = random_pseudo_orbit(QS.f, rng, delta, length)
        try:
            solution = engine.finite_shadow(pseudo, eps, require_orbit=True)
        except ShadowNotFound as e:
            rows.append({"trial": trial, "shadowed": False, "passed": False, "detail": e.detail})
            continue
        down_target = Trajectory(QS.project(pseudo.points))
        down_shadow = Trajectory(QS.project(solution.trajectory.points))
        offset = float(np.max(np.atleast_1d(torus_dist(down_target.points, down_shadow.points))))
        defects = step_defects(QS.Q, down_shadow)
        rows.append({
            "trial": trial,
            "shadowed": True,
            "upstairs_max_offset": solution.max_offset,
            "projected_max_offset": offset,
            "projected_step_defect": float(defects.max()) if defects.size else 0.0,
            "passed": offset <= bound,
        })
    return {
        "delta": delta,
        "eps": eps,
        "bound": bound,
        "trials": rows,
        "passed": all(row["passed"] for row in rows),
    }


def leaf_hausdorff_dist(F: LinearFoliation, x, y, samples: int = 64) -> float:
    """Hausdorff distance between the leaves through x and y, sampled along each leaf"""
    if samples < 1:
        raise InvalidInput("samples must be >= 1")
    return hausdorff_dist(F.leaf_samples(x, samples), F.leaf_samples(y, samples))
