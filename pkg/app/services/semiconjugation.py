"""
Semiconjugation Service
Set-valued semiconjugacy H between a perturbed map g and f, and the checks of
the stability contract: C0 bound, step inclusion, valuation and continuity
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from app.core.config import get_settings, resolve_threads
from app.core.errors import EmptyImage, InvalidInput, MissingSample, ShadowNotFound
from app.services.foliation import LinearFoliation
from app.services.grid import Grid
from app.services.orbits import (
    Trajectory,
    is_exact_orbit,
    is_foliated_chain,
    orbit_segment,
    plaque_step_defects,
    step_defects,
)
from app.services.shadowing import ShadowingEngine, ShadowSolution
from app.services.toral_maps import DisplacementRequest, ToralMap, build_perturbation, c0_distance
from app.services.torus import as_point_set, hausdorff_dist, pairwise_torus_dist, torus_dist, wrap


@dataclass(eq=False)
class SampleSet:
    """Forward-closed base points: successor[i] is the index of g(points[i]), -1 at segment ends"""
    points: np.ndarray
    terminal: np.ndarray
    successor: np.ndarray

    def __len__(self) -> int:
        return self.points.shape[0]


def forward_closed_samples(g: ToralMap, seeds, length: int) -> SampleSet:
    """Concatenated forward g-orbit segments x, g(x), ..., g^(length-1)(x)"""
    if length < 1:
        raise InvalidInput("segment length must be >= 1")
    seeds = as_point_set(seeds, g.dim)
    points, terminal, successor = [], [], []
    for seed in seeds:
        cur = seed
        for j in range(length):
            idx = len(points)
            points.append(cur)
            last = j == length - 1
            terminal.append(last)
            successor.append(-1 if last else idx + 1)
            cur = g.apply(cur)
    return SampleSet(np.array(points), np.array(terminal, dtype=bool), np.array(successor, dtype=np.int64))


def _match_successors(g: ToralMap, points: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    images = g.apply(points)
    dist = pairwise_torus_dist(images, points)
    nearest = np.argmin(dist, axis=1)
    found = dist[np.arange(points.shape[0]), nearest] <= tol
    return np.where(found, nearest, -1), ~found


@dataclass(eq=False)
class SetValuedMap:
    samples: SampleSet
    images: List[np.ndarray]
    witnesses: List[List[Trajectory]]
    eps_prime: float
    horizon: int
    grid: Grid

    def image_sizes(self) -> np.ndarray:
        return np.array([img.shape[0] for img in self.images], dtype=np.int64)

    def to_dict(self) -> Dict:
        sizes = self.image_sizes()
        spreads = [float(pairwise_torus_dist(img, img).max()) for img in self.images]
        return {
            "samples": len(self.samples),
            "eps_prime": self.eps_prime,
            "horizon": self.horizon,
            "grid": self.grid.to_dict(),
            "image_size_max": int(sizes.max()) if sizes.size else 0,
            "image_size_mean": float(sizes.mean()) if sizes.size else 0.0,
            "image_spread_max": max(spreads) if spreads else 0.0,
        }


class SemiconjugationBuilder:
    """Computes H(x) as the set of refined (F, eps')-orbit shadows of the g-orbit of x"""

    def __init__(self, f: ToralMap, F: LinearFoliation, g: ToralMap, eps_prime: float, horizon: int, grid: Grid,
                 max_images: int = 4, leaf_tol: float = 1e-9, threads: Optional[int] = None):
        if eps_prime <= 0:
            raise InvalidInput("eps_prime must be positive")
        if horizon < 0:
            raise InvalidInput("horizon must be >= 0")
        if f.dim != g.dim:
            raise InvalidInput("f and g live on tori of different dimension")
        self.f = f
        self.F = F
        self.g = g
        self.eps_prime = float(eps_prime)
        self.horizon = int(horizon)
        self.grid = grid
        self.max_images = int(max_images)
        self.leaf_tol = leaf_tol
        self.threads = resolve_threads(threads)
        self.engine = ShadowingEngine(f, F, grid, leaf_tol)

    def image(self, x) -> Tuple[np.ndarray, List[Trajectory]]:
        target = orbit_segment(self.g, x, self.horizon)
        try:
            family = self.engine.shadow_family(target, self.eps_prime, self.max_images, self.leaf_tol)
        except ShadowNotFound as e:
            raise EmptyImage(f"no (F, eps')-orbit shadows the g-orbit of {np.round(x, 6).tolist()}",
                             {"point": np.asarray(x).tolist(), "reason": e.detail})
        if not family:
            raise EmptyImage(f"no candidate re-validated as an orbit for {np.round(x, 6).tolist()}",
                             {"point": np.asarray(x).tolist()})
        kept_points, kept_witnesses = [], []
        for solution in family:
            y0 = solution.trajectory.at(0)
            if any(torus_dist(y0, p) <= self.grid.cell_diameter for p in kept_points):
                continue
            kept_points.append(y0)
            kept_witnesses.append(solution.trajectory)
        return np.array(kept_points), kept_witnesses

    def build(self, samples: SampleSet) -> SetValuedMap:
        points = samples.points
        if self.threads > 1:
            results = Parallel(n_jobs=self.threads, prefer="threads")(delayed(self.image)(x) for x in points)
        else:
            results = [self.image(x) for x in points]
        return SetValuedMap(
            samples=samples,
            images=[r[0] for r in results],
            witnesses=[r[1] for r in results],
            eps_prime=self.eps_prime,
            horizon=self.horizon,
            grid=self.grid,
        )


def construct_semiconjugation(
    f: ToralMap,
    F: LinearFoliation,
    g: ToralMap,
    eps_prime: float,
    N: int,
    grid: Grid,
    sample_points,
    max_images: int = 4,
    leaf_tol: float = 1e-9,
    threads: Optional[int] = None,
) -> SetValuedMap:
    """Build H on a sample set; plain point arrays get successors matched under g"""
    if isinstance(sample_points, SampleSet):
        samples = sample_points
    else:
        points = as_point_set(sample_points, f.dim)
        successor, terminal = _match_successors(g, points, get_settings().tau_geom)
        samples = SampleSet(points, terminal, successor)
    builder = SemiconjugationBuilder(f, F, g, eps_prime, N, grid, max_images, leaf_tol, threads)
    return builder.build(samples)


@dataclass
class StabilityReport:
    eps: float
    eps_prime: float
    eps0: float
    tol: float
    step_tol: float
    c0_bound: float
    step_inclusion_defect: float
    witness_step_defect: float
    valuation_defect: float
    delta: Optional[float] = None
    map_distance: Optional[Tuple[float, float]] = None
    continuity: List[Dict] = field(default_factory=list)
    sweep: Dict = field(default_factory=dict)

    @property
    def continuity_ok(self) -> bool:
        return all(row["passed"] for row in self.continuity if row["in_contract"])

    @property
    def map_distance_ok(self) -> bool:
        return self.delta is None or self.map_distance[1] <= self.delta + self.tol

    @property
    def passed(self) -> bool:
        return (
            self.c0_bound <= self.eps_prime + self.tol
            and self.step_inclusion_defect <= self.step_tol + self.tol
            and self.witness_step_defect <= self.tol
            and self.valuation_defect <= self.tol
            and self.map_distance_ok
            and self.continuity_ok
            and self.sweep.get("passed", True)
        )

    def to_dict(self) -> Dict:
        return {
            "eps": self.eps,
            "eps_prime": self.eps_prime,
            "eps0": self.eps0,
            "tol": self.tol,
            "step_tol": self.step_tol,
            "c0_bound": self.c0_bound,
            "step_inclusion_defect": self.step_inclusion_defect,
            "witness_step_defect": self.witness_step_defect,
            "valuation_defect": self.valuation_defect,
            "delta": self.delta,
            "map_distance": list(self.map_distance) if self.map_distance is not None else None,
            "map_distance_ok": self.map_distance_ok,
            "continuity": self.continuity,
            "continuity_ok": self.continuity_ok,
            "sweep": self.sweep,
            "passed": self.passed,
        }


def verify_stability_contract(H: SetValuedMap, f: ToralMap, g: ToralMap, F: LinearFoliation, eps: float,
                              eps0: Optional[float] = None, tol: Optional[float] = None,
                              delta: Optional[float] = None) -> StabilityReport:
    """C0 bound, step inclusion f(H(x)) within the eps-plaques over the stored H(g(x)),
    the shift-by-one witness defect, valuation, and d_C0(f, g) <= delta when delta is given"""
    if tol is None:
        tol = get_settings().tau_geom
    eps0 = eps if eps0 is None else eps0
    samples = H.samples
    c0 = 0.0
    stored = 0.0
    shifted = 0.0
    for i, x in enumerate(samples.points):
        c0 = max(c0, float(np.max(np.atleast_1d(torus_dist(H.images[i], x)))))
        if samples.terminal[i]:
            continue
        j = int(samples.successor[i])
        if j < 0:
            raise MissingSample(f"g-image of sample {i} is not among the samples", {"sample": i})
        next_images = H.images[j]
        for witness in H.witnesses[i]:
            fy = f.apply(witness.at(0))
            stored = max(stored, float(np.min(F.plaque_distances(next_images, fy[None, :], eps))))
            if len(witness) > witness.index_offset + 1:
                shifted = max(shifted, float(F.plaque_distances(witness.at(1), fy, eps)))
    return StabilityReport(
        eps=float(eps),
        eps_prime=H.eps_prime,
        eps0=float(eps0),
        tol=float(tol),
        step_tol=H.grid.cell_diameter,
        c0_bound=c0,
        step_inclusion_defect=stored,
        witness_step_defect=shifted,
        valuation_defect=verify_valuation(H, F, eps0),
        delta=None if delta is None else float(delta),
        map_distance=c0_distance(f, g, H.grid) if delta is not None else None,
    )


def _cross_plaque_defect(F: LinearFoliation, A: np.ndarray, B: np.ndarray, radius: float) -> float:
    """max over (a, b) in A x B of dist(a, plaque(b, radius))"""
    dist = F.plaque_distances(B[None, :, :], A[:, None, :], radius)
    return float(np.max(dist)) if dist.size else 0.0


def verify_valuation(H: SetValuedMap, F: LinearFoliation, eps0: float) -> float:
    worst = 0.0
    for img in H.images:
        if img.shape[0] > 1:
            worst = max(worst, _cross_plaque_defect(F, img, img, eps0))
    return worst


def verify_foliated_continuity(
    builder: SemiconjugationBuilder,
    F: LinearFoliation,
    eps0: float,
    rho: float,
    deltas: Sequence[float],
    base_points,
    rng: np.random.Generator,
    delta_contract: float,
    tol: Optional[float] = None,
) -> List[Dict]:
    """One row per Delta: foliated rho, Hausdorff and strong continuity values over nearby pairs"""
    if tol is None:
        tol = get_settings().tau_geom
    base_points = as_point_set(base_points, F.dim)
    rows = []
    for delta in deltas:
        if delta < 0:
            raise InvalidInput("Delta must be >= 0")
        directions = rng.normal(size=base_points.shape)
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        partners = wrap(base_points + delta * directions)
        foliated, hausdorff, strong = 0.0, 0.0, 0.0
        for x, x2 in zip(base_points, partners):
            A, _ = builder.image(x)
            B, _ = builder.image(x2)
            foliated = max(foliated, _cross_plaque_defect(F, A, B, eps0), _cross_plaque_defect(F, B, A, eps0))
            hausdorff = max(hausdorff, hausdorff_dist(A, B))
            strong = max(strong, float(pairwise_torus_dist(A, B).max()))
        in_contract = delta <= delta_contract
        rows.append({
            "delta": float(delta),
            "rho": float(rho),
            "observed_rho": foliated,
            "hausdorff": hausdorff,
            "strong": strong,
            "in_contract": in_contract,
            "passed": (foliated <= rho + tol) if in_contract else True,
        })
    return rows


def continuity_sweep_checks(rows: Sequence[Dict], tol: float) -> Dict:
    """Observed rho must not grow as Delta shrinks nor as the horizon grows, up to tol"""
    frame = pd.DataFrame(list(rows), columns=["horizon", "delta", "observed_rho"])
    if frame.empty:
        return {"tol": tol, "monotone_in_delta": True, "nonincreasing_in_horizon": True,
                "worst_delta_increase": 0.0, "worst_horizon_increase": 0.0, "passed": True}
    table = frame.pivot_table(index="horizon", columns="delta", values="observed_rho", aggfunc="max").sort_index()
    # horizons ascending down the rows, Delta descending across the columns
    table = table[sorted(table.columns, reverse=True)]
    delta_steps = table.diff(axis=1).iloc[:, 1:].fillna(0.0).to_numpy()
    horizon_steps = table.diff(axis=0).iloc[1:].fillna(0.0).to_numpy()
    worst_delta = float(delta_steps.max()) if delta_steps.size else 0.0
    worst_horizon = float(horizon_steps.max()) if horizon_steps.size else 0.0
    monotone = worst_delta <= tol
    nonincreasing = worst_horizon <= tol
    return {
        "tol": tol,
        "monotone_in_delta": monotone,
        "nonincreasing_in_horizon": nonincreasing,
        "worst_delta_increase": max(worst_delta, 0.0),
        "worst_horizon_increase": max(worst_horizon, 0.0),
        "passed": monotone and nonincreasing,
    }


def shadow_via_stability(
    f: ToralMap,
    F: LinearFoliation,
    chain: Trajectory,
    eps: float,
    grid: Grid,
    radius: Optional[float] = None,
    leaf_tol: float = 1e-9,
) -> ShadowSolution:
    """Turn a chain into a true orbit of a bump perturbation g, then shadow it by
    the witness of a point of H(x0) built for g"""
    if len(chain) < 2:
        raise InvalidInput("chain needs at least one step")
    pts = chain.points
    req = DisplacementRequest.from_pairs(list(zip(f.apply(pts[:-1]), pts[1:])), f.dim)
    if radius is None:
        radius = min(0.45 * req.separation, 0.45) if len(req.sites) > 1 else 0.25
    g = build_perturbation(f, req, radius)
    if not is_exact_orbit(g, chain, max(leaf_tol, 1e-9)).valid:
        raise InvalidInput("bump perturbation failed to turn the chain into a g-orbit")

    n = len(chain) - 1
    builder = SemiconjugationBuilder(f, F, g, eps / 8.0, n, grid, max_images=1, leaf_tol=leaf_tol)
    try:
        _, witnesses = builder.image(chain.at(0))
    except EmptyImage as e:
        raise EmptyImage("H(x0) is empty for the bump-perturbed map", e.payload)
    witness = witnesses[0]
    T = Trajectory(witness.points[witness.index_offset: witness.index_offset + n + 1], chain.index_offset)
    report = is_foliated_chain(f, F, T, eps, leaf_tol)
    offsets = np.atleast_1d(torus_dist(T.points, pts))
    if not report.valid or offsets.max() > eps:
        raise EmptyImage("stability witness failed to re-validate", {"worst_defect": report.worst_defect})
    return ShadowSolution(
        trajectory=T,
        defects=plaque_step_defects(f, F, T, eps),
        offsets=offsets,
        source="stability",
        resolution_limited=eps / 8.0 <= grid.cell_diameter,
        target_delta=float(step_defects(f, chain).max()),
    )
