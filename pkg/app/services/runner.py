"""
Scenario Runner
Dispatches configured pipeline steps, persists their reports and writes the run manifest
"""

from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import joblib
import numpy as np
import pandas as pd
import pydantic
import scipy

from app import __version__
from app.core.config import get_settings, resolve_threads
from app.core.errors import ConfigError, FoliashadowError, NotCertified, ShadowNotFound, Unsupported
from app.models.schemas import RunManifest, ScenarioConfig, StepStatus
from app.services.chain_recurrence import (
    build_chain_graph,
    certify_recurrent_cells,
    chain_recurrent_cells,
)
from app.services.expansivity import (
    expansivity_violation_search,
    quotient_consistency,
    uniform_expansivity_estimate,
    verify_witness,
)
from app.services.foliation import FoliationKind, LinearFoliation
from app.services.grid import Grid
from app.services.orbits import Trajectory, max_offset
from app.services.quotient import (
    build_quotient_system,
    leaf_hausdorff_dist,
    random_pseudo_orbit,
    transfer_shadowing_check,
)
from app.services.semiconjugation import (
    SemiconjugationBuilder,
    continuity_sweep_checks,
    forward_closed_samples,
    verify_foliated_continuity,
    verify_stability_contract,
)
from app.services.shadowing import (
    ShadowingEngine,
    ShadowProblem,
    exact_shadow_hyperbolic,
    finite_shadow,
    hyperbolic_constant,
)
from app.services.toral_maps import ToralMap, induced_quotient_map, integer_periodic_points
from app.services.torus import pairwise_torus_dist, random_points, torus_dist
from app.utils.io import write_csv, write_json

# Canonical step order for the 'all' subcommand
STEP_ORDER = ["cr-set", "shadow", "semiconj", "expansivity-scan", "quotient"]

# Per-step salts for the seed sequence
STEP_SALTS = {"cr-set": 1, "shadow": 2, "semiconj": 3, "expansivity-scan": 4, "quotient": 5}

STEP_BLOCKS = {"cr-set": "cr_set", "shadow": "shadow", "semiconj": "semiconj",
               "expansivity-scan": "expansivity", "quotient": "quotient"}

REPORT_NAMES = {"cr-set": "cr_set", "shadow": "shadow", "semiconj": "semiconj",
                "expansivity-scan": "expansivity", "quotient": "quotient"}

StepResult = Tuple[bool, Dict, Dict[str, pd.DataFrame]]


def library_versions() -> Dict[str, str]:
    return {
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "joblib": joblib.__version__,
        "pydantic": pydantic.VERSION,
    }


def default_steps(config: ScenarioConfig) -> List[str]:
    """Steps listed in the config, else every step whose parameter block is present"""
    if config.steps:
        return list(config.steps)
    return [step for step in STEP_ORDER if getattr(config, STEP_BLOCKS[step]) is not None]


class ScenarioRunner:
    """Holds the map, foliation and grid of one scenario and runs its pipelines"""

    def __init__(self, config: ScenarioConfig, out_dir: Optional[str] = None, seed: Optional[int] = None,
                 threads: Optional[int] = None):
        update = {}
        if seed is not None:
            update["seed"] = int(seed)
        if threads is not None:
            update["threads"] = int(threads)
        if out_dir is not None:
            update["out_dir"] = str(out_dir)
        self.config = config.model_copy(update=update) if update else config
        self.seed = self.config.seed
        self.threads = resolve_threads(self.config.threads)
        self.out_dir = Path(self.config.out_dir or Path(get_settings().out_dir) / self.config.name)
        try:
            self.f = ToralMap.from_spec(self.config.map)
            self.F = LinearFoliation.from_spec(self.config.foliation, self.f.dim)
            self.grid = Grid(self.f.dim, self.config.grid.resolution)
        except FoliashadowError as e:
            raise ConfigError(f"scenario '{self.config.name}': {e.detail}", e.payload) from e
        self.statuses: List[StepStatus] = []
        self.pipelines: Dict[str, Callable[[], StepResult]] = {
            "cr-set": self.run_cr_set,
            "shadow": self.run_shadow,
            "semiconj": self.run_semiconj,
            "expansivity-scan": self.run_expansivity,
            "quotient": self.run_quotient,
        }

    def rng(self, step: str, *extra: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, STEP_SALTS[step], *extra])

    def params(self, step: str):
        block = getattr(self.config, STEP_BLOCKS[step])
        if block is None:
            raise ConfigError(f"scenario '{self.config.name}' has no [{STEP_BLOCKS[step]}] block for '{step}'",
                              {"step": step})
        return block

    # Step dispatch
    def run_step(self, step: str) -> Tuple[StepStatus, Dict]:
        """Run one pipeline; module errors become an 'error' status, ConfigError propagates"""
        if step not in self.pipelines:
            raise ConfigError(f"unknown step '{step}'", {"step": step})
        self.params(step)
        stem = REPORT_NAMES[step]
        print(f"🔧 Running step: {step}")
        artifacts = []
        try:
            passed, report, frames = self.pipelines[step]()
        except ConfigError:
            raise
        except FoliashadowError as e:
            report = {"step": step, "passed": False, "error": e.to_dict()}
            artifacts.append(self._write_json(f"{stem}.json", report))
            status = StepStatus(step=step, status="error", detail=f"{step} failed: {str(e)}", artifacts=artifacts)
            print(f"❌ {step} failed: {str(e)}")
            self.statuses.append(status)
            return status, report
        report = {"step": step, "passed": passed, **report}
        artifacts.append(self._write_json(f"{stem}.json", report))
        for name, frame in frames.items():
            artifacts.append(self._write_csv(name, frame))
        status = StepStatus(step=step, status="passed" if passed else "failed", artifacts=artifacts)
        print(f"{'✅' if passed else '❌'} {step}: {status.status}")
        self.statuses.append(status)
        return status, report

    def _write_json(self, name: str, obj) -> str:
        write_json(self.out_dir / name, obj)
        return name

    def _write_csv(self, name: str, frame: pd.DataFrame) -> str:
        write_csv(self.out_dir / name, frame)
        return name

    def manifest(self) -> RunManifest:
        return RunManifest(
            scenario=self.config.name,
            seed=self.seed,
            version=__version__,
            libraries=library_versions(),
            config=self.config.model_dump(mode="json"),
            steps=self.statuses,
            passed=bool(self.statuses) and all(s.status == "passed" for s in self.statuses),
        )

    def finish(self) -> RunManifest:
        manifest = self.manifest()
        self._write_json("manifest.json", manifest)
        return manifest

    # cr-set
    def _periodic_density(self, cells: np.ndarray, eps: float, kmax: int) -> Optional[Dict]:
        """Distance from every recurrent cell center to the nearest exactly periodic point (or leaf)"""
        if cells.size == 0 or not self.f.is_linear or self.F.kind == FoliationKind.WHOLE:
            return None
        centers = self.grid.centers[cells]
        if self.F.kind == FoliationKind.POINTS:
            matrix, project = self.f.matrix, None
        else:
            matrix, project = induced_quotient_map(self.f, self.F).matrix, self.F.quotient_project
        periodic = []
        for k in range(1, kmax + 1):
            try:
                periodic.append(integer_periodic_points(matrix, k))
            except Unsupported:
                continue
        if not periodic:
            return None
        periodic = np.unique(np.vstack(periodic), axis=0)
        targets = centers if project is None else project(centers)
        gaps = pairwise_torus_dist(targets, periodic).min(axis=1)
        return {
            "periodic_points": int(periodic.shape[0]),
            "max_gap": float(gaps.max()),
            "eps": eps,
            "passed": bool(gaps.max() <= eps),
        }

    def run_cr_set(self) -> StepResult:
        p = self.params("cr-set")
        G = build_chain_graph(self.f, self.F, p.delta, self.grid, self.threads)
        result = chain_recurrent_cells(G)
        if result.resolution_limited:
            print(f"⚠️ delta {p.delta} is at or below the grid slack {G.eta:.4g}")

        certificates, failures = [], []
        if p.certify and result.cells.size:
            print(f"📊 Certifying {result.cells.size} recurrent cells")
            certificates, failures = certify_recurrent_cells(self.f, self.F, G, result.cells, p.epsilon, p.leaf_tol)
        fresh = [cert for cert in certificates if cert["source_cell"] == cert["cell"]]

        density = self._periodic_density(result.cells, p.epsilon, p.kmax)
        passed = True
        if p.certify and result.cells.size:
            passed = not failures and len(certificates) == result.cells.size
        if density is not None:
            passed = passed and density["passed"]

        report = {
            "graph": G.to_dict(),
            "recurrence": result.to_dict(),
            "certificates": {
                "certified": len(certificates),
                "fresh": len(fresh),
                "reused": len(certificates) - len(fresh),
                "max_offset": max((c["offset"] for c in certificates), default=0.0),
                "max_return_defect": max((c["return_defect"] for c in certificates), default=0.0),
            },
            "fresh_certificates": fresh,
            "certificate_failures": failures,
            "periodic_density": density,
        }
        frames = {}
        if certificates:
            frame = pd.DataFrame([c["point"] for c in certificates], columns=[f"x{i}" for i in range(self.f.dim)])
            for column in ("return_defect", "offset", "period", "source_cell", "cell"):
                frame.insert(0, column, [c[column] for c in certificates])
            frames["cr_set_certificates.csv"] = frame
        if p.write_cells_csv:
            frame = pd.DataFrame(self.grid.centers[result.cells], columns=[f"x{i}" for i in range(self.f.dim)])
            frame.insert(0, "component", result.labels[result.cells])
            frame.insert(0, "cell", result.cells)
            frames["cr_set_cells.csv"] = frame
        return passed, report, frames

    # shadow
    def run_shadow(self) -> StepResult:
        p = self.params("shadow")
        rng = self.rng("shadow")
        if p.chain is not None:
            targets = [Trajectory(np.array(p.chain, dtype=float))]
        else:
            targets = [random_pseudo_orbit(self.f, rng, p.delta, p.length) for _ in range(p.trials)]
        K = hyperbolic_constant(self.f.matrix) if p.compare_exact else None
        bound = self.grid.cell_diameter + p.delta * K if p.compare_exact else None
        trivial = self.F.kind == FoliationKind.WHOLE and p.delta <= p.epsilon

        rows = []
        for trial, target in enumerate(targets):
            problem = ShadowProblem(self.f, self.F, target, p.epsilon, self.grid, p.leaf_tol, p.require_orbit)
            try:
                solution = finite_shadow(problem, self.threads)
            except ShadowNotFound as e:
                rows.append({"trial": trial, "shadowed": False, "passed": False, "detail": e.detail,
                             "resolution_limited": problem.resolution_limited})
                continue
            row = {
                "trial": trial,
                "shadowed": True,
                "source": solution.source,
                "target_delta": solution.target_delta,
                "max_offset": solution.max_offset,
                "resolution_limited": solution.resolution_limited,
                "passed": True,
            }
            if p.compare_exact:
                exact = exact_shadow_hyperbolic(self.f.matrix, target)
                row["exact_gap"] = max_offset(solution.trajectory, exact)
                row["passed"] = row["exact_gap"] <= bound
            if trivial:
                row["equals_target"] = solution.source == "target"
                row["passed"] = row["passed"] and row["equals_target"]
            rows.append(row)

        report = {
            "eps": p.epsilon,
            "delta": p.delta,
            "require_orbit": p.require_orbit,
            "grid": self.grid.to_dict(),
            "hyperbolic_constant": K,
            "exact_bound": bound,
            "trials": rows,
        }
        if p.windows is not None and p.chain is not None:
            engine = ShadowingEngine(self.f, self.F, self.grid, p.leaf_tol, self.threads)
            report["windowed"] = engine.windowed_shadow_report(targets[0], p.windows, p.epsilon)
        passed = all(row["passed"] for row in rows)
        return passed, report, {}

    # semiconj
    def perturbed_map(self, terms) -> ToralMap:
        base = [t.model_dump() for t in self.config.map.perturbation]
        extra = [t.model_dump() for t in terms]
        return ToralMap.from_spec({"matrix": self.config.map.matrix, "perturbation": base + extra})

    def run_semiconj(self) -> StepResult:
        p = self.params("semiconj")
        rng = self.rng("semiconj")
        g = self.perturbed_map(p.perturbation)
        eps0 = p.epsilon0 if p.epsilon0 is not None else p.epsilon
        eps_prime = (min(p.expansivity_e, eps0) if p.expansivity_e is not None else p.epsilon) / 8.0
        continuity_eps0 = eps0 if p.separate_valuation else p.epsilon

        samples = forward_closed_samples(g, random_points(rng, p.seeds, self.f.dim), p.segment_length)
        builder = SemiconjugationBuilder(self.f, self.F, g, eps_prime, p.horizon, self.grid, p.max_images,
                                         p.leaf_tol, self.threads)
        H = builder.build(samples)
        stability = verify_stability_contract(H, self.f, g, self.F, p.epsilon,
                                              eps0 if p.separate_valuation else None, delta=p.delta)
        base = samples.points[: p.continuity_pairs]
        stability.continuity = verify_foliated_continuity(builder, self.F, continuity_eps0, p.rho, p.deltas, base,
                                                          self.rng("semiconj", 1), p.delta_contract)

        sweep = []
        for N in p.horizon_sweep:
            swept = SemiconjugationBuilder(self.f, self.F, g, eps_prime, N, self.grid, p.max_images, p.leaf_tol,
                                           self.threads)
            for row in verify_foliated_continuity(swept, self.F, continuity_eps0, p.rho, p.deltas, base,
                                                  self.rng("semiconj", 1), p.delta_contract):
                sweep.append({"horizon": N, **row})
        rows = [{"horizon": p.horizon, **row} for row in stability.continuity] + sweep
        stability.sweep = continuity_sweep_checks(rows, p.sweep_tol)
        if not stability.sweep["passed"]:
            worst = max(stability.sweep["worst_delta_increase"], stability.sweep["worst_horizon_increase"])
            print(f"⚠️ observed rho grew along the sweep by {worst:.3g}")

        report = {
            "g": g.to_dict(),
            "eps_prime": eps_prime,
            "semiconjugation": H.to_dict(),
            "stability": stability.to_dict(),
            "horizon_sweep": sweep,
        }
        frame = pd.DataFrame(rows, columns=["horizon", "delta", "rho", "observed_rho", "hausdorff", "strong",
                                            "in_contract", "passed"])
        return stability.passed, report, {"semiconj_continuity.csv": frame}

    # expansivity-scan
    def run_expansivity(self) -> StepResult:
        p = self.params("expansivity-scan")
        rows = []
        passed = True
        for e in p.e_values:
            eps0 = p.epsilon0 if p.epsilon0 is not None else e / 5.0
            rho = p.rho if p.rho is not None else eps0 / 2.0
            outcome = expansivity_violation_search(self.f, self.F, e, eps0, rho, p.horizon, self.grid,
                                                   p.max_candidates, p.leaf_tol, self.threads)
            row = outcome.to_dict()
            row_ok = p.expect is None or row["result"] == p.expect
            if outcome.witness is not None:
                row["witness_verified"] = verify_witness(self.f, self.F, outcome.witness, p.leaf_tol)
                row_ok = row_ok and row["witness_verified"]
                if self.F.kind == FoliationKind.LINEAR:
                    consistency = quotient_consistency(self.F, outcome.witness)
                    row.update(consistency)
                    if p.quotient_checks:
                        tol = get_settings().tau_geom
                        row["quotient_consistent"] = (consistency["quotient_gap_spread"] <= tol
                                                      and consistency["defect_mismatch"] <= tol)
                        row_ok = row_ok and row["quotient_consistent"]
            row["passed"] = row_ok
            passed = passed and row_ok
            rows.append(row)

        report = {"expect": p.expect, "searches": rows}
        if p.estimate:
            eps0 = p.epsilon0 if p.epsilon0 is not None else p.e_values[0] / 5.0
            rho = p.rho if p.rho is not None else eps0 / 2.0
            try:
                report["estimate"] = uniform_expansivity_estimate(self.f, self.F, eps0, rho, p.n_max, self.grid,
                                                                  None, p.max_candidates, p.leaf_tol, self.threads)
            except NotCertified as e:
                report["estimate"] = {"certified": False, "detail": e.detail, **e.payload}
                passed = False
        return passed, report, {}

    # quotient
    def run_quotient(self) -> StepResult:
        p = self.params("quotient")
        rng = self.rng("quotient")
        system = build_quotient_system(self.f, self.F, rng, p.samples)
        transfer = transfer_shadowing_check(system, p.delta, p.epsilon, self.grid, rng, p.trials, p.length,
                                            p.leaf_tol)
        leaf_rows = []
        if self.F.kind == FoliationKind.LINEAR:
            pairs = random_points(rng, 2 * min(p.trials, 5), self.f.dim).reshape(-1, 2, self.f.dim)
            for x, y in pairs:
                leaf_rows.append({
                    "leaf_hausdorff": leaf_hausdorff_dist(self.F, x, y),
                    "quotient_dist": float(torus_dist(system.project(x), system.project(y))),
                })
        report = {"system": system.to_dict(), "transfer": transfer, "leaf_metric": leaf_rows}
        return transfer["passed"], report, {}


def run_scenario(config: ScenarioConfig, steps: Optional[List[str]] = None, out_dir: Optional[str] = None,
                 seed: Optional[int] = None, threads: Optional[int] = None) -> RunManifest:
    """Run the requested steps (default: the scenario's own list) and write every artifact"""
    runner = ScenarioRunner(config, out_dir, seed, threads)
    print(f"🚀 Running scenario '{runner.config.name}'")
    print(f"   seed: {runner.seed}")
    print(f"   out_dir: {runner.out_dir}")
    for step in steps or default_steps(runner.config):
        runner.run_step(step)
    manifest = runner.finish()
    print(f"{'✅' if manifest.passed else '❌'} Scenario '{runner.config.name}' {'passed' if manifest.passed else 'failed'}")
    return manifest
