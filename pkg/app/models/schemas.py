"""
Pydantic models for foliashadow
Scenario configuration blocks and the report payloads shared across services
"""

from typing import Any, Dict, List, Literal, Optional
from pydantic import BaseModel, Field, field_validator, model_validator

# Map / Foliation Models
class PerturbationTerm(BaseModel):
    freq: List[int] = Field(..., min_length=1, max_length=3, description="Integer frequency vector k")
    coeff: List[float] = Field(..., min_length=1, max_length=3, description="Coefficient vector")
    phase: Literal["sin", "cos"] = Field(default="sin", description="Trigonometric phase")

class MapSpec(BaseModel):
    matrix: List[List[int]] = Field(..., min_length=1, max_length=3, description="Integer matrix with det +-1")
    perturbation: List[PerturbationTerm] = Field(default=[], description="Trigonometric perturbation terms")

    @model_validator(mode="after")
    def check_shapes(self):
        d = len(self.matrix)
        if any(len(row) != d for row in self.matrix):
            raise ValueError("matrix must be square")
        for term in self.perturbation:
            if len(term.freq) != d or len(term.coeff) != d:
                raise ValueError("perturbation term dimension does not match the matrix")
        return self

class FoliationSpec(BaseModel):
    kind: Literal["points", "linear", "whole"] = Field(..., description="Foliation kind")
    directions: List[List[int]] = Field(default=[], description="Integer primitive leaf directions")

class GridSpec(BaseModel):
    resolution: int = Field(..., ge=2, le=4096, description="Cells per axis")

# Operation Parameter Models
class CrSetParams(BaseModel):
    delta: float = Field(..., gt=0, description="Chain slack delta")
    epsilon: float = Field(default=0.1, gt=0, description="Shadow radius for periodic-leaf certificates")
    kmax: int = Field(default=8, ge=1, description="Largest leaf period searched")
    certify: bool = Field(default=True, description="Run periodic_leaf_from_chain on recurrent cells")
    leaf_tol: float = Field(default=1e-6, ge=0, description="Leaf-return tolerance")
    write_cells_csv: bool = Field(default=True, description="Emit recurrent cell centers as CSV")

class ShadowParams(BaseModel):
    delta: float = Field(..., gt=0, description="Pseudo-orbit defect")
    epsilon: float = Field(..., gt=0, description="Shadow radius")
    length: int = Field(default=20, ge=1, description="Number of steps per pseudo-orbit")
    trials: int = Field(default=10, ge=1, description="Random pseudo-orbits")
    chain: Optional[List[List[float]]] = Field(default=None, description="Explicit chain to shadow")
    compare_exact: bool = Field(default=False, description="Compare against the hyperbolic oracle")
    require_orbit: bool = Field(default=True, description="Require an (F, eps)-orbit shadow instead of a chain")
    windows: Optional[int] = Field(default=None, ge=1, description="Window length L for the windowed report on the chain")
    leaf_tol: float = Field(default=1e-9, ge=0, description="Leaf membership tolerance")

class SemiconjParams(BaseModel):
    perturbation: List[PerturbationTerm] = Field(default=[], description="Terms added to f to obtain g")
    epsilon: float = Field(..., gt=0, description="Stability radius epsilon")
    epsilon0: Optional[float] = Field(default=None, gt=0, description="Valuation constant (defaults to epsilon)")
    expansivity_e: Optional[float] = Field(default=None, gt=0, description="Certified expansivity constant e")
    horizon: int = Field(default=20, ge=1, description="Orbit horizon N")
    horizon_sweep: List[int] = Field(default=[5, 10, 20, 40], description="Horizons reported in the sweep")
    seeds: int = Field(default=25, ge=1, description="Forward-orbit seeds")
    segment_length: int = Field(default=20, ge=1, description="Samples per forward segment")
    max_images: int = Field(default=4, ge=1, description="Start cells per image")
    deltas: List[float] = Field(default=[0.1, 0.01, 0.001], description="Continuity Delta sweep")
    rho: float = Field(default=0.05, gt=0, description="Continuity bound rho")
    delta_contract: float = Field(default=0.05, gt=0, description="Largest Delta inside the continuity contract")
    delta: Optional[float] = Field(default=None, gt=0, description="Bound on d_C0(f, g) checked with the contract")
    sweep_tol: float = Field(default=1e-5, ge=0, description="Slack for the monotonicity checks over the Delta and horizon sweeps")
    continuity_pairs: int = Field(default=20, ge=1, description="Base samples per Delta row")
    separate_valuation: bool = Field(default=False, description="Use epsilon0 for valuation and continuity")
    leaf_tol: float = Field(default=1e-9, ge=0, description="Leaf membership tolerance")

    @field_validator("horizon_sweep")
    @classmethod
    def positive_horizons(cls, v):
        if any(n < 1 for n in v):
            raise ValueError("horizons must be >= 1")
        return v

class ExpansivityParams(BaseModel):
    e_values: List[float] = Field(..., min_length=1, description="Expansivity constants to scan")
    epsilon0: Optional[float] = Field(default=None, gt=0, description="Plaque radius epsilon0 (defaults to e/5)")
    rho: Optional[float] = Field(default=None, gt=0, description="Defect threshold (defaults to epsilon0/2)")
    horizon: int = Field(default=30, ge=1, description="Horizon N")
    estimate: bool = Field(default=False, description="Run the uniform expansivity estimate")
    n_max: int = Field(default=32, ge=1, description="Largest horizon for the estimate")
    max_candidates: int = Field(default=32, ge=1, description="Candidate pairs refined per search")
    expect: Optional[Literal["witness", "none_found"]] = Field(default=None, description="Expected search outcome for every e")
    quotient_checks: bool = Field(default=False, description="Require a constant quotient gap and an all-transverse defect on witnesses")
    leaf_tol: float = Field(default=1e-9, ge=0, description="Leaf membership tolerance")

class QuotientParams(BaseModel):
    delta: float = Field(..., gt=0, description="Upstairs pseudo-orbit defect")
    epsilon: float = Field(..., gt=0, description="Shadow radius")
    trials: int = Field(default=20, ge=1, description="Random pseudo-orbits")
    length: int = Field(default=20, ge=1, description="Steps per pseudo-orbit")
    samples: int = Field(default=200, ge=1, description="Points for the commuting-diagram certificate")
    leaf_tol: float = Field(default=1e-9, ge=0, description="Leaf membership tolerance")

class ScenarioConfig(BaseModel):
    name: str = Field(..., min_length=1, description="Scenario name")
    description: str = Field(default="", description="One-line description")
    seed: int = Field(default=0, ge=0, le=2**64 - 1, description="Seed for randomized sampling")
    out_dir: Optional[str] = Field(default=None, description="Output directory")
    threads: Optional[int] = Field(default=None, ge=1, description="Worker count")
    steps: List[Literal["cr-set", "shadow", "semiconj", "expansivity-scan", "quotient"]] = Field(
        default=[], description="Pipelines run by the 'all' subcommand")
    map: MapSpec
    foliation: FoliationSpec
    grid: GridSpec
    cr_set: Optional[CrSetParams] = None
    shadow: Optional[ShadowParams] = None
    semiconj: Optional[SemiconjParams] = None
    expansivity: Optional[ExpansivityParams] = None
    quotient: Optional[QuotientParams] = None

# Report Models
class ChainReport(BaseModel):
    valid: bool
    worst_index: int = Field(default=-1, description="Step with the largest defect (-1 when no steps)")
    worst_defect: float = Field(default=0.0, ge=0, description="Largest per-step defect")

class StepStatus(BaseModel):
    step: str
    status: Literal["passed", "failed", "error", "skipped"]
    detail: Optional[str] = None
    artifacts: List[str] = Field(default=[])

class RunManifest(BaseModel):
    scenario: str
    seed: int
    version: str
    libraries: Dict[str, str]
    config: Dict[str, Any]
    steps: List[StepStatus]
    passed: bool
