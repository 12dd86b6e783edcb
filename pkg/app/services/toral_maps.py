"""
Toral Maps Service
Integer-matrix automorphisms of T^d with trigonometric and bump perturbations

A map is g(x) = h(M x + p(x)) mod 1 where p is a finite trigonometric
polynomial and h = id + b is an optional bump displacement field. Inverses are
computed by contraction fixed-point iteration.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from app.core.config import get_settings
from app.core.errors import (
    InvalidInput,
    InversionFailure,
    NotInvariant,
    NotInvertible,
    SupportOverlap,
    Unsupported,
)
from app.services.foliation import FoliationKind, LinearFoliation
from app.services.torus import pairwise_torus_dist, torus_dist, wrap, wrap_diff

TWO_PI = 2.0 * np.pi


def bump(s: np.ndarray) -> np.ndarray:
    """C-infinity bump with bump(0) = 1 and support [0, 1)"""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
    return out


def _bump_slope() -> float:
    s = np.linspace(0.0, 0.999, 20001)
    values = bump(s)
    return float(np.max(np.abs(np.diff(values) / np.diff(s))) * 1.01)


BUMP_SLOPE = _bump_slope()


@dataclass(frozen=True)
class TrigTerm:
    freq: np.ndarray
    coeff: np.ndarray
    phase: str = "sin"

    def __post_init__(self):
        if self.phase not in ("sin", "cos"):
            raise InvalidInput(f"phase must be 'sin' or 'cos', got {self.phase!r}")

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.coeff) * TWO_PI * np.linalg.norm(self.freq))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        arg = TWO_PI * (x @ self.freq.astype(float))
        wave = np.sin(arg) if self.phase == "sin" else np.cos(arg)
        return np.asarray(wave)[..., None] * self.coeff

    def to_dict(self) -> dict:
        return {"freq": self.freq.tolist(), "coeff": self.coeff.tolist(), "phase": self.phase}


@dataclass(frozen=True)
class BumpField:
    """b(z) = sum_j displacement_j * bump(d(z, site_j) / radius)"""
    sites: np.ndarray
    displacements: np.ndarray
    radius: float

    @property
    def max_displacement(self) -> float:
        if len(self.displacements) == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.displacements, axis=1)))

    @property
    def lipschitz(self) -> float:
        return self.max_displacement * BUMP_SLOPE / self.radius

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros_like(z)
        for site, disp in zip(self.sites, self.displacements):
            s = np.linalg.norm(wrap_diff(z - site), axis=-1) / self.radius
            out = out + bump(s)[..., None] * disp
        return out


@dataclass(frozen=True)
class DisplacementRequest:
    sites: np.ndarray
    targets: np.ndarray

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[Sequence[float], Sequence[float]]], dim: int) -> "DisplacementRequest":
        if len(pairs) == 0:
            return cls(np.zeros((0, dim)), np.zeros((0, dim)))
        sites = wrap(np.array([p[0] for p in pairs], dtype=float))
        targets = wrap(np.array([p[1] for p in pairs], dtype=float))
        return cls(sites, targets)

    @property
    def separation(self) -> float:
        if len(self.sites) < 2:
            return float("inf")
        d = pairwise_torus_dist(self.sites, self.sites)
        np.fill_diagonal(d, np.inf)
        return float(d.min())


class ToralMap:
    """Homeomorphism of T^d given by an integer matrix plus small perturbations"""

    def __init__(
        self,
        matrix: Sequence[Sequence[int]],
        terms: Optional[Sequence[TrigTerm]] = None,
        bump_field: Optional[BumpField] = None,
        tau_inv: Optional[float] = None,
        max_iters: Optional[int] = None,
    ):
        settings = get_settings()
        M = np.array(matrix, dtype=np.int64)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] not in (1, 2, 3):
            raise InvalidInput(f"matrix must be d x d with d in 1..3, got shape {M.shape}")
        det = int(round(np.linalg.det(M.astype(float))))
        if abs(det) != 1:
            raise InvalidInput(f"matrix determinant must be +-1, got {det}")
        self.matrix = M
        self.dim = M.shape[0]
        self.det = det
        self.terms: List[TrigTerm] = list(terms or [])
        for term in self.terms:
            if term.freq.shape != (self.dim,) or term.coeff.shape != (self.dim,):
                raise InvalidInput("perturbation term dimension does not match the matrix")
        self.bump_field = bump_field
        self.tau_inv = settings.tau_inv if tau_inv is None else float(tau_inv)
        self.max_iters = settings.max_inverse_iters if max_iters is None else int(max_iters)
        self._Mf = M.astype(float)
        self._Minv = np.linalg.inv(self._Mf)
        self.inverse_norm = float(np.linalg.norm(self._Minv, 2))
        self.op_norm = float(np.linalg.norm(self._Mf, 2))
        self.lipschitz_bound = float(sum(t.lipschitz for t in self.terms))
        if self.terms and self.lipschitz_bound * self.inverse_norm >= 1.0:
            raise InvalidInput(
                f"perturbation Lipschitz bound {self.lipschitz_bound:.4g} breaks the invertibility "
                f"margin 1/||M^-1|| = {1.0 / self.inverse_norm:.4g}"
            )
        if bump_field is not None and bump_field.lipschitz >= 1.0:
            raise NotInvertible(f"bump field Lipschitz constant {bump_field.lipschitz:.4g} >= 1")

    @classmethod
    def from_spec(cls, spec) -> "ToralMap":
        """Build from a MapSpec model or a plain {matrix, perturbation} dict"""
        if isinstance(spec, dict):
            matrix, perturbation = spec["matrix"], spec.get("perturbation") or []
        else:
            matrix, perturbation = spec.matrix, spec.perturbation or []
        terms = []
        for term in perturbation:
            t = term if isinstance(term, dict) else term.model_dump()
            terms.append(TrigTerm(np.array(t["freq"], dtype=np.int64), np.array(t["coeff"], dtype=float), t.get("phase", "sin")))
        return cls(matrix, terms)

    def to_dict(self) -> dict:
        out = {"matrix": self.matrix.tolist(), "perturbation": [t.to_dict() for t in self.terms],
               "lipschitz_bound": self.lipschitz_bound}
        if self.bump_field is not None:
            out["bump"] = {"sites": self.bump_field.sites.tolist(),
                           "displacements": self.bump_field.displacements.tolist(),
                           "radius": self.bump_field.radius}
        return out

    def __repr__(self) -> str:
        return f"ToralMap(matrix={self.matrix.tolist()}, terms={len(self.terms)}, bump={self.bump_field is not None})"

    @property
    def is_linear(self) -> bool:
        return not self.terms and self.bump_field is None

    @property
    def displacement_lipschitz(self) -> float:
        """Lipschitz constant of x -> g(x) - M x"""
        lip = self.lipschitz_bound
        if self.bump_field is not None:
            lip += self.bump_field.lipschitz * (self.op_norm + self.lipschitz_bound)
        return lip

    # Evaluation
    def perturbation(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x, dtype=float)
        for term in self.terms:
            out = out + term.evaluate(x)
        return out

    def lift(self, x) -> np.ndarray:
        """Unwrapped image M x + p(x) (+ bump), for x given in any representative"""
        x = np.asarray(x, dtype=float)
        z = x @ self._Mf.T + self.perturbation(x)
        if self.bump_field is not None:
            z = z + self.bump_field.evaluate(z)
        return z

    def apply(self, x) -> np.ndarray:
        return wrap(self.lift(x))

    def apply_inverse(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        z = y.copy()
        if self.bump_field is not None:
            z = self._fixed_point(lambda cur: y - self.bump_field.evaluate(cur), z)
        x = z @ self._Minv.T
        if self.terms:
            x = self._fixed_point(lambda cur: (z - self.perturbation(cur)) @ self._Minv.T, x)
        x = wrap(x)
        residual = np.max(np.atleast_1d(torus_dist(self.apply(x), wrap(y))))
        if residual > max(self.tau_inv, 1e-12):
            raise InversionFailure(f"inverse residual {residual:.3g} exceeds tau_inv {self.tau_inv:.3g}",
                                   {"residual": float(residual)})
        return x

    def _fixed_point(self, step, start: np.ndarray) -> np.ndarray:
        cur = start
        for _ in range(self.max_iters):
            nxt = step(cur)
            if np.max(np.abs(nxt - cur)) <= 0.1 * self.tau_inv:
                return nxt
            cur = nxt
        gap = float(np.max(np.abs(step(cur) - cur)))
        if gap > self.tau_inv:
            raise InversionFailure(f"fixed-point inversion did not converge in {self.max_iters} iterations",
                                   {"last_step": gap})
        return cur

    def iterate(self, x, k: int) -> np.ndarray:
        """f^k(x) for any integer k"""
        out = np.asarray(x, dtype=float)
        for _ in range(abs(k)):
            out = self.apply(out) if k > 0 else self.apply_inverse(out)
        return wrap(out)

    def jacobian(self, x, h: float = 1e-6) -> np.ndarray:
        """Central-difference derivative of the lift; shape (..., d, d)"""
        x = np.asarray(x, dtype=float)
        cols = []
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            cols.append((self.lift(x + e) - self.lift(x - e)) / (2.0 * h))
        return np.stack(cols, axis=-1)


@dataclass
class SpectralSplitting:
    eigenvalues: List[complex]
    stable: np.ndarray
    center: np.ndarray
    unstable: np.ndarray
    lam: Optional[float]
    gamma_hat: Optional[float]
    gamma: Optional[float]
    mu: Optional[float]
    classification: str
    diagonalizable: bool
    c_constant: Optional[float]
    c_observed: float
    dims: Tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        self.dims = (self.stable.shape[1], self.center.shape[1], self.unstable.shape[1])

    def to_dict(self) -> Dict:
        return {
            "eigenvalues": [[float(np.real(v)), float(np.imag(v))] for v in self.eigenvalues],
            "dims": list(self.dims),
            "lambda": self.lam, "gamma_hat": self.gamma_hat, "gamma": self.gamma, "mu": self.mu,
            "classification": self.classification,
            "diagonalizable": self.diagonalizable,
            "c_constant": self.c_constant,
            "c_observed": self.c_observed,
        }


def _invariant_subspace(M: np.ndarray, eigenvalues: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Generalized eigenspace for the selected eigenvalues (orthonormal columns)"""
    d = M.shape[0]
    if not np.any(mask):
        return np.zeros((d, 0))
    if np.all(mask):
        return np.eye(d)
    P = np.eye(d, dtype=complex)
    for ev in eigenvalues[mask]:
        P = P @ (M - ev * np.eye(d))
    return null_space(np.real(P), rcond=1e-8)


def spectral_splitting(f: ToralMap, modulus_tol: float = 1e-9, horizon: int = 20) -> SpectralSplitting:
    if not f.is_linear:
        raise Unsupported("spectral splitting is only computed for unperturbed linear maps")
    M = f.matrix.astype(float)
    eigenvalues, eigenvectors = np.linalg.eig(M)
    moduli = np.abs(eigenvalues)
    stable_mask = moduli < 1.0 - modulus_tol
    unstable_mask = moduli > 1.0 + modulus_tol
    center_mask = ~(stable_mask | unstable_mask)

    stable = _invariant_subspace(M, eigenvalues, stable_mask)
    center = _invariant_subspace(M, eigenvalues, center_mask)
    unstable = _invariant_subspace(M, eigenvalues, unstable_mask)

    lam = float(moduli[stable_mask].max()) if stable_mask.any() else None
    mu = float(moduli[unstable_mask].min()) if unstable_mask.any() else None
    gamma_hat = float(moduli[center_mask].min()) if center_mask.any() else None
    gamma = float(moduli[center_mask].max()) if center_mask.any() else None

    hyperbolic_part = stable_mask.any() or unstable_mask.any()
    if not center_mask.any() and stable_mask.any() and unstable_mask.any():
        classification = "anosov"
    elif center_mask.any() and hyperbolic_part:
        classification = "partially_hyperbolic"
    else:
        classification = "neither"

    diagonalizable = np.linalg.matrix_rank(eigenvectors, tol=1e-8) == M.shape[0]
    c_observed = _observed_c(M, stable, center, unstable, lam, gamma_hat, gamma, mu, horizon)
    return SpectralSplitting(
        eigenvalues=list(eigenvalues),
        stable=stable, center=center, unstable=unstable,
        lam=lam, gamma_hat=gamma_hat, gamma=gamma, mu=mu,
        classification=classification,
        diagonalizable=bool(diagonalizable),
        c_constant=1.0 if diagonalizable else None,
        c_observed=c_observed,
    )


def _observed_c(M, stable, center, unstable, lam, gamma_hat, gamma, mu, horizon: int) -> float:
    """Smallest C making the three growth inequalities hold on basis vectors for n <= horizon"""
    worst = 1.0
    # M restricted to each invariant subspace
    restricted = [B.T @ M @ B for B in (stable, center, unstable)]
    powers = [np.eye(A.shape[0]) for A in restricted]
    for n in range(1, horizon + 1):
        powers = [P @ A for P, A in zip(powers, restricted)]
        stable_norms, center_norms, unstable_norms = (np.linalg.norm(P, axis=0) for P in powers)
        for norm in stable_norms:
            worst = max(worst, norm / lam ** n)
        for norm in unstable_norms:
            worst = max(worst, mu ** n / norm)
        for norm in center_norms:
            worst = max(worst, norm / gamma ** n, gamma_hat ** n / norm)
    return float(worst)


def c0_distance(f: ToralMap, g: ToralMap, grid) -> Tuple[float, float]:
    """Grid bracket [lower, upper] for sup_x d(f(x), g(x))"""
    if f.dim != g.dim:
        raise InvalidInput("maps act on tori of different dimension")
    if not np.array_equal(f.matrix, g.matrix):
        raise Unsupported("C0 distance is only bracketed for maps with the same integer matrix")
    centers = grid.centers
    lower = float(np.max(torus_dist(f.apply(centers), g.apply(centers))))
    upper = lower + (f.displacement_lipschitz + g.displacement_lipschitz) * grid.cell_diameter
    return lower, upper


def build_perturbation(f: ToralMap, req: DisplacementRequest, radius: float) -> ToralMap:
    """g = h o f where h moves each request site to its target with a smooth bump"""
    if f.bump_field is not None:
        raise Unsupported("map already carries a bump perturbation")
    if len(req.sites) == 0:
        return ToralMap(f.matrix, f.terms, None, f.tau_inv, f.max_iters)
    if radius <= 0 or radius >= 0.5:
        raise InvalidInput(f"bump radius must lie in (0, 1/2), got {radius}")
    separation = req.separation
    if radius >= separation / 2.0:
        raise SupportOverlap(f"bump radius {radius:.4g} overlaps: site separation is {separation:.4g}",
                             {"separation": separation, "radius": radius})
    displacements = wrap_diff(req.targets - req.sites)
    norms = np.linalg.norm(displacements, axis=1)
    if np.any(norms >= radius / 2.0):
        worst = int(np.argmax(norms))
        raise NotInvertible(f"displacement {norms[worst]:.4g} at site {worst} is not below radius/2",
                            {"index": worst, "displacement": float(norms[worst])})
    field_ = BumpField(req.sites.copy(), displacements, float(radius))
    if field_.lipschitz >= 1.0:
        raise NotInvertible(f"bump Lipschitz constant {field_.lipschitz:.4g} >= 1")
    return ToralMap(f.matrix, f.terms, field_, f.tau_inv, f.max_iters)


def induced_quotient_map(f: ToralMap, F: LinearFoliation) -> ToralMap:
    """The map f/F on the transverse torus T^(d-c)"""
    if F.dim != f.dim:
        raise InvalidInput("foliation and map live on tori of different dimension")
    if F.kind == FoliationKind.WHOLE:
        raise Unsupported("the one-leaf foliation has a one-point quotient")
    if F.kind == FoliationKind.POINTS:
        return f
    if f.bump_field is not None:
        raise Unsupported("bump-perturbed maps have no closed-form quotient")

    W = F.transverse_basis
    Wf = W.astype(float)
    M = f.matrix
    image_dirs = W @ M @ F.directions.T
    if np.any(image_dirs != 0):
        row, col = np.argwhere(image_dirs != 0)[0]
        v = F.directions[col].astype(float)
        s = 1.0 / (1.0 + 2.0 * float(np.max(np.abs(image_dirs))))
        witness = wrap(s * v)
        raise NotInvariant("matrix does not map the leaf direction into itself",
                           {"witness": witness.tolist(), "partner": [0.0] * f.dim})

    WM = (W @ M).astype(float)
    Q = np.round(np.linalg.lstsq(Wf.T, WM.T, rcond=None)[0].T).astype(np.int64)
    if not np.array_equal(Q @ W, W @ M):
        raise NotInvariant("transverse action is not integral", {"witness": [0.0] * f.dim})

    terms = []
    for term in f.terms:
        coeff = Wf @ term.coeff
        if np.allclose(coeff, 0.0):
            continue
        k = np.round(np.linalg.lstsq(Wf.T, term.freq.astype(float), rcond=None)[0]).astype(np.int64)
        if not np.array_equal(k @ W, term.freq):
            witness = _leaf_variation_witness(f, F)
            raise NotInvariant("perturbation moves points across leaves non-uniformly",
                               {"witness": witness.tolist(), "partner": [0.0] * f.dim})
        terms.append(TrigTerm(k, coeff, term.phase))
    return ToralMap(Q, terms, None, f.tau_inv, f.max_iters)


def _leaf_variation_witness(f: ToralMap, F: LinearFoliation) -> np.ndarray:
    """Point on the leaf through 0 whose image leaves the leaf of f(0)"""
    base = np.zeros(f.dim)
    candidates = wrap(np.linspace(0.0, 1.0, 257)[1:-1, None] * F.leaf_lattice[0].astype(float))
    gaps = F.transverse_gap(f.apply(candidates), f.apply(base))
    return candidates[int(np.argmax(gaps))]


def _integer_det(B: List[List[int]]) -> int:
    d = len(B)
    if d == 1:
        return B[0][0]
    if d == 2:
        return B[0][0] * B[1][1] - B[0][1] * B[1][0]
    return sum((-1) ** j * B[0][j] * _integer_det([row[:j] + row[j + 1:] for row in B[1:]]) for j in range(d))


def _adjugate(B: List[List[int]]) -> List[List[int]]:
    d = len(B)
    if d == 1:
        return [[1]]
    adj = [[0] * d for _ in range(d)]
    for i in range(d):
        for j in range(d):
            minor = [row[:j] + row[j + 1:] for k, row in enumerate(B) if k != i]
            adj[j][i] = (-1) ** (i + j) * _integer_det(minor)
    return adj


def integer_periodic_points(matrix: Sequence[Sequence[int]], k: int) -> np.ndarray:
    """All x in T^d with A^k x = x, enumerated exactly as (A^k - I)^-1 Z^d / Z^d"""
    if k < 1:
        raise InvalidInput("period must be >= 1")
    A = [[int(v) for v in row] for row in matrix]
    d = len(A)
    P = [[1 if i == j else 0 for j in range(d)] for i in range(d)]
    for _ in range(k):
        P = [[sum(P[i][m] * A[m][j] for m in range(d)) for j in range(d)] for i in range(d)]
    B = [[P[i][j] - (1 if i == j else 0) for j in range(d)] for i in range(d)]
    D = abs(_integer_det(B))
    if D == 0:
        raise Unsupported(f"A^{k} - I is singular: periodic points form a continuum")
    adj = _adjugate(B)
    generators = [tuple(adj[r][c] % D for r in range(d)) for c in range(d)]
    seen = {tuple([0] * d)}
    frontier = [tuple([0] * d)]
    while frontier:
        nxt = []
        for elem in frontier:
            for gen in generators:
                cand = tuple((a + b) % D for a, b in zip(elem, gen))
                if cand not in seen:
                    seen.add(cand)
                    nxt.append(cand)
        frontier = nxt
    points = np.array(sorted(seen), dtype=float) / D
    return points
