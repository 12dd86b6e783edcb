"""
Linear Foliation Service
Rational linear foliations of T^d, plus the foliation by points and the one-leaf foliation

Leaves of a Linear foliation are the compact subtori x + span(V) mod 1 for an
integer direction matrix V. Transverse coordinates come from an integer basis W
of the annihilator lattice, so two points share a leaf iff W x = W y mod 1.
"""

from dataclasses import dataclass
from enum import Enum
from math import gcd
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import get_settings
from app.core.errors import InvalidInput, Unsupported
from app.services.torus import as_point, torus_dist, wrap, wrap_diff


class FoliationKind(str, Enum):
    POINTS = "points"
    LINEAR = "linear"
    WHOLE = "whole"


# Integer lattice helpers

def _egcd(a: int, b: int) -> Tuple[int, int, int]:
    """Return (g, s, t) with s*a + t*b = g = gcd(a, b) >= 0"""
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r != 0:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    if old_r < 0:
        old_r, old_s, old_t = -old_r, -old_s, -old_t
    return old_r, old_s, old_t


def column_echelon(rows: Sequence[Sequence[int]]) -> Tuple[List[List[int]], List[List[int]], int]:
    """Unimodular column reduction: rows @ U = [H | 0] with H lower triangular.

    Returns (H-padded matrix, U, rank). Exact integer arithmetic.
    """
    A = [[int(v) for v in row] for row in rows]
    m = len(A)
    d = len(A[0]) if m else 0
    U = [[1 if i == j else 0 for j in range(d)] for i in range(d)]

    def combine(p: int, j: int, a: int, b: int):
        g, s, t = _egcd(a, b)
        ag, bg = a // g, b // g
        for mat in (A, U):
            for row in mat:
                cp, cj = row[p], row[j]
                row[p] = s * cp + t * cj
                row[j] = -bg * cp + ag * cj

    p = 0
    for i in range(m):
        if p >= d:
            break
        for j in range(p + 1, d):
            if A[i][j] != 0:
                combine(p, j, A[i][p], A[i][j])
        if A[i][p] == 0:
            # row already spanned by earlier pivots
            continue
        if A[i][p] < 0:
            for mat in (A, U):
                for row in mat:
                    row[p] = -row[p]
        p += 1
    return A, U, p


def integer_kernel(rows: Sequence[Sequence[int]], dim: int) -> np.ndarray:
    """Saturated integer basis (as rows) of {z in Z^d : rows @ z = 0}"""
    if len(rows) == 0:
        return np.eye(dim, dtype=np.int64)
    _, U, rank = column_echelon(rows)
    basis = [[U[r][c] for r in range(dim)] for c in range(rank, dim)]
    for vec in basis:
        lead = next((v for v in vec if v != 0), 0)
        if lead < 0:
            for k in range(dim):
                vec[k] = -vec[k]
    return np.array(basis, dtype=np.int64).reshape(len(basis), dim)


def _gauss_reduce(basis: np.ndarray) -> np.ndarray:
    """Lagrange-Gauss reduction of a 2-row real lattice basis"""
    u, v = basis[0].astype(float), basis[1].astype(float)
    if np.dot(u, u) > np.dot(v, v):
        u, v = v, u
    while True:
        mu = np.round(np.dot(u, v) / np.dot(u, u))
        v = v - mu * u
        if np.dot(v, v) >= np.dot(u, u):
            return np.vstack([u, v])
        u, v = v, u


@dataclass(frozen=True, eq=False)
class PlaqueDescriptor:
    center: np.ndarray
    foliation: "LinearFoliation"
    radius: float


class LinearFoliation:
    """A rational linear foliation of T^d (or one of the two degenerate foliations)"""

    def __init__(self, kind: FoliationKind, dim: int, directions: Optional[Sequence[Sequence[int]]] = None):
        if dim not in (1, 2, 3):
            raise InvalidInput(f"unsupported ambient dimension {dim}")
        self.kind = FoliationKind(kind)
        self.dim = dim
        if directions is None or len(directions) == 0:
            V = np.zeros((0, dim), dtype=np.int64)
        else:
            V = np.array(directions, dtype=np.int64).reshape(-1, dim)

        if self.kind == FoliationKind.POINTS:
            self.directions = np.zeros((0, dim), dtype=np.int64)
            self.transverse_basis = np.eye(dim, dtype=np.int64)
        elif self.kind == FoliationKind.WHOLE:
            self.directions = np.eye(dim, dtype=np.int64)
            self.transverse_basis = np.zeros((0, dim), dtype=np.int64)
        else:
            self._validate_directions(V)
            self.directions = V
            self.transverse_basis = integer_kernel(V.tolist(), dim)

        self.leaf_dim = int(self.directions.shape[0])
        if self.kind == FoliationKind.LINEAR:
            # orthonormal rows spanning the leaf direction
            q, _ = np.linalg.qr(self.directions.T.astype(float))
            self.tangent_basis = q[:, : self.leaf_dim].T
            self.leaf_lattice = integer_kernel(self.transverse_basis.tolist(), dim)
            lattice_coords = self.leaf_lattice.astype(float) @ self.tangent_basis.T
            if self.leaf_dim == 2:
                lattice_coords = _gauss_reduce(lattice_coords)
            self._lattice_coords = lattice_coords
            W_rows = self.transverse_basis.tolist()
            self._W_echelon, self._W_unimodular, _ = column_echelon(W_rows)
        elif self.kind == FoliationKind.WHOLE:
            self.tangent_basis = np.eye(dim)
            self.leaf_lattice = np.eye(dim, dtype=np.int64)
            self._lattice_coords = np.eye(dim)
        else:
            self.tangent_basis = np.zeros((0, dim))
            self.leaf_lattice = np.zeros((0, dim), dtype=np.int64)
            self._lattice_coords = np.zeros((0, 0))

    # Construction helpers
    @classmethod
    def points(cls, dim: int) -> "LinearFoliation":
        return cls(FoliationKind.POINTS, dim)

    @classmethod
    def whole(cls, dim: int) -> "LinearFoliation":
        return cls(FoliationKind.WHOLE, dim)

    @classmethod
    def linear(cls, dim: int, directions: Sequence[Sequence[int]]) -> "LinearFoliation":
        return cls(FoliationKind.LINEAR, dim, directions)

    @classmethod
    def from_spec(cls, spec, dim: int) -> "LinearFoliation":
        """Build from a FoliationSpec model or a plain {kind, directions} dict"""
        if isinstance(spec, dict):
            kind, directions = spec.get("kind"), spec.get("directions") or []
        else:
            kind, directions = spec.kind, spec.directions or []
        return cls(FoliationKind(kind), dim, directions)

    def _validate_directions(self, V: np.ndarray):
        c = V.shape[0]
        if c == 0 or c >= self.dim:
            raise InvalidInput(f"linear foliation needs 1 <= c < d directions, got c={c}, d={self.dim}")
        for row in V.tolist():
            g = 0
            for v in row:
                g = gcd(g, int(v))
            if g != 1:
                raise InvalidInput(f"direction {row} is not a primitive integer vector")
        if np.linalg.matrix_rank(V.astype(float)) != c:
            raise InvalidInput("direction vectors are linearly dependent")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "dim": self.dim, "directions": self.directions.tolist(),
                "transverse_basis": self.transverse_basis.tolist()}

    def __repr__(self) -> str:
        return f"LinearFoliation(kind={self.kind.value}, dim={self.dim}, directions={self.directions.tolist()})"

    @property
    def transverse_dim(self) -> int:
        return self.dim - self.leaf_dim

    def plaque(self, center, radius: float) -> PlaqueDescriptor:
        if radius < 0:
            raise InvalidInput(f"plaque radius must be >= 0, got {radius}")
        return PlaqueDescriptor(center=as_point(center, self.dim), foliation=self, radius=float(radius))

    def transverse_gap(self, x, y) -> np.ndarray:
        """Torus-metric distance between transverse coordinates; broadcasts"""
        if self.kind == FoliationKind.WHOLE:
            shape = np.broadcast(np.asarray(x)[..., 0], np.asarray(y)[..., 0]).shape
            return np.zeros(shape)
        diff = wrap_diff(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        return np.linalg.norm(wrap_diff(diff @ self.transverse_basis.T.astype(float)), axis=-1)

    def same_leaf(self, x, y, tol: Optional[float] = None) -> bool:
        if tol is None:
            tol = get_settings().tau_geom
        if tol < 0:
            raise InvalidInput("tol must be >= 0")
        if self.kind == FoliationKind.WHOLE:
            return True
        return bool(self.transverse_gap(x, y) <= tol)

    def project_along_leaf(self, v: np.ndarray) -> np.ndarray:
        """Orthogonal projection of displacements onto the leaf direction"""
        B = self.tangent_basis
        return (np.asarray(v, dtype=float) @ B.T) @ B

    def _in_leaf_lift(self, z: np.ndarray) -> np.ndarray:
        """Integer-shifted copy of z lying in span(V); z is assumed on the leaf through 0"""
        W = self.transverse_basis
        r = W.shape[0]
        target = [-int(v) for v in np.round(W.astype(float) @ z)]
        H, U = self._W_echelon, self._W_unimodular
        u = [0] * r
        for i in range(r):
            acc = target[i] - sum(H[i][j] * u[j] for j in range(i))
            u[i] = acc // H[i][i]
        k = [sum(U[row][col] * u[col] for col in range(r)) for row in range(self.dim)]
        return z + np.array(k, dtype=float)

    def _reduce_in_leaf(self, t: np.ndarray) -> np.ndarray:
        """Shortest representative of leaf coordinates t modulo the leaf lattice"""
        L = self._lattice_coords
        coeffs = np.linalg.solve(L.T, t)
        base = np.floor(coeffs)
        best = t
        best_norm = np.inf
        ranges = [np.arange(-1, 3)] * len(t)
        for offset in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(len(t), -1).T:
            cand = t - (base + offset) @ L
            n = np.linalg.norm(cand)
            if n < best_norm - 1e-15:
                best, best_norm = cand, n
        return best

    def in_leaf_displacement(self, x, y) -> np.ndarray:
        """Shortest in-leaf displacement from x to y, in leaf coordinates"""
        z = wrap_diff(np.asarray(y, dtype=float) - np.asarray(x, dtype=float))
        if self.kind == FoliationKind.WHOLE:
            return z
        if self.kind == FoliationKind.POINTS:
            return np.zeros(0)
        u = self._in_leaf_lift(z)
        return self._reduce_in_leaf(self.tangent_basis @ u)

    def intrinsic_leaf_dist(self, x, y, tol: Optional[float] = None) -> float:
        if tol is None:
            tol = get_settings().tau_geom
        if self.kind == FoliationKind.WHOLE:
            return torus_dist(x, y)
        if not self.same_leaf(x, y, tol):
            return float("inf")
        if self.kind == FoliationKind.POINTS:
            return 0.0
        return float(np.linalg.norm(self.in_leaf_displacement(x, y)))

    # Plaques
    def plaque_distances(self, centers, points, radius: float) -> np.ndarray:
        """Elementwise dist(points[i], plaque(centers[i], radius)); broadcasts"""
        centers = np.asarray(centers, dtype=float)
        points = np.asarray(points, dtype=float)
        z0 = wrap_diff(points - centers)
        if self.kind == FoliationKind.POINTS:
            return np.linalg.norm(z0, axis=-1)
        if self.kind == FoliationKind.WHOLE:
            return np.maximum(0.0, np.linalg.norm(z0, axis=-1) - radius)
        reach = int(np.ceil(radius + 0.5))
        axis_range = np.arange(-reach, reach + 1)
        shifts = np.array(np.meshgrid(*([axis_range] * self.dim), indexing="ij")).reshape(self.dim, -1).T
        z = z0[..., None, :] + shifts
        t = z @ self.tangent_basis.T
        t_norm = np.linalg.norm(t, axis=-1)
        perp_sq = np.maximum(np.sum(z * z, axis=-1) - t_norm ** 2, 0.0)
        excess = np.maximum(t_norm - radius, 0.0)
        return np.sqrt(np.min(perp_sq + excess ** 2, axis=-1))

    def dist_to_plaque(self, P: PlaqueDescriptor, y) -> float:
        return float(self.plaque_distances(P.center, np.asarray(y, dtype=float), P.radius))

    def membership_in_plaque(self, P: PlaqueDescriptor, y, tol: Optional[float] = None) -> bool:
        if tol is None:
            tol = get_settings().tau_geom
        if tol < 0:
            raise InvalidInput("tol must be >= 0")
        if self.kind == FoliationKind.POINTS:
            return torus_dist(P.center, y) <= tol
        if not self.same_leaf(P.center, y, tol):
            return False
        return self.intrinsic_leaf_dist(P.center, y, tol) <= P.radius + tol

    def leaf_coords(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Transverse coordinates w_i . x mod 1 and coordinates in the orthonormal leaf frame"""
        if self.kind == FoliationKind.WHOLE:
            raise Unsupported("the one-leaf foliation has no transverse coordinates")
        x = np.asarray(x, dtype=float)
        return wrap(x @ self.transverse_basis.T.astype(float)), x @ self.tangent_basis.T

    def quotient_project(self, x) -> np.ndarray:
        if self.kind == FoliationKind.WHOLE:
            raise Unsupported("the one-leaf foliation has a one-point quotient")
        return self.leaf_coords(x)[0]

    def leaf_samples(self, x, count: int) -> np.ndarray:
        """Points spread over the compact leaf through x (count per lattice direction)"""
        x = as_point(x, self.dim)
        if self.kind == FoliationKind.POINTS:
            return x[None, :]
        s = np.arange(count) / count
        grids = np.array(np.meshgrid(*([s] * self.leaf_dim), indexing="ij")).reshape(self.leaf_dim, -1).T
        return wrap(x + grids @ self.leaf_lattice.astype(float))
