"""
Flat Torus Service
Points of T^d = R^d / Z^d, the quotient metric and set distances

Points are numpy float arrays of shape (d,) with coordinates in [0, 1);
point sets are arrays of shape (m, d).
"""

import numpy as np
from scipy.spatial.distance import cdist
from typing import Union, Sequence

from app.core.errors import InvalidInput, EmptySet

ArrayLike = Union[np.ndarray, Sequence[float], Sequence[Sequence[float]]]

SUPPORTED_DIMS = (1, 2, 3)


def as_array(v: ArrayLike) -> np.ndarray:
    """Convert to a float array and reject non-finite entries"""
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"non-finite coordinate in {arr.tolist()}")
    return arr


def wrap(v: ArrayLike) -> np.ndarray:
    """Componentwise reduction mod 1 into [0, 1)"""
    arr = as_array(v)
    out = np.mod(arr, 1.0)
    # np.mod can return exactly 1.0 for tiny negative inputs
    out[out >= 1.0] = 0.0
    return out + 0.0


def wrap_diff(v: ArrayLike) -> np.ndarray:
    """Nearest-image representative of a displacement, in [-1/2, 1/2]"""
    arr = np.asarray(v, dtype=float)
    return arr - np.round(arr)


def as_point(x: ArrayLike, dim: int = None) -> np.ndarray:
    p = wrap(np.atleast_1d(x))
    if p.ndim != 1:
        raise InvalidInput(f"expected a single point, got shape {p.shape}")
    if dim is not None and p.shape[0] != dim:
        raise InvalidInput(f"dimension mismatch: expected {dim}, got {p.shape[0]}")
    return p


def as_point_set(points: ArrayLike, dim: int = None) -> np.ndarray:
    arr = wrap(np.atleast_2d(np.asarray(points, dtype=float)))
    if arr.size == 0 or arr.shape[0] == 0:
        raise EmptySet("point set is empty")
    if dim is not None and arr.shape[1] != dim:
        raise InvalidInput(f"dimension mismatch: expected {dim}, got {arr.shape[1]}")
    return arr


def torus_dist(x: ArrayLike, y: ArrayLike) -> Union[float, np.ndarray]:
    """Quotient-Euclidean distance; broadcasts over leading axes"""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape[-1] != ya.shape[-1]:
        raise InvalidInput(f"dimension mismatch: {xa.shape[-1]} vs {ya.shape[-1]}")
    d = np.linalg.norm(wrap_diff(xa - ya), axis=-1)
    if np.ndim(d) == 0:
        return float(d)
    return d


def pairwise_torus_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of torus distances between the rows of a and the rows of b"""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise InvalidInput(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    squared = np.zeros((a.shape[0], b.shape[0]))
    for axis in range(a.shape[1]):
        gap = cdist(a[:, [axis]], b[:, [axis]], metric="cityblock")
        gap = np.mod(gap, 1.0)
        gap = np.minimum(gap, 1.0 - gap)
        squared += gap * gap
    return np.sqrt(squared)


def dist_point_to_set(a: ArrayLike, B: ArrayLike) -> float:
    """dist(a, B) = min over b in B of torus_dist(a, b)"""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.size == 0 or B.shape[0] == 0:
        raise EmptySet("dist_point_to_set needs a nonempty set")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    return float(np.min(torus_dist(a[None, :], B)))


def directed_hausdorff(A: ArrayLike, B: ArrayLike) -> float:
    """sup over a in A of dist(a, B)"""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] == 0 or B.shape[0] == 0 or A.size == 0 or B.size == 0:
        raise EmptySet("Hausdorff distance needs nonempty sets")
    return float(pairwise_torus_dist(A, B).min(axis=1).max())


def hausdorff_dist(A: ArrayLike, B: ArrayLike) -> float:
    """D(A, B) = max of the two directed distances"""
    return max(directed_hausdorff(A, B), directed_hausdorff(B, A))


def random_points(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    return rng.random((count, dim))
