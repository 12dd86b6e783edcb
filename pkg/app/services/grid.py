"""
Grid Service
Uniform box covering of T^d used by every search
"""

from functools import cached_property
from typing import Sequence

import numpy as np

from app.core.errors import InvalidInput
from app.services.torus import torus_dist


class Grid:
    """n^d congruent cells; flat indices follow C order of the integer cell tuples"""

    def __init__(self, dim: int, resolution: int):
        if dim not in (1, 2, 3):
            raise InvalidInput(f"unsupported grid dimension {dim}")
        if resolution < 2:
            raise InvalidInput(f"grid resolution must be >= 2, got {resolution}")
        self.dim = int(dim)
        self.n = int(resolution)
        self.shape = (self.n,) * self.dim
        self.size = self.n ** self.dim
        self.cell_diameter = float(np.sqrt(self.dim) / self.n)

    def __repr__(self) -> str:
        return f"Grid(dim={self.dim}, n={self.n})"

    @cached_property
    def centers(self) -> np.ndarray:
        return self.cell_center(np.indices(self.shape).reshape(self.dim, -1).T)

    def cell_center(self, cells) -> np.ndarray:
        """Center(s) of integer cell tuple(s); shape (..., d)"""
        cells = np.asarray(cells, dtype=np.int64) % self.n
        return (cells + 0.5) / self.n

    def cell_of(self, x) -> np.ndarray:
        """Integer cell tuple(s) containing x; shape (..., d)"""
        x = np.asarray(x, dtype=float)
        return np.floor(np.mod(x, 1.0) * self.n).astype(np.int64) % self.n

    def flat_index(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64) % self.n
        return np.ravel_multi_index(tuple(np.moveaxis(cells, -1, 0)), self.shape)

    def flat_of(self, x) -> np.ndarray:
        return self.flat_index(self.cell_of(x))

    def box_offsets(self, radii: Sequence[float]) -> np.ndarray:
        """Integer offsets covering every cell whose center lies within the per-axis radii"""
        ranges = []
        for r in radii:
            reach = min(int(np.ceil(r * self.n + 0.5)), self.n // 2)
            ranges.append(np.arange(-reach, reach + 1))
        return np.array(np.meshgrid(*ranges, indexing="ij")).reshape(self.dim, -1).T

    def neighborhood(self, x, radii: Sequence[float]) -> np.ndarray:
        """Sorted unique flat indices of candidate cells around x"""
        base = self.cell_of(x)
        cells = (base + self.box_offsets(radii)) % self.n
        return np.unique(self.flat_index(cells))

    def cells_within(self, x, radius: float) -> np.ndarray:
        """Sorted flat indices of cells whose centers lie within radius of x"""
        candidates = self.neighborhood(x, [radius] * self.dim)
        d = torus_dist(self.centers[candidates], np.asarray(x, dtype=float))
        return candidates[np.atleast_1d(d) <= radius]

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n": self.n, "cell_diameter": self.cell_diameter}

