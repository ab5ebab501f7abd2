"""Equidistant hypercube partitions of the unit cube.

Cells are indexed in mixed radix with the first coordinate most significant.
Each cell is half-open, ``[k*delta, (k+1)*delta)``, except that the upper
boundary 1 belongs to the last cell of its axis so that every point of
``[0, 1]^p`` has exactly one cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_CELLS = 2**48


class GridError(ValueError):
    """Raised for invalid grids, cells, or points outside the unit cube."""


@dataclass(frozen=True)
class CellId:
    linear: int
    multi: tuple[int, ...]


@dataclass(frozen=True)
class Grid:
    """Partition of ``[0, 1]^dim`` into ``inv_mesh**dim`` cubes of side ``1/inv_mesh``."""

    dim: int
    inv_mesh: int

    def __post_init__(self):
        if isinstance(self.dim, bool) or not isinstance(self.dim, (int, np.integer)):
            raise GridError(f"dim must be an integer, got {self.dim!r}")
        if isinstance(self.inv_mesh, bool) or not isinstance(self.inv_mesh, (int, np.integer)):
            raise GridError(f"inv_mesh must be an integer, got {self.inv_mesh!r}")
        if self.dim < 1 or self.inv_mesh < 1:
            raise GridError(f"dim and inv_mesh must be positive (got {self.dim}, {self.inv_mesh})")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "inv_mesh", int(self.inv_mesh))
        if self.inv_mesh**self.dim > MAX_CELLS:
            raise GridError(
                f"grid with {self.inv_mesh}^{self.dim} cells exceeds the limit of 2^48 cells"
            )

    @property
    def cell_count(self) -> int:
        return self.inv_mesh**self.dim

    @property
    def mesh(self) -> float:
        return 1.0 / self.inv_mesh

    @property
    def cell_volume(self) -> float:
        return 1.0 / self.cell_count

    def _radix(self) -> np.ndarray:
        return self.inv_mesh ** np.arange(self.dim - 1, -1, -1, dtype=np.int64)

    def multi_to_linear(self, multi) -> int:
        multi = tuple(int(k) for k in multi)
        if len(multi) != self.dim or any(k < 0 or k >= self.inv_mesh for k in multi):
            raise GridError(f"invalid multi-index {multi} for {self}")
        linear = 0
        for k in multi:
            linear = linear * self.inv_mesh + k
        return linear

    def linear_to_multi(self, linear: int) -> tuple[int, ...]:
        linear = int(linear)
        if not 0 <= linear < self.cell_count:
            raise GridError(f"cell index {linear} out of range [0, {self.cell_count})")
        multi = []
        for _ in range(self.dim):
            linear, k = divmod(linear, self.inv_mesh)
            multi.append(k)
        return tuple(reversed(multi))

    def cell(self, linear: int) -> CellId:
        return CellId(int(linear), self.linear_to_multi(linear))

    def locate(self, points) -> np.ndarray:
        """Vectorized cell lookup: return linear cell indices for an ``(n, dim)`` array."""
        x = np.asarray(points, dtype=float)
        if x.ndim == 1 and self.dim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise GridError(f"expected points of shape (n, {self.dim}), got {x.shape}")
        if x.size and (not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0):
            raise GridError("covariates must lie in [0, 1]^p")
        k = np.floor(x * self.inv_mesh).astype(np.int64)
        np.minimum(k, self.inv_mesh - 1, out=k)
        return k @ self._radix()

    def cell_of(self, x) -> CellId:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise GridError(f"expected a point of dimension {self.dim}, got shape {x.shape}")
        return self.cell(int(self.locate(x[None, :])[0]))

    def cell_diameter(self) -> float:
        return math.sqrt(self.dim) / self.inv_mesh

    def cell_box(self, cell) -> tuple[np.ndarray, np.ndarray]:
        """Closed box ``[k_i*delta, (k_i+1)*delta]`` of a cell given as CellId or linear index."""
        if isinstance(cell, CellId):
            multi = cell.multi
            if self.multi_to_linear(multi) != cell.linear:
                raise GridError(f"inconsistent cell id {cell}")
        else:
            multi = self.linear_to_multi(cell)
        k = np.asarray(multi, dtype=float)
        return k / self.inv_mesh, (k + 1.0) / self.inv_mesh

    def lower_corners(self) -> np.ndarray:
        """Lower corners of all cells, shape ``(cell_count, dim)``, in linear order."""
        idx = np.arange(self.cell_count, dtype=np.int64)
        multi = (idx[:, None] // self._radix()[None, :]) % self.inv_mesh
        return multi / self.inv_mesh

    def probe_points(self, per_axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Tensor probe grid with ``per_axis`` midpoints per axis inside every cell.

        Returns ``(points, cells)`` with ``points`` of shape ``(cell_count * per_axis**dim, dim)``.
        """
        if per_axis < 1:
            raise GridError("per_axis must be positive")
        offsets_1d = (np.arange(per_axis) + 0.5) / (per_axis * self.inv_mesh)
        mesh = np.meshgrid(*([offsets_1d] * self.dim), indexing="ij")
        offsets = np.stack([m.ravel() for m in mesh], axis=1)
        corners = self.lower_corners()
        points = (corners[:, None, :] + offsets[None, :, :]).reshape(-1, self.dim)
        cells = np.repeat(np.arange(self.cell_count, dtype=np.int64), offsets.shape[0])
        return points, cells


def cell_of(grid: Grid, x) -> CellId:
    return grid.cell_of(x)


def cell_diameter(grid: Grid) -> float:
    return grid.cell_diameter()


def cell_box(grid: Grid, cell) -> tuple[np.ndarray, np.ndarray]:
    return grid.cell_box(cell)


def inv_mesh_rule(n: int, alpha: float, dim: int) -> int:
    """Nearest integer inverse mesh to ``(n / log n)^(1/(2*alpha + dim))``, at least 1."""
    target = (n / math.log(n)) ** (1.0 / (2.0 * alpha + dim))
    return max(1, int(round(target)))
