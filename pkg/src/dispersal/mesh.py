"""Uniform cell-centred grids on 1D intervals and 2D boxes.

The box is the domain Omega. Every grid node is the centre of a cell, so no
node sits on the boundary; the zero extension (exterior Dirichlet data) starts
right outside the box. Fields are plain ``numpy`` arrays with one value per
node, ordered lexicographically (axis 0 slowest).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

MIN_NODES_PER_AXIS = 8


class GridError(ValueError):
    """Invalid grid or region geometry."""


@dataclass(frozen=True)
class Grid:
    """Cell-centred tensor grid on ``prod_k (lower[k], upper[k])``."""

    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise GridError("bounds do not match dim")
        if self.n < MIN_NODES_PER_AXIS:
            raise GridError(f"need at least {MIN_NODES_PER_AXIS} nodes per axis, got {self.n}")
        for lo, hi in zip(self.lower, self.upper):
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
                raise GridError(f"degenerate bounds ({lo}, {hi})")

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / self.n for lo, hi in zip(self.lower, self.upper))

    @property
    def h(self) -> float:
        """Spacing along axis 0 (all axes for square cells)."""
        return self.spacing[0]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in zip(self.lower, self.upper)]))

    @property
    def width(self) -> float:
        """Smallest side length of the box."""
        return min(hi - lo for lo, hi in zip(self.lower, self.upper))

    def axis_coords(self, axis: int = 0) -> np.ndarray:
        lo, h = self.lower[axis], self.spacing[axis]
        return lo + (np.arange(self.n) + 0.5) * h

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(size, dim)``."""
        axes = [self.axis_coords(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        pts.setflags(write=False)
        return pts

    @cached_property
    def index(self) -> np.ndarray:
        """Integer multi-index of every node, shape ``(size, dim)``."""
        idx = np.stack(
            [m.ravel() for m in np.meshgrid(*[np.arange(self.n)] * self.dim, indexing="ij")],
            axis=1,
        )
        idx.setflags(write=False)
        return idx

    @property
    def x(self) -> np.ndarray:
        """First coordinate of every node (convenient in 1D)."""
        return self.nodes[:, 0]

    def evaluate(self, func) -> np.ndarray:
        """Sample ``func(x)`` (1D) or ``func(x, y)`` (2D) at the nodes."""
        cols = [self.nodes[:, k] for k in range(self.dim)]
        return np.broadcast_to(np.asarray(func(*cols), dtype=float), (self.size,)).copy()

    def contains_ball(self, x0, r: float, tol: float | None = None) -> bool:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if tol is None:
            tol = 1e-12 * self.width
        return bool(
            np.all(x0 - r >= np.asarray(self.lower) - tol)
            and np.all(x0 + r <= np.asarray(self.upper) + tol)
        )


def build_grid(dim: int, bounds, nodes_per_axis: int) -> Grid:
    """Build a cell-centred grid.

    ``bounds`` is ``(lo, hi)`` in 1D and ``((lo0, hi0), (lo1, hi1))`` in 2D; a
    single pair is accepted in 2D and used for both axes.
    """
    arr = np.asarray(bounds, dtype=float)
    if dim == 1:
        if arr.shape != (2,):
            raise GridError(f"1D bounds must be a pair, got {bounds!r}")
        pairs = [tuple(arr)]
    elif dim == 2:
        if arr.shape == (2,):
            pairs = [tuple(arr), tuple(arr)]
        elif arr.shape == (2, 2):
            pairs = [tuple(row) for row in arr]
        else:
            raise GridError(f"2D bounds must be two pairs, got {bounds!r}")
    else:
        raise GridError(f"dim must be 1 or 2, got {dim}")
    lower = tuple(float(p[0]) for p in pairs)
    upper = tuple(float(p[1]) for p in pairs)
    return Grid(dim=dim, lower=lower, upper=upper, n=int(nodes_per_axis))


@dataclass(frozen=True, eq=False)
class NodeSet:
    """A subset of grid nodes, usually the discrete ball ``B_r(x0)``."""

    grid: Grid
    indices: np.ndarray
    center: tuple[float, ...] | None = None
    radius: float | None = None
    _mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.intp))
        if idx.size and (idx[0] < 0 or idx[-1] >= self.grid.size):
            raise GridError("node indices out of range")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        mask = np.zeros(self.grid.size, dtype=bool)
        mask[idx] = True
        mask.setflags(write=False)
        object.__setattr__(self, "_mask", mask)

    @property
    def mask(self) -> np.ndarray:
        return self._mask

    @property
    def chi(self) -> np.ndarray:
        """Characteristic function as a float field."""
        return self._mask.astype(float)

    def __len__(self) -> int:
        return int(self.indices.size)

    def issubset(self, other: NodeSet) -> bool:
        return bool(np.all(other.mask[self.indices]))

    @classmethod
    def everything(cls, grid: Grid) -> NodeSet:
        return cls(grid, np.arange(grid.size))


def ball_nodes(grid: Grid, x0, r: float) -> NodeSet:
    """Nodes strictly inside ``B_r(x0)``; the ball must lie in the box."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (grid.dim,):
        raise GridError(f"centre {x0} does not match grid dimension {grid.dim}")
    if not r > 0:
        raise GridError(f"radius must be positive, got {r}")
    if not grid.contains_ball(x0, r):
        raise GridError(f"ball B_{r}({x0.tolist()}) is not contained in the domain")
    dist = np.linalg.norm(grid.nodes - x0, axis=1)
    idx = np.flatnonzero(dist < r)
    if idx.size == 0:
        raise GridError(f"ball B_{r}({x0.tolist()}) contains no grid node")
    return NodeSet(grid, idx, tuple(float(c) for c in x0), float(r))


def integrate(grid: Grid, field_values) -> float:
    """Midpoint rule: cell volume times the sum of nodal values."""
    values = np.asarray(field_values, dtype=float)
    if values.shape != (grid.size,):
        raise GridError(f"field has shape {values.shape}, expected ({grid.size},)")
    return float(grid.cell_volume * values.sum())


def l2_norm(grid: Grid, field_values) -> float:
    values = np.asarray(field_values, dtype=float)
    return float(np.sqrt(grid.cell_volume * np.dot(values, values)))


def check_field(grid: Grid, values, name: str = "field") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.size,):
        raise GridError(f"{name} has shape {values.shape}, expected ({grid.size},)")
    if not np.all(np.isfinite(values)):
        raise GridError(f"{name} has non-finite entries")
    return values


def radius_ladder(grid: Grid, min_nodes: int = 2) -> list[float]:
    """Dyadic radii ``width / 2**k`` (k >= 1) down to ``min_nodes`` cells."""
    radii = []
    k = 1
    while True:
        r = grid.width / 2**k
        if r < min_nodes * grid.h:
            break
        radii.append(r)
        k += 1
    return radii


def candidate_balls(grid: Grid, radii: Sequence[float] | None = None) -> list[tuple[np.ndarray, float]]:
    """All node-centred balls on the radius ladder that fit in the box."""
    radii = radius_ladder(grid) if radii is None else radii
    out = []
    for r in radii:
        for x0 in grid.nodes:
            if grid.contains_ball(x0, r):
                out.append((np.array(x0), float(r)))
    return out
