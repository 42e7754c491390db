"""Rectangular space-time grids, boundary faces and quadrature.

The space domain is an axis-aligned box in one or two dimensions, split into
uniform cells. Boundary faces carry an outward unit normal, an area (length in
2D, unit counting measure in 1D) and the index of the cell they touch. Time is
a uniform axis ``t_k = k * dt`` for ``k = 0..n_steps``.

Quadrature is the midpoint rule in space and the trapezoid rule in time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Faces:
    """Boundary faces of a grid, stored as parallel arrays."""

    centers: np.ndarray  # (nf, dim)
    normals: np.ndarray  # (nf, dim)
    areas: np.ndarray  # (nf,)
    cells: np.ndarray  # (nf,) flat index of the adjacent cell
    axis: np.ndarray  # (nf,) axis the normal points along
    side: np.ndarray  # (nf,) 0 for the low end of the axis, 1 for the high end

    def __len__(self) -> int:
        return len(self.areas)


@dataclass(frozen=True)
class Grid:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    n_cells: tuple[int, ...]
    T: float
    n_steps: int

    def __post_init__(self):
        if not (len(self.lo) == len(self.hi) == len(self.n_cells)):
            raise GridError("lo, hi and n_cells must have the same length")
        if self.dim not in (1, 2):
            raise GridError(f"only 1D and 2D grids are supported, got dim={self.dim}")
        for k, (a, b, n) in enumerate(zip(self.lo, self.hi, self.n_cells)):
            if not b > a:
                raise GridError(f"axis {k}: hi={b} must exceed lo={a}")
            if n < 2:
                raise GridError(f"axis {k}: need at least 2 cells, got {n}")
        if not self.T > 0:
            raise GridError(f"final time must be positive, got T={self.T}")
        if self.n_steps < 2:
            raise GridError(f"need at least 2 time steps, got {self.n_steps}")

    @property
    def dim(self) -> int:
        return len(self.n_cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.n_cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.n_cells))

    @cached_property
    def h(self) -> np.ndarray:
        return (np.asarray(self.hi, float) - np.asarray(self.lo, float)) / np.asarray(self.n_cells)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def measure(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    @cached_property
    def time_weights(self) -> np.ndarray:
        w = np.full(self.n_steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def axis_centers(self, k: int) -> np.ndarray:
        return self.lo[k] + (np.arange(self.n_cells[k]) + 0.5) * self.h[k]

    def axis_nodes(self, k: int) -> np.ndarray:
        return np.linspace(self.lo[k], self.hi[k], self.n_cells[k] + 1)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        """Cell centers, shape (size, dim), flattened in C order."""
        axes = np.meshgrid(*[self.axis_centers(k) for k in range(self.dim)], indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    @cached_property
    def vertices(self) -> np.ndarray:
        """Grid vertices, the sample set standing in for the closed domain."""
        axes = np.meshgrid(*[self.axis_nodes(k) for k in range(self.dim)], indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    @cached_property
    def faces(self) -> Faces:
        centers, normals, areas, cells, axis, side = [], [], [], [], [], []
        idx = np.arange(self.size).reshape(self.shape)
        for k in range(self.dim):
            others = [j for j in range(self.dim) if j != k]
            area = float(np.prod([self.h[j] for j in others])) if others else 1.0
            for s, pos in ((0, self.lo[k]), (1, self.hi[k])):
                sl = [slice(None)] * self.dim
                sl[k] = 0 if s == 0 else -1
                adj = idx[tuple(sl)].ravel()
                c = self.cell_centers[adj].copy()
                c[:, k] = pos
                nrm = np.zeros((len(adj), self.dim))
                nrm[:, k] = -1.0 if s == 0 else 1.0
                centers.append(c)
                normals.append(nrm)
                areas.append(np.full(len(adj), area))
                cells.append(adj)
                axis.append(np.full(len(adj), k))
                side.append(np.full(len(adj), s))
        return Faces(
            centers=np.concatenate(centers),
            normals=np.concatenate(normals),
            areas=np.concatenate(areas),
            cells=np.concatenate(cells),
            axis=np.concatenate(axis),
            side=np.concatenate(side),
        )

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        p = np.atleast_2d(points)
        span = np.asarray(self.hi) - np.asarray(self.lo)
        lo = np.asarray(self.lo) - tol * span
        hi = np.asarray(self.hi) + tol * span
        return np.all((p >= lo) & (p <= hi), axis=-1)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.lo, self.hi, tuple(n * factor for n in self.n_cells), self.T, self.n_steps * factor)

    def with_time(self, T: float, n_steps: int) -> "Grid":
        return Grid(self.lo, self.hi, self.n_cells, T, n_steps)

    def describe(self) -> dict:
        return {
            "dim": self.dim,
            "lo": list(self.lo),
            "hi": list(self.hi),
            "n_cells": list(self.n_cells),
            "T": self.T,
            "n_steps": self.n_steps,
            "h": self.h.tolist(),
            "dt": self.dt,
        }


def _as_tuple(v, dim=None, cast=float) -> tuple:
    if np.isscalar(v):
        v = [v] * (dim or 1)
    return tuple(cast(x) for x in v)


def build_grid(
    lo: float | Sequence[float],
    hi: float | Sequence[float],
    n: int | Sequence[int],
    T: float,
    n_steps: int | None = None,
    cfl: float | None = None,
    speed: Sequence[float] | None = None,
) -> Grid:
    """Build a space-time grid.

    Either ``n_steps`` is given directly, or it is derived from a per-axis
    Courant number ``cfl`` and the maximal speed along each axis, so that
    ``dt * speed[k] / h[k] <= cfl`` holds on every axis.
    """
    dims = [len(x) for x in (lo, hi, n) if not np.isscalar(x)]
    dim = max(dims) if dims else 1
    lo_t, hi_t = _as_tuple(lo, dim), _as_tuple(hi, dim)
    n_t = _as_tuple(n, dim, int)
    if any(b - a <= 0 for a, b in zip(lo_t, hi_t)):
        raise GridError(f"non-positive extent: lo={lo_t}, hi={hi_t}")
    if any(k < 2 for k in n_t):
        raise GridError(f"resolution must be >= 2 per axis, got {n_t}")
    if n_steps is None:
        if cfl is None or speed is None:
            raise GridError("give n_steps, or both cfl and speed")
        h = (np.asarray(hi_t) - np.asarray(lo_t)) / np.asarray(n_t)
        rate = float(np.max(np.abs(np.asarray(speed, float)) / h))
        # the small slack keeps an exact ratio such as T*n/h from rounding up
        n_steps = max(2, int(np.ceil(T * rate / cfl - 1e-9)))
    return Grid(lo_t, hi_t, n_t, float(T), int(n_steps))


@dataclass(frozen=True)
class BoundaryPartition:
    plus: np.ndarray
    minus: np.ndarray
    characteristic: np.ndarray
    eps_nu: float
    flux: np.ndarray = field(repr=False)  # H . nu at every face center

    def mask(self, which: str, n_faces: int) -> np.ndarray:
        m = np.zeros(n_faces, bool)
        m[getattr(self, which)] = True
        return m


def classify_boundary(grid: Grid, H, eps_nu: float | None = None) -> BoundaryPartition:
    """Split boundary faces by the sign of ``H . nu`` at their centers.

    Faces with ``|H . nu| <= eps_nu`` are characteristic and belong to neither
    the outflow nor the inflow part. The default band is ``1e-12 * max|H|``.
    """
    faces = grid.faces
    Hf = np.asarray(H.at(faces.centers)).reshape(len(faces), grid.dim)
    flux = np.sum(Hf * faces.normals, axis=1)
    if eps_nu is None:
        Hv = np.asarray(H.at(grid.vertices)).reshape(-1, grid.dim)
        eps_nu = 1e-12 * float(np.max(np.linalg.norm(np.vstack([Hv, Hf]), axis=1)))
    plus = np.flatnonzero(flux > eps_nu)
    minus = np.flatnonzero(flux < -eps_nu)
    char = np.flatnonzero(np.abs(flux) <= eps_nu)
    return BoundaryPartition(plus, minus, char, float(eps_nu), flux)


def integrate(grid: Grid, samples, region: str = "interior", faces=None) -> float:
    """Quadrature of sampled values.

    ``region`` is one of

    - ``"interior"``: samples on cells, shape ``(size,)`` or ``grid.shape``;
    - ``"boundary"``: samples on the faces listed in ``faces`` (all faces when
      None), shape ``(len(faces),)``;
    - ``"spacetime"``: samples ``(n_steps + 1, size)`` on cells at time nodes;
    - ``"boundary-time"``: samples ``(n_steps + 1, len(faces))``.
    """
    v = np.asarray(samples, dtype=float)
    fidx = np.arange(len(grid.faces)) if faces is None else np.asarray(faces, int)
    nt = grid.n_steps + 1
    if region == "interior":
        if v.size != grid.size:
            raise ValueError(f"interior samples need {grid.size} values, got shape {v.shape}")
        return float(np.sum(v) * grid.cell_volume)
    if region == "boundary":
        if v.shape != (len(fidx),):
            raise ValueError(f"boundary samples need shape ({len(fidx)},), got {v.shape}")
        return float(np.sum(v * grid.faces.areas[fidx]))
    if region == "spacetime":
        if v.shape != (nt, grid.size):
            raise ValueError(f"space-time samples need shape {(nt, grid.size)}, got {v.shape}")
        return float(grid.time_weights @ v.sum(axis=1) * grid.cell_volume)
    if region == "boundary-time":
        if v.shape != (nt, len(fidx)):
            raise ValueError(f"boundary-time samples need shape {(nt, len(fidx))}, got {v.shape}")
        return float(grid.time_weights @ (v @ grid.faces.areas[fidx]))
    raise ValueError(f"unknown region {region!r}")
