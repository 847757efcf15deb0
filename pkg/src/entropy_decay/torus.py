"""Grid functions on the unit torus in lattice coordinates.

A torus cell ``k`` has lattice coordinates ``y_k = -1/2 + (k + 1/2)/N`` per
axis and physical centre ``x_k = r * A @ y_k``.  The torus is the half-open
cell ``P_r`` of the lattice ``rL``; every physical point is looked up by
reducing it into ``P_r`` first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Lattice, Parallelepiped
from .norms import GridFunction, window_sums
from .shapes import Ball, Shape


@dataclass(frozen=True, eq=False)
class PeriodicGridFunction:
    lattice: Lattice
    r: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != self.lattice.dim:
            raise ValueError("torus grid and lattice dimensions differ")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def cell(self) -> Parallelepiped:
        return Parallelepiped(self.lattice, self.r)

    @property
    def period_volume(self) -> float:
        return self.cell.volume

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def with_values(self, values) -> PeriodicGridFunction:
        return PeriodicGridFunction(self.lattice, self.r, values)

    def torus_coordinates(self) -> np.ndarray:
        axes = [-0.5 + (np.arange(n) + 0.5) / n for n in self.shape]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def physical_centers(self) -> np.ndarray:
        return self.r * self.lattice.points(self.torus_coordinates())

    def index_of(self, x) -> np.ndarray:
        """Torus cell holding physical point ``x`` (nearest-cell, wrapped)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        y = self.lattice.coordinates(x) / self.r
        y = y - np.floor(y + 0.5)
        n = np.asarray(self.shape)
        idx = np.floor((y + 0.5) * n + 1e-9).astype(np.int64)
        return np.mod(idx, n)

    def sample(self, x) -> np.ndarray:
        idx = self.index_of(x)
        return self.values[tuple(idx.T)]

    def deviation_l1(self, level: float) -> float:
        """``(1/|P|) * int_P |u - level|``."""
        return float(np.mean(np.abs(self.values - level)))

    def cell_edges(self) -> np.ndarray:
        """Physical edge vectors of one torus cell, one per row."""
        return (self.r * self.lattice.basis / np.asarray(self.shape)[None, :]).T

    def to_grid(self, h: float | None = None, pad: float = 0.0) -> GridFunction:
        """Cartesian resampling covering the bounding box of ``P_r`` plus ``pad``.

        In 1D the default pitch is the torus cell width and the grid origin
        sits on a torus cell edge, so the resampling is exact.
        """
        if h is None:
            h = float(np.min(np.linalg.norm(self.cell_edges(), axis=1)))
        corners = np.array(list(np.ndindex(*([2] * self.dim)))) - 0.5
        phys = self.r * self.lattice.points(corners)
        lo = phys.min(axis=0) - pad
        hi = phys.max(axis=0) + pad
        if self.dim == 1:
            base = phys.min(axis=0)
            lo = base - np.ceil(pad / h) * h
        n = np.ceil((hi - lo) / h).astype(int)
        g = GridFunction(lo, h, np.zeros(tuple(n)))
        vals = self.sample(g.centers().reshape(-1, self.dim)).reshape(g.shape)
        return g.with_values(vals)


def periodic_v_norm(u: PeriodicGridFunction, V: Shape | None = None, h: float | None = None) -> float:
    """``sup_y int_{y+V} |u|`` for an ``rL``-periodic function.

    By periodicity the scan over centres is restricted to one period; the
    resampled grid carries enough neighbouring copies to fill every window.
    """
    V = V or Ball(1.0, u.dim)
    if h is None:
        h = float(np.min(np.linalg.norm(u.cell_edges(), axis=1)))
    g = u.to_grid(h, pad=V.circumradius + 2 * h)
    sums, pad = window_sums(g.values, g.h, V)
    centers = (
        np.stack(
            np.meshgrid(*[g.origin[k] + (np.arange(-pad, n + pad) + 0.5) * g.h for k, n in enumerate(g.shape)], indexing="ij"),
            axis=-1,
        )
        .reshape(-1, u.dim)
    )
    inside = u.cell.contains(centers)
    # windows centred near the resampled-grid rim see zero padding: keep only
    # centres whose window lies inside the resampled box
    lo = g.origin + V.circumradius
    hi = g.origin + np.asarray(g.shape) * g.h - V.circumradius
    inside &= np.all((centers >= lo - 1e-12) & (centers <= hi + 1e-12), axis=1)
    vals = sums.reshape(-1)[inside]
    return float(vals.max()) if vals.size else 0.0


def periodic_x_norm(u: PeriodicGridFunction) -> float:
    return periodic_v_norm(u, Ball(1.0, u.dim))


def torus_resolution(lattice: Lattice, r: float, h: float) -> tuple[int, ...]:
    """Cells per lattice axis so each torus cell edge is at most ``h`` long."""
    edges = r * np.linalg.norm(lattice.basis, axis=0)
    return tuple(int(np.ceil(e / h - 1e-9)) for e in edges)
