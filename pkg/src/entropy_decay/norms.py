"""Grid functions and the sliding-window norms ``sup_y int_{y+V} |u|``.

Window membership is decided by cell centres, so every window integral is a
finite sum ``h**n * sum |u_i|`` over the cells whose centre lies in the open
window.  The scan over centres uses prefix sums along the last axis, one per
row of the window footprint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .shapes import Ball, Box, Shape, contains


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Cell-centred samples on a uniform Cartesian grid.

    Cell ``i`` has centre ``origin + (i + 1/2) * h``.
    """

    origin: np.ndarray
    h: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        if values.ndim != origin.size or values.ndim not in (1, 2):
            raise ValueError(f"values of shape {values.shape} do not match origin {origin}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", origin)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def axes(self) -> list[np.ndarray]:
        return [self.origin[k] + (np.arange(n) + 0.5) * self.h for k, n in enumerate(self.shape)]

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @property
    def mass(self) -> float:
        return float(np.sum(self.values)) * self.h**self.dim

    @property
    def l1(self) -> float:
        return float(np.sum(np.abs(self.values))) * self.h**self.dim

    def support_box(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Smallest cell-aligned box outside which the values vanish."""
        nz = np.argwhere(self.values != 0)
        if nz.size == 0:
            return None
        lo = self.origin + nz.min(axis=0) * self.h
        hi = self.origin + (nz.max(axis=0) + 1) * self.h
        return lo, hi

    def index_of(self, x) -> np.ndarray:
        """Nearest-cell index (may fall outside the grid)."""
        x = np.asarray(x, dtype=float)
        return np.floor((x - self.origin) / self.h + 1e-9).astype(np.int64)

    def sample(self, x) -> np.ndarray:
        """Nearest-cell values at physical points; zero off the grid."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        idx = self.index_of(x)
        ok = np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1)
        out = np.zeros(len(x))
        out[ok] = self.values[tuple(idx[ok].T)]
        return out

    def shifted(self, offset) -> GridFunction:
        return GridFunction(self.origin + np.asarray(offset, dtype=float), self.h, self.values)

    def with_values(self, values) -> GridFunction:
        return GridFunction(self.origin, self.h, values)

    def padded(self, cells: int | tuple[int, ...]) -> GridFunction:
        cells = np.broadcast_to(np.asarray(cells, dtype=np.int64), (self.dim,))
        values = np.pad(self.values, [(int(c), int(c)) for c in cells])
        return GridFunction(self.origin - cells * self.h, self.h, values)

    @classmethod
    def from_function(cls, f: Callable, lo, hi, h: float) -> GridFunction:
        """Sample ``f`` at cell centres of a grid covering ``[lo, hi]``."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        n = np.maximum(np.round((hi - lo) / h).astype(int), 1)
        g = cls(lo, h, np.zeros(tuple(n)))
        if g.dim == 1:
            return g.with_values(f(g.axes()[0]))
        X = np.meshgrid(*g.axes(), indexing="ij")
        return g.with_values(f(*X))


# {{{ window scans


def l1_over(u: GridFunction, region: Shape, center) -> float:
    """``h**n * sum |u_i|`` over cells whose centre lies in ``center + region``."""
    pts = u.centers().reshape(-1, u.dim)
    mask = contains(region, pts, center)
    return float(np.sum(np.abs(u.values).ravel()[mask])) * u.h**u.dim


def _offset_segments(V: Shape, h: float, frac) -> tuple[int, list[tuple[int, int, int]]]:
    """Cell offsets of ``frac*h + V`` as ``(row, k_lo, k_hi)`` runs along the last axis.

    ``frac`` is the sub-cell position of the window centre.  In 1D the single
    run has ``row = 0``.
    """
    fuzz = 1 - 1e-12
    if V.dim == 1:
        kmin = int(np.floor((V.lo[0] + frac[0] * h) / h)) - 1
        kmax = int(np.ceil((V.hi[0] + frac[0] * h) / h)) + 1
        ks = np.arange(kmin, kmax + 1)
        rel = ks * h - frac[0] * h
        inside = V.margin(rel[:, None] / fuzz) > 0
        sel = ks[inside]
        return 0, [(0, int(sel.min()), int(sel.max()))] if sel.size else []
    kr = [
        np.arange(int(np.floor((V.lo[a] + frac[a] * h) / h)) - 1, int(np.ceil((V.hi[a] + frac[a] * h) / h)) + 2)
        for a in range(2)
    ]
    segs = []
    for j in kr[0]:
        rel = np.stack([np.full(kr[1].size, j * h), kr[1] * h], axis=1) - np.asarray(frac) * h
        inside = V.margin(rel / fuzz) > 0
        sel = kr[1][inside]
        if sel.size:
            # balls and boxes are convex, so each row is one contiguous run
            segs.append((int(j), int(sel.min()), int(sel.max())))
    return 0, segs


def window_sums(values: np.ndarray, h: float, V: Shape, frac=None) -> tuple[np.ndarray, int]:
    """Window integral at every cell centre (shifted by ``frac*h``) of a zero-padded grid.

    Returns ``(sums, pad)``: ``sums`` lives on the input grid padded by
    ``pad`` cells on every side.
    """
    a = np.abs(np.asarray(values, dtype=float))
    dim = a.ndim
    frac = np.zeros(dim) if frac is None else np.asarray(frac, dtype=float)
    _, segs = _offset_segments(V, h, frac)
    if not segs:
        return np.zeros_like(a), 0
    pad = max(max(abs(j), abs(lo), abs(hi)) for j, lo, hi in segs) + 1
    ap = np.pad(a, pad)
    n_last = ap.shape[-1]
    cs = np.concatenate([np.zeros(ap.shape[:-1] + (1,)), np.cumsum(ap, axis=-1)], axis=-1)
    out = np.zeros_like(ap)
    centers = np.arange(n_last)
    for j, lo, hi in segs:
        lo_idx = np.clip(centers + lo, 0, n_last)
        hi_idx = np.clip(centers + hi + 1, 0, n_last)
        run = cs[..., hi_idx] - cs[..., lo_idx]
        if dim == 1:
            out += run
        else:
            # row offset j: centre row i reads data row i + j
            shifted = np.zeros_like(run)
            if j >= 0:
                shifted[: run.shape[0] - j] = run[j:]
            else:
                shifted[-j:] = run[: run.shape[0] + j]
            out += shifted
    return out * h**dim, pad


def v_norm(u: GridFunction, V: Shape | None = None, stride: float | None = None) -> float:
    """``max_y`` of the window integral over centres on a grid of pitch ``stride``.

    Centres run over the cell centres (refined by ``h/stride`` sub-positions
    when ``stride < h``) of the grid padded by the window extent, which
    contains every centre whose window meets the support.
    """
    V = V or Ball(1.0, u.dim)
    if V.dim != u.dim:
        raise ValueError("window and grid dimensions differ")
    stride = u.h if stride is None else stride
    sub = max(1, int(round(u.h / stride)))
    best = 0.0
    for frac in np.ndindex(*([sub] * u.dim)):
        sums, _ = window_sums(u.values, u.h, V, np.asarray(frac, dtype=float) / sub)
        if sums.size:
            best = max(best, float(np.max(sums)))
    return best


def x_norm(u: GridFunction) -> float:
    return v_norm(u, Ball(1.0, u.dim))


def v_norm_brute(u: GridFunction, V: Shape, centers) -> float:
    """Reference scan: ``l1_over`` at each listed centre."""
    return max((l1_over(u, V, c) for c in np.asarray(centers, dtype=float).reshape(-1, u.dim)), default=0.0)


def unit_ball_volume(dim: int) -> float:
    return Ball(1.0, dim).volume


# }}}


def compact_support_random(rng: np.random.Generator, dim: int, h: float, extent: float = 3.0) -> GridFunction:
    """Random bounded function with support inside a random sub-box."""
    n = int(round(extent / h))
    shape = (n,) * dim
    vals = np.zeros(shape)
    lo = rng.integers(0, n // 2, size=dim)
    hi = lo + rng.integers(1, n // 2, size=dim)
    sl = tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))
    vals[sl] = rng.uniform(-1.0, 1.0, size=tuple(int(b - a) for a, b in zip(lo, hi)))
    return GridFunction(np.zeros(dim), h, vals)
