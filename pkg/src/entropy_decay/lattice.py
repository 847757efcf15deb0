"""Lattices, fundamental cells, covering multiplicities and avoiding lattices."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .flux import NonlinearitySubspace
from .shapes import Shape


class LatticeError(ValueError):
    pass


class CertificateError(LatticeError):
    """Retry cap exceeded while drawing an avoiding lattice."""

    def __init__(self, msg, xi=None, alpha=None):
        super().__init__(msg)
        self.xi = xi
        self.alpha = alpha


@dataclass(frozen=True, eq=False)
class Lattice:
    """``A(Z^n)`` for a nonsingular basis ``A`` (columns are the generators)."""

    basis: np.ndarray

    def __post_init__(self):
        basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if basis.shape[0] != basis.shape[1]:
            raise LatticeError(f"basis must be square, got shape {basis.shape}")
        det = float(np.linalg.det(basis))
        if abs(det) <= 1e-9 * float(np.prod(np.linalg.norm(basis, axis=0))):
            raise LatticeError("basis is singular")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "det", det)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def dual(self) -> Lattice:
        return Lattice(np.linalg.inv(self.basis).T)

    def scaled(self, r: float) -> Lattice:
        return Lattice(r * self.basis)

    def coordinates(self, x) -> np.ndarray:
        """Lattice coordinates of physical points (trailing axis is space)."""
        x = np.asarray(x, dtype=float)
        return np.linalg.solve(self.basis, x.reshape(-1, self.dim).T).T.reshape(x.shape)

    def points(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        return coords @ self.basis.T

    def __repr__(self):
        return f"Lattice({self.basis.tolist()})"


def dual(L: Lattice) -> Lattice:
    return L.dual()


@dataclass(frozen=True, eq=False)
class Parallelepiped:
    """Half-open cell ``{sum x_k e_k : -r/2 <= x_k < r/2}`` of the lattice ``rL``."""

    lattice: Lattice
    r: float = 1.0

    def __post_init__(self):
        if not self.r > 0:
            raise LatticeError(f"scale must be positive, got {self.r}")

    @property
    def volume(self) -> float:
        return self.r**self.lattice.dim * abs(self.lattice.det)

    def coordinates(self, x) -> np.ndarray:
        return self.lattice.coordinates(x) / self.r

    def contains(self, x) -> np.ndarray:
        y = self.coordinates(x)
        return np.all((y >= -0.5) & (y < 0.5), axis=-1)

    def reduce(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Split ``x = point + r*A@m`` with ``point`` in the cell and integer ``m``."""
        x = np.asarray(x, dtype=float)
        y = self.coordinates(x)
        m = np.floor(y + 0.5)
        point = x - self.r * self.lattice.points(m)
        # roundoff can push a coordinate onto the excluded face
        y2 = self.coordinates(point)
        fix = np.where(y2 >= 0.5, 1.0, 0.0) - np.where(y2 < -0.5, 1.0, 0.0)
        if np.any(fix):
            m = m + fix
            point = x - self.r * self.lattice.points(m)
        return point, m.astype(np.int64)


def reduce(x, P: Parallelepiped) -> tuple[np.ndarray, np.ndarray]:
    return P.reduce(x)


# {{{ covering


@dataclass(frozen=True)
class Covering:
    m: int
    translates: np.ndarray  # shape (m, n)
    sample_spacing: float
    margin: float

    def covers(self, V2: Shape, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, V2.dim)
        hit = np.zeros(len(points), dtype=bool)
        for y in self.translates:
            hit |= V2.margin(points - y) > 0
        return hit


def _grid_points(lo, hi, spacing):
    axes = [np.linspace(a, b, int(np.ceil((b - a) / spacing)) + 1) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1), max(ax[1] - ax[0] for ax in axes)


def covering_multiplicity(V1: Shape, V2: Shape, resolution: int | None = None) -> Covering:
    """Translates ``y_i`` on a shift grid with ``Cl(V1)`` inside ``union(y_i + V2)``.

    Greedy: take the first uncovered sample point (lexicographic order), and
    among shift-grid candidates whose translate contains it pick the one that
    covers the most uncovered samples, ties toward the smallest ``|y|``.
    Samples are covered with a margin of half a sample diagonal, which makes
    the finite check a proof of the continuous cover.
    """
    if V1.dim != V2.dim:
        raise LatticeError("shapes must live in the same dimension")
    n = V1.dim
    resolution = resolution or (40 if n == 1 else 20)
    spacing = V2.inradius / resolution
    pts, actual = _grid_points(V1.lo, V1.hi, spacing)
    margin = 0.5 * actual * np.sqrt(n) * (1 + 1e-9)
    pts = pts[V1.margin(pts) >= -margin]

    pitch = V2.inradius / 2
    lo = np.floor((V1.lo - V2.hi) / pitch) * pitch
    hi = np.ceil((V1.hi - V2.lo) / pitch) * pitch
    axes = [np.arange(round((b - a) / pitch) + 1) * pitch + a for a, b in zip(lo, hi)]
    cands = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, n)
    norms = np.round(np.linalg.norm(cands, axis=1), 12)
    cands = cands[np.lexsort(np.column_stack([cands[:, ::-1], norms]).T)]

    covered = np.stack([V2.margin(pts - y) > margin for y in cands])
    uncovered = np.ones(len(pts), dtype=bool)
    chosen = []
    while uncovered.any():
        first = int(np.argmax(uncovered))
        options = np.flatnonzero(covered[:, first])
        if options.size == 0:
            raise LatticeError("shift grid too coarse to cover the window")
        gain = covered[options][:, uncovered].sum(axis=1)
        best = options[int(np.argmax(gain))]  # candidates pre-sorted by |y|
        chosen.append(cands[best])
        uncovered &= ~covered[best]
    return Covering(len(chosen), np.array(chosen), float(actual), float(margin))


# }}}


# {{{ avoiding lattices


@dataclass(frozen=True)
class AvoidanceCertificate:
    basis: np.ndarray
    seed: int | None
    R: int
    delta: float
    min_ratio: float
    worst_xi: tuple[int, ...] | None
    worst_alpha: int | None
    attempts: int

    @property
    def passed(self) -> bool:
        return self.min_ratio >= self.delta

    def to_json(self):
        return {
            "basis": self.basis.tolist(),
            "seed": self.seed,
            "R": self.R,
            "delta": self.delta,
            "min_ratio": self.min_ratio,
            "max_violation": max(0.0, self.delta - self.min_ratio),
            "worst_xi": list(self.worst_xi) if self.worst_xi is not None else None,
            "worst_alpha": self.worst_alpha,
            "attempts": self.attempts,
            "passed": self.passed,
        }


def integer_vectors(n: int, R: int) -> np.ndarray:
    """All nonzero integer vectors with sup-norm at most ``R``."""
    rng = np.arange(-R, R + 1)
    grid = np.stack(np.meshgrid(*([rng] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return grid[np.any(grid != 0, axis=1)]


def _subspace_bases(subspaces) -> list[np.ndarray]:
    out = []
    for s in subspaces:
        b = s.basis if isinstance(s, NonlinearitySubspace) else np.atleast_2d(np.asarray(s, dtype=float))
        if b.size:
            q, _ = np.linalg.qr(b.T)
            b = q.T
        out.append(b)
    return out


def verify_avoidance(A, subspaces, R: int, delta: float = 0.0):
    """Smallest ``dist(A xi, X) / |A xi|`` over ``0 < |xi|_inf <= R`` and all subspaces.

    Returns ``(min_ratio, worst_xi, worst_alpha)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    xi = integer_vectors(A.shape[0], R)
    w = xi @ A.T
    wn = np.linalg.norm(w, axis=1)
    best = (np.inf, None, None)
    for alpha, b in enumerate(_subspace_bases(subspaces)):
        if b.shape[0] >= A.shape[0]:
            raise LatticeError(f"subspace {alpha} is not proper")
        resid = w - (w @ b.T) @ b if b.size else w
        ratio = np.linalg.norm(resid, axis=1) / wn
        i = int(np.argmin(ratio))
        if ratio[i] < best[0]:
            best = (float(ratio[i]), tuple(int(v) for v in xi[i]), alpha)
    return best


def random_avoiding_lattice(
    subspaces: Sequence,
    R: int = 50,
    delta: float = 1e-6,
    seed: int | None = 0,
    dim: int | None = None,
    max_retries: int = 100,
    unit_det: bool = True,
) -> tuple[Lattice, AvoidanceCertificate]:
    """Draw ``A = I + U[-1,1]`` until ``A(Z^n)`` keeps a margin from every subspace.

    With ``unit_det`` the draw is rescaled to determinant one (sign fixed by
    flipping the first column); rescaling does not move ``A xi`` off or onto
    a linear subspace.
    """
    bases = _subspace_bases(subspaces)
    if dim is None:
        if not bases:
            raise LatticeError("dim is required when no subspaces are given")
        first = subspaces[0]
        dim = first.ambient_dim if isinstance(first, NonlinearitySubspace) else bases[0].shape[1]
    if not bases:
        eye = np.eye(dim)
        return Lattice(eye), AvoidanceCertificate(eye, seed, R, delta, 1.0, None, None, 0)

    rng = np.random.default_rng(seed)
    last = None
    for attempt in range(1, max_retries + 1):
        A = np.eye(dim) + rng.uniform(-1.0, 1.0, size=(dim, dim))
        det = np.linalg.det(A)
        if abs(det) <= 1e-9 * np.prod(np.linalg.norm(A, axis=0)):
            continue
        if unit_det:
            A = A / abs(det) ** (1.0 / dim)
            if det < 0:
                A[:, 0] = -A[:, 0]
        ratio, xi, alpha = verify_avoidance(A, bases, R)
        last = (xi, alpha, ratio)
        if ratio >= delta:
            return Lattice(A), AvoidanceCertificate(A, seed, R, delta, ratio, xi, alpha, attempt)
    xi, alpha, ratio = last if last else (None, None, 0.0)
    raise CertificateError(
        f"no avoiding lattice after {max_retries} draws (last ratio {ratio:.3e} at xi={xi}, subspace {alpha})",
        xi,
        alpha,
    )


# }}}
