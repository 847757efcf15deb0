"""Flux vectors in a small closed grammar.

A flux is an n-vector of scalar expressions built from affine maps, signed or
absolute powers, sums, piecewise combinations over breakpoints, and the
dyadic piecewise-linear family.  Because the grammar is closed, local
affinity can be decided symbolically region by region, which makes the
nonlinearity set ``F`` a finite union of closed intervals and points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

TOL_AFFINE = 1e-10
TOL_CONT = 1e-12
EPS_FLOOR = 1e-6
DEFAULT_EPS_LADDER = tuple(2.0 ** (-k) for k in range(1, 21))


class FluxError(ValueError):
    """Invalid flux specification."""


class FluxDomainError(ValueError):
    """Flux evaluated outside its range of validity."""


class NoAdmissibleValue(ValueError):
    """No element of the nonlinearity set satisfies the selection rule."""


# {{{ local forms


@dataclass
class LocalForm:
    """Expression restricted to a breakpoint-free region of fixed sign.

    ``slope * u + offset + sum(coef * |u|**p for p, coef in powers)``.
    """

    slope: float = 0.0
    offset: float = 0.0
    powers: dict[float, float] = field(default_factory=dict)

    def __add__(self, other: LocalForm) -> LocalForm:
        powers = dict(self.powers)
        for p, c in other.powers.items():
            powers[p] = powers.get(p, 0.0) + c
        return LocalForm(self.slope + other.slope, self.offset + other.offset, powers)

    def is_affine(self, rtol: float = 1e-12) -> bool:
        scale = max([1.0] + [abs(c) for c in self.powers.values()])
        return all(abs(c) <= rtol * scale for c in self.powers.values())


# }}}


# {{{ expressions


class Expr:
    """Scalar expression node."""

    def __call__(self, u):
        raise NotImplementedError

    def breakpoints(self) -> list[float]:
        return []

    def local_form(self, lo: float, hi: float) -> LocalForm:
        raise NotImplementedError

    def scaled(self, s: float) -> Expr:
        raise NotImplementedError

    def check_continuity(self, tol: float) -> None:
        pass

    def to_json(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Affine(Expr):
    c: float
    d: float = 0.0

    def __call__(self, u):
        return self.c * np.asarray(u, dtype=float) + self.d

    def local_form(self, lo, hi):
        return LocalForm(self.c, self.d)

    def scaled(self, s):
        return Affine(s * self.c, s * self.d)

    def to_json(self):
        return {"type": "affine", "c": self.c, "d": self.d}


@dataclass(frozen=True)
class Power(Expr):
    """``c*|u|**p*sign(u)`` when ``signed``, else ``c*|u|**p``."""

    c: float
    p: float
    signed: bool = True

    def __post_init__(self):
        if not self.p > 0:
            raise FluxError(f"power exponent must be positive, got {self.p}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        v = self.c * np.abs(u) ** self.p
        return v * np.sign(u) if self.signed else v

    def breakpoints(self):
        # sign change of |u| matters unless the term is the plain identity
        return [] if (self.p == 1.0 and self.signed) else [0.0]

    def local_form(self, lo, hi):
        s = 1.0 if 0.5 * (lo + hi) >= 0 else -1.0
        coef = self.c * s if self.signed else self.c
        if self.p == 1.0:
            # coef*|u| = coef*s*u on a fixed-sign region
            return LocalForm(slope=coef * s)
        return LocalForm(powers={self.p: coef})

    def scaled(self, s):
        return Power(s * self.c, self.p, self.signed)

    def to_json(self):
        return {"type": "power", "c": self.c, "p": self.p, "signed": self.signed}


@dataclass(frozen=True)
class Sum(Expr):
    terms: tuple[Expr, ...]

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for t in self.terms:
            out = out + t(u)
        return out

    def breakpoints(self):
        return sorted({b for t in self.terms for b in t.breakpoints()})

    def local_form(self, lo, hi):
        form = LocalForm()
        for t in self.terms:
            form = form + t.local_form(lo, hi)
        return form

    def scaled(self, s):
        return Sum(tuple(t.scaled(s) for t in self.terms))

    def check_continuity(self, tol):
        for t in self.terms:
            t.check_continuity(tol)

    def to_json(self):
        return {"type": "sum", "terms": [t.to_json() for t in self.terms]}


@dataclass(frozen=True)
class Piecewise(Expr):
    """``pieces[i]`` is active on ``[breakpoints[i-1], breakpoints[i])``."""

    breaks: tuple[float, ...]
    pieces: tuple[Expr, ...]

    def __post_init__(self):
        if len(self.pieces) != len(self.breaks) + 1:
            raise FluxError("piecewise needs len(pieces) == len(breakpoints) + 1")
        if any(b <= a for a, b in zip(self.breaks, self.breaks[1:])):
            raise FluxError("breakpoints must be strictly increasing")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        idx = np.searchsorted(np.asarray(self.breaks), u, side="right")
        out = np.zeros_like(u)
        for i, piece in enumerate(self.pieces):
            mask = idx == i
            if np.any(mask):
                out[mask] = piece(u[mask])
        return out

    def breakpoints(self):
        pts = set(self.breaks)
        for piece in self.pieces:
            pts.update(piece.breakpoints())
        return sorted(pts)

    def local_form(self, lo, hi):
        mid = 0.5 * (lo + hi)
        i = int(np.searchsorted(np.asarray(self.breaks), mid, side="right"))
        return self.pieces[i].local_form(lo, hi)

    def scaled(self, s):
        return Piecewise(self.breaks, tuple(p.scaled(s) for p in self.pieces))

    def check_continuity(self, tol):
        for i, b in enumerate(self.breaks):
            left = float(self.pieces[i](b))
            right = float(self.pieces[i + 1](b))
            if abs(left - right) >= tol * max(1.0, abs(left), abs(right)):
                raise FluxError(f"discontinuity {left} vs {right} at breakpoint {b}")
        for piece in self.pieces:
            piece.check_continuity(tol)

    def to_json(self):
        return {
            "type": "piecewise",
            "breakpoints": list(self.breaks),
            "pieces": [p.to_json() for p in self.pieces],
        }


@dataclass(frozen=True)
class Dyadic(Expr):
    """Piecewise-linear interpolant of ``scale*u**2/2`` at nodes ``±2**-k``, ``k=0..K``.

    Linear continuation beyond ``±1``; constant on ``[-2**-K, 2**-K]``.
    """

    K: int
    scale: float = 1.0

    def __post_init__(self):
        if self.K < 0:
            raise FluxError("dyadic family needs K >= 0")

    @property
    def nodes(self) -> np.ndarray:
        pos = 2.0 ** -np.arange(self.K, -1, -1, dtype=float)
        return np.concatenate([-pos[::-1], pos])

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        x = self.nodes
        y = self.scale * 0.5 * x**2
        out = np.interp(u, x, y)
        right_slope = (y[-1] - y[-2]) / (x[-1] - x[-2])
        left_slope = (y[1] - y[0]) / (x[1] - x[0])
        out = np.where(u > x[-1], y[-1] + right_slope * (u - x[-1]), out)
        out = np.where(u < x[0], y[0] + left_slope * (u - x[0]), out)
        return out

    def breakpoints(self):
        return [float(b) for b in self.nodes]

    def local_form(self, lo, hi):
        # lo, hi never straddle a node, so the chord is exact
        a, b = float(self(lo)), float(self(hi))
        slope = (b - a) / (hi - lo)
        return LocalForm(slope, a - slope * lo)

    def scaled(self, s):
        return Dyadic(self.K, s * self.scale)

    def to_json(self):
        return {"type": "dyadic", "K": self.K, "scale": self.scale}


def parse_expr(obj: dict[str, Any]) -> Expr:
    """Build an expression from its JSON tree."""
    try:
        kind = obj["type"]
        if kind == "affine":
            return Affine(float(obj.get("c", 0.0)), float(obj.get("d", 0.0)))
        if kind == "power":
            return Power(float(obj.get("c", 1.0)), float(obj["p"]), bool(obj.get("signed", True)))
        if kind == "sum":
            return Sum(tuple(parse_expr(t) for t in obj["terms"]))
        if kind == "piecewise":
            return Piecewise(
                tuple(float(b) for b in obj["breakpoints"]),
                tuple(parse_expr(p) for p in obj["pieces"]),
            )
        if kind == "dyadic":
            return Dyadic(int(obj["K"]), float(obj.get("scale", 1.0)))
    except (KeyError, TypeError) as exc:
        raise FluxError(f"malformed flux expression {obj!r}: {exc}") from exc
    raise FluxError(f"unknown flux expression type {obj.get('type')!r}")


# }}}


# {{{ flux vector


@dataclass(frozen=True)
class FluxSpec:
    components: tuple[Expr, ...]
    u_range: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        lo, hi = self.u_range
        if not lo < hi:
            raise FluxError(f"empty u_range {self.u_range}")
        if len(self.components) not in (1, 2):
            raise FluxError("flux dimension must be 1 or 2")
        for comp in self.components:
            comp.check_continuity(TOL_CONT)

    @property
    def dim(self) -> int:
        return len(self.components)

    def __call__(self, u) -> np.ndarray:
        """Evaluate without range checks; trailing axis is the component."""
        u = np.asarray(u, dtype=float)
        return np.stack([c(u) for c in self.components], axis=-1)

    def breakpoints(self) -> list[float]:
        lo, hi = self.u_range
        pts = {b for c in self.components for b in c.breakpoints()}
        return sorted(b for b in pts if lo < b < hi)

    def transform(self, matrix) -> FluxSpec:
        """Flux ``u -> matrix @ phi(u)`` in the same grammar."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        comps = []
        for row in matrix:
            terms = tuple(c.scaled(float(m)) for m, c in zip(row, self.components) if m != 0.0)
            comps.append(Sum(terms) if terms else Affine(0.0, 0.0))
        return FluxSpec(tuple(comps), self.u_range)

    def with_affine(self, slope, offset) -> FluxSpec:
        """Add the global affine map ``u -> slope*u + offset``."""
        comps = tuple(
            Sum((c, Affine(float(s), float(o))))
            for c, s, o in zip(self.components, np.atleast_1d(slope), np.atleast_1d(offset))
        )
        return FluxSpec(comps, self.u_range)

    def to_json(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "components": [c.to_json() for c in self.components],
            "u_range": list(self.u_range),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> FluxSpec:
        try:
            comps = tuple(parse_expr(c) for c in obj["components"])
            u_range = tuple(float(v) for v in obj.get("u_range", (-2.0, 2.0)))
        except (KeyError, TypeError) as exc:
            raise FluxError(f"malformed flux spec: {exc}") from exc
        if "dim" in obj and int(obj["dim"]) != len(comps):
            raise FluxError(f"dim={obj['dim']} but {len(comps)} components given")
        return cls(comps, u_range)


def eval_flux(phi: FluxSpec, u: float) -> np.ndarray:
    lo, hi = phi.u_range
    if not lo <= u <= hi:
        raise FluxDomainError(f"u={u} outside u_range [{lo}, {hi}]")
    return phi(np.asarray(float(u)))


def burgers(dim: int = 1, u_range=(-2.0, 2.0)) -> FluxSpec:
    """``u**2/2`` in 1D, ``(u**2/2, u**3/3)`` in 2D."""
    comps: list[Expr] = [Power(0.5, 2.0, signed=False)]
    if dim == 2:
        comps.append(Power(1.0 / 3.0, 3.0))
    return FluxSpec(tuple(comps), tuple(u_range))


# }}}


# {{{ nonlinearity set


@dataclass(frozen=True)
class NonlinearitySet:
    """Finite union of closed intervals; a point is ``(a, a)``."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for (a, b), (c, _) in zip(self.intervals[:-1], self.intervals[1:]):
            if not b < c:
                raise ValueError("intervals must be sorted and disjoint")

    @classmethod
    def from_points(cls, points: Iterable[float]) -> NonlinearitySet:
        return cls(tuple((float(p), float(p)) for p in sorted(set(points))))

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, u: float, tol: float = 0.0) -> bool:
        return any(a - tol <= u <= b + tol for a, b in self.intervals)

    def contains_array(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        mask = np.zeros(u.shape, dtype=bool)
        for a, b in self.intervals:
            mask |= (u >= a) & (u <= b)
        return mask

    def inf_positive(self) -> float:
        """``inf F_+``; ``inf`` when ``F_+`` is empty."""
        for a, b in self.intervals:
            if b > 0:
                return max(a, 0.0)
        return float("inf")

    def sup_negative(self) -> float:
        for a, b in reversed(self.intervals):
            if a < 0:
                return min(b, 0.0)
        return float("-inf")

    def smallest_at_least(self, x: float) -> float | None:
        for a, b in self.intervals:
            if b >= x:
                return max(a, x)
        return None

    def largest_at_most(self, x: float) -> float | None:
        for a, b in reversed(self.intervals):
            if a <= x:
                return min(b, x)
        return None

    def to_json(self):
        return [list(iv) for iv in self.intervals]


def _merge_closed(pieces: list[tuple[float, float]]) -> list[tuple[float, float]]:
    pieces = sorted(pieces)
    out: list[tuple[float, float]] = []
    for a, b in pieces:
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


# }}}


# {{{ affine structure


@dataclass(frozen=True)
class AffineInterval:
    lo: float
    hi: float
    slope: np.ndarray
    offset: np.ndarray

    def contains(self, u: float) -> bool:
        return self.lo < u < self.hi


@dataclass(frozen=True)
class AffineStructure:
    u_range: tuple[float, float]
    intervals: tuple[AffineInterval, ...]
    F: NonlinearitySet
    regions: tuple[tuple[float, float], ...] = ()

    def affine_at(self, u: float) -> AffineInterval | None:
        for iv in self.intervals:
            if iv.contains(u):
                return iv
        return None


def elementary_regions(phi: FluxSpec) -> list[tuple[float, float]]:
    lo, hi = phi.u_range
    pts = [lo] + phi.breakpoints() + [hi]
    if lo < 0.0 < hi and 0.0 not in pts:
        pts = sorted(pts + [0.0])
    return list(zip(pts[:-1], pts[1:]))


def _same_map(s1, o1, s2, o2, scale: float) -> bool:
    return np.allclose(s1, s2, rtol=1e-10, atol=1e-10 * scale) and np.allclose(
        o1, o2, rtol=1e-10, atol=1e-10 * scale
    )


def affine_structure(phi: FluxSpec) -> AffineStructure:
    """Maximal affine intervals of ``phi`` and the nonlinearity set ``F``."""
    lo, hi = phi.u_range
    regions = elementary_regions(phi)
    scale = max(1.0, float(np.max(np.abs(phi(np.linspace(lo, hi, 257))))))

    # (lo, hi, slope, offset) with slope None on non-affine regions
    local = []
    for a, b in regions:
        forms = [c.local_form(a, b) for c in phi.components]
        if all(f.is_affine() for f in forms):
            local.append((a, b, np.array([f.slope for f in forms]), np.array([f.offset for f in forms])))
        else:
            local.append((a, b, None, None))

    groups: list[list] = []
    for a, b, s, o in local:
        if s is None:
            groups.append([a, b, None, None])
        elif groups and groups[-1][2] is not None and _same_map(groups[-1][2], groups[-1][3], s, o, scale):
            groups[-1][1] = b
        else:
            groups.append([a, b, s, o])

    intervals = tuple(AffineInterval(a, b, s, o) for a, b, s, o in groups if s is not None)

    f_pieces: list[tuple[float, float]] = []
    for i, (a, b, s, _) in enumerate(groups):
        if s is None:
            f_pieces.append((a, b))
        elif i + 1 < len(groups) and groups[i + 1][2] is not None:
            f_pieces.append((b, b))
    return AffineStructure(
        (lo, hi), intervals, NonlinearitySet(tuple(_merge_closed(f_pieces))), tuple(regions)
    )


def scan_affine_numeric(phi: FluxSpec, resolution: float = 1e-3, tol: float = 1e-9) -> np.ndarray:
    """Brute-force locally-affine mask on a uniform grid of ``u`` values.

    Grid point ``u_i`` is flagged affine when the centered second difference
    vanishes at ``u_i`` and both neighbours.  Used as an independent check of
    the symbolic computation.
    """
    lo, hi = phi.u_range
    u = np.arange(lo, hi + 0.5 * resolution, resolution)
    vals = phi(u)
    scale = max(1.0, float(np.max(np.abs(vals))))
    d2 = np.max(np.abs(vals[2:] - 2 * vals[1:-1] + vals[:-2]), axis=-1)
    flat = np.concatenate([[False], d2 <= tol * scale, [False]])
    mask = flat.copy()
    mask[1:-1] = flat[:-2] & flat[1:-1] & flat[2:]
    return u, mask


# }}}


# {{{ genuine nonlinearity


@dataclass(frozen=True)
class GNVerdict:
    holds: bool
    witness: AffineInterval | None = None
    eps_min: float = 0.0

    def to_json(self):
        out = {"holds": self.holds, "eps_min": self.eps_min}
        if self.witness is not None:
            out["witness"] = {
                "interval": [self.witness.lo, self.witness.hi],
                "slope": self.witness.slope.tolist(),
                "offset": self.witness.offset.tolist(),
            }
        return out


def check_gn(structure: AffineStructure, eps_ladder: Sequence[float] = DEFAULT_EPS_LADDER) -> GNVerdict:
    """Decide whether the flux is affine on some ``(0, eps)`` or ``(-eps, 0)``.

    Only the finest rung matters: an affine interval that reaches past
    ``eps_min`` on either side of zero contains every coarser window too.
    """
    lo, hi = structure.u_range
    if not lo < 0.0 < hi:
        raise ValueError("0 must be interior to u_range")
    eps_min = float(min(eps_ladder))
    for iv in structure.intervals:
        if iv.lo <= 0.0 and iv.hi > eps_min:
            return GNVerdict(False, iv, eps_min)
        if iv.hi >= 0.0 and iv.lo < -eps_min:
            return GNVerdict(False, iv, eps_min)
    return GNVerdict(True, None, eps_min)


def select_B(F: NonlinearitySet, M: float, side: str, eps_floor: float = EPS_FLOOR) -> float:
    """Element of ``F`` nearest zero beyond ``M`` on the requested side."""
    if side == "plus":
        b = F.smallest_at_least(max(M, eps_floor))
    elif side == "minus":
        b = F.largest_at_most(min(M, -eps_floor))
    else:
        raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")
    if b is None:
        raise NoAdmissibleValue(f"no element of F on the {side} side of M={M}")
    return float(b)


# }}}


# {{{ subspaces


@dataclass(frozen=True)
class NonlinearitySubspace:
    interval: tuple[float, float]
    basis: np.ndarray  # rows, orthonormal; shape (k, n)
    tol: float
    ambient_dim: int

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def is_proper(self) -> bool:
        return self.dim < self.ambient_dim

    def distance(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        proj = (xi @ self.basis.T) @ self.basis if self.dim else np.zeros_like(xi)
        return np.linalg.norm(xi - proj, axis=-1)


def second_difference_rows(phi: FluxSpec, lo: float, hi: float, samples: int = 1000) -> np.ndarray:
    u = np.linspace(lo, hi, samples + 1)
    vals = phi(u)
    rows = []
    m = 1
    while 2 * m <= samples:
        rows.append(vals[2 * m :] - 2 * vals[m:-m] + vals[: -2 * m])
        m *= 2
    # slope jumps at interior breakpoints, scaled to a grid-step second difference
    step = (hi - lo) / samples
    for b in phi.breakpoints():
        if lo < b < hi:
            eta = min(step, b - lo, hi - b)
            rows.append((phi(np.array([b + eta])) - 2 * phi(np.array([b])) + phi(np.array([b - eta]))))
    return np.concatenate(rows, axis=0)


def nonlinearity_subspace(
    phi: FluxSpec, interval: tuple[float, float], tol_affine: float = TOL_AFFINE, samples: int = 1000
) -> NonlinearitySubspace:
    """Directions ``xi`` for which ``u -> xi . phi(u)`` is affine on ``interval``."""
    lo, hi = float(interval[0]), float(interval[1])
    ulo, uhi = phi.u_range
    if not (ulo <= lo < hi <= uhi):
        raise FluxDomainError(f"interval {interval} not inside u_range {phi.u_range}")
    rows = second_difference_rows(phi, lo, hi, samples)
    magnitude = float(np.max(np.abs(phi(np.linspace(lo, hi, samples + 1)))))
    thr = tol_affine * max(magnitude, np.finfo(float).tiny)
    if rows.shape[0] < phi.dim:
        rows = np.vstack([rows, np.zeros((phi.dim - rows.shape[0], phi.dim))])
    # rows is tall, so the economy factorization already holds all of V
    _, s, vt = np.linalg.svd(rows, full_matrices=False)
    rank = int(np.sum(s > thr))
    return NonlinearitySubspace((lo, hi), vt[rank:].copy(), tol_affine, phi.dim)


def subspace_family(phi: FluxSpec, structure: AffineStructure | None = None) -> list[NonlinearitySubspace]:
    """Finite stand-in for the family of subspaces over intervals meeting ``F``.

    One subspace per non-affine elementary region and one per isolated point
    of ``F`` (a small neighbourhood of the kink).  Duplicates are dropped.
    """
    structure = structure or affine_structure(phi)
    lo, hi = phi.u_range
    candidates: list[tuple[float, float]] = []
    for a, b in structure.regions:
        if structure.F.contains(0.5 * (a + b)):
            candidates.append((a, b))
    for a, b in structure.F.intervals:
        if a == b:
            width = 1e-3
            for x, y in structure.regions:
                if a in (x, y):
                    width = min(width, 0.5 * (y - x))
            candidates.append((max(lo, a - width), min(hi, a + width)))
    family: list[NonlinearitySubspace] = []
    for iv in candidates:
        sub = nonlinearity_subspace(phi, iv)
        if any(_same_subspace(sub, other) for other in family):
            continue
        family.append(sub)
    return family


def _same_subspace(a: NonlinearitySubspace, b: NonlinearitySubspace) -> bool:
    if a.dim != b.dim:
        return False
    if a.dim == 0:
        return True
    return bool(np.all(b.distance(a.basis) < 1e-8))


# }}}
