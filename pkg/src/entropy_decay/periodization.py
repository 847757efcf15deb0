"""Periodic envelopes of compactly supported data and their shifted means.

For a lattice ``L`` and scale ``r`` the envelopes are the pointwise sup/inf
of ``u0(x + r e)`` over ``e in L``; they are ``rL``-periodic, squeeze ``u0``
from both sides, and their means vanish as ``r`` grows.  Shifting each
envelope by a constant so that its mean lands on a point of ``F`` yields
periodic data whose solutions bracket the localized one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .flux import EPS_FLOOR, NonlinearitySet, select_B
from .lattice import Lattice, LatticeError
from .norms import GridFunction
from .torus import PeriodicGridFunction, torus_resolution


class EnvelopeError(ValueError):
    pass


def admissibility(u0: GridFunction, lambdas) -> np.ndarray:
    """``meas{|u0| > lam}`` for each ``lam`` (cell counting)."""
    a = np.abs(u0.values).ravel()
    cell = u0.h**u0.dim
    return np.array([np.count_nonzero(a > lam) * cell for lam in np.atleast_1d(lambdas)])


def truncate_tail(u0: GridFunction, threshold: float, radius: float, center=None) -> GridFunction:
    """Zero the cells with ``|u0| < threshold`` farther than ``radius`` from ``center``."""
    center = np.zeros(u0.dim) if center is None else np.asarray(center, dtype=float)
    dist = np.linalg.norm(u0.centers() - center, axis=-1)
    vals = np.where((dist > radius) & (np.abs(u0.values) < threshold), 0.0, u0.values)
    return u0.with_values(vals)


@dataclass(frozen=True, eq=False)
class EnvelopeReport:
    v_plus: PeriodicGridFunction
    v_minus: PeriodicGridFunction
    V_r: PeriodicGridFunction
    M_r: float
    M_r_plus: float
    M_r_minus: float
    C0: float
    r: float
    p: float | None = None
    B_r_plus: float | None = None
    B_r_minus: float | None = None

    @property
    def lattice(self) -> Lattice:
        return self.V_r.lattice

    @property
    def period_volume(self) -> float:
        return self.V_r.period_volume

    def scalars(self) -> dict:
        return {
            "r": self.r,
            "M_r": self.M_r,
            "M_r_plus": self.M_r_plus,
            "M_r_minus": self.M_r_minus,
            "B_r_plus": self.B_r_plus,
            "B_r_minus": self.B_r_minus,
            "C0": self.C0,
            "p": self.p,
            "period_volume": self.period_volume,
        }


def _shift_range(u0: GridFunction, L: Lattice, r: float):
    lo, hi = u0.support_box()
    corners = np.array([[hi[k] if b else lo[k] for k, b in enumerate(bits)] for bits in itertools.product((0, 1), repeat=u0.dim)])
    c = L.coordinates(corners) / r
    # torus points have coordinates in [-1/2, 1/2); pad by one cell of slack
    emin = np.floor(c.min(axis=0) - 1.0).astype(int)
    emax = np.ceil(c.max(axis=0) + 1.0).astype(int)
    return emin, emax


def envelopes(u0: GridFunction, L: Lattice, r: float, shape=None, max_shifts: int = 100_000) -> EnvelopeReport:
    """Envelopes ``v_plus``, ``v_minus``, ``V_r`` on the torus and their means.

    Each torus cell takes the max/min over shifted nearest-cell samples of
    ``u0`` (pull), and every ``u0`` cell is also pushed into the torus cell
    holding its centre, so the sandwich holds exactly at the ``u0`` cells.
    Far shifts contribute the value 0.
    """
    if not r > 0:
        raise EnvelopeError(f"scale must be positive, got {r}")
    shape = tuple(shape) if shape is not None else torus_resolution(L, r, u0.h)
    template = PeriodicGridFunction(L, r, np.zeros(shape))
    vmax = np.zeros(shape)
    vmin = np.zeros(shape)
    vabs = np.zeros(shape)
    C0 = u0.sup_norm
    if u0.support_box() is not None:
        emin, emax = _shift_range(u0, L, r)
        count = int(np.prod(emax - emin + 1))
        if count > max_shifts:
            raise EnvelopeError(f"r={r} needs {count} lattice shifts (cap {max_shifts})")
        X = template.physical_centers().reshape(-1, u0.dim)
        for e in itertools.product(*(range(a, b + 1) for a, b in zip(emin, emax))):
            vals = u0.sample(X + r * L.points(np.asarray(e, dtype=float))).reshape(shape)
            np.maximum(vmax, vals, out=vmax)
            np.minimum(vmin, vals, out=vmin)
            np.maximum(vabs, np.abs(vals), out=vabs)
        nz = u0.values != 0
        idx = template.index_of(u0.centers()[nz])
        vals = u0.values[nz]
        flat = np.ravel_multi_index(tuple(idx.T), shape)
        np.maximum.at(vmax.reshape(-1), flat, vals)
        np.minimum.at(vmin.reshape(-1), flat, vals)
        np.maximum.at(vabs.reshape(-1), flat, np.abs(vals))
    return EnvelopeReport(
        v_plus=template.with_values(vmax),
        v_minus=template.with_values(vmin),
        V_r=template.with_values(vabs),
        M_r=float(np.mean(vabs)),
        M_r_plus=float(np.mean(vmax)),
        M_r_minus=float(np.mean(vmin)),
        C0=C0,
        r=float(r),
    )


def sandwich_violation(u0: GridFunction, lower: PeriodicGridFunction, upper: PeriodicGridFunction) -> float:
    """Largest amount by which ``lower <= u0 <= upper`` fails at the ``u0`` cells (0 if it holds)."""
    pts = u0.centers().reshape(-1, u0.dim)
    v = u0.values.ravel()
    lo = lower.sample(pts)
    hi = upper.sample(pts)
    return float(max(0.0, np.max(lo - v), np.max(v - hi)))


def default_eps(C0: float, lambdas=None) -> float:
    """Point of the level grid nearest ``0.05*C0``."""
    if C0 == 0:
        return 0.0
    lambdas = np.linspace(0, C0, 101)[1:] if lambdas is None else np.asarray(lambdas, dtype=float)
    return float(lambdas[np.argmin(np.abs(lambdas - 0.05 * C0))])


def grid_tolerance(u0: GridFunction, period_volume: float) -> float:
    """Cell-assignment slack on a mean: a ``2h`` layer around the support box.

    Both the ``u0`` grid and the torus grid assign by nearest cell, so a
    point near the support boundary can land one cell off on either side.
    """
    supp = u0.support_box()
    if supp is None:
        return 0.0
    ext = supp[1] - supp[0]
    perimeter = 2.0 if u0.dim == 1 else 2.0 * float(np.sum(ext))
    return u0.sup_norm * perimeter * 2 * u0.h / period_volume


@dataclass(frozen=True)
class BoundVerdict:
    passed: bool
    M_r: float
    bound: float
    C0: float
    p: float
    eps: float
    period_volume: float
    tol: float

    def to_json(self):
        return dict(self.__dict__)


def mr_bound_check(report: EnvelopeReport, eps: float, p: float, tol: float = 0.0) -> BoundVerdict:
    """``M_r <= C0 * p / |P_r| + eps`` where ``p = meas{|u0| > eps}``."""
    bound = report.C0 * p / report.period_volume + eps
    return BoundVerdict(report.M_r <= bound + tol, report.M_r, bound, report.C0, p, eps, report.period_volume, tol)


def mr_chain(u0: GridFunction, L: Lattice, rs, eps: float | None = None) -> list[tuple[EnvelopeReport, BoundVerdict]]:
    """Envelopes and bound verdicts along an increasing ``r`` schedule."""
    eps = default_eps(u0.sup_norm) if eps is None else eps
    p = float(admissibility(u0, [eps])[0])
    out = []
    for r in rs:
        rep = replace(envelopes(u0, L, r), p=p)
        out.append((rep, mr_bound_check(rep, eps, p, grid_tolerance(u0, rep.period_volume))))
    return out


def chain_nonincreasing(reports, tol: float = 0.0) -> bool:
    m = [rep.M_r for rep, _ in reports]
    return all(b <= a + tol for a, b in zip(m, m[1:]))


def shifted_periodic_data(report: EnvelopeReport, F: NonlinearitySet, eps_floor: float = EPS_FLOOR):
    """``u_plus = v_plus - M_plus + B_plus`` and ``u_minus`` likewise, with ``B`` picked from ``F``.

    Returns ``(u_plus, u_minus, report_with_B)``.
    """
    B_plus = select_B(F, report.M_r_plus, "plus", eps_floor)
    B_minus = select_B(F, report.M_r_minus, "minus", eps_floor)
    u_plus = report.v_plus.with_values(report.v_plus.values - report.M_r_plus + B_plus)
    u_minus = report.v_minus.with_values(report.v_minus.values - report.M_r_minus + B_minus)
    return u_plus, u_minus, replace(report, B_r_plus=B_plus, B_r_minus=B_minus)
