"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; the terminal summary prints one
pass/fail line per criterion.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from entropy_decay.config import ExperimentConfig
from entropy_decay.experiments import cmd_counterexample, cmd_decay, cmd_periodic_decay, cmd_pipeline
from entropy_decay.flux import FluxSpec, Power, burgers, subspace_family
from entropy_decay.lattice import CertificateError, Lattice, covering_multiplicity, random_avoiding_lattice, verify_avoidance
from entropy_decay.norms import GridFunction, compact_support_random, v_norm
from entropy_decay.periodization import admissibility, envelopes, mr_bound_check, sandwich_violation
from entropy_decay.shapes import Ball
from entropy_decay.solver import MonotoneScheme, compare_runs, entropy_residual, step_values, to_torus
from entropy_decay.torus import PeriodicGridFunction

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def load(name):
    return ExperimentConfig.load(SCENARIOS / name)


def timed(fn, *args):
    clock = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - clock


@pytest.mark.slow
@pytest.mark.criterion(1, "localized decay: monotone X-norm, t^-1/2 rate, Hopf-Lax agreement")
def test_localized_decay():
    report, elapsed = timed(cmd_decay, load("burgers_decay.json"))
    v = report.verdicts
    assert v["gn"]["passed"]
    assert v["x_norm_nonincreasing"]["passed"], v["x_norm_nonincreasing"]
    assert v["mass_conserved"]["passed"]
    assert abs(v["rate_fit"]["slope"] + 0.5) <= 0.1, v["rate_fit"]
    assert v["oracle"]["rel_error"] <= 0.1, v["oracle"]
    assert report.passed
    assert elapsed < 60


@pytest.mark.criterion(2, "affine flux: constant X-norm, mass leaves the fixed ball")
def test_sharpness_counterexample():
    report, elapsed = timed(cmd_counterexample, load("counterexample.json"))
    v = report.verdicts
    assert v["x_norm_constant"]["passed"] and v["x_norm_constant"]["spread"] <= 1e-12
    assert v["ball_l1_vanishes"]["passed"]
    ts, ls = report.column("t"), report.column("l1_cell")
    assert np.all(ls[ts >= 1.0] == 0.0)
    assert ts[0] == 0.0 and ts[-1] == 100.0
    assert elapsed < 1


@pytest.mark.slow
@pytest.mark.criterion(3, "periodic decay to the mean, Richardson-consistent")
def test_periodic_decay():
    cfg = load("periodic_sine.json")
    clock = time.perf_counter()
    fine = cmd_periodic_decay(cfg, 1.0)
    coarse = cmd_periodic_decay(cfg, 0.5)
    elapsed = time.perf_counter() - clock
    assert fine.verdicts["mean_conserved"]["passed"] and coarse.verdicts["mean_conserved"]["passed"]
    assert fine.verdicts["thresholds"]["passed"], fine.verdicts["thresholds"]
    for cf, cc in zip(fine.verdicts["thresholds"]["checks"], coarse.verdicts["thresholds"]["checks"]):
        t = cf["t"]
        # first-order extrapolation from h=1/512 and h=1/1024
        extrapolated = 2 * cf["value"] - cc["value"]
        assert extrapolated <= cf["bound"]
        # the limit profile is a sawtooth of slope 1/t, whose mean deviation is 1/(4t)
        assert extrapolated == pytest.approx(1 / (4 * t), rel=0.1)
    assert fine.passed
    assert elapsed < 60


def _scheme_instance(rng, i):
    dim = 1 if i % 2 == 0 else 2
    if dim == 1:
        phi = [burgers(1), FluxSpec((Power(1 / 3, 3.0),), (-2.0, 2.0))][i // 2 % 2]
        L = Lattice(np.eye(1))
        shape = (int(rng.integers(16, 65)),)
        kind = ["lax_friedrichs", "engquist_osher"][i // 4 % 2]
    else:
        phi = FluxSpec((Power(0.5, 2.0, False), Power(1 / 3, 3.0)), (-2.0, 2.0))
        A = np.eye(2) + rng.uniform(-0.3, 0.3, (2, 2))
        L = Lattice(A / np.sqrt(abs(np.linalg.det(A))))
        shape = tuple(int(k) for k in rng.integers(8, 17, size=2))
        kind = "lax_friedrichs"
    table = to_torus(phi, L, 1.0).table(-1.0, 1.0, 201)
    u = PeriodicGridFunction(L, 1.0, rng.uniform(-1, 1, shape))
    return u, MonotoneScheme(table, kind)


@pytest.mark.slow
@pytest.mark.criterion(4, "monotone scheme: max principle, comparison, L1 contraction, entropy")
def test_scheme_property_suite():
    rng = np.random.default_rng(2024)
    clock = time.perf_counter()
    nsteps = 10
    for i in range(200):
        u, s = _scheme_instance(rng, i)
        widths = [1.0 / n for n in u.shape]
        dt = s.stable_dt(widths, 0.45)
        v = u.with_values(rng.uniform(-1, 1, u.shape))
        w = u.with_values(np.minimum(u.values + rng.uniform(0, 0.5, u.shape), 1.0))
        assert compare_runs(u, w, s, nsteps=nsteps, dt=dt).preserved, i
        lo, hi = u.values.min(), u.values.max()
        a, b = u.values, v.values
        dist = np.sum(np.abs(a - b))
        ks = rng.uniform(-1.2, 1.2, 50)
        for _ in range(nsteps):
            a1 = step_values(a, s, dt, widths, True)
            b1 = step_values(b, s, dt, widths, True)
            assert a1.min() >= lo and a1.max() <= hi, i
            d1 = np.sum(np.abs(a1 - b1))
            assert d1 <= dist * (1 + 1e-12), i
            worst = max(entropy_residual(u.with_values(a), u.with_values(a1), k, s, dt) for k in ks)
            assert worst <= 1e-12, (i, worst)
            a, b, dist = a1, b1, d1
    assert time.perf_counter() - clock < 120


@pytest.mark.criterion(5, "window norm equivalence through greedy coverings")
def test_norm_equivalence():
    clock = time.perf_counter()
    pairs = [(Ball(1.0, 1), Ball(1.0, 1), 2), (Ball(2.0, 1), Ball(1.0, 1), 3)]
    dense = {1: np.linspace(-2, 2, 40001)[:, None]}
    for V1, V2, m in pairs:
        cov = covering_multiplicity(V1, V2)
        assert cov.m == m
        pts = dense[1][np.abs(dense[1][:, 0]) <= V1.radius]
        assert cov.covers(V2, pts).all()
    rng = np.random.default_rng(5)
    for dim in (1, 2):
        V1, V2 = Ball(2.0, dim), Ball(1.0, dim)
        m = covering_multiplicity(V1, V2).m
        for _ in range(50):
            h = 0.05 if dim == 1 else 0.1
            u = compact_support_random(rng, dim, h)
            assert v_norm(u, V1) <= m * v_norm(u, V2) + 4 * h * m
    assert time.perf_counter() - clock < 10


@pytest.mark.criterion(6, "periodization of the unit square: M_r = 1/r^2, bound, sandwiches")
def test_periodization_mechanism():
    clock = time.perf_counter()
    h = 1 / 32
    u0 = GridFunction.from_function(lambda x, y: ((x > 0) & (x < 1) & (y > 0) & (y < 1)) * 1.0,
                                    [-1, -1], [2, 2], h)
    L = Lattice(np.eye(2))
    eps = 0.5
    p = float(admissibility(u0, [eps])[0])
    assert p == 1.0
    for r in (2, 4, 8, 16):
        rep = envelopes(u0, L, r)
        assert rep.M_r == 1 / r**2
        assert mr_bound_check(rep, eps, p, tol=0.0).passed
        assert sandwich_violation(u0, rep.v_minus, rep.v_plus) == 0.0
        assert np.all(rep.v_minus.values <= rep.v_plus.values)
        assert np.all(np.abs(rep.v_plus.values) <= rep.V_r.values)
        assert np.all(np.abs(rep.v_minus.values) <= rep.V_r.values)
        assert sandwich_violation(u0.with_values(np.abs(u0.values)), rep.V_r.with_values(-rep.V_r.values), rep.V_r) == 0.0
    assert time.perf_counter() - clock < 10


@pytest.mark.criterion(7, "random lattices avoid the nonlinearity subspace")
def test_lattice_avoidance():
    clock = time.perf_counter()
    phi = FluxSpec((Power(1.0, 2.0, False), Power(1.0, 2.0, False)), (-2.0, 2.0))
    family = subspace_family(phi)
    assert family
    for sub in family:
        assert sub.dim == 1
        assert abs(abs(sub.basis[0] @ np.array([1, -1])) / np.sqrt(2) - 1) < 1e-9
    passed = 0
    for seed in range(100):
        try:
            _, cert = random_avoiding_lattice(family, R=50, delta=1e-6, seed=seed, max_retries=1)
            passed += cert.passed
        except CertificateError:
            pass
    assert passed >= 99
    hand = np.array([[1.0, np.sqrt(2)], [np.sqrt(2), 1.0]]).T
    ratio, _, _ = verify_avoidance(hand, [np.array([[0.0, 1.0]])], R=100)
    assert ratio >= 1e-6
    assert time.perf_counter() - clock < 10


@pytest.mark.slow
@pytest.mark.criterion(8, "full pipeline: envelope sandwich, B_r = 1/r, final bound")
def test_full_pipeline():
    report, elapsed = timed(cmd_pipeline, load("pipeline_burgers.json"))
    v = report.verdicts
    for r in (4, 8, 16):
        assert v[f"sandwich_r{r}"]["passed"], v[f"sandwich_r{r}"]
        assert v[f"final_bound_r{r}"]["passed"], v[f"final_bound_r{r}"]
    Bp = v["B_plus_nonincreasing"]["B_plus"]
    np.testing.assert_allclose(Bp, [1 / 4, 1 / 8, 1 / 16], rtol=1e-12)
    assert all(b < a for a, b in zip(Bp, Bp[1:]))
    assert report.passed
    assert elapsed < 120
