import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entropy_decay.flux import EPS_FLOOR, Dyadic, FluxSpec, affine_structure, burgers
from entropy_decay.lattice import Lattice
from entropy_decay.norms import GridFunction, compact_support_random
from entropy_decay.periodization import (
    EnvelopeError,
    admissibility,
    chain_nonincreasing,
    default_eps,
    envelopes,
    grid_tolerance,
    mr_bound_check,
    mr_chain,
    sandwich_violation,
    shifted_periodic_data,
    truncate_tail,
)
from entropy_decay.torus import PeriodicGridFunction

H = 1 / 200
Z1 = Lattice(np.eye(1))
Z2 = Lattice(np.eye(2))
SHEAR = Lattice(np.array([[1.0, 0.5], [0.0, 1.0]]))


def box_1d(h=H):
    return GridFunction.from_function(lambda x: ((x > 0) & (x < 1)) * 1.0, -1, 2, h)


def hat(h=H):
    return GridFunction.from_function(lambda x: np.maximum(1 - np.abs(x), 0.0), -2, 2, h)


def square(h=1 / 32):
    return GridFunction.from_function(lambda x, y: ((x > 0) & (x < 1) & (y > 0) & (y < 1)) * 1.0, [-1, -1], [2, 2], h)


# {{{ admissibility


def test_admissibility_box():
    p, q = admissibility(box_1d(), [0.5, 1.5])
    assert p == pytest.approx(1.0, abs=2 * H)
    assert q == 0.0


def test_admissibility_hat():
    # independent count: centres with 1 - |x| > 0.5
    u = hat()
    x = u.axes()[0]
    assert admissibility(u, [0.5])[0] == pytest.approx(np.count_nonzero(np.abs(x) < 0.5) * H)
    assert admissibility(u, [0.5])[0] == pytest.approx(1.0, abs=2 * H)


def test_default_eps():
    assert default_eps(1.0) == pytest.approx(0.05)
    assert default_eps(0.0) == 0.0


def test_truncate_tail():
    u = GridFunction.from_function(lambda x: np.exp(-np.abs(x)), -10, 10, 0.1)
    v = truncate_tail(u, 1e-2, 3.0)
    x = u.axes()[0]
    assert np.all(v.values[np.abs(x) > 5] == 0.0)
    np.testing.assert_array_equal(v.values[np.abs(x) < 3], u.values[np.abs(x) < 3])


# }}}


# {{{ envelopes


def test_single_shift_contributes():
    rep = envelopes(box_1d(), Z1, 3.0)
    assert rep.M_r == pytest.approx(1 / 3, abs=1e-15)
    assert rep.M_r_minus == 0.0
    x = rep.v_plus.physical_centers()[:, 0]
    expected = ((np.mod(x, 3.0) > 0) & (np.mod(x, 3.0) < 1)) * 1.0
    np.testing.assert_array_equal(rep.v_plus.values, expected)


def test_shifts_tile_the_line():
    rep = envelopes(box_1d(), Z1, 0.5)
    assert np.all(rep.v_plus.values == 1.0)
    assert rep.M_r == 1.0


def test_square_on_integer_torus():
    rep = envelopes(square(), Z2, 4.0)
    assert rep.M_r == 1 / 16
    assert rep.period_volume == 16.0


def test_shift_cap():
    with pytest.raises(EnvelopeError):
        envelopes(box_1d(), Z1, 1e-3, max_shifts=100)


def test_zero_data():
    u = GridFunction(np.zeros(1), H, np.zeros(50))
    rep = envelopes(u, Z1, 2.0)
    assert rep.M_r == rep.M_r_plus == rep.M_r_minus == 0.0


def test_wrap_identity_is_exact():
    rep = envelopes(box_1d(), Z1, 3.0)
    x = rep.V_r.physical_centers().reshape(-1, 1)
    for e in (-2, -1, 1, 5):
        np.testing.assert_array_equal(rep.V_r.sample(x + 3.0 * e), rep.V_r.sample(x))


# }}}


# {{{ bound and chain


def test_bound_r10():
    v = mr_bound_check(envelopes(box_1d(), Z1, 10.0), 0.1, 1.0)
    assert v.M_r == pytest.approx(0.1) and v.passed


def test_bound_r100():
    v = mr_bound_check(envelopes(box_1d(), Z1, 100.0), 0.01, 1.0)
    assert v.M_r == pytest.approx(0.01) and v.bound == pytest.approx(0.02) and v.passed


def test_bound_violation_is_reported():
    v = mr_bound_check(envelopes(box_1d(), Z1, 2.0), 0.0, 0.1)
    assert not v.passed
    assert {"M_r", "bound", "C0", "p"} <= set(v.to_json())


def test_hat_chain_halves():
    chain = mr_chain(hat(), Z1, [2, 4, 8, 16])
    m = [rep.M_r for rep, _ in chain]
    for a, b in zip(m, m[1:]):
        assert b / a == pytest.approx(0.5, rel=0.05)
    assert all(v.passed for _, v in chain)
    assert chain_nonincreasing(chain)


def test_square_chain_on_shear_lattice():
    u = square()
    chain = mr_chain(u, SHEAR, [2, 4, 8])
    for rep, v in chain:
        assert v.passed
        assert rep.M_r == pytest.approx(1 / rep.r**2, abs=grid_tolerance(u, rep.period_volume))


# }}}


# {{{ shifted data


def test_burgers_shift_is_trivial():
    rep = envelopes(box_1d(), Z1, 3.0)
    u_plus, u_minus, rep = shifted_periodic_data(rep, affine_structure(burgers(1)).F)
    assert rep.B_r_plus == pytest.approx(1 / 3, abs=1e-15)
    np.testing.assert_allclose(u_plus.values, rep.v_plus.values, atol=1e-15)
    assert rep.B_r_minus == -EPS_FLOOR
    assert np.all(u_minus.values == -EPS_FLOOR)


def test_dyadic_shift():
    rep = envelopes(box_1d(), Z1, 3.0)
    F = affine_structure(FluxSpec((Dyadic(20),), (-2.0, 2.0))).F
    u_plus, _, rep = shifted_periodic_data(rep, F)
    assert rep.B_r_plus == 0.5
    np.testing.assert_allclose(u_plus.values, rep.v_plus.values + 1 / 6, atol=1e-15)


seeds = st.integers(0, 2**32 - 1)


@given(seeds, st.sampled_from([1, 2]), st.sampled_from([0.75, 1.0, 2.5, 4.0]), st.booleans())
def test_envelope_invariants(seed, dim, r, sheared):
    rng = np.random.default_rng(seed)
    u = compact_support_random(rng, dim, 0.1 if dim == 2 else 0.05, extent=2.0)
    L = (SHEAR if sheared else Z2) if dim == 2 else Z1
    rep = envelopes(u, L, r)
    # sandwich, ordering and the sup bound hold cellwise without tolerance
    assert sandwich_violation(u, rep.v_minus, rep.v_plus) == 0.0
    assert np.all(np.abs(rep.v_plus.values) <= rep.V_r.values)
    assert np.all(np.abs(rep.v_minus.values) <= rep.V_r.values)
    assert np.all(rep.V_r.values <= rep.C0)
    F = affine_structure(burgers(1)).F
    u_plus, u_minus, rep = shifted_periodic_data(rep, F)
    assert rep.B_r_minus <= rep.M_r_minus <= rep.M_r_plus <= rep.B_r_plus
    scale = max(1.0, abs(rep.B_r_plus))
    assert abs(u_plus.mean - rep.B_r_plus) <= 1e-12 * scale
    assert abs(u_minus.mean - rep.B_r_minus) <= 1e-12 * scale
    assert sandwich_violation(u, u_minus, u_plus) == 0.0


# }}}


def test_periodic_function_mean_and_volume():
    g = PeriodicGridFunction(SHEAR, 2.0, np.arange(12.0).reshape(3, 4))
    assert g.mean == pytest.approx(5.5)
    assert g.period_volume == pytest.approx(4.0)
