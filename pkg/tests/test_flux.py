import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entropy_decay.flux import (
    EPS_FLOOR,
    TOL_AFFINE,
    Affine,
    Dyadic,
    FluxDomainError,
    FluxError,
    FluxSpec,
    NoAdmissibleValue,
    NonlinearitySet,
    Piecewise,
    Power,
    Sum,
    affine_structure,
    burgers,
    check_gn,
    eval_flux,
    nonlinearity_subspace,
    parse_expr,
    scan_affine_numeric,
    select_B,
    subspace_family,
)


def affine_mask(phi, lo, hi, step=1e-3, tol=1e-9):
    """Independent brute-force scan: second differences at three consecutive nodes vanish."""
    u = np.arange(lo, hi + step / 2, step)
    v = phi(u)
    d2 = np.max(np.abs(v[2:] - 2 * v[1:-1] + v[:-2]), axis=-1)
    flat = d2 <= tol * max(1.0, np.abs(v).max())
    inner = flat[:-2] & flat[1:-1] & flat[2:]
    return u[2:-2], inner


def piecewise_example():
    return FluxSpec((Piecewise((0.0,), (Affine(1.0, 0.0), Power(1.0, 2.0, signed=False))),), (-1.0, 1.0))


# {{{ evaluation


def test_eval_burgers_2d():
    np.testing.assert_allclose(eval_flux(burgers(2), 2.0), [2.0, 8.0 / 3.0], rtol=1e-15)


def test_eval_affine_components():
    phi = FluxSpec((Affine(1.0, 0.0), Affine(0.0, 0.0)), (-2, 2))
    assert eval_flux(phi, 0.5).tolist() == [0.5, 0.0]


def test_eval_signed_root():
    phi = FluxSpec((Power(1.0, 0.5),), (-5, 5))
    assert eval_flux(phi, 4.0)[0] == pytest.approx(2.0, abs=1e-15)
    assert eval_flux(phi, -4.0)[0] == pytest.approx(-2.0, abs=1e-15)


def test_eval_out_of_range():
    with pytest.raises(FluxDomainError):
        eval_flux(burgers(1), 2.5)


def test_discontinuous_piecewise_rejected():
    with pytest.raises(FluxError):
        FluxSpec((Piecewise((0.0,), (Affine(0.0, 0.0), Affine(0.0, 1.0))),), (-1, 1))


def test_nonpositive_power_rejected():
    with pytest.raises(FluxError):
        FluxSpec((Power(1.0, 0.0),), (-1, 1))


def test_unsorted_breakpoints_rejected():
    with pytest.raises(FluxError):
        Piecewise((0.5, 0.0), (Affine(0, 0), Affine(0, 0), Affine(0, 0)))


def test_json_round_trip():
    phi = FluxSpec(
        (
            Sum((Power(0.5, 2.0, signed=False), Affine(1.0, 0.0))),
            Piecewise((0.0,), (Affine(1.0, 0.0), Sum((Dyadic(5), Affine(0.0, -(2.0**-10) / 2))))),
        ),
        (-1.5, 1.5),
    )
    again = FluxSpec.from_json(json.loads(json.dumps(phi.to_json())))
    assert again.to_json() == phi.to_json()
    u = np.linspace(-1.5, 1.5, 301)
    np.testing.assert_array_equal(again(u), phi(u))


def test_unknown_expression_type():
    with pytest.raises(FluxError):
        parse_expr({"type": "spline"})


# }}}


# {{{ affine structure


def test_burgers_has_no_affine_piece():
    s = affine_structure(burgers(1))
    assert s.intervals == ()
    assert s.F.intervals == ((-2.0, 2.0),)


def test_linear_flux_is_affine_everywhere():
    s = affine_structure(FluxSpec((Affine(1.0, 0.0),), (-2, 2)))
    assert [(iv.lo, iv.hi) for iv in s.intervals] == [(-2.0, 2.0)]
    assert s.F.is_empty


def test_piecewise_example_matches_brute_force():
    phi = piecewise_example()
    s = affine_structure(phi)
    assert [(iv.lo, iv.hi) for iv in s.intervals] == [(-1.0, 0.0)]
    assert s.F.intervals == ((0.0, 1.0),)
    u, flat = affine_mask(phi, -1.0, 1.0)
    # away from the kink the scan and the symbolic answer agree point by point
    far = np.abs(u) > 3e-3
    np.testing.assert_array_equal(flat[far], ~s.F.contains_array(u[far]))


def test_module_scan_agrees_with_independent_scan():
    phi = piecewise_example()
    u1, m1 = scan_affine_numeric(phi, resolution=1e-3)
    u2, m2 = affine_mask(phi, -1.0, 1.0, step=1e-3)
    np.testing.assert_allclose(u1[2:-2], u2)
    np.testing.assert_array_equal(m1[2:-2], m2)


def test_kink_between_affine_pieces_is_in_F():
    phi = FluxSpec((Piecewise((0.5,), (Affine(1.0, 0.0), Affine(2.0, -0.5))),), (-1, 1))
    s = affine_structure(phi)
    assert s.F.intervals == ((0.5, 0.5),)
    assert len(s.intervals) == 2


def test_dyadic_nonlinearity_set_is_the_nodes():
    phi = FluxSpec((Dyadic(20),), (-2.0, 2.0))
    s = affine_structure(phi)
    # the continuation past +-1 keeps the last slope, so +-1 are not kinks
    nodes = {(-1) ** j * 2.0**-k for k in range(1, 21) for j in (0, 1)}
    assert {a for a, b in s.F.intervals} == nodes
    assert all(a == b for a, b in s.F.intervals)
    assert s.F.inf_positive() == 2.0**-20
    assert s.F.sup_negative() == -(2.0**-20)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_structure_invariant_under_affine_shift(slope, offset):
    phi = piecewise_example()
    base = affine_structure(phi)
    moved = affine_structure(phi.with_affine([slope], [offset]))
    assert moved.F.intervals == base.F.intervals
    assert [(iv.lo, iv.hi) for iv in moved.intervals] == [(iv.lo, iv.hi) for iv in base.intervals]


# }}}


# {{{ genuine nonlinearity


def test_gn_holds_for_burgers_2d():
    assert check_gn(affine_structure(burgers(2))).holds


def test_gn_fails_for_transport_with_witness():
    v = check_gn(affine_structure(FluxSpec((Affine(1.0, 0.0), Affine(0.0, 0.0)), (-2, 2))))
    assert not v.holds
    assert (v.witness.lo, v.witness.hi) == (-2.0, 2.0)
    assert v.witness.slope.tolist() == [1.0, 0.0]


def test_gn_holds_for_dyadic_flux():
    s = affine_structure(FluxSpec((Dyadic(20),), (-2.0, 2.0)))
    v = check_gn(s)
    assert v.holds
    # the equivalent condition on F
    assert s.F.inf_positive() <= v.eps_min and s.F.sup_negative() >= -v.eps_min


def test_gn_fails_for_coarse_dyadic_flux():
    # affine on (-2**-5, 2**-5), far wider than the finest rung
    assert not check_gn(affine_structure(FluxSpec((Dyadic(5),), (-2.0, 2.0)))).holds


def test_gn_fails_one_sided():
    phi = piecewise_example()  # affine on (-1, 0), strictly convex on (0, 1)
    v = check_gn(affine_structure(phi))
    assert not v.holds
    assert (v.witness.lo, v.witness.hi) == (-1.0, 0.0)


def quadratic_outside(p, q):
    """Zero on ``[p, q]``, ``(u-p)**2`` left of it and ``(u-q)**2`` right of it."""
    sq = Power(1.0, 2.0, signed=False)
    return FluxSpec(
        (Piecewise((p, q), (Sum((sq, Affine(-2 * p, p * p))), Affine(0.0, 0.0), Sum((sq, Affine(-2 * q, q * q))))),),
        (-2.0, 2.0),
    )


grid = st.integers(-30, 30).map(lambda k: k * 0.05)


@given(grid, grid)
def test_gn_fails_iff_affine_interval_touches_zero(p, q):
    if not p < q:
        p, q = min(p, q) - 0.05, max(p, q)
    s = affine_structure(quadratic_outside(p, q))
    assert [(iv.lo, iv.hi) for iv in s.intervals] == [(p, q)]
    assert check_gn(s).holds == (not p <= 0 <= q)


# }}}


# {{{ subspaces


def test_subspace_quadratic_linear():
    phi = FluxSpec((Power(0.5, 2.0, signed=False), Affine(1.0, 0.0)), (-2, 2))
    X = nonlinearity_subspace(phi, (0.0, 1.0))
    assert X.dim == 1
    assert X.distance(np.array([0.0, 1.0])) < 1e-12


def test_subspace_cancellation_direction():
    phi = FluxSpec((Power(1.0, 2.0, signed=False), Power(1.0, 2.0, signed=False)), (-2, 2))
    X = nonlinearity_subspace(phi, (0.0, 1.0))
    assert X.dim == 1
    assert X.distance(np.array([1.0, -1.0]) / np.sqrt(2)) < 1e-12


def test_subspace_trivial_for_burgers_2d():
    assert nonlinearity_subspace(burgers(2), (0.0, 1.0)).dim == 0


def test_subspace_full_when_affine():
    phi = FluxSpec((Affine(1.0, 0.0), Affine(2.0, 1.0)), (-2, 2))
    X = nonlinearity_subspace(phi, (0.0, 1.0))
    assert X.dim == 2 and not X.is_proper


def test_subspace_outside_range():
    with pytest.raises(FluxDomainError):
        nonlinearity_subspace(burgers(1), (1.0, 3.0))


@pytest.mark.parametrize(
    "phi",
    [
        FluxSpec((Power(1.0, 2.0, signed=False), Power(1.0, 2.0, signed=False)), (-2, 2)),
        FluxSpec((Power(0.5, 2.0, signed=False), Affine(1.0, 0.0)), (-2, 2)),
        FluxSpec((Power(1.0, 0.5), Power(2.0, 0.5)), (-2, 2)),
    ],
)
def test_subspace_basis_kills_second_differences(phi, rng):
    X = nonlinearity_subspace(phi, (0.0, 1.0))
    u = rng.uniform(0.01, 0.99, 200)
    h = rng.uniform(1e-3, 1e-2, 200)
    h = np.minimum(h, np.minimum(u, 1 - u))
    d2 = phi(u + h) - 2 * phi(u) + phi(u - h)
    scale = np.abs(phi(np.linspace(0, 1, 101))).max()
    for xi in X.basis:
        assert np.max(np.abs(d2 @ xi)) <= TOL_AFFINE * scale * 10


def test_directions_off_the_subspace_see_curvature(rng):
    phi = FluxSpec((Power(1.0, 2.0, signed=False), Power(1.0, 2.0, signed=False)), (-2, 2))
    X = nonlinearity_subspace(phi, (0.0, 1.0))
    u = np.linspace(0.1, 0.9, 50)
    d2 = phi(u + 0.05) - 2 * phi(u) + phi(u - 0.05)
    for _ in range(50):
        xi = rng.normal(size=2)
        if X.distance(xi) >= 1e-3 * np.linalg.norm(xi):
            assert np.max(np.abs(d2 @ xi)) > TOL_AFFINE


def test_subspace_family_for_equal_components():
    phi = FluxSpec((Power(1.0, 2.0, signed=False), Power(1.0, 2.0, signed=False)), (-2, 2))
    fam = subspace_family(phi)
    assert len(fam) == 1
    assert fam[0].distance(np.array([1.0, -1.0]) / np.sqrt(2)) < 1e-10


# }}}


# {{{ select_B


def test_select_B_inside_F():
    F = affine_structure(burgers(1)).F
    assert select_B(F, 0.2, "plus") == 0.2


def test_select_B_dyadic():
    F = affine_structure(FluxSpec((Dyadic(20),), (-2.0, 2.0))).F
    assert select_B(F, 0.3, "plus") == 0.5
    assert select_B(F, -0.3, "minus") == -0.5


def test_select_B_floor():
    F = affine_structure(burgers(1)).F
    assert select_B(F, 0.0, "plus") == EPS_FLOOR
    assert select_B(F, 0.0, "minus") == -EPS_FLOOR


def test_select_B_no_admissible_value():
    with pytest.raises(NoAdmissibleValue):
        select_B(NonlinearitySet(()), 0.1, "plus")


def test_select_B_bad_side():
    with pytest.raises(ValueError):
        select_B(NonlinearitySet(((0.0, 1.0),)), 0.1, "up")


@given(st.floats(-0.5, 0.5))
def test_select_B_brackets_M(M):
    F = affine_structure(FluxSpec((Dyadic(20),), (-2.0, 2.0))).F
    bp = select_B(F, M, "plus")
    bm = select_B(F, M, "minus")
    assert bp >= M and F.contains(bp)
    assert bm <= M and F.contains(bm)
    assert bm < 0 < bp


# }}}
