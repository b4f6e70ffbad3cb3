from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from dynloc.disorder import DisorderSpec, sample_field
from dynloc.green import (
    BoxResolvent,
    abel_functional,
    adapted_energy_grid,
    cm0_structure_check,
    decoupling_check,
    energy_grid_for,
    exact_weighted_resolvent_integral,
    green_element,
    gre_identity_residual,
    peter_check,
    regularity_test,
    resolve,
    residuum_check,
    variable_energy_regularity,
    weighted_resolvent_integrand,
)
from dynloc.dynamics import geometric_T_grid
from dynloc.lattice import Box, GeometryError, LatticeSpec, boundary_pairs, indicator, position_second_moment_weights
from dynloc.operator import FilterSpec, apply_filter, assemble, diagonalize


def random_op(dim=1, extent=65, M=2.0, index=0, seed=11):
    lat = LatticeSpec(dim, extent)
    return assemble(lat, sample_field(DisorderSpec(half_width=M, seed=seed, samples=index + 1), index, lat))


def test_diagonal_operator_resolvent():
    # isolated site: potential far away from the hopping scale does not matter for the diagonal entry bound
    lat = LatticeSpec(1, 1)
    op = assemble(lat, potential=[0.7])
    g = green_element(op, (0,), (0,), 0.2, 0.3)
    assert g == pytest.approx(1 / (0.7 - 0.2 - 0.3j), abs=1e-15)


def test_two_by_two_by_hand():
    op = assemble(LatticeSpec(1, 3), potential=[0.5, -1.0, 2.0])
    h = op.dense()
    z = 0.1 + 0.25j
    inv = np.linalg.inv(h - z * np.eye(3))
    for s in range(3):
        np.testing.assert_allclose(resolve(op, (s - 1,), 0.1, 0.25), inv[:, s], atol=1e-14)


@given(st.floats(-6, 6), st.floats(1e-3, 2), st.integers(0, 20))
@settings(max_examples=25, deadline=None)
def test_norm_bound_and_conjugation(E, eps, index):
    op = random_op(extent=21, index=index)
    col = resolve(op, (3,), E, eps)
    assert np.linalg.norm(col) <= 1 / eps * (1 + 1e-12)
    conj = resolve(op, (3,), E, -eps)
    np.testing.assert_allclose(conj, np.conj(col), atol=1e-12 / eps)


@pytest.mark.parametrize("index", range(5))
def test_gre_identity_d1(index):
    op = random_op(1, 65, index=index)
    assert gre_identity_residual(op, Box((-15,), 8), (10,), 0.3, 0.1) <= 1e-10


@pytest.mark.parametrize("index", range(2))
def test_gre_identity_d2(index):
    op = random_op(2, 21, index=index)
    assert gre_identity_residual(op, Box((-3, 0), 3), (5, 1), -0.4, 0.2) <= 1e-10


def test_gre_negative_control_and_geometry():
    op = random_op(1, 65)
    box = Box((-15,), 8)
    pairs = boundary_pairs(box, op.lattice)[:-1]
    assert gre_identity_residual(op, box, (10,), 0.3, 0.1, pairs=pairs) > 1e-6
    with pytest.raises(GeometryError):
        gre_identity_residual(op, box, (0,), 0.3, 0.1)


def test_regularity_vacuous_threshold():
    op = random_op(1, 41, M=3.0)
    v = regularity_test(op, Box((0,), 5), 0.37, threshold=math.inf, eps_min=1e-4)
    assert v.passed == (v.guard_distance >= 1e-4)


def test_free_chain_at_box_eigenvalue_not_regular():
    # an odd free box has the eigenvalue 0 exactly
    op = assemble(LatticeSpec(1, 31))
    v = regularity_test(op, Box((0,), 4), 0.0, threshold=1e6)
    assert not v.passed and v.guard_distance < 1e-6


@given(st.floats(1e-4, 1.0), st.floats(1.0, 100.0))
@settings(max_examples=20, deadline=None)
def test_regularity_monotone_in_threshold(t, factor):
    op = random_op(1, 41, M=4.0, index=2)
    lo = regularity_test(op, Box((0,), 6), 1.3, threshold=t, eps_min=1e-4)
    hi = regularity_test(op, Box((0,), 6), 1.3, threshold=t * factor, eps_min=1e-4)
    assert (not lo.passed) or hi.passed
    assert lo.measured_norm == hi.measured_norm


def test_energy_window_outside_spectrum_passes():
    op = random_op(1, 41, M=1.0)
    energies = energy_grid_for((8.0, 8.01), 1e-3)
    v = variable_energy_regularity(op, Box((0,), 5), energies, threshold=1e-3, eps_min=1e-3)
    assert v.passed
    with pytest.raises(ValueError):
        variable_energy_regularity(op, Box((0,), 5), [8.0, 8.01], threshold=1.0, eps_min=1e-3)


def test_box_norm_matches_direct_resolvent():
    op = random_op(2, 15, index=1)
    box = Box((0, 0), 2)
    br = BoxResolvent(op, box)
    from dynloc.operator import restrict

    inner = restrict(op, box)
    g = resolve(inner, (0, 0), 0.4, 0.05)
    acc = {}
    for u, up in boundary_pairs(box, op.lattice):
        acc[up] = acc.get(up, 0) + g[inner.row_of(u)]
    direct = math.sqrt(sum(abs(v) ** 2 for v in acc.values()))
    assert br.norms([0.4], [0.05])[0, 0] == pytest.approx(direct, rel=1e-10)


def test_decoupling():
    op = random_op(1, 81, M=3.0)
    assert decoupling_check(op, (-20,), (20,), 6, 0.5, 0.05).holds


@pytest.mark.parametrize("eps", [1.0, 0.1])
def test_residuum_subinterval_and_full_range(eps):
    op = random_op(1, 33)
    dec = diagonalize(op)
    rng = np.random.default_rng(4)
    psi = rng.normal(size=33)
    psi /= np.linalg.norm(psi)
    sub = residuum_check(dec, psi, (-1.0, 1.5), eps)
    assert sub.passed and sub.value < sub.bound
    lo, hi = dec.values.min() - 1000 * eps, dec.values.max() + 1000 * eps
    full = residuum_check(dec, psi, (lo, hi), eps, spacing=eps / 4)
    assert full.value == pytest.approx(math.pi / eps, rel=1e-2)
    assert residuum_check(dec, psi, (1.0, 1.0), eps).value == 0.0
    with pytest.raises(ValueError):
        residuum_check(dec, 2 * psi, (0, 1), eps)


def test_lorentzian_oracle_against_quad():
    op = random_op(1, 5)
    dec = diagonalize(op)
    psi = np.array([0.3, -0.1, 0.8, 0.2, 0.4])
    w = position_second_moment_weights(op.lattice)
    for eta in (0.7, -0.4):
        f = lambda E: weighted_resolvent_integrand(dec, psi, eta, np.array([E]), w)[0]  # noqa: E731
        brute = sum(quad(f, a, b, limit=400, epsabs=1e-12)[0] for a, b in [(-np.inf, -8), (-8, 8), (8, np.inf)])
        assert exact_weighted_resolvent_integral(dec, psi, eta, w) == pytest.approx(brute, rel=1e-8)


def test_abel_grid_matches_oracle():
    op = random_op(1, 61, M=3.0)
    dec = diagonalize(op)
    psi = np.zeros(61)
    psi[30] = 1
    w = position_second_moment_weights(op.lattice)
    for eps in (0.2, 0.05):
        res = abel_functional(dec, psi, eps)
        exact = exact_weighted_resolvent_integral(dec, psi, eps, w)
        # the grid stops 10/eps beyond the spectrum; the Lorentzian tail lost is about 2 eps/(10 pi)
        assert res.integral == pytest.approx(exact, rel=0.05)
        grid = adapted_energy_grid(dec, eps, reach=1e4 / eps)
        y = weighted_resolvent_integrand(dec, psi, eps, grid, w)
        assert np.trapezoid(y, grid) == pytest.approx(exact, rel=1e-3)


def test_abel_eigenvector_rank_one():
    op = random_op(1, 41, M=3.0)
    dec = diagonalize(op)
    v = dec.vectors[:, 17]
    w = position_second_moment_weights(op.lattice)
    for eps in (0.3, 0.03):
        exact = exact_weighted_resolvent_integral(dec, v, eps, w)
        assert exact == pytest.approx(float(w @ v**2) * math.pi / eps, rel=1e-10)


def test_peter_inequality():
    lat = LatticeSpec(1, 257)
    op = assemble(lat, sample_field(DisorderSpec(half_width=2.0, seed=12345, samples=1), 0, lat))
    dec = diagonalize(op)
    phi = apply_filter(FilterSpec(0.5, 2.5, 0.5), dec, np.eye(257)[128])
    phi /= np.linalg.norm(phi)
    r = peter_check(dec, phi, 10.0)
    assert r.holds and r.time_average > 0


@pytest.mark.parametrize("index", range(3))
def test_cm0_structure_bounded(index):
    lat = LatticeSpec(1, 121)
    op = assemble(lat, sample_field(DisorderSpec(half_width=4.0, seed=3, samples=3), index, lat))
    dec = diagonalize(op)
    phi = apply_filter(FilterSpec(0.5, 2.5, 0.5), dec, indicator(lat, (0,)))
    r = cm0_structure_check(dec, phi, (0.5, 2.5), geometric_T_grid(1, 100, 8))
    assert r.c3 >= 0 and r.bounded
    assert np.all(r.energy_term > 0)
