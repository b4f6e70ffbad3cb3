from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynloc.disorder import DisorderSpec, sample_field
from dynloc.dynamics import (
    BoundaryLeak,
    DynamicsTrace,
    GridMismatch,
    ballistic_bound_check,
    cesaro,
    cesaro_exact,
    disorder_average,
    evolve,
    geometric_T_grid,
    second_moment_trace,
    uniform_time_grid,
)
from dynloc.lattice import LatticeSpec, indicator
from dynloc.operator import assemble, diagonalize


@pytest.fixture(scope="module")
def free_chain():
    lat = LatticeSpec(1, 201)
    return diagonalize(assemble(lat)), indicator(lat, (0,))


def disordered(seed=5, index=0, extent=61, M=4.0):
    lat = LatticeSpec(1, extent)
    spec = DisorderSpec(half_width=M, seed=seed, samples=index + 1)
    return diagonalize(assemble(lat, sample_field(spec, index, lat)))


def test_free_chain_ballistic(free_chain):
    dec, psi = free_chain
    t = uniform_time_grid(10.0, 0.05)
    tr = second_moment_trace(dec, psi, t)
    np.testing.assert_allclose(tr.m[1:], 2 * t[1:] ** 2, rtol=1e-6)
    assert tr.m[0] == 0


def test_cesaro_of_constant_and_quadratic():
    t = uniform_time_grid(20.0, 0.1)
    const = cesaro(DynamicsTrace(0, "x", t, np.full(t.size, 3.5)), [1, 5, 20])
    np.testing.assert_allclose(const.C, 3.5, rtol=1e-14)
    quad = cesaro(DynamicsTrace(0, "x", t, 2 * t**2), [1, 5, 20])
    np.testing.assert_allclose(quad.C, 2 * quad.T**2 / 3, rtol=1e-12)
    assert np.all(quad.quad_error < 1e-12)


def test_T_snapped_to_four_steps():
    t = uniform_time_grid(10.0, 0.05)
    tr = cesaro(DynamicsTrace(0, "x", t, np.ones(t.size)), [1.03, 7.77])
    np.testing.assert_allclose(tr.T / 0.2, np.round(tr.T / 0.2), atol=1e-9)


def test_cesaro_against_spectral_oracle():
    dec = disordered()
    psi = np.zeros(dec.values.size)
    psi[30] = 1
    t = uniform_time_grid(40.0, 0.02)
    tr = cesaro(second_moment_trace(dec, psi, t), geometric_T_grid(1, 40, 8))
    np.testing.assert_allclose(tr.C, cesaro_exact(dec, psi, tr.T), rtol=1e-7)


def test_grid_errors():
    t = uniform_time_grid(5.0, 0.1)
    tr = DynamicsTrace(0, "x", t, np.ones(t.size))
    with pytest.raises(GridMismatch):
        cesaro(tr, [10.0])
    with pytest.raises(GridMismatch):
        disorder_average([tr])
    with pytest.raises(ValueError):
        second_moment_trace(disordered(), np.ones(61), [0.5, 1.0])


@given(st.floats(-50, 50), st.floats(-50, 50))
@settings(max_examples=25, deadline=None)
def test_unitary_group(s, t):
    dec = disordered(index=2, extent=31)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=31) + 1j * rng.normal(size=31)
    a = evolve(dec, evolve(dec, psi, s), t)
    np.testing.assert_allclose(a, evolve(dec, psi, s + t), atol=1e-10)
    assert np.linalg.norm(a) == pytest.approx(np.linalg.norm(psi), rel=1e-12)


def test_boundary_leak_reports_safe_time():
    lat = LatticeSpec(1, 41)
    dec = diagonalize(assemble(lat))
    with pytest.raises(BoundaryLeak) as info:
        second_moment_trace(dec, indicator(lat, (0,)), uniform_time_grid(30.0, 0.1))
    assert 0 < info.value.safe_t_max < 15


def test_average_sup_dominates_sup_of_average():
    t = uniform_time_grid(50.0, 0.05)
    T = geometric_T_grid(1, 50, 16)
    traces = []
    for i in range(6):
        dec = disordered(index=i, extent=121)
        psi = np.zeros(121)
        psi[60] = 1
        traces.append(cesaro(second_moment_trace(dec, psi, t, realization=i, initial_state="delta"), T))
    avg = disorder_average(traces[::-1])
    assert avg.mean_sup_C >= avg.mean_C[avg.T > 1].max() - 1e-12
    # order of the input does not matter
    np.testing.assert_array_equal(avg.C_samples, disorder_average(traces).C_samples)


@pytest.mark.parametrize("dim,extent", [(1, 81), (2, 15)])
def test_ballistic_bound(dim, extent):
    lat = LatticeSpec(dim, extent)
    dec = diagonalize(assemble(lat, sample_field(DisorderSpec(half_width=1.0, seed=8), 0, lat)))
    psi = indicator(lat, (0,) * dim)
    rep = ballistic_bound_check(dec, psi, np.linspace(0, 5, 51))
    assert rep.holds and rep.min_slack_2d >= 0
    assert np.all(rep.commutator_norms <= 2 * dim)
