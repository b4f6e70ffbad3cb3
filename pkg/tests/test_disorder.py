from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import ks_2samp

from dynloc.disorder import (
    DisorderError,
    DisorderSpec,
    correlation_diagnostic,
    kernel_autocorrelation,
    sample_field,
    stream,
)
from dynloc.lattice import LatticeSpec
from dynloc.parallel import pool_map


def test_uniform_support():
    lat = LatticeSpec(1, 101)
    spec = DisorderSpec(half_width=2.0, seed=1, samples=20)
    for i in range(20):
        v = sample_field(spec, i, lat).values
        assert v.min() >= -2 and v.max() <= 2


def test_reproducible_and_order_independent():
    lat = LatticeSpec(2, 9)
    spec = DisorderSpec(half_width=1.0, seed=99, samples=10)
    forward = [sample_field(spec, i, lat).values.tobytes() for i in range(10)]
    backward = [sample_field(spec, i, lat).values.tobytes() for i in reversed(range(10))][::-1]
    assert forward == backward


def _field_bytes(args):
    spec, index, lat = args
    return sample_field(spec, index, lat).values.tobytes()


def test_same_bytes_one_worker_vs_many():
    lat = LatticeSpec(1, 33)
    spec = DisorderSpec(kind="correlated-moving-average", half_width=1.0, window=1, seed=5, samples=16)
    jobs = [(spec, i, lat) for i in range(16)]
    assert pool_map(_field_bytes, jobs, 1) == pool_map(_field_bytes, jobs, 4)


def test_streams_differ_by_index_and_seed():
    a = stream(1, 0).random(4)
    assert not np.array_equal(a, stream(1, 1).random(4))
    assert not np.array_equal(a, stream(2, 0).random(4))


def test_values_read_only_and_provenance():
    f = sample_field(DisorderSpec(seed=3, samples=2), 1, LatticeSpec(1, 5))
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    assert f.provenance == {"kind": "iid-uniform", "seed": 3, "index": 1}


def test_errors():
    with pytest.raises(DisorderError):
        sample_field(DisorderSpec(samples=3), 3, LatticeSpec(1, 5))
    with pytest.raises(DisorderError):
        DisorderSpec(half_width=0)
    with pytest.raises(DisorderError):
        DisorderSpec(kind="gaussian")
    with pytest.raises(DisorderError, match="unnormalizable"):
        DisorderSpec(kind="iid-density", density_grid=(-1.0, 1.0), density_values=(1.0, 1.0))


def test_tabulated_density_sampling_matches_cdf():
    # triangular density on [-1, 1]
    x = tuple(np.linspace(-1, 1, 41))
    g = tuple(1 - abs(t) for t in x)
    spec = DisorderSpec(kind="iid-density", half_width=1.0, seed=2, samples=1, density_grid=x, density_values=g)
    v = sample_field(spec, 0, LatticeSpec(1, 40001)).values
    assert v.min() >= -1 and v.max() <= 1
    # exact triangular CDF at 0.5 is 1 - 0.5 * 0.5**2
    assert abs(np.mean(v <= 0.5) - 0.875) < 4 * np.sqrt(0.875 * 0.125 / v.size)


def test_moving_average_bounds_and_lag_correlation():
    spec = DisorderSpec(kind="correlated-moving-average", half_width=2.0, window=1, seed=11, samples=4000)
    assert kernel_autocorrelation(spec, 0) == 1.0
    assert kernel_autocorrelation(spec, 1) == pytest.approx(2 / 3)
    assert kernel_autocorrelation(spec, 3) == 0.0
    est = correlation_diagnostic(spec, max_lag=4, samples=4000)
    assert est.rho[0] == 1.0
    for lag in range(1, 5):
        exact = kernel_autocorrelation(spec, lag)
        assert abs(est.rho[lag] - exact) <= 4 * max(est.stderr[lag], 1 / np.sqrt(est.samples))
    v = sample_field(spec, 0, LatticeSpec(1, 51)).values
    assert np.abs(v).max() <= 2.0


def test_iid_correlations_vanish():
    spec = DisorderSpec(half_width=1.0, seed=4, samples=2000)
    est = correlation_diagnostic(spec, max_lag=3, samples=2000)
    assert np.all(np.abs(est.rho[1:]) <= 4 * est.stderr[1:])
    with pytest.raises(DisorderError):
        correlation_diagnostic(spec, 2, samples=50)


def test_stationarity_ks():
    lat = LatticeSpec(1, 21)
    spec = DisorderSpec(kind="correlated-moving-average", half_width=1.0, window=2, seed=8, samples=10000)
    data = np.array([sample_field(spec, i, lat).values[[0, 10, 20]] for i in range(10000)])
    # 1% critical value of the two-sample KS statistic for n = m = 1e4
    crit = 1.628 * np.sqrt(2 / 10000)
    assert ks_2samp(data[:, 0], data[:, 1]).statistic < crit
    assert ks_2samp(data[:, 1], data[:, 2]).statistic < crit


def test_finite_range_independence():
    # sites further apart than 2r share no base noise: correlation is zero
    spec = DisorderSpec(kind="correlated-moving-average", half_width=1.0, window=1, seed=6, samples=3000)
    assert kernel_autocorrelation(spec, 3) == 0.0
    est = correlation_diagnostic(spec, max_lag=5, samples=3000)
    assert np.all(np.abs(est.rho[3:]) <= 4 / np.sqrt(3000))
