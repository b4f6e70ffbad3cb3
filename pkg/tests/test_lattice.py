from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynloc.lattice import (
    Box,
    GeometryError,
    LatticeSpec,
    boundary_pairs,
    indicator,
    nearest_neighbors,
    position_second_moment_weights,
)


def test_weights_examples():
    lat1 = LatticeSpec(1, 9)
    assert position_second_moment_weights(lat1)[lat1.index_of((3,))] == 9
    lat2 = LatticeSpec(2, 7)
    w = position_second_moment_weights(lat2)
    assert w[lat2.index_of((1, -2))] == 5
    assert w[lat2.origin] == 0
    # radius-1 box: four axis sites of weight 1 and four corners of weight 2
    assert sum(w[lat2.index_of(s)] for s in Box((0, 0), 1).sites()) == 12


def test_index_roundtrip_and_order():
    lat = LatticeSpec(2, 5)
    sites = [lat.site_of(i) for i in range(lat.n_sites)]
    assert sites == sorted(sites)
    assert all(lat.index_of(s) == i for i, s in enumerate(sites))
    assert np.array_equal(lat.coords[7], np.array(sites[7]))


def test_geometry_errors():
    with pytest.raises(GeometryError):
        LatticeSpec(1, 10)
    with pytest.raises(GeometryError):
        LatticeSpec(4, 3)
    with pytest.raises(GeometryError):
        Box((0,), 0)
    with pytest.raises(GeometryError):
        LatticeSpec(1, 5).index_of((3,))
    with pytest.raises(GeometryError):
        boundary_pairs(Box((0,), 2), LatticeSpec(1, 5))


def test_real_radius_membership():
    box = Box((0,), 2.7)
    assert box.int_radius == 2
    assert box.contains((2,)) and not box.contains((3,))
    assert box.n_sites == 5


def test_indicator_is_unit_vector():
    lat = LatticeSpec(2, 5)
    e = indicator(lat, (1, -1))
    assert e.sum() == 1 and e[lat.index_of((1, -1))] == 1


@settings(max_examples=40, deadline=None)
@given(
    dim=st.integers(1, 2),
    radius=st.floats(0.5, 3.0),
    cx=st.integers(-2, 2),
    cy=st.integers(-2, 2),
)
def test_boundary_pairs_are_exactly_the_crossing_bonds(dim, radius, cx, cy):
    lat = LatticeSpec(dim, 13)
    center = (cx, cy)[:dim]
    box = Box(center, radius)
    pairs = set(boundary_pairs(box, lat))
    crossing = set()
    for s in itertools.product(range(-lat.half, lat.half + 1), repeat=dim):
        for t in nearest_neighbors(s):
            if lat.contains(t) and box.contains(s) and not box.contains(t):
                crossing.add((s, t))
    assert pairs == crossing


@settings(max_examples=30, deadline=None)
@given(perm=st.permutations([0, 1, 2]), signs=st.lists(st.sampled_from([-1, 1]), min_size=3, max_size=3))
def test_weights_symmetric_under_permutation_and_reflection(perm, signs):
    lat = LatticeSpec(3, 5)
    w = position_second_moment_weights(lat)
    for i in range(0, lat.n_sites, 7):
        s = lat.site_of(i)
        t = tuple(signs[k] * s[perm[k]] for k in range(3))
        assert w[lat.index_of(t)] == w[i]
