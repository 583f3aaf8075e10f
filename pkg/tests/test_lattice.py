from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings, strategies as st

from ffstab.errors import InvalidSiteError
from ffstab.lattice import LatticeSpec, ball, covering_radius, distance, partition


def test_ball_sizes():
    lat2 = LatticeSpec(2, 5)
    assert len(ball(7, 1, lat2)) == 9
    lat1 = LatticeSpec(1, 6)
    assert ball(2, 0, lat1).sites == frozenset({2})
    assert ball(0, 3, lat1).sites == frozenset(range(6))


def test_invalid_site():
    with pytest.raises(InvalidSiteError):
        LatticeSpec(1, 4).coord(4)


def test_distance_wraps():
    lat = LatticeSpec(1, 8)
    assert distance(0, 7, lat) == 1
    assert distance(0, 4, lat) == 4
    open_lat = LatticeSpec(1, 8, periodic=False)
    assert distance(0, 7, open_lat) == 7


def test_non_square_shape():
    lat = LatticeSpec(2, 6, shape=(6, 4))
    assert lat.n_sites == 24 and lat.L == 6
    assert covering_radius(lat) == 3
    assert len(ball(0, covering_radius(lat), lat)) == 24


def _min_intra_distance(scheme, lat):
    best = None
    for cls in scheme.classes:
        for a, b in itertools.combinations(cls, 2):
            d = distance(a, b, lat)
            best = d if best is None else min(best, d)
    return best


def test_partition_chain_16_r2():
    lat = LatticeSpec(1, 16)
    p = partition(2, lat)
    assert p.class_count == 8
    assert all(len(c) == 2 for c in p.classes)
    assert _min_intra_distance(p, lat) == 8


def test_partition_trivial_when_small():
    lat = LatticeSpec(1, 8)
    p = partition(2, lat)
    assert p.class_count == 8 and all(len(c) == 1 for c in p.classes)


@settings(max_examples=40, deadline=None)
@given(d=st.integers(1, 2), L=st.integers(2, 24), r=st.integers(1, 4))
def test_partition_properties(d, L, r):
    if d == 2 and L > 12:
        L = 12
    lat = LatticeSpec(d, L)
    p = partition(r, lat)
    seen = sorted(s for c in p.classes for s in c)
    assert seen == list(range(lat.n_sites))
    # brute-force pairwise check of disjoint radius-r balls inside each class
    for cls in p.classes:
        for a, b in itertools.combinations(cls, 2):
            assert not (ball(a, r, lat).sites & ball(b, r, lat).sites)
    if p.boxes_per_axis:
        assert p.class_count <= 6**d * r**d


@settings(max_examples=50, deadline=None)
@given(L=st.integers(2, 12), u=st.integers(0, 11), v=st.integers(0, 11), w=st.integers(0, 11))
def test_distance_is_metric(L, u, v, w):
    lat = LatticeSpec(1, L)
    u, v, w = u % L, v % L, w % L
    assert distance(u, v, lat) == distance(v, u, lat)
    assert distance(u, w, lat) <= distance(u, v, lat) + distance(v, w, lat)
    assert distance(u, v, lat) == lat.distance_matrix[u, v]
