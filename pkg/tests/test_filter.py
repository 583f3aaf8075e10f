from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffstab.errors import DomainError, FilterGapError
from ffstab.flow.filter import FilterSpec, filter_apply, filter_properties
from ffstab.models import Decay, paper_chain, random_perturbation
from ffstab.spectral import diagonalize


def _instance(seed, n=3, J=0.05):
    H = paper_chain(n)
    V = random_perturbation(H, J, Decay("exponential", 1.0), seed, r_max=1)
    Hs = H.matrix() + V.matrix(H.hilbert)
    return Hs


def _random_op(dim, seed):
    rng = np.random.default_rng(seed)
    O = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return (O + O.conj().T) / 2


def test_fejer_profile():
    spec = FilterSpec(0.4)
    assert spec.w_hat(0.0) == 1.0
    assert spec.w_hat(0.4) == 0.0 and spec.w_hat(-1.0) == 0.0
    t = np.linspace(-200, 200, 4001)
    assert np.all(spec.w(t) >= 0)
    # kernel integrates to w^(0) = 1
    dt = 0.01
    tt = np.arange(-4000, 4000, dt)
    assert abs(np.sum(spec.w(tt)) * dt - 1.0) < 1e-3


def test_filter_spec_validation():
    with pytest.raises(DomainError):
        FilterSpec(0.0)
    with pytest.raises(DomainError):
        FilterSpec(1.0, family="table", table=((0.0, 0.5),))


def test_filter_fixes_commuting_operators():
    Hs = _instance(1)
    data = diagonalize(Hs)
    V = data.eigenvectors
    O = (V * np.arange(len(data.eigenvalues))) @ V.conj().T
    F = filter_apply(O, data, FilterSpec(0.3)).op.dense()
    assert np.allclose(F, O, atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**5))
def test_filter_properties_random(seed):
    Hs = _instance(seed % 50)
    data = diagonalize(Hs)
    g = data.ground_degeneracy
    gap = data.eigenvalues[g] - data.eigenvalues[g - 1]
    spec = FilterSpec(0.5 * gap)
    props = filter_properties(_random_op(Hs.shape[0], seed), data, spec, g)
    assert props["fixes_H"] <= 1e-12
    assert props["leak"] <= 1e-10
    assert props["norm_excess"] <= 1e-10


def test_filter_gap_error():
    Hs = _instance(2)
    with pytest.raises(FilterGapError):
        filter_apply(_random_op(Hs.shape[0], 0), Hs, FilterSpec(5.0))


def test_time_domain_agrees_within_bound():
    rng = np.random.default_rng(4)
    # random 8-qubit Hermitian instance with a separated ground state
    n = 2**8
    w = np.sort(rng.uniform(1, 3, n))
    w[0] = 0.0
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    Hm = (Q * w) @ Q.T
    spec = FilterSpec(0.8, T=300.0)
    res = filter_apply(_random_op(n, 1), Hm, spec, mode="time-domain")
    assert res.deviation <= res.truncation_bound + 1e-9
