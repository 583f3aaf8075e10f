from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from ffstab import qop
from ffstab.errors import FlowRankError
from ffstab.flow.decompose import (anchor_projectors, anchor_split, centred_shells, delta_bound_check,
                                   localize, transform_decompose, w_decomposition)
from ffstab.flow.spectral_flow import spectral_flow
from ffstab.lattice import ball
from ffstab.models import Decay, paper_chain, paper_chain_v, random_perturbation
from ffstab.qop import QOperator

GRID = list(np.linspace(0.0, 1.0, 6))


def _pair(seed, N=2, J=0.1):
    H = paper_chain(N)
    return H, random_perturbation(H, J, Decay("exponential", 1.0), seed, r_max=1)


def _dense_projector(M, g):
    w, V = sla.eigh(np.asarray(M))
    return V[:, :g] @ V[:, :g].conj().T


@pytest.fixture(scope="module")
def flow_case():
    H, V = _pair(3)
    return H, V, spectral_flow(H, V, GRID)


def test_flow_identity_and_unitarity(flow_case):
    H, V, fl = flow_case
    assert np.allclose(fl.unitary(0), np.eye(H.dim), atol=1e-14)
    for k in range(len(fl.s_grid)):
        U = fl.unitary(k)
        assert np.abs(U.conj().T @ U - np.eye(H.dim)).max() <= 1e-12


def test_flow_intertwines_against_direct_projectors(flow_case):
    H, V, fl = flow_case
    P0 = _dense_projector(H.matrix(), fl.g)
    for k, s in enumerate(fl.s_grid):
        Ps = _dense_projector(H.matrix() + s * V.matrix(H.hilbert), fl.g)
        U = fl.unitary(k)
        assert np.linalg.norm(U @ P0 @ U.conj().T - Ps, 2) <= 1e-8
    assert fl.max_residual <= 1e-8


def test_flow_refines_large_steps():
    H, V = _pair(5, J=1.0)
    fl = spectral_flow(H, V, [0.0, 1.0], max_angle=0.05)
    assert fl.step_control["refined"]
    assert fl.max_residual <= 1e-8


def test_flow_rank_error():
    H = paper_chain(2)
    V = paper_chain_v(2)
    with pytest.raises(FlowRankError):
        spectral_flow(H, V, [0.0, 1.0], g=1)


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 10**5), s=st.sampled_from(GRID[1:]))
def test_transform_decompose_identities(seed, s):
    H, V = _pair(seed)
    fl = spectral_flow(H, V, GRID)
    tp = transform_decompose(H, V, s, fl)
    assert tp.commutator <= 1e-8
    assert tp.reconstruction <= 1e-12
    assert tp.WP0 <= 1e-10
    assert tp.E0_check <= 1e-9
    # W + Delta + c 1 reproduces X
    X = tp.X
    assert np.abs(tp.W() + tp.Delta() + tp.c * np.eye(X.shape[0]) - X).max() <= 1e-11


def test_localize_telescopes():
    H = paper_chain(2)
    rng = np.random.default_rng(0)
    M = rng.standard_normal((16, 16))
    X = QOperator(M + M.T, tuple(range(4)), True)
    shells = localize(X, 1, H)
    total = sum(qop.expand(sh, X.support, H.hilbert, sparse=False).dense() for sh in shells)
    assert np.abs(total - X.dense()).max() <= 1e-12
    # strictly local input is left alone beyond its radius
    A = rng.standard_normal((4, 4))
    loc = QOperator(A + A.T, (1, 2), True)
    loc_full = qop.expand(loc, tuple(range(4)), H.hilbert, sparse=False)
    shells = localize(loc_full, 1, H)
    assert all(np.abs(sh.dense()).max() <= 1e-12 for sh in shells[2:])


def test_anchor_split_reconstructs():
    H, V = _pair(2)
    fl = spectral_flow(H, V, GRID)
    tp = transform_decompose(H, V, 1.0, fl)
    split = anchor_split(tp.X, H)
    total = np.zeros_like(tp.X)
    for (u, r) in split.table:
        sh = split.shell(u, r, H)
        total += qop.expand(sh, tuple(range(H.n_sites)), H.hilbert, sparse=False).dense()
    assert np.abs(total - tp.X).max() <= 1e-12
    for (u, r) in split.table:
        assert set(split.shell(u, r, H).support) <= ball(u, r, H.lattice).sites


def test_w_decomposition_audits():
    H, V = _pair(4, N=3, J=0.05)
    fl = spectral_flow(H, V, GRID)
    tp = transform_decompose(H, V, 1.0, fl)
    split = anchor_split(tp.X, H)
    L = H.lattice.L
    Q0 = fl.band(0)
    for u in (0, 1):
        shells, norms = centred_shells(split, u, H, Q0)
        P = anchor_projectors(H, u, Q0, L)
        wd = w_decomposition(shells, P, H.hilbert, L, u)
        a = wd.audits
        assert a["E_complete"] <= 1e-10 and a["E_orthogonal"] <= 1e-10
        assert a["annihilation"] <= 1e-10 and a["reconstruction"] <= 1e-10
        for q in shells:
            if 1 <= q and 2 * q <= L:
                assert wd.norms_Z.get(2 * q - 1, 0.0) <= 2 * norms[q] + 1e-10


def test_delta_bound_cases():
    rep = delta_bound_check(0.0, {0: 0.1, 1: 0.05}, {0: 0.0, 1: 0.0}, L_star=1)
    assert rep.rhs == 0.0 and rep.passed
    rep0 = delta_bound_check(0.3, {0: 0.1, 1: 0.05, 2: 0.01}, {0: 0.0}, L_star=0)
    assert rep0.rhs == pytest.approx(2 * (0.05 + 0.01))
    assert not delta_bound_check(1.0, {0: 0.1}, {0: 0.0}, 0).passed
