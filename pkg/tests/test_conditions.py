from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ffstab import qop
from ffstab.conditions import (area_law_check, classify_decay, ell0_of, tqo_corollary_check,
                               tqo_delta, tqo_from_basis, tqo_profile)
from ffstab.errors import EmptyGroundspaceError
from ffstab.models import build_model, ising_chain, paper_chain
from ffstab.spectral import lowest_band


@pytest.fixture(scope="module")
def toric():
    return build_model("ToricCode(3,2)")


def qubit_site(H):
    return next(i for i, d in enumerate(H.hilbert.site_dims) if d == 2)


def test_paper_chain_profile_zero():
    prof = tqo_profile(paper_chain(3), 0, 0)
    assert prof.decay_class.startswith("identically-zero")
    assert all(r.delta_op <= 1e-9 and r.delta_state <= 1e-9 for r in prof.rows)


def test_ising_profile_constant():
    prof = tqo_profile(ising_chain(6), 0, 0)
    assert prof.decay_class == "constant"
    assert all(abs(r.delta_op - 1) <= 1e-9 for r in prof.rows)
    assert all(r.delta_state <= r.delta_op + 1e-12 for r in prof.rows)


def test_toric_single_site_profile(toric):
    u = qubit_site(toric)
    prof = tqo_profile(toric, u, 0, L_star=3)
    for row in prof.rows:
        if row.ell >= 2:
            assert row.delta_op <= 1e-8
        assert row.delta_state <= row.delta_op + 1e-9
        assert 0 <= row.delta_op <= 2


def test_empty_groundspace():
    with pytest.raises(EmptyGroundspaceError):
        tqo_from_basis(np.zeros((0, 0, 2, 2)))


def _random_cross_marginals(g, dk, dr, seed):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((dk * dr, g)) + 1j * rng.standard_normal((dk * dr, g))
    Q, _ = np.linalg.qr(V)
    T = Q.reshape(dk, dr, g)
    return Q, np.einsum("arj,bri->ijab", T, T.conj())


def _brute_force_sup(sig, n=4000, seed=0):
    """Crude random search lower bound for the same supremum."""
    rng = np.random.default_rng(seed)
    g = sig.shape[0]
    sbar = np.mean([sig[i, i] for i in range(g)], axis=0)
    best = 0.0
    for _ in range(n):
        x = rng.standard_normal(g) + 1j * rng.standard_normal(g)
        y = rng.standard_normal(g) + 1j * rng.standard_normal(g)
        x /= np.linalg.norm(x)
        y /= np.linalg.norm(y)
        K = np.einsum("i,j,ijab->ab", x.conj(), y, sig) - (x.conj() @ y) * sbar
        best = max(best, float(np.linalg.svd(K, compute_uv=False).sum()))
    return best


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_operator_estimate_properties(seed):
    Q, sig = _random_cross_marginals(3, 2, 3, seed)
    op, state = tqo_from_basis(sig, seed=seed)
    assert state <= op + 1e-9 and op <= 2
    assert _brute_force_sup(sig) <= op + 1e-6
    # invariance under a change of orthonormal ground basis
    rng = np.random.default_rng(seed + 1)
    U, _ = np.linalg.qr(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
    T = (Q @ U).reshape(2, 3, 3)
    sig2 = np.einsum("arj,bri->ijab", T, T.conj())
    op2, _ = tqo_from_basis(sig2, seed=seed)
    assert abs(op - op2) <= 1e-8


def test_delta_methods_agree_on_ising():
    H = ising_chain(6)
    assert tqo_delta(H, 0, 0, 1, "operator") == pytest.approx(1.0, abs=1e-9)
    assert tqo_delta(H, 0, 0, 1, "reduced-state") == pytest.approx(1.0, abs=1e-9)


def test_classify_decay():
    assert classify_decay([0.3, 0.0, 0.0])[0].startswith("identically-zero")
    assert classify_decay([1.0, 1.0, 1.0])[0] == "constant"
    assert classify_decay([1.0, math.exp(-1), math.exp(-2), math.exp(-3)])[0].startswith("exponential")


def test_corollary_paper_chain():
    H = paper_chain(3)
    prof = tqo_profile(H, 0, 0)
    rep = tqo_corollary_check(H, prof, n_samples=20)
    assert rep.passed and rep.max_projector_gap <= 1e-9 and rep.max_norm_gap <= 1e-9


def test_corollary_toric(toric):
    u = qubit_site(toric)
    prof = tqo_profile(toric, u, 0, L_star=3)
    rep = tqo_corollary_check(toric, prof, n_samples=100)
    assert rep.passed, rep.violations[:3]


def test_area_law_paper_chain():
    H = paper_chain(3)
    psi = lowest_band(H.matrix()).ground_basis()[:, 0]
    rep = area_law_check(H, psi, tqo_profile(H, 0, 1))
    assert abs(rep.entropy) < 1e-10 and rep.passed and rep.schmidt_ok


def _toric_site(a, b, lat):
    return lat.index((a % lat.shape[0], b % lat.shape[1]))


@pytest.mark.parametrize("pair", [("h00", "v00"), ("h00", "h10"), ("h00", "h11"), ("v00", "v11")])
def test_toric_entropy_matches_stabilizer_rank(toric, pair):
    # regions here hold no logical operator, so every ground state has the same marginal
    lat = toric.lattice
    L1, L2 = 3, 2

    def edge(name):
        kind, x, y = name[0], int(name[1]), int(name[2])
        site = _toric_site(2 * x + 1, 2 * y, lat) if kind == "h" else _toric_site(2 * x, 2 * y + 1, lat)
        idx = 2 * ((x % L1) * L2 + (y % L2)) + (0 if kind == "h" else 1)
        return site, idx

    sites, edges = zip(*(edge(p) for p in pair))
    psi = lowest_band(toric.matrix()).ground_basis()[:, 0]
    S = qop.von_neumann_entropy(qop.partial_trace(psi, sites, toric.hilbert))
    assert S == pytest.approx(oracles.stabilizer_entropy(L1, L2, edges), abs=1e-9)


def test_toric_area_law_schmidt(toric):
    u = qubit_site(toric)
    prof = tqo_profile(toric, u, 0, L_star=3)
    psi = lowest_band(toric.matrix()).ground_basis()[:, 0]
    rep = area_law_check(toric, psi, prof)
    assert rep.ell0 == ell0_of(prof)
    assert rep.passed and rep.schmidt_ok
