from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

import oracles
from ffstab.errors import AmbiguousThresholdError, SymmetryError
from ffstab.lattice import ball
from ffstab.models import build_model, ising_chain, paper_chain, paper_chain_v, uniform_field
from ffstab.spectral import (classify_local_gap, diagonalize, energy_projector, frustration_check,
                             gap_sweep, lanczos_lowest, local_energy_claims_check, local_gap_profile,
                             lowest_band, region_projector)


def test_paper_chain_spectrum_n2():
    d = diagonalize(paper_chain(2).matrix())
    assert abs(d.eigenvalues[0]) < 1e-12
    assert d.ground_degeneracy == 1
    assert d.eigenvalues[1] - d.eigenvalues[0] == pytest.approx(2 / 3, abs=1e-10)


def test_single_projector_spectrum():
    P = np.diag([0.0, 1.0])
    assert np.allclose(diagonalize(P).eigenvalues, [0, 1])


def test_non_hermitian_rejected():
    with pytest.raises(SymmetryError):
        diagonalize(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_dense_vs_krylov():
    M = paper_chain(3).matrix()
    a = diagonalize(M, k=5, method="dense").eigenvalues
    b = diagonalize(sp.csr_matrix(M), k=5, method="krylov").eigenvalues
    assert np.abs(a - b).max() <= 1e-10


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_lanczos_degenerate_random(seed):
    rng = np.random.default_rng(seed)
    w = np.sort(rng.standard_normal(60))
    w[:3] = w[0]
    Q, _ = np.linalg.qr(rng.standard_normal((60, 60)))
    A = (Q * w) @ Q.T
    vals, vecs = lanczos_lowest(A, 4, seed=seed)
    assert np.allclose(vals, w[:4], atol=1e-9)
    assert np.linalg.norm(A @ vecs - vecs * vals) < 1e-8


def test_energy_projector_examples():
    H = paper_chain(2)
    # open segment of the first three sites: bonds 1 and 2 under the support rule
    P = region_projector(H, (0, 1, 2), rule="support")
    assert P.rank == 1
    v = P.basis[:, 0]
    e = np.zeros(8)
    e[int("010", 2)] = 1
    assert abs(abs(v @ e) - 1) < 1e-12
    M = P.matrix()
    assert np.allclose(M @ M, M, atol=1e-10) and np.allclose(M, M.conj().T, atol=1e-10)
    full = H.region_hamiltonian(H.all_sites, sparse=False)
    big = energy_projector(full, 10.0)
    assert big.rank == 16
    with pytest.raises(AmbiguousThresholdError):
        energy_projector(full, 2 / 3)


def test_global_projector_stable_below_gap():
    H = paper_chain(2)
    full = H.region_hamiltonian(H.all_sites, sparse=False)
    P0 = energy_projector(full, 0.0).matrix()
    for eps in (0.1, 0.5, 0.66):
        assert np.allclose(energy_projector(full, eps).matrix(), P0, atol=1e-10)


def test_frustration_checks():
    assert frustration_check(paper_chain(3)).passed
    assert frustration_check(paper_chain(3, perturbed=True)).passed
    H = ising_chain(6)
    rep = frustration_check(H, uniform_field(H, 1.0, "x"), s=1.0)
    assert not rep.passed and rep.max_residual > 0.1


@pytest.mark.parametrize("N", [2, 3, 4])
def test_local_gap_paper_chain(N):
    prof = local_gap_profile(paper_chain(N), [1])
    assert prof.gamma_of_r[1] == pytest.approx(oracles.bond_local_gap(N), abs=1e-10)
    assert prof.gamma_of_r[1] == pytest.approx(1 / (3 * N), abs=1e-10)


def test_local_gap_size_dependence_flagged():
    profs = {4: local_gap_profile(paper_chain(2), [1]), 6: local_gap_profile(paper_chain(3), [1])}
    kind, _ = classify_local_gap(profs)
    assert kind == "system-size-dependent"


def test_toric_local_gap_one():
    H = build_model("ToricCode(3,2)")
    prof = local_gap_profile(H, [1, 2])
    for g in prof.entries.values():
        assert g == pytest.approx(1.0, abs=1e-10) or math.isinf(g)


def test_gap_sweep_paper_chain():
    H = paper_chain(3)
    V = paper_chain_v(3)
    tab = gap_sweep(H, V, np.linspace(0, 1, 11), g=2)
    assert tab.header() == ["s", "E0", "E1", "E2", "E3", "E4", "splitting", "gap"]
    first, last = tab.rows[0], tab.rows[-1]
    assert abs(last.energies[0]) < 1e-10 and abs(last.energies[1]) < 1e-10
    tab1 = gap_sweep(H, V, [0.0], g=1)
    assert tab1.rows[0].gap == pytest.approx(2 / 3, abs=1e-10)
    assert tab1.rows[0].splitting == 0.0
    mids = [r.splitting for r in tab.rows[1:-1]]
    assert all(min(first.splitting, last.splitting) < m < max(first.splitting, last.splitting) for m in mids)


def test_local_energy_claims():
    H = paper_chain(3)
    B = ball(2, 1, H.lattice).sites
    C = ball(2, 2, H.lattice).sites
    rep = local_energy_claims_check(H, [(B, C, 0.05, 0.0), (B, C, 0.5, 0.05), (C, C, 0.0, 0.0)],
                                    gamma=2 / 3)
    assert rep.passed


def test_lowest_band_covers_cluster():
    H = build_model("ToricCode(2,2)")
    band = lowest_band(H.matrix(), extra=1)
    assert band.ground_degeneracy == 4
    assert band.eigenvalues[4] == pytest.approx(2.0, abs=1e-9)
