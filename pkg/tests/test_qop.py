from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ffstab import qop
from ffstab.errors import CapacityError, DomainError, EmbeddingError, RegionError
from ffstab.qop import DensityMatrix, HilbertSpec, QOperator


def rand_state(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return v / np.linalg.norm(v)


def test_capacity_cap():
    with pytest.raises(CapacityError):
        HilbertSpec((2,) * 21)
    assert HilbertSpec((2, 3, 1)).dim == 6


def test_embed_z_on_site0():
    hs = HilbertSpec((2, 2))
    Zfull = qop.embed(QOperator(oracles.Z, (0,)), hs).dense()
    assert np.allclose(np.diag(Zfull), [1, 1, -1, -1])
    assert np.allclose(qop.embed(QOperator(np.eye(2), (1,)), hs).dense(), np.eye(4))


def test_embed_mismatch():
    hs = HilbertSpec((2, 2))
    with pytest.raises(EmbeddingError):
        qop.embed(QOperator(np.eye(4), (0,)), hs)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), site=st.integers(0, 3))
def test_embed_matches_kron_and_norm(seed, site):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    hs = HilbertSpec((2,) * 5)
    i, j = site, site + 1
    full = qop.embed(QOperator(A, (i, j)), hs).dense()
    ref = oracles.two_site(A, i, j, 5)
    assert np.allclose(full, ref, atol=1e-12)
    assert math.isclose(qop.opnorm(full), np.linalg.norm(A, 2), rel_tol=1e-10)


def test_embed_non_adjacent_order():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 4))
    hs = HilbertSpec((2,) * 4)
    full = qop.embed(QOperator(A, (3, 1)), hs).dense()
    # support is sorted, so rows of A are indexed by (site 1, site 3)
    assert np.allclose(full, oracles.two_site(A, 1, 3, 4))


def test_acts_trivially_outside_support():
    rng = np.random.default_rng(1)
    hs = HilbertSpec((2,) * 4)
    A = qop.embed(QOperator(rng.standard_normal((4, 4)), (0, 1)), hs).dense()
    B = qop.embed(QOperator(rng.standard_normal((4, 4)), (2, 3)), hs).dense()
    assert np.abs(A @ B - B @ A).max() < 1e-12


def test_partial_trace_examples():
    hs = HilbertSpec((2, 2))
    bell = np.array([1, 0, 0, 1]) / math.sqrt(2)
    rho = qop.partial_trace(bell, [0], hs)
    assert np.allclose(rho.matrix, np.eye(2) / 2)
    rho.validate()
    prod = np.kron([1, 0], [0.6, 0.8])
    r1 = qop.partial_trace(prod, [1], hs)
    assert abs(qop.von_neumann_entropy(r1)) < 1e-12
    with pytest.raises(RegionError):
        qop.partial_trace(bell, [0], hs, support=(1,))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), keep=st.sets(st.integers(0, 4), min_size=1, max_size=3))
def test_partial_trace_against_loops(seed, keep):
    psi = rand_state(5, seed)
    hs = HilbertSpec((2,) * 5)
    rho = qop.partial_trace(psi, keep, hs).matrix
    assert np.allclose(rho, oracles.naive_partial_trace(psi, keep, 5), atol=1e-12)
    assert abs(np.trace(rho) - 1) < 1e-12
    # operator route agrees with the vector route
    rho2 = qop.partial_trace(np.outer(psi, psi.conj()), keep, hs).matrix
    assert np.allclose(rho, rho2, atol=1e-12)


def test_norms():
    a = np.array([1, 0], dtype=complex)
    b = np.array([0, 1], dtype=complex)
    assert math.isclose(qop.trace_norm(np.outer(a, a) - np.outer(b, b)), 2.0)
    P = np.outer(a + b, (a + b).conj()) / 2
    assert math.isclose(qop.norm(P), 1.0, rel_tol=1e-12)
    assert math.isclose(qop.opnorm(np.kron(oracles.X, oracles.X)), 1.0, rel_tol=1e-12)
    with pytest.raises(CapacityError):
        qop.trace_norm(np.eye(8), cap=4)


def test_entropies():
    assert math.isclose(qop.entropy_tools(np.eye(2) / 2), math.log(2), rel_tol=1e-12)
    assert math.isclose(qop.entropy_tools(0.5), math.log(2), rel_tol=1e-12)
    assert qop.entropy_tools(0.0, dim=4) == 0.0
    with pytest.raises(DomainError):
        qop.binary_entropy(1.5)


def test_density_validation():
    with pytest.raises(DomainError):
        DensityMatrix(np.eye(2), (0,)).validate()


def test_conditional_expectation_fixes_local():
    rng = np.random.default_rng(0)
    hs = HilbertSpec((2,) * 3)
    A = rng.standard_normal((4, 4))
    op = QOperator(A, (0, 1))
    assert qop.conditional_expectation(op, {0, 1, 2}, hs) is op
    red = qop.conditional_expectation(op, {0}, hs)
    assert red.support == (0,)
    ref = np.einsum("abcb->ac", A.reshape(2, 2, 2, 2)) / 2
    assert np.allclose(red.dense(), ref)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_string_basis_roundtrip(seed):
    rng = np.random.default_rng(seed)
    hs = HilbertSpec((2, 3))
    M = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    C = qop.to_string_basis(M, (0, 1), hs)
    assert np.allclose(qop.from_string_basis(C, (0, 1), hs), M, atol=1e-12)
    # orthonormal basis: Frobenius norm is preserved
    assert math.isclose(np.linalg.norm(C), np.linalg.norm(M), rel_tol=1e-12)


def test_sparse_and_dense_add_agree():
    rng = np.random.default_rng(5)
    hs = HilbertSpec((2,) * 6)
    ops = [QOperator(rng.standard_normal((4, 4)), (i, (i + 1) % 6)) for i in range(6)]
    dense = qop.add(ops, hs, sparse=False).dense()
    sparse = qop.add(ops, hs, sparse=True).dense()
    assert np.allclose(dense, sparse, atol=1e-13)


def test_min_eigenvalue():
    M = np.diag([3.0, -1.0, 2.0])
    assert qop.min_eigenvalue(M) == pytest.approx(-1.0)
