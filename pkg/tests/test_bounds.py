from __future__ import annotations

import importlib
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffstab.errors import DomainError
from ffstab.flow.telescoping import decay_curve, telescoping_curve, telescoping_norm
from ffstab.lattice import LatticeSpec
from ffstab.models import build_model, paper_chain
from ffstab.qop import QOperator

# the package re-exports a function under the module name
bf = importlib.import_module("ffstab.flow.bound_functions")

P = bf.BoundParams(mu=0.5, a=1.0, v_a=2.0, C_F=1.5, psi_F=0.3, dphi_a=0.2, Fa0=1.0, gamma_prime=0.25)


def test_spot_values():
    assert bf.u_mu(math.e**2, 0.7) == pytest.approx(math.exp(-0.7 * math.e**2 / 4), rel=1e-14)
    assert bf.G2(100.0, 0.5) == pytest.approx(7354 / 0.5)
    assert bf.F(3, 1) == pytest.approx(1 / 16)


def test_domains():
    with pytest.raises(DomainError):
        bf.u_mu(1.0, 1.0)
    with pytest.raises(DomainError):
        bf.F(-1, 1)
    with pytest.raises(DomainError):
        bf.BoundParams(mu=0, a=1, v_a=1, C_F=1, psi_F=1, dphi_a=1, Fa0=1, gamma_prime=1)
    with pytest.raises(DomainError):
        bf.bound_functions("nope", 1.0, P)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(0.0, 50.0))
def test_u_tilde_clamps(x):
    e2 = math.e**2
    ref = math.exp(-P.mu * max(x, e2) / math.log(max(x, e2)) ** 2)
    assert bf.u_tilde(x, P.mu) == pytest.approx(ref, rel=1e-12)


def test_g2_continuity_region():
    z = bf.G2_THRESHOLD
    assert bf.G2(z, 1.0) == 7354.0
    above = bf.G2(z + 1.0, 1.0)
    ref = 130 * math.e**2 * (z + 1) ** 10 * math.exp(-(2 / 7) * (z + 1) / math.log(z + 1) ** 2)
    assert above == pytest.approx(ref, rel=1e-12)


def test_assemble_shape():
    lat = LatticeSpec(1, 40)
    curve = bf.bound_curve(range(1, 16), 0, 1, 0.5, lat, P)
    vals = [c.value for c in curve]
    assert all(v >= 0 for v in vals)
    peak = int(np.argmax(vals))
    tail = vals[peak:]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(tail, tail[1:]))


def test_telescoping_zero_time():
    H = paper_chain(3)
    O = QOperator(np.diag([1.0, -1.0]), (0,), True)
    assert telescoping_norm(O, 0, 0, 1, 0.0, 0.0, H) == pytest.approx(0.0, abs=1e-14)


def test_telescoping_paper_chain_decay():
    H = paper_chain(4)
    O = QOperator(np.array([[0.0, 1.0], [1.0, 0.0]]), (0,), True)
    rows = telescoping_curve(O, 0, 0, [1, 2, 3], [0.5], 0.0, H)
    curve = decay_curve(rows)
    assert curve[3] < curve[1]
    assert all(v <= 2 + 1e-12 for v in curve.values())


def test_telescoping_toric_commuting():
    H = build_model("ToricCode(2,2)")
    u = next(i for i, d in enumerate(H.hilbert.site_dims) if d == 2)
    O = QOperator(np.array([[0.0, 1.0], [1.0, 0.0]]), (u,), True)
    # the evolved X only touches plaquettes next to its edge; larger shells add
    # commuting terms and leave it unchanged
    assert telescoping_norm(O, u, 0, 3, 1.3, 0.0, H) <= 1e-10
