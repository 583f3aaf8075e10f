"""Telescoping differences of Heisenberg evolutions under nested truncations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .. import qop
from ..errors import CapacityError
from ..lattice import ball
from ..models import HamiltonianSpec, PerturbationSpec, truncate_hamiltonian
from ..qop import DENSE_CAP, QOperator


@dataclass
class _Eig:
    support: tuple
    E: np.ndarray
    V: np.ndarray

    def evolve(self, O: np.ndarray, t: float) -> np.ndarray:
        """exp(iHt) O exp(-iHt), O already on ``support``."""
        ph = np.exp(1j * self.E * t)
        A = self.V.conj().T @ O @ self.V
        return self.V @ (ph[:, None] * A * ph.conj()[None, :]) @ self.V.conj().T


def _truncated_eig(H, V, s, u, q, cache) -> _Eig:
    key = (u, q, s)
    if cache is not None and key in cache:
        return cache[key]
    region = ball(u, q, H.lattice).sorted_sites
    if H.hilbert.sub_dim(region) > DENSE_CAP:
        raise CapacityError(f"truncated Hamiltonian on b_{u}({q}) has dimension "
                            f"{H.hilbert.sub_dim(region)} above {DENSE_CAP}")
    Hq = truncate_hamiltonian(H, V, s, u, q, sparse=False)
    E, W = sla.eigh(Hq.dense(), driver="evd")
    out = _Eig(tuple(Hq.support), E, W)
    if cache is not None:
        cache[key] = out
    return out


def telescoping_norm(O: QOperator, u, r: int, rp: int, t: float, s: float,
                     H: HamiltonianSpec, V: PerturbationSpec | None = None,
                     cache: dict | None = None) -> float:
    """|tau_t^{H(r+r')}(O) - tau_t^{H(r+r'-1)}(O)| with H(q) the truncation to b_u(q).

    For r' = 0 the second evolution is absent and the value is |O|.
    """
    hs = H.hilbert
    outer = _truncated_eig(H, V, s, u, r + rp, cache)
    A = qop.expand(O, outer.support, hs, sparse=False).dense()
    big = outer.evolve(A, t)
    if rp == 0:
        return qop.opnorm(big)
    inner = _truncated_eig(H, V, s, u, r + rp - 1, cache)
    small = inner.evolve(qop.expand(O, inner.support, hs, sparse=False).dense(), t)
    small = qop.expand(QOperator(small, inner.support), outer.support, hs, sparse=False).dense()
    return qop.opnorm(big - small)


def telescoping_curve(O: QOperator, u, r: int, rp_values: Sequence[int], t_grid: Sequence[float],
                      s: float, H: HamiltonianSpec, V: PerturbationSpec | None = None) -> list[tuple]:
    """Rows (r', t, delta) over the grid; callers reduce by max over t."""
    cache: dict = {}
    rows = []
    for rp in rp_values:
        for t in t_grid:
            rows.append((int(rp), float(t), telescoping_norm(O, u, r, rp, t, s, H, V, cache)))
    return rows


def decay_curve(rows: list[tuple]) -> dict[int, float]:
    out: dict[int, float] = {}
    for rp, _, d in rows:
        out[rp] = max(out.get(rp, 0.0), d)
    return out
