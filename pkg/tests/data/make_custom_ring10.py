"""Regenerate custom_ring10.json: random rank-1 complex projectors on a 10-site ring.

Each bond (u, u+1 mod 10) carries P = |v><v| for a seeded complex Gaussian v
on C^4. The result is frustration free with a two-fold ground space. Run from
the repository root with the package installed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ffstab.lattice import LatticeSpec
from ffstab.models import HamiltonianSpec, ModelTag, Term, local_op, write_custom
from ffstab.qop import HilbertSpec

L = 10
SEED = 1


def build() -> HamiltonianSpec:
    rng = np.random.default_rng(SEED)
    lat = LatticeSpec(1, L)
    hs = HilbertSpec((2,) * L)
    terms = []
    for u in range(L):
        v = rng.normal(size=4) + 1j * rng.normal(size=4)
        v /= np.linalg.norm(v)
        terms.append(Term(u, local_op(np.outer(v, v.conj()), [u, (u + 1) % L], hs), radius=1))
    return HamiltonianSpec(lat, hs, terms, ModelTag("Custom", ("ring10",)))


if __name__ == "__main__":
    write_custom(Path(__file__).with_name("custom_ring10.json"), build())
