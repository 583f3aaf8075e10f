"""Independent reference computations used to check the package.

Nothing here imports ffstab: each oracle rebuilds its object from the
defining formula with plain numpy loops or kron products.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

X = np.array([[0.0, 1.0], [1.0, 0.0]])
Z = np.array([[1.0, 0.0], [0.0, -1.0]])
I2 = np.eye(2)


def kron_chain(mats) -> np.ndarray:
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


def two_site(M4: np.ndarray, i: int, j: int, n: int) -> np.ndarray:
    """Embed a 4x4 matrix on qubits (i, j) of n by summing over its entries."""
    out = np.zeros((2**n, 2**n), dtype=complex)
    for a, b, c, d in itertools.product(range(2), repeat=4):
        coef = M4[2 * a + b, 2 * c + d]
        if coef == 0:
            continue
        ops = [I2] * n
        ops[i] = np.outer(np.eye(2)[a], np.eye(2)[c])
        ops[j] = np.outer(np.eye(2)[b], np.eye(2)[d])
        out += coef * kron_chain(ops)
    return out


def paper_chain_bond(k: int, N: int, perturbed: bool = False) -> np.ndarray:
    """4x4 bond matrix for bond k = 1..2N in the basis |00>, |01>, |10>, |11>."""
    diag = np.zeros(4)
    diag[0] = diag[3] = 1.0
    if not perturbed:
        weak = 1 if k % 2 == 0 else 2
        diag[weak] = 1.0 / (3 * N)
    return np.diag(diag)


def paper_chain_dense(N: int, perturbed: bool = False) -> np.ndarray:
    L = 2 * N
    H = np.zeros((2**L, 2**L), dtype=complex)
    for k in range(1, L + 1):
        H += two_site(paper_chain_bond(k, N, perturbed), k - 1, k % L, L)
    return H


def product_energy(bits, N: int) -> float:
    """Classical energy of a computational basis state of the paper chain."""
    L = 2 * N
    E = 0.0
    for k in range(1, L + 1):
        a, b = bits[k - 1], bits[k % L]
        E += paper_chain_bond(k, N)[2 * a + b, 2 * a + b]
    return E


def bond_local_gap(N: int) -> float:
    """gamma(1) of the paper chain by enumerating the 4 bond basis states.

    b_u(1) holds exactly one whole bond term, so H_{b_u(1)} is a single
    diagonal 4x4 bond matrix.
    """
    vals = set()
    for k in range(1, 2 * N + 1):
        M = paper_chain_bond(k, N)
        vals.add(min(M[i, i] for i in range(4) if M[i, i] > 0))
    return min(vals)


def ising_ring_dense(L: int) -> np.ndarray:
    H = np.zeros((2**L, 2**L))
    for u in range(L):
        ops = [I2] * L
        ops[u] = Z
        ops[(u + 1) % L] = Z
        H += np.eye(2**L) - kron_chain(ops)
    return H


def naive_partial_trace(psi: np.ndarray, keep, n: int) -> np.ndarray:
    """Reduced state of a qubit vector by explicit index loops."""
    keep = sorted(keep)
    rest = [i for i in range(n) if i not in keep]
    dk = 2 ** len(keep)
    rho = np.zeros((dk, dk), dtype=complex)

    def idx(kbits, rbits):
        bits = [0] * n
        for p, b in zip(keep, kbits):
            bits[p] = b
        for p, b in zip(rest, rbits):
            bits[p] = b
        return int("".join(map(str, bits)), 2) if n else 0

    for rbits in itertools.product(range(2), repeat=len(rest)):
        for a, kb in enumerate(itertools.product(range(2), repeat=len(keep))):
            for b, kb2 in enumerate(itertools.product(range(2), repeat=len(keep))):
                rho[a, b] += psi[idx(kb, rbits)] * np.conj(psi[idx(kb2, rbits)])
    return rho


def entropy(rho: np.ndarray) -> float:
    w = np.linalg.eigvalsh(rho)
    w = w[w > 1e-14]
    return float(-np.sum(w * np.log(w)))


def gf2_rank(rows) -> int:
    rows = [int("".join(map(str, r)), 2) for r in rows if any(r)]
    rank = 0
    while rows:
        pivot = max(rows)
        if pivot == 0:
            break
        rows.remove(pivot)
        top = pivot.bit_length() - 1
        rows = [r ^ pivot if (r >> top) & 1 else r for r in rows]
        rows = [r for r in rows if r]
        rank += 1
    return rank


def toric_stabilizers(L1: int, L2: int):
    """Star and plaquette supports as lists of edge indices.

    Edges are numbered 0..2*L1*L2-1: horizontal (x, y) -> 2*(x*L2+y), vertical
    -> 2*(x*L2+y)+1, with the star at vertex (x, y) touching the horizontal
    and vertical edges leaving it and those arriving from (x-1, y), (x, y-1).
    """
    def h(x, y):
        return 2 * ((x % L1) * L2 + (y % L2))

    def v(x, y):
        return 2 * ((x % L1) * L2 + (y % L2)) + 1

    stars = [[h(x, y), h(x - 1, y), v(x, y), v(x, y - 1)] for x in range(L1) for y in range(L2)]
    plaqs = [[h(x, y), h(x, y + 1), v(x, y), v(x + 1, y)] for x in range(L1) for y in range(L2)]
    return stars, plaqs


def stabilizer_entropy(L1: int, L2: int, region_edges) -> float:
    """Entropy of a toric-code ground state on a set of edges (in nats).

    S(A) = |A| - rank of the stabilizer group restricted to A, in bits, where
    the restricted group is generated by elements supported inside A.
    """
    stars, plaqs = toric_stabilizers(L1, L2)
    n = 2 * L1 * L2
    A = set(region_edges)
    # elements of the stabilizer group supported in A, by brute force over
    # the (small) group generated by each type separately
    def inside(gens):
        vecs = []
        for coeffs in itertools.product(range(2), repeat=len(gens)):
            v = [0] * n
            for c, g in zip(coeffs, gens):
                if c:
                    for e in g:
                        v[e] ^= 1
            if any(v) and all(v[e] == 0 for e in range(n) if e not in A):
                vecs.append(v)
        return gf2_rank(vecs)

    return (len(A) - inside(stars) - inside(plaqs)) * math.log(2)


def exhaustive_schedule(w: dict, gamma: dict, d: int, L: int, M_max: int) -> tuple[float, tuple]:
    """Brute-force minimum of sum_k r_k^d w^(r_k)/gamma(r_k) over schedules ending at L.

    w^(r_k) is the total weight on (r_{k-1}, r_k]; empty buckets cost nothing.
    Returns (value without the C_d factor, schedule) with fewest shells on ties.
    """
    best = (math.inf, ())
    for m in range(1, M_max + 1):
        for head in itertools.combinations(range(1, L), m - 1):
            sched = head + (L,)
            total, prev = [], 0
            for r in sched:
                bucket = sum(w.get(x, 0.0) for x in range(prev + 1, r + 1))
                if bucket:
                    total.append(math.inf if not gamma[r] > 0 else r**d * bucket / gamma[r])
                prev = r
            c = math.fsum(total)
            if c < best[0] * (1 - 1e-12):
                best = (c, sched)
    return best
