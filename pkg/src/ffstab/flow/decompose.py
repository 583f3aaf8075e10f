"""Transformed perturbation X = U^dagger H_s U - H_0 and its block decompositions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .. import qop
from ..conditions import tqo_from_basis
from ..errors import CommutationError, DecompositionError
from ..lattice import ball, covering_radius
from ..models import HamiltonianSpec, PerturbationSpec
from ..qop import HilbertSpec, QOperator
from ..spectral import region_projector
from .spectral_flow import FlowResult

COMMUTATOR_TOL = 1e-8
DENSE_NORM_LIMIT = 1024
DECOMP_FAIL = 1e-6
NORM_RTOL = 1e-10

Apply = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# norms of operators given only by their action


def apply_norm(apply: Apply, dim: int, hermitian: bool = True, adjoint: Apply | None = None,
               tol: float = NORM_RTOL) -> float:
    """Operator norm of a linear map on C^dim given by ``apply`` on column blocks.

    Non-Hermitian maps are measured through the Hermitian dilation
    [[0, A], [A^dagger, 0]], whose spectrum is +-sigma(A); unlike the Gram
    route this keeps tiny norms accurate to roundoff.
    """
    if dim <= DENSE_NORM_LIMIT:
        A = apply(np.eye(dim, dtype=complex))
        return qop.opnorm(A, hermitian=hermitian)
    if hermitian:
        op = spla.LinearOperator((dim, dim), matvec=lambda v: apply(v.reshape(dim, 1)).ravel(),
                                 dtype=complex)
        return qop.opnorm(op, hermitian=True, tol=tol)
    if adjoint is None:
        raise ValueError("non-Hermitian norms need the adjoint action")

    def dil(v):
        x, y = v[:dim].reshape(dim, 1), v[dim:].reshape(dim, 1)
        return np.concatenate([apply(y).ravel(), adjoint(x).ravel()])

    op = spla.LinearOperator((2 * dim, 2 * dim), matvec=dil, dtype=complex)
    return qop.opnorm(op, hermitian=True, tol=tol)


# ---------------------------------------------------------------------------
# transformed perturbation


@dataclass
class TransformedPerturbation:
    s: float
    g: int
    Q0: np.ndarray
    X: np.ndarray
    c: float
    E0_check: float
    commutator: float
    reconstruction: float
    WP0: float
    delta_norm: float
    W_norm: float
    shells: dict = field(default_factory=dict)
    shell_norms: dict = field(default_factory=dict)

    def W_apply(self, M: np.ndarray) -> np.ndarray:
        """(1 - P0)(X - c)(1 - P0) M without forming W."""
        Q = self.Q0
        M1 = M - Q @ (Q.conj().T @ M)
        Y = self.X @ M1 - self.c * M1
        return Y - Q @ (Q.conj().T @ Y)

    def W(self) -> np.ndarray:
        return self.W_apply(np.eye(self.X.shape[0], dtype=complex))

    def Delta(self) -> np.ndarray:
        Q = self.Q0
        d = Q.conj().T @ self.X @ Q - self.c * np.eye(self.g)
        return Q @ d @ Q.conj().T


def _dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def transformed_matrix(H: HamiltonianSpec, V: PerturbationSpec | None, s: float,
                       flow: FlowResult) -> np.ndarray:
    """Dense X = U^dagger H_s U - H_0 using the low-rank form of U."""
    k = flow.index(s)
    hs = H.hilbert
    B = flow.basis
    K = flow.reduced[k] - np.eye(B.shape[1])
    H0 = H.matrix()
    Hs = H0 if V is None or s == 0 else H0 + s * V.matrix(hs)
    Y = np.asarray(Hs @ B)
    X = np.zeros((hs.dim, hs.dim), dtype=complex)
    if V is not None and s != 0:
        X += s * _dense(V.matrix(hs))
    X += B @ (K.conj().T @ Y.conj().T)
    X += (Y @ K) @ B.conj().T
    X += B @ (K.conj().T @ (B.conj().T @ Y) @ K) @ B.conj().T
    return 0.5 * (X + X.conj().T)


def transform_decompose(H: HamiltonianSpec, V: PerturbationSpec | None, s: float, flow: FlowResult,
                        tol: float = COMMUTATOR_TOL) -> TransformedPerturbation:
    """X = W + Delta + c(X) 1 with its audits."""
    X = transformed_matrix(H, V, s, flow)
    Q0 = flow.band(0)
    g = Q0.shape[1]
    XQ = X @ Q0
    blk = Q0.conj().T @ XQ
    c = float(np.trace(blk).real / g)
    off = XQ - Q0 @ blk
    comm = float(np.linalg.norm(off, 2))
    if comm > tol:
        raise CommutationError(f"|[X, P0]| = {comm:.3e} above {tol}")
    Qs = flow.band(flow.index(s))
    H0 = H.matrix()
    Hs = H0 if V is None or s == 0 else H0 + s * V.matrix(H.hilbert)
    e_s = float(np.trace(Qs.conj().T @ (Hs @ Qs)).real / g)
    e_0 = float(np.trace(Q0.conj().T @ (H0 @ Q0)).real / g)
    tp = TransformedPerturbation(s, g, Q0, X, c, abs(c - (e_s - e_0)), comm, 0.0, 0.0, 0.0, 0.0)
    dim = X.shape[0]
    # X - W - Delta - c 1 = (1-P0) X P0 + P0 X (1-P0); measured, not assumed
    Delta = tp.Delta()

    def resid(M):
        return X @ M - tp.W_apply(M) - Delta @ M - c * M

    tp.reconstruction = apply_norm(resid, dim)
    tp.WP0 = float(np.linalg.norm(tp.W_apply(Q0), 2))
    tp.delta_norm = qop.opnorm(blk - c * np.eye(g), hermitian=True)
    tp.W_norm = apply_norm(tp.W_apply, dim)
    return tp


# ---------------------------------------------------------------------------
# localisation


def localize(X: QOperator, u, H: HamiltonianSpec) -> list[QOperator]:
    """Conditional-expectation shells X_u(r) = E_{b_u(r)}(X) - E_{b_u(r-1)}(X)."""
    hs = H.hilbert
    R = covering_radius(H.lattice)
    shells, prev = [], None
    full = tuple(X.support)
    for r in range(R + 1):
        region = ball(u, r, H.lattice).sites
        cur = qop.conditional_expectation(X, region, hs)
        cur = qop.expand(cur, full, hs, sparse=False)
        if prev is None:
            piece = cur.dense()
        else:
            piece = cur.dense() - prev
        prev = cur.dense()
        keep = tuple(s for s in full if s in region)
        shells.append(_restrict(piece, full, keep, hs))
    return shells


def _restrict(M: np.ndarray, support: tuple, keep: tuple, hs: HilbertSpec) -> QOperator:
    """Write an operator of the form A ⊗ 1 on ``support`` as A on ``keep``."""
    rest = [s for s in support if s not in keep]
    d = hs.sub_dim(rest)
    A = qop.partial_trace(M, keep, hs, support).matrix / d
    return QOperator(A, keep, True)


@dataclass
class AnchorSplit:
    """X = sum_u sum_r X_u(r) with each Pauli-type string assigned to one anchor."""

    coeffs: np.ndarray
    labels: np.ndarray
    table: dict
    R: int

    def anchors(self) -> list[int]:
        return sorted({u for (u, r) in self.table})

    def shell(self, u: int, r: int, H: HamiltonianSpec) -> QOperator:
        hs = H.hilbert
        region = hs.active(ball(u, r, H.lattice).sites)
        key = self.table.get((u, r))
        if key is None:
            return QOperator(np.zeros((hs.sub_dim(region),) * 2, dtype=complex), region, True)
        C = np.where(self.labels == key, self.coeffs, 0.0)
        active = hs.active(range(hs.n_sites))
        idx = tuple(slice(None) if s in region else 0 for s in active)
        Cr = C[idx]
        outside = [s for s in active if s not in region]
        scale = float(np.prod([1.0 / np.sqrt(hs.site_dims[s]) for s in outside]))
        M = qop.from_string_basis(Cr, region, hs) * scale
        return QOperator(0.5 * (M + M.conj().T), region, True)


def anchor_split(X: np.ndarray, H: HamiltonianSpec) -> AnchorSplit:
    """Assign each operator string to the site minimising its largest distance.

    Ties go to the lowest site index and the radius is that distance. The
    identity string goes to site 0 with radius 0.
    """
    hs = H.hilbert
    lat = H.lattice
    active = hs.active(range(hs.n_sites))
    n = len(active)
    Xa = np.asarray(X).reshape(hs.dim, hs.dim)
    C = qop.to_string_basis(Xa, active, hs)
    D = lat.distance_matrix[np.ix_(active, list(lat.sites()))]
    masks = np.arange(2**n)
    bits = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    dmax = np.where(bits[:, :, None], D[None, :, :], -1).max(axis=1)
    centre = np.argmin(dmax, axis=1)
    radius = dmax[np.arange(2**n), centre]
    centre[0], radius[0] = 0, 0
    table, code = {}, np.empty(2**n, dtype=np.int32)
    for m in range(2**n):
        key = (int(centre[m]), int(radius[m]))
        code[m] = table.setdefault(key, len(table))
    supp = np.zeros(C.shape, dtype=np.int64)
    for k in range(n):
        shape = [1] * n
        shape[k] = C.shape[k]
        supp += (np.arange(C.shape[k]) != 0).reshape(shape).astype(np.int64) << k
    return AnchorSplit(C, code[supp], table, covering_radius(lat))


def shell_expectation(op: QOperator, Q0: np.ndarray, hs: HilbertSpec) -> float:
    """c(O) = Tr(O P0) / Tr P0 for a local O."""
    g = Q0.shape[1]
    full = tuple(range(hs.n_sites))
    F, _ = qop.front_factor(Q0, op.support, full, hs)
    rho = F @ F.conj().T / g
    return float(np.trace(op.dense() @ rho).real)


# ---------------------------------------------------------------------------
# E_m / Y / Z blocks


@dataclass
class ProjAction:
    """P_{b_u(m)} acting on full-space column blocks."""

    kind: str
    hs: HilbertSpec
    data: object = None

    def __call__(self, M: np.ndarray) -> np.ndarray:
        if self.kind == "one":
            return M
        if self.kind == "zero":
            return np.zeros_like(M)
        if self.kind == "global":
            Q = self.data
            return Q @ (Q.conj().T @ M)
        return self.data.apply(M, tuple(range(self.hs.n_sites)), self.hs)


def anchor_projectors(H: HamiltonianSpec, u: int, Q0: np.ndarray, L: int,
                      cache: dict | None = None) -> list[ProjAction]:
    """[P_{b_u(0)} = 1, P_{b_u(1)}, ..., P_{b_u(L)}, P_{b_u(L+1)} = 0]."""
    hs = H.hilbert
    n = hs.n_sites
    out = [ProjAction("one", hs)]
    glob = ProjAction("global", hs, Q0)
    for m in range(1, L + 1):
        B = ball(u, m, H.lattice)
        if len(B) == n:
            out.append(glob)
            continue
        out.append(ProjAction("local", hs, region_projector(H, B.sorted_sites, cache=cache)))
    out.append(ProjAction("zero", hs))
    return out


def _local_action(op: QOperator, hs: HilbertSpec) -> Apply:
    full = tuple(range(hs.n_sites))
    A = op.dense()
    return lambda M: qop.apply_left(A, op.support, M, full, hs)


@dataclass
class WDecomposition:
    u: int
    L: int
    Y: dict
    Z: dict
    norms_Y: dict
    norms_Z: dict
    audits: dict

    def w(self) -> dict:
        """w_u(r) = |Y(r)| (+ |Z(r)| for odd r), w_u(L) = |Y(L)| + |Z(L)|."""
        out = {}
        for r in range(1, self.L + 1):
            v = self.norms_Y.get(r, 0.0)
            if r % 2 == 1 or r == self.L:
                v += self.norms_Z.get(r, 0.0)
            out[r] = v
        return out


def w_decomposition(shells: dict[int, QOperator], projectors: Sequence[ProjAction], hs: HilbertSpec,
                    L: int, u: int = 0, audit: bool = True) -> WDecomposition:
    """Y_u(j) and Z_u blocks from centred shells X~_u(q) and nested projectors.

    ``projectors[m]`` is P_{b_u(m)} for m = 0..L+1. Blocks are kept as
    actions on column blocks and measured without forming matrices above
    the dense-norm limit.
    """
    dim = hs.dim
    P = list(projectors)
    if len(P) != L + 2:
        raise DecompositionError("need projectors for m = 0..L+1")
    nz = [m for m in range(1, L + 1) if P[m - 1] is not P[m]]
    locs = {q: _local_action(op, hs) for q, op in shells.items()}

    def E(m, M):
        return P[m - 1](M) - P[m](M)

    def S(l, M):
        out = np.zeros_like(M)
        for q, f in locs.items():
            if q <= l:
                out = out + f(M)
        return out

    pairs: dict[int, list] = {}
    for p in nz:
        for r in nz:
            pairs.setdefault(min(p + r, L), []).append((p, r, max(p, r) // 2))

    def make_Y(j):
        plist = pairs[j]

        def act(M):
            M = M.astype(complex)
            ER = {r: E(r, M) for r in {r for _, r, _ in plist}}
            out = np.zeros_like(M)
            for p, r, l in plist:
                out += E(p, S(l, ER[r]))
            return out
        return act

    def sandwich(Pm, f):
        def act(M):
            M = M.astype(complex)
            M1 = M - Pm(M)
            Y = f(M1)
            return Y - Pm(Y)
        return act

    Y = {j: make_Y(j) for j in sorted(pairs)}
    Z = {}
    for q, f in locs.items():
        if q < 1:
            continue
        if 2 * q <= L:
            Z[2 * q - 1] = sandwich(P[2 * q - 1], f)
    tail = [f for q, f in locs.items() if 2 * q > L]
    if tail:
        Z[L] = sandwich(P[L], lambda M: sum(f(M) for f in tail))
    norms_Y = {j: apply_norm(a, dim) for j, a in Y.items()}
    norms_Z = {j: apply_norm(a, dim) for j, a in Z.items()}
    audits = {}
    if audit:
        audits = _audit(Y, Z, P, nz, locs, L, dim)
        worst = max(audits["E_complete"], audits["E_orthogonal"])
        if worst > DECOMP_FAIL:
            raise DecompositionError(f"E_m family defect {worst:.2e}")
    return WDecomposition(u, L, Y, Z, norms_Y, norms_Z, audits)


def _audit(Y, Z, P, nz, locs, L, dim) -> dict:
    def E(m, M):
        return P[m - 1](M) - P[m](M)

    def complete(M):
        return sum(E(m, M) for m in range(1, L + 2)) - M

    out = {"E_complete": apply_norm(complete, dim)}
    orth = 0.0
    live = set(nz) | {L + 1}
    for m in range(1, L + 2):
        for n in range(m, L + 2):
            if m == n:
                orth = max(orth, apply_norm(lambda M, m=m: E(m, E(m, M)) - E(m, M), dim))
            elif m in live and n in live:
                orth = max(orth, apply_norm(lambda M, m=m, n=n: E(m, E(n, M)), dim, False,
                                            lambda M, m=m, n=n: E(n, E(m, M))))
    out["E_orthogonal"] = orth
    ann = 0.0
    for blocks, idx in ((Y, lambda j: min(j, L)), (Z, lambda j: j)):
        for j, act in blocks.items():
            Pj = P[idx(j)]
            ann = max(ann, apply_norm(lambda M, a=act, Pj=Pj: a(Pj(M)), dim, False,
                                      lambda M, a=act, Pj=Pj: Pj(a(M))))
    out["annihilation"] = ann
    P0 = P[L]

    def recon(M):
        M = M.astype(complex)
        tot = sum(a(M) for a in Y.values()) + sum(a(M) for a in Z.values())
        M1 = M - P0(M)
        T = sum(f(M1) for f in locs.values())
        return tot - (T - P0(T))

    out["reconstruction"] = apply_norm(recon, dim)
    return out


def centred_shells(split: AnchorSplit, u: int, H: HamiltonianSpec, Q0: np.ndarray) -> tuple[dict, dict]:
    """X~_u(q) = X_u(q) - c(X_u(q)) 1 together with |X_u(q)|."""
    hs = H.hilbert
    shells, norms = {}, {}
    for q in range(split.R + 1):
        if (u, q) not in split.table:
            continue
        op = split.shell(u, q, H)
        norms[q] = qop.opnorm(op.dense(), hermitian=True)
        c = shell_expectation(op, Q0, hs)
        shells[q] = QOperator(op.dense() - c * np.eye(op.dim), op.support, True)
    return shells, norms


# ---------------------------------------------------------------------------
# Delta_u against its Local-TQO bound


@dataclass
class DeltaBoundReport:
    u: int
    measured: float
    rhs: float
    terms: list
    L_star: int

    @property
    def passed(self) -> bool:
        return self.measured <= self.rhs + 1e-9


def delta_bound_check(measured: float, shell_norms: dict[int, float], delta0: dict[int, float],
                      L_star: int, u: int = 0) -> DeltaBoundReport:
    """|Delta_u| <= sum_{r <= L*} |X_u(r)| Delta_0(L - r) + 2 sum_{r > L*} |X_u(r)|.

    ``shell_norms[r]`` are the measured |X_u(r)| (J f_1(r) in the bound) and
    ``delta0[r]`` the defect of the region b_u(r) against the global ground
    space, i.e. Delta_0 at distance L - r.
    """
    terms, rhs = [], 0.0
    for r in sorted(shell_norms):
        n = shell_norms[r]
        if r <= L_star:
            t = n * delta0.get(r, 2.0)
        else:
            t = 2.0 * n
        terms.append((r, n, delta0.get(r), t))
        rhs += t
    return DeltaBoundReport(u, float(measured), float(rhs), terms, L_star)


def global_delta0(H: HamiltonianSpec, u: int, r: int, Q0: np.ndarray, seed: int = 0,
                  memory_cap: int = 2**26) -> tuple[float, str]:
    """Delta_0 of b_u(r) against the global ground space (trivial bound 2 if too large)."""
    hs = H.hilbert
    region = hs.active(ball(u, r, H.lattice).sites)
    g = Q0.shape[1]
    dk = hs.sub_dim(region)
    if g * g * dk * dk > memory_cap:
        return 2.0, "trivial"
    sig = qop.cross_marginals(Q0, region, hs, tuple(range(hs.n_sites)))
    op, _ = tqo_from_basis(sig, seed=seed, labels=("global", u, r))
    return op, "operator"


def anchor_delta(split: AnchorSplit, u: int, H: HamiltonianSpec, Q0: np.ndarray) -> float:
    """|P0 X~_u P0| for the full anchored piece X_u = sum_q X_u(q)."""
    hs = H.hilbert
    full = tuple(range(hs.n_sites))
    g = Q0.shape[1]
    acc = np.zeros((g, g), dtype=complex)
    for q in range(split.R + 1):
        if (u, q) not in split.table:
            continue
        op = split.shell(u, q, H)
        AQ = qop.apply_left(op.dense(), op.support, Q0.astype(complex), full, hs)
        acc += Q0.conj().T @ AQ
    acc -= np.trace(acc) / g * np.eye(g)
    return qop.opnorm(acc, hermitian=True)
