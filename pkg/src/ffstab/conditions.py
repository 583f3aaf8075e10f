"""Local topological order (TQO) profiles, their consequences, and the area law.

For a region A = b_u(r) and its enlargement A(l) = b_u(r + l), the TQO
defect is

    Delta_0(l) = sup_{|O_A| <= 1} | P (O_A - c(O_A)) P |,   P = P_{A(l)},

with c(O) = Tr(P O) / Tr(P). Writing sigma_ij = Tr_{A(l) minus A} |e_j><e_i|
for an orthonormal basis {e_i} of the range of P, the supremum equals

    max_{|x| = |y| = 1} | sum_ij conj(x_i) y_j sigma_ij - (x^dagger y) sigma_bar |_1,

a trace norm of a combination of cross-marginals, which is what
:func:`tqo_delta` maximises.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qop
from .errors import EmptyGroundspaceError, Ell0UndefinedError
from .lattice import ball
from .models import HamiltonianSpec
from .rng import stream
from .spectral import lowest_band, region_projector

TQO_RESTARTS = 32
TQO_TOL = 1e-10
ZERO_TOL = 1e-8


# ---------------------------------------------------------------------------
# trace-norm maximisation


def _polar_unitary(K: np.ndarray) -> np.ndarray:
    U, _, Vh = np.linalg.svd(K)
    return U @ Vh


def _objective(sig: np.ndarray, sbar: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    K = np.einsum("i,j,ijab->ab", x.conj(), y, sig) - np.vdot(x, y) * sbar
    return float(np.linalg.svd(K, compute_uv=False).sum()), K


def _ascent(sig, sbar, x, y, tol: float, max_iter: int = 500) -> float:
    """Projected gradient ascent on the product of unit spheres.

    For fixed polar factor Phi of K(x, y) the objective is Re x^dagger M y with
    M_ij = Tr(Phi^dagger (sigma_ij - delta_ij sigma_bar)); its gradient step is
    followed by renormalisation, with a backtracking line search over the step
    length (the first trial step is the full singular-vector update).
    """
    f, K = _objective(sig, sbar, x, y)
    g = sig.shape[0]
    eye = np.eye(g)
    for _ in range(max_iter):
        Phi = _polar_unitary(K)
        M = np.einsum("ab,ijab->ij", Phi.conj(), sig - eye[:, :, None, None] * sbar[None, None])
        gx, gy = M @ y, M.conj().T @ x
        improved = False
        for t in (math.inf, 8.0, 2.0, 0.5, 0.125, 0.03125):
            if math.isinf(t):
                U, _, Vh = np.linalg.svd(M)
                xn, yn = U[:, 0], Vh[0].conj()
            else:
                xn, yn = x + t * gx, y + t * gy
            nx, ny = np.linalg.norm(xn), np.linalg.norm(yn)
            if nx == 0 or ny == 0:
                continue
            xn, yn = xn / nx, yn / ny
            fn, Kn = _objective(sig, sbar, xn, yn)
            if fn > f + tol:
                x, y, f, K = xn, yn, fn, Kn
                improved = True
                break
        if not improved:
            break
    return f


def tqo_from_basis(sig: np.ndarray, restarts: int = TQO_RESTARTS, seed: int = 0,
                   labels: tuple = (), tol: float = TQO_TOL) -> tuple[float, float]:
    """Operator-method and reduced-state estimates from cross-marginals."""
    g = sig.shape[0]
    if g == 0:
        raise EmptyGroundspaceError("ground projector has rank zero")
    if g == 1:
        return 0.0, 0.0
    diag = np.array([sig[i, i] for i in range(g)])
    sbar = diag.mean(axis=0)
    state = 0.0
    for i in range(g):
        for j in range(i + 1, g):
            state = max(state, 0.5 * float(np.linalg.svd(diag[i] - diag[j], compute_uv=False).sum()))
    best = 0.0
    for k in range(restarts):
        rng = stream(seed, "conditions", "tqo", *labels, k)
        x = rng.standard_normal(g) + 1j * rng.standard_normal(g)
        y = rng.standard_normal(g) + 1j * rng.standard_normal(g)
        best = max(best, _ascent(sig, sbar, x / np.linalg.norm(x), y / np.linalg.norm(y), tol))
    # the basis-pair witnesses are feasible points too
    for i in range(g):
        for j in range(g):
            x, y = np.eye(g)[i].astype(complex), np.eye(g)[j].astype(complex)
            best = max(best, _ascent(sig, sbar, x, y, tol, max_iter=1))
    return min(best, 2.0), min(state, 2.0)


def _tqo_projector(H: HamiltonianSpec, u, r: int, ell: int, eps: float, cache):
    region = ball(u, r + ell, H.lattice).sorted_sites
    P = region_projector(H, region, eps, cache=cache)
    return region, P


def tqo_delta(H: HamiltonianSpec, u, r: int, ell: int, method: str = "operator",
              eps: float = 0.0, restarts: int = TQO_RESTARTS, seed: int = 0,
              cache: dict | None = None) -> float:
    """Delta_0(ell) for A = b_u(r) by the operator or reduced-state method."""
    op, st = _tqo_row(H, u, r, ell, eps, restarts, seed, cache)
    return op if method == "operator" else st


def _tqo_row(H, u, r, ell, eps, restarts, seed, cache):
    region, P = _tqo_projector(H, u, r, ell, eps, cache)
    A = ball(u, r, H.lattice).sorted_sites
    sig = qop.cross_marginals(P.basis, A, H.hilbert, region)
    return tqo_from_basis(sig, restarts, seed, (int(u), r, ell))


# ---------------------------------------------------------------------------
# profiles


@dataclass
class TqoRow:
    ell: int
    delta_op: float
    delta_state: float
    method: str
    restarts: int
    rank: int = 0


@dataclass
class TqoProfile:
    u: int
    r: int
    L_star: int
    rows: list[TqoRow]
    decay_class: str = "other"
    ell0: int | None = None
    mu: float | None = None
    monotone_flags: list[int] = field(default_factory=list)
    eps: float = 0.0

    def delta(self, ell: int) -> float:
        for row in self.rows:
            if row.ell == ell:
                return row.delta_op
        raise KeyError(ell)

    @property
    def passes(self) -> bool:
        return self.decay_class.startswith(("identically-zero", "exponential"))


def classify_decay(values: Sequence[float], tol: float = ZERO_TOL) -> tuple[str, int | None, float | None]:
    """Decay class of a TQO profile (values indexed from ell = 1)."""
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n == 0:
        return "other", None, None
    if v[-1] <= tol:
        i = n - 1
        while i > 0 and v[i - 1] <= tol:
            i -= 1
        return "identically-zero", i + 1, None
    if np.all(np.abs(v - v[0]) <= tol):
        return "constant", None, None
    if np.all(v > tol) and np.all(np.diff(v) < 0) and n >= 3:
        ell = np.arange(1, n + 1)
        slope, icpt = np.polyfit(ell, np.log(v), 1)
        fit = np.exp(icpt + slope * ell)
        if np.max(np.abs(np.log(fit / v))) < 0.5:
            return "exponential", None, float(-slope)
    return "other", None, None


def tqo_profile(H: HamiltonianSpec, u, r: int, L_star: int | None = None, eps: float = 0.0,
                restarts: int = TQO_RESTARTS, seed: int = 0, threads: int = 1,
                cache: dict | None = None) -> TqoProfile:
    """Delta_0(ell) for ell = 1 .. min(L - r, L*) around A = b_u(r).

    Rows whose enlarged region already covers the lattice are still
    evaluated (they use the global ground space).
    """
    L = H.lattice.L
    if L_star is None:
        L_star = math.ceil(L / 2)
    top = max(1, min(L - r, L_star))
    cache = {} if cache is None else cache

    def row(ell):
        op, st = _tqo_row(H, u, r, ell, eps, restarts, seed, cache)
        rank = cache[(frozenset(ball(u, r + ell, H.lattice).sites), float(eps), "ball")].rank
        return TqoRow(ell, op, st, "operator", restarts, rank)

    ells = list(range(1, top + 1))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(row, ells))
    else:
        rows = [row(e) for e in ells]
    vals = [x.delta_op for x in rows]
    cls, ell0, mu = classify_decay(vals)
    flags = [rows[i + 1].ell for i in range(len(rows) - 1) if vals[i + 1] > vals[i] + ZERO_TOL]
    return TqoProfile(int(u), r, L_star, rows, cls, ell0, mu, flags, eps)


# ---------------------------------------------------------------------------
# consequences of small Delta_0


@dataclass
class CorollaryReport:
    samples: int
    violations: list[dict]
    max_norm_gap: float
    max_projector_gap: float
    max_pair_excess: float

    @property
    def passed(self) -> bool:
        return not self.violations


def _ground_basis(H: HamiltonianSpec) -> np.ndarray:
    return lowest_band(H.matrix()).ground_basis()


def tqo_corollary_check(H: HamiltonianSpec, profile: TqoProfile, n_samples: int = 100,
                        seed: int = 0, slack: float = 1e-9, cache: dict | None = None,
                        Q0: np.ndarray | None = None) -> CorollaryReport:
    """Audit the inequalities that follow from the TQO profile.

    For seeded random O_A with |O_A| = 1 and each profiled ell:
      | |O P_{A(l)}| - |O P_0| | <= 2 sqrt(Delta_0),
      | P_{A(l)} - P_{A(l)} P_A | <= sqrt(3 Delta_0),
      max_ij |rho_i - rho_j|_1 <= 2 Delta_0.
    """
    hs = H.hilbert
    lat = H.lattice
    u, r = profile.u, profile.r
    A = ball(u, r, lat).sorted_sites
    cache = {} if cache is None else cache
    Q0 = _ground_basis(H) if Q0 is None else Q0
    full = H.all_sites
    PA = region_projector(H, A, profile.eps, cache=cache)
    dA = hs.sub_dim(A)
    rng = stream(seed, "conditions", "corollary", u, r)
    ops = []
    for _ in range(n_samples):
        O = rng.standard_normal((dA, dA)) + 1j * rng.standard_normal((dA, dA))
        ops.append(O / qop.opnorm(O))
    viol = []
    mng = mpg = mpe = 0.0
    for row in profile.rows:
        region, P = _tqo_projector(H, u, r, row.ell, profile.eps, cache)
        d0 = row.delta_op
        # projector inequality (independent of O)
        Y = PA.apply(P.basis, region, hs, complement=True)
        pg = float(np.linalg.svd(Y, compute_uv=False)[0]) if Y.size else 0.0
        mpg = max(mpg, pg)
        if pg > math.sqrt(3 * d0) + slack:
            viol.append({"ell": row.ell, "kind": "projector", "lhs": pg, "rhs": math.sqrt(3 * d0)})
        sig = qop.cross_marginals(P.basis, A, hs, region)
        g = sig.shape[0]
        pair = 0.0
        for i in range(g):
            for j in range(i + 1, g):
                pair = max(pair, float(np.linalg.svd(sig[i, i] - sig[j, j], compute_uv=False).sum()))
        mpe = max(mpe, pair - 2 * d0)
        if pair > 2 * d0 + slack:
            viol.append({"ell": row.ell, "kind": "pair", "lhs": pair, "rhs": 2 * d0})
        for k, O in enumerate(ops):
            a = np.linalg.norm(qop.apply_left(O, A, P.basis, region, hs), 2)
            b = np.linalg.norm(qop.apply_left(O, A, Q0, full, hs), 2)
            gap = abs(a - b)
            mng = max(mng, gap)
            if gap > 2 * math.sqrt(d0) + slack:
                viol.append({"ell": row.ell, "kind": "norm", "sample": k, "lhs": gap, "rhs": 2 * math.sqrt(d0)})
    return CorollaryReport(n_samples, viol, mng, mpg, mpe)


# ---------------------------------------------------------------------------
# area law


@dataclass
class AreaLawReport:
    region: tuple[int, ...]
    entropy: float
    ell0: int
    bound: float
    c_d: float
    passed: bool
    schmidt_residual: float
    schmidt_ok: bool


def default_cd(d: int) -> float:
    return 2 * 3 ** (d - 1) + 1


def ell0_of(profile: TqoProfile) -> int:
    for row in profile.rows:
        if row.delta_op <= row.ell / (1 + profile.r):
            return row.ell
    raise Ell0UndefinedError("no profiled ell satisfies Delta_0(ell) <= ell / (1 + r)")


def schmidt_residual(H: HamiltonianSpec, psi: np.ndarray, region: Sequence[int], tol: float = 1e-12) -> float:
    """Largest |H_region v| over Schmidt vectors v of psi on ``region``."""
    hs = H.hilbert
    full = H.all_sites
    region = tuple(sorted(region))
    rest = [s for s in full if s not in region]
    if not rest:
        return 0.0
    X, _ = qop.front_factor(psi.reshape(-1, 1), region, full, hs)
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    U = U[:, s > tol * max(s[0], 1e-300)]
    HB = H.region_hamiltonian(region, sparse=False).dense()
    R = HB @ U
    return float(np.linalg.norm(R, axis=0).max(initial=0.0))


def area_law_check(H: HamiltonianSpec, psi: np.ndarray, profile: TqoProfile, c_d: float | None = None,
                   tol: float = 1e-9) -> AreaLawReport:
    """Compare S(rho_A) with c_d ln(D) (1 + r)^(d - 1) l_0 for A = b_u(r)."""
    lat = H.lattice
    A = ball(profile.u, profile.r, lat).sorted_sites
    rho = qop.partial_trace(psi, A, H.hilbert)
    S = qop.von_neumann_entropy(rho)
    l0 = ell0_of(profile)
    c = default_cd(lat.d) if c_d is None else c_d
    D = max(H.hilbert.site_dims)
    bound = c * math.log(D) * (1 + profile.r) ** (lat.d - 1) * l0
    res = 0.0
    for row in profile.rows:
        region = ball(profile.u, profile.r + row.ell, lat).sorted_sites
        res = max(res, schmidt_residual(H, psi, region))
    return AreaLawReport(A, S, l0, bound, c, S <= bound + tol, res, res <= tol)
