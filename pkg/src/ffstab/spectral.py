"""Eigensolvers, low-energy projectors, local gaps and gap sweeps."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import qop
from .errors import (AmbiguousGapError, AmbiguousThresholdError, CapacityError,
                     ConvergenceError, SymmetryError)
from .lattice import ball
from .models import HamiltonianSpec, PerturbationSpec, hamiltonian_at
from .qop import DENSE_CAP, HilbertSpec, QOperator
from .rng import stream

log = logging.getLogger(__name__)

FF_TOL = 1e-9
RESIDUAL_TOL = 1e-9
KRYLOV_ABOVE = 1024


CLUSTER_FLOOR = 1e-10


def cluster_tol(norm_h: float) -> float:
    return max(CLUSTER_FLOOR, 1e-12 * norm_h)


def _matrix_of(H):
    if isinstance(H, HamiltonianSpec):
        return H.matrix()
    if isinstance(H, QOperator):
        return H.matrix
    return H


def _estimate_norm(M) -> float:
    if sp.issparse(M):
        return float(abs(M).sum(axis=1).max()) if M.nnz else 0.0
    M = np.asarray(M)
    return float(np.abs(M).sum(axis=1).max(initial=0.0))


@dataclass
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    cluster_tol: float
    method: str
    norm: float

    @property
    def ground_degeneracy(self) -> int:
        E = self.eigenvalues
        return int(np.sum(E <= E[0] + self.cluster_tol))

    def ground_basis(self) -> np.ndarray:
        return self.eigenvectors[:, : self.ground_degeneracy]


def _check_hermitian(M) -> None:
    if sp.issparse(M):
        D = M - M.conj().T
        bad = abs(D).max() if D.nnz else 0.0
        scale = abs(M).max() if M.nnz else 0.0
    else:
        bad = np.abs(M - M.conj().T).max(initial=0.0)
        scale = np.abs(M).max(initial=0.0)
    if bad > 1e-12 * max(scale, 1.0):
        raise SymmetryError(f"matrix is not Hermitian (deviation {bad:.3e})")


# ---------------------------------------------------------------------------
# Krylov solver


def lanczos_lowest(A, k: int, *, seed: int = 0, tol: float = 1e-10,
                   krylov_dim: int | None = None, max_restarts: int = 60):
    """Lowest ``k`` eigenpairs by restarted Lanczos with locking.

    Each run works in the orthogonal complement of the pairs already locked,
    with full reorthogonalisation against both the locked vectors and the
    current Krylov basis, and locks every converged Ritz pair at the bottom
    of its spectrum. Degenerate copies that a single run cannot see are
    picked up by later runs; once k pairs are locked, further runs replace
    the highest locked pair until no lower state remains. Start vectors come
    from a seeded stream.
    """
    n = A.shape[0]
    if k > n:
        raise ValueError("k exceeds dimension")
    if not sp.issparse(A) and n > 1024 and np.count_nonzero(A) < 0.1 * n * n:
        A = sp.csr_matrix(A)
    dtype = np.result_type(A.dtype, np.float64)
    cplx = np.iscomplexobj(np.zeros(1, dtype))
    m = krylov_dim or min(n, max(40, 3 * k + 20))
    rng = stream(seed, "spectral", "lanczos", n, k)
    locked = np.zeros((n, 0), dtype=dtype)
    vals: list[float] = []
    scale = max(1.0, _estimate_norm(A))

    def project(w):
        for _ in range(2):
            if locked.shape[1]:
                w = w - locked @ (locked.conj().T @ w)
        return w

    def run(v):
        v = project(v)
        v = v / np.linalg.norm(v)
        room = min(m, n - locked.shape[1])
        V = np.zeros((n, room + 1), dtype=dtype)
        V[:, 0] = v
        alpha, beta = [], []
        steps = 0
        for j in range(room):
            w = project(A @ V[:, j])
            alpha.append(float(np.real(np.vdot(V[:, j], w))))
            for _ in range(2):
                w = project(w - V[:, : j + 1] @ (V[:, : j + 1].conj().T @ w))
            b = float(np.linalg.norm(w))
            steps = j + 1
            if b <= 1e-10 * scale:
                break
            beta.append(b)
            V[:, j + 1] = w / b
        theta, S = sla.eigh_tridiagonal(np.array(alpha), np.array(beta[: steps - 1]))
        X = V[:, :steps] @ S
        X /= np.linalg.norm(X, axis=0)
        return theta, X

    def fresh():
        v = rng.standard_normal(n)
        if cplx:
            v = v + 1j * rng.standard_normal(n)
        return v.astype(dtype)

    def converged(theta, X, limit):
        out = []
        for i in range(min(limit, len(theta))):
            x = X[:, i]
            if np.linalg.norm(project(A @ x) - theta[i] * x) > tol * scale:
                break
            out.append(i)
        return out

    v, restarts = fresh(), 0
    while True:
        if locked.shape[1] >= n:
            break
        theta, X = run(v)
        if len(vals) >= k:
            # verification run: is anything left below the highest locked value?
            top = max(vals)
            if theta[0] >= top - tol * scale:
                break
            ok = converged(theta, X, 1)
            if not ok:
                v = X[:, 0]
                restarts += 1
                if restarts > max_restarts:
                    raise ConvergenceError("Lanczos verification did not converge")
                continue
            drop = int(np.argmax(vals))
            keep = [i for i in range(len(vals)) if i != drop]
            locked = locked[:, keep]
            vals = [vals[i] for i in keep]
            locked = np.column_stack([locked, X[:, 0]])
            vals.append(float(theta[0]))
            v = fresh()
            continue
        ok = converged(theta, X, k - len(vals))
        if ok:
            locked = np.column_stack([locked] + [X[:, i] for i in ok])
            vals.extend(float(theta[i]) for i in ok)
            v, restarts = fresh(), 0
            continue
        restarts += 1
        if restarts > max_restarts:
            raise ConvergenceError(f"Lanczos did not converge for eigenpair {len(vals)}")
        v = X[:, 0]
    order = np.argsort(vals, kind="stable")
    return np.array(vals)[order], locked[:, order]


# ---------------------------------------------------------------------------
# diagonalisation


def diagonalize(H, k: int | None = None, method: str = "auto", seed: int = 0,
                check: bool = True) -> SpectralData:
    """Lowest ``k`` (or all) eigenpairs of a Hermitian operator.

    Dense LAPACK solves are used up to the dense cap and Lanczos above it;
    ``method`` forces 'dense' or 'krylov'.
    """
    M = _matrix_of(H)
    n = M.shape[0]
    if check:
        _check_hermitian(M)
    nrm = _estimate_norm(M)
    if method == "auto":
        # partial spectra of mid-size operators are far cheaper by Krylov
        few = k is not None and k < n // 4
        method = "krylov" if n > DENSE_CAP or (few and n > KRYLOV_ABOVE) else "dense"
    if method == "dense":
        if n > DENSE_CAP and sp.issparse(M):
            raise CapacityError("dense diagonalisation above the dense cap")
        A = M.toarray() if sp.issparse(M) else np.asarray(M)
        if k is None or k >= n:
            w, V = sla.eigh(A, driver="evd")
        else:
            w, V = sla.eigh(A, subset_by_index=[0, k - 1], driver="evr")
    elif method == "krylov":
        if k is None:
            raise CapacityError("full spectrum requested on the Krylov path")
        w, V = lanczos_lowest(M, k, seed=seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    data = SpectralData(np.asarray(w, dtype=float), V, cluster_tol(nrm), method, nrm)
    if check and n:
        R = M @ V - V * w
        res = np.linalg.norm(R, axis=0).max(initial=0.0)
        if res > RESIDUAL_TOL * max(nrm, 1.0):
            raise ConvergenceError(f"eigen-residual {res:.3e} above tolerance")
    return data


def lowest_band(H, tol: float | None = None, extra: int = 0, seed: int = 0,
                start: int = 8) -> SpectralData:
    """Eigenpairs covering the full lowest cluster plus ``extra`` further levels."""
    M = _matrix_of(H)
    n = M.shape[0]
    k = min(n, start)
    while True:
        data = diagonalize(M, k=k, seed=seed)
        t = data.cluster_tol if tol is None else tol
        E = data.eigenvalues
        g = int(np.sum(E <= E[0] + t))
        if g + extra < len(E) or k >= n:
            if tol is not None:
                data.cluster_tol = tol
            return data
        k = min(n, 2 * k)


# ---------------------------------------------------------------------------
# energy projectors


@dataclass
class EnergyProjector:
    """Projector onto eigenvectors of H_B with energy at most eps.

    Stored as orthonormal bases of its range and of its complement, both in
    the tensor space of ``region``; applying it to a larger operator uses the
    cheaper of the two factorisations.
    """

    region: tuple[int, ...]
    eps: float
    basis: np.ndarray
    complement: np.ndarray
    energies: np.ndarray

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def matrix(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T

    @property
    def projector(self) -> QOperator:
        return QOperator(self.matrix(), self.region, True)

    def apply(self, M: np.ndarray, M_support: Sequence[int], hs: HilbertSpec,
              complement: bool = False) -> np.ndarray:
        """(P ⊗ 1) M, or ((1 - P) ⊗ 1) M with ``complement``."""
        X, back = qop.front_factor(M, self.region, M_support, hs)
        use_range = self.rank <= self.dim - self.rank
        B = self.basis if use_range else self.complement
        Y = B @ (B.conj().T @ X)
        if use_range == complement:
            Y = X - Y
        return back(Y)

    def apply_right(self, M: np.ndarray, M_support: Sequence[int], hs: HilbertSpec,
                    complement: bool = False) -> np.ndarray:
        """M (P ⊗ 1), using that P is Hermitian."""
        return self.apply(M.conj().T, M_support, hs, complement).conj().T


def energy_projector(H_B: QOperator, eps: float = 0.0, tol: float | None = None) -> EnergyProjector:
    """P_B(eps) for a region Hamiltonian.

    Eigenvalues within the cluster tolerance of zero count as zero energy.
    For eps > 0 an eigenvalue within the tolerance of eps makes the cut
    ambiguous and raises.
    """
    if eps < 0:
        raise ValueError("threshold must be non-negative")
    M = H_B.dense()
    _check_hermitian(M)
    nrm = _estimate_norm(M)
    t = cluster_tol(nrm) if tol is None else tol
    n = M.shape[0]
    if n > DENSE_CAP:
        raise CapacityError("region Hamiltonian above dense cap")
    if not np.any(M):
        w, V = np.zeros(n), np.eye(n, dtype=M.dtype)
    else:
        w, V = sla.eigh(M, driver="evd")
    if eps > t and np.any(np.abs(w - eps) <= t):
        raise AmbiguousThresholdError(f"threshold {eps} lies within {t:g} of an eigenvalue")
    cut = max(eps, 0.0) + t
    r = int(np.searchsorted(w, cut, side="right"))
    return EnergyProjector(tuple(H_B.support), float(eps), V[:, :r], V[:, r:], w)


def region_projector(H: HamiltonianSpec, region: Iterable[int], eps: float = 0.0,
                     rule: str = "ball", cache: dict | None = None) -> EnergyProjector:
    """P_B(eps) for B = ``region`` of model ``H``, optionally memoised."""
    key = (frozenset(region), float(eps), rule)
    if cache is not None and key in cache:
        return cache[key]
    P = energy_projector(H.region_hamiltonian(region, rule=rule, sparse=False), eps)
    if cache is not None:
        cache[key] = P
    return P


# ---------------------------------------------------------------------------
# frustration freeness


@dataclass
class FrustrationReport:
    E0: float
    degeneracy: int
    residuals: list[float]
    max_residual: float
    passed: bool
    tol: float = FF_TOL


def term_residuals(terms: Sequence[QOperator], Q0: np.ndarray, hs: HilbertSpec) -> list[float]:
    """‖(Q_u - lambda_u) P0‖ for each term, with lambda_u its smallest eigenvalue."""
    out = []
    full = tuple(range(hs.n_sites))
    for op in terms:
        A = op.dense()
        lam = float(sla.eigvalsh(A)[0])
        A = A - lam * np.eye(A.shape[0])
        Y = qop.apply_left(A, op.support, Q0, full, hs)
        out.append(float(np.linalg.svd(Y, compute_uv=False)[0]) if Y.size else 0.0)
    return out


def frustration_check(H: HamiltonianSpec, V: PerturbationSpec | None = None, s: float = 0.0,
                      tol: float = FF_TOL) -> FrustrationReport:
    """Max over terms of ‖Q_u P0‖ for the ground space of H_0 + s V.

    Terms are shifted by their smallest eigenvalue first, so the check also
    applies to Hamiltonians with non-positive terms (e.g. added fields).
    """
    M = hamiltonian_at(H, V, s)
    band = lowest_band(M)
    Q0 = band.ground_basis()
    ops = [t.op for t in H.terms]
    if V is not None and s != 0:
        ops += [t.op.scaled(s) for t in V.terms]
    res = term_residuals(ops, Q0, H.hilbert)
    mx = max(res) if res else 0.0
    return FrustrationReport(float(band.eigenvalues[0]), Q0.shape[1], res, mx, mx <= tol, tol)


# ---------------------------------------------------------------------------
# local gaps


def smallest_nonzero(w: np.ndarray, tol: float) -> float:
    """First eigenvalue above the kernel cluster; inf for the zero operator."""
    nz = w[w > tol]
    if len(nz) == 0:
        return math.inf
    if w[0] < -tol:
        raise AmbiguousGapError("region Hamiltonian has negative spectrum")
    if nz[0] <= 10 * tol:
        raise AmbiguousGapError(f"first excitation {nz[0]:.3e} not separated from the kernel")
    return float(nz[0])


def region_gap(H: HamiltonianSpec, region: Iterable[int], rule: str = "ball") -> float:
    op = H.region_hamiltonian(region, rule=rule)
    M = op.matrix
    if sp.issparse(M) and M.nnz == 0 or not sp.issparse(M) and not np.any(M):
        return math.inf
    t = cluster_tol(_estimate_norm(M))
    if M.shape[0] <= DENSE_CAP:
        w = sla.eigvalsh(M.toarray() if sp.issparse(M) else M)
        return smallest_nonzero(w, t)
    band = lowest_band(M, extra=1)
    return smallest_nonzero(band.eigenvalues, t)


@dataclass
class LocalGapProfile:
    entries: dict[tuple[int, int], float]
    gamma_of_r: dict[int, float]
    fit_class: str = "constant"
    exponent: float | None = None

    def rows(self):
        for (u, r), g in sorted(self.entries.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            yield u, r, g


def local_gap_profile(H: HamiltonianSpec, radii: Sequence[int], centers: Sequence[int] | None = None,
                      rule: str = "ball", threads: int = 1) -> LocalGapProfile:
    """Smallest nonzero eigenvalue of H_{b_u(r)} for every (u, r).

    Identical regions (e.g. balls covering the whole torus) are solved once.
    """
    centers = list(H.lattice.sites()) if centers is None else list(centers)
    cells = [(u, r) for r in radii for u in centers]
    regions = {}
    for u, r in cells:
        regions.setdefault(ball(u, r, H.lattice).sites, []).append((u, r))
    keys = sorted(regions, key=lambda s: (len(s), sorted(s)))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            gaps = list(ex.map(lambda s: region_gap(H, s, rule), keys))
    else:
        gaps = [region_gap(H, s, rule) for s in keys]
    entries = {}
    for s, g in zip(keys, gaps):
        for cell in regions[s]:
            entries[cell] = g
    gam = {r: min(entries[(u, r)] for u in centers) for r in radii}
    prof = LocalGapProfile(dict(sorted(entries.items())), gam)
    prof.fit_class, prof.exponent = classify_local_gap({H.n_sites: prof})
    return prof


def classify_local_gap(profiles: dict[int, LocalGapProfile], rtol: float = 1e-8) -> tuple[str, float | None]:
    """Classify gamma(r) as constant, polynomial(alpha) or system-size dependent.

    ``profiles`` maps a system size to its profile. If gamma at a fixed
    radius changes with the system size, the local gap is size dependent.
    Otherwise a log-log fit of gamma against r decides between constant and
    polynomial decay.
    """
    sizes = sorted(profiles)
    if len(sizes) > 1:
        common = set.intersection(*[set(p.gamma_of_r) for p in profiles.values()])
        for r in sorted(common):
            vals = [profiles[n].gamma_of_r[r] for n in sizes]
            finite = [v for v in vals if math.isfinite(v)]
            if len(finite) == len(vals) and max(finite) - min(finite) > rtol * max(finite):
                return "system-size-dependent", None
    prof = profiles[sizes[-1]]
    pts = [(r, g) for r, g in sorted(prof.gamma_of_r.items()) if r >= 1 and math.isfinite(g) and g > 0]
    if len(pts) < 2:
        return "constant", 0.0
    gs = np.array([g for _, g in pts])
    if gs.max() - gs.min() <= rtol * gs.max():
        return "constant", 0.0
    x = np.log([r for r, _ in pts])
    y = np.log(gs)
    slope = float(np.polyfit(x, y, 1)[0])
    return "polynomial", -slope


# ---------------------------------------------------------------------------
# gap sweeps


@dataclass
class SweepRow:
    s: float
    energies: np.ndarray
    splitting: float
    gap: float


@dataclass
class SweepTable:
    g: int
    gamma: float
    rows: list[SweepRow]
    first_below_half: float | None
    warnings: list[str] = field(default_factory=list)
    vectors: dict = field(default_factory=dict)

    def header(self) -> list[str]:
        return ["s"] + [f"E{i}" for i in range(self.g + 3)] + ["splitting", "gap"]

    def min_gap(self) -> float:
        return min(r.gap for r in self.rows)


def _band_row(s: float, E: np.ndarray, g: int) -> SweepRow:
    return SweepRow(float(s), E[: g + 3], float(E[g - 1] - E[0]), float(E[g] - E[g - 1]))


def sweep_point(H: HamiltonianSpec, V: PerturbationSpec | None, s: float, k: int, seed: int = 0) -> SpectralData:
    M = hamiltonian_at(H, V, s)
    return diagonalize(M, k=min(k, M.shape[0]), seed=seed)


def gap_sweep(H: HamiltonianSpec, V: PerturbationSpec, s_grid: Sequence[float], g: int | None = None,
              gamma: float | None = None, keep_vectors: bool = False, seed: int = 0,
              threads: int = 1) -> SweepTable:
    """Lowest g+3 levels of H_0 + s V over ``s_grid``.

    ``g`` is the ground degeneracy at s = 0 (detected when omitted) and
    ``gamma`` the unperturbed gap. The band edge gap is E_g - E_{g-1}.
    """
    s_grid = [float(s) for s in s_grid]
    if g is None or gamma is None:
        base = lowest_band(H.matrix(), extra=1, seed=seed)
        g = base.ground_degeneracy if g is None else g
        gamma = float(base.eigenvalues[g] - base.eigenvalues[g - 1]) if gamma is None else gamma
    k = g + 3

    def point(s):
        return sweep_point(H, V, s, k, seed)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            datas = list(ex.map(point, s_grid))
    else:
        datas = [point(s) for s in s_grid]
    rows = []
    vectors = {}
    for s, data in zip(s_grid, datas):
        E = data.eigenvalues
        if len(E) < k:
            E = np.concatenate([E, np.full(k - len(E), np.nan)])
        rows.append(_band_row(s, E, g))
        if keep_vectors:
            vectors[s] = data
    warnings = _band_tracking(rows, g)
    first = next((r.s for r in rows if r.gap < gamma / 2), None)
    return SweepTable(g, float(gamma), rows, first, warnings, vectors)


def _band_tracking(rows: list[SweepRow], g: int) -> list[str]:
    """Nearest-match continuation of levels between neighbouring grid points.

    A warning is recorded whenever a level from above the band is matched
    into the lowest-g band, i.e. the tracked band stops being the lowest.
    """
    out = []
    for a, b in zip(rows, rows[1:]):
        Ea, Eb = a.energies, b.energies
        cost = np.abs(Ea[:, None] - Eb[None, :])
        cost = np.nan_to_num(cost, nan=np.inf)
        # greedy nearest match in energy order
        used = set()
        match = {}
        for i in range(len(Ea)):
            order = np.argsort(cost[i], kind="stable")
            j = next(int(j) for j in order if int(j) not in used)
            used.add(j)
            match[i] = j
        crossed = [i for i in range(g, len(Ea)) if match[i] < g]
        if crossed:
            out.append(f"band crossing between s={a.s:.6g} and s={b.s:.6g}")
    return out


# ---------------------------------------------------------------------------
# local energy claims


@dataclass
class ClaimsReport:
    checks: list[dict]
    passed: bool


def local_energy_claims_check(H: HamiltonianSpec, samples: Sequence[tuple], tol: float = 1e-9,
                              gamma: float | None = None) -> ClaimsReport:
    """Check the four elementary facts about local ground projectors.

    ``samples`` holds tuples (B, C, eps, eps_prime) with B ⊂ C site sets and
    eps_prime <= eps. Verified: H_B >= eps (1 - P_B(eps)); P_B(eps) P_B(eps')
    = P_B(eps'); P_B(eps) P_C(0) = P_C(0); P_B(eps) = P_B(0) when eps is
    below the first excitation of H_B. Also P_Lambda(eps) = P_0 for eps in
    [0, gamma) when ``gamma`` is given.
    """
    hs = H.hilbert
    checks = []
    for B, C, eps, eps2 in samples:
        B, C = tuple(sorted(B)), tuple(sorted(C))
        if not set(B) <= set(C):
            raise ValueError("B must be a subset of C")
        HB = H.region_hamiltonian(B, sparse=False)
        PB = energy_projector(HB, eps)
        PB2 = energy_projector(HB, eps2)
        Pb = PB.matrix()
        diff = HB.dense() - eps * (np.eye(PB.dim) - Pb)
        m1 = float(sla.eigvalsh(diff)[0])
        e2 = qop.opnorm(Pb @ PB2.matrix() - PB2.matrix())
        PC = energy_projector(H.region_hamiltonian(C, sparse=False), 0.0)
        PCm = PC.matrix()
        PBC = PB.apply(PCm, C, hs)
        e3 = qop.opnorm(PBC - PCm)
        P0 = energy_projector(HB, 0.0)
        gapB = smallest_nonzero(PB.energies, cluster_tol(_estimate_norm(HB.dense())))
        e4 = qop.opnorm(Pb - P0.matrix()) if eps < gapB else 0.0
        checks.append({"B": B, "C": C, "eps": eps, "eps_prime": eps2, "min_eig": m1,
                       "order_err": e2, "nested_err": e3, "gap_err": e4,
                       "ok": m1 >= -tol and e2 <= tol and e3 <= tol and e4 <= tol})
    if gamma is not None:
        full = H.all_sites
        Hf = H.region_hamiltonian(full, sparse=False)
        P0 = energy_projector(Hf, 0.0).matrix()
        for eps in (0.0, 0.5 * gamma, 0.999 * gamma):
            e = qop.opnorm(energy_projector(Hf, eps).matrix() - P0)
            checks.append({"B": full, "C": full, "eps": eps, "eps_prime": 0.0, "global_err": e,
                           "ok": e <= tol})
    return ClaimsReport(checks, all(c["ok"] for c in checks))
