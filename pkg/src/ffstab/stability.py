"""Relative bound, structural constant and the end-to-end stability experiment.

The weights w(r) entering the structural constant are measured: for every
anchor u the transformed perturbation is split into Y_u and Z_u blocks and
their norms, divided by J, are maximised over anchors and sampled s.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import qop
from .conditions import TqoProfile, tqo_profile
from .errors import (
    CapacityError,
    DegenerateGapError,
    EnumerationCapacityError,
    FFStabError,
    PartitionError,
    ScheduleError,
    StageError,
)
from .flow.decompose import (
    anchor_projectors,
    anchor_split,
    centred_shells,
    transform_decompose,
    w_decomposition,
)
from .flow.spectral_flow import FlowResult, spectral_flow
from .lattice import PartitionScheme, ball, classes_separated, covering_radius
from .models import (
    PAULI_Z,
    HamiltonianSpec,
    ModelTag,
    PerturbationSpec,
    build_model,
    local_op,
    paper_chain,
    paper_chain_v,
    pinned_ising,
    uniform_field,
)
from .qop import DENSE_CAP, QOperator
from .rng import stream
from .spectral import (
    LocalGapProfile,
    SweepTable,
    classify_local_gap,
    cluster_tol,
    diagonalize,
    frustration_check,
    gap_sweep,
    local_gap_profile,
    lowest_band,
    region_gap,
    region_projector,
)

SCHEMA_VERSION = "1.0"
AUDIT_SLACK = 1e-9
RECOMPUTE_TOL = 1e-12


def unit_ball_volume(d: int) -> int:
    """Number of points of Z^d within sup-distance 1 of the origin."""
    return sum(1 for x in itertools.product((-1, 0, 1), repeat=d) if max(map(abs, x)) <= 1)


# ---------------------------------------------------------------------------
# structural constant


@dataclass
class PartitionBoundReport:
    schedule: list[int]
    w_hat: list[float]
    gamma: list[float]
    C_d: int
    d: int
    c: float
    J0: float
    c_exact: str
    J0_exact: str

    def recompute_c(self) -> float:
        terms = [(r ** self.d) * wh / g if wh else 0.0 for r, wh, g in zip(self.schedule, self.w_hat, self.gamma)]
        return self.C_d * math.fsum(terms)

    def recompute_ok(self, tol: float = RECOMPUTE_TOL) -> bool:
        return abs(self.recompute_c() - self.c) <= tol * max(1.0, abs(self.c))

    def rational_ok(self) -> bool:
        if self.c == 0.0:
            return self.J0_exact == "inf"
        return Fraction(self.J0_exact) * 3 * Fraction(self.c_exact) == 1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["J0"] = None if math.isinf(self.J0) else self.J0
        return out


def _gamma_at(gamma, r: int) -> float:
    g = gamma.gamma_of_r if isinstance(gamma, LocalGapProfile) else gamma
    if r in g:
        return float(g[r])
    raise ScheduleError(f"no local gap recorded at radius {r}")


def _c_terms(w: dict[int, float], gamma, schedule: Sequence[int], d: int) -> tuple[list, list, list]:
    prev, buckets, gams, terms = 0, [], [], []
    for rk in schedule:
        wh = math.fsum(float(w.get(r, 0.0)) for r in range(prev + 1, rk + 1))
        g = _gamma_at(gamma, rk)
        if not g > 0:
            raise DegenerateGapError(f"local gap at radius {rk} is {g}")
        buckets.append(wh)
        gams.append(g)
        terms.append((rk ** d) * wh / g if wh else 0.0)
        prev = rk
    return buckets, gams, terms


def structural_constant(w: dict[int, float], gamma, schedule: Sequence[int], d: int, L: int,
                        C_d: int | None = None) -> PartitionBoundReport:
    """c = C_d sum_k r_k^d w^(r_k) / gamma(r_k) and J0 = 1/(3c).

    ``w`` maps r = 1..L to the normalised weights, ``gamma`` is a profile or
    a radius-to-gap map. A zero c gives J0 = inf.
    """
    schedule = [int(r) for r in schedule]
    if not schedule or schedule[-1] != L:
        raise ScheduleError(f"schedule must end at L = {L}")
    if schedule[0] < 1 or any(b < a for a, b in zip(schedule, schedule[1:])):
        raise ScheduleError("schedule must satisfy 0 < r_1 <= ... <= r_M")
    C_d = unit_ball_volume(d) if C_d is None else int(C_d)
    buckets, gams, terms = _c_terms(w, gamma, schedule, d)
    c = C_d * math.fsum(terms)
    if c == 0.0:
        return PartitionBoundReport(schedule, buckets, gams, C_d, d, 0.0, math.inf, "0", "inf")
    cf = Fraction(c)
    J0f = 1 / (3 * cf)
    return PartitionBoundReport(schedule, buckets, gams, C_d, d, c, float(J0f), str(cf), str(J0f))


def schedule_optimizer(w: dict[int, float], gamma, d: int, L: int, M_max: int) -> list[int]:
    """Schedule minimising c with at most ``M_max`` shells (fewest shells on ties)."""
    if M_max < 1:
        raise ScheduleError("M_max must be at least 1")

    def cost(a, b):
        wh = math.fsum(float(w.get(r, 0.0)) for r in range(a + 1, b + 1))
        if not wh:
            return 0.0
        g = _gamma_at(gamma, b)
        if not g > 0:
            return math.inf
        return (b ** d) * wh / g

    inf = math.inf
    best = [[inf] * (L + 1) for _ in range(M_max + 1)]
    back = [[-1] * (L + 1) for _ in range(M_max + 1)]
    best[0][0] = 0.0
    for m in range(1, M_max + 1):
        for b in range(1, L + 1):
            for a in range(0, b):
                if best[m - 1][a] == inf:
                    continue
                v = best[m - 1][a] + cost(a, b)
                if v < best[m][b]:
                    best[m][b], back[m][b] = v, a
    top = min(best[m][L] for m in range(1, M_max + 1))
    if top == inf:
        raise DegenerateGapError("every schedule meets a vanishing local gap")
    m = next(m for m in range(1, M_max + 1) if best[m][L] <= top * (1 + 1e-12))
    sched, b = [], L
    while m > 0:
        sched.append(b)
        b = back[m][b]
        m -= 1
    return sched[::-1]


# ---------------------------------------------------------------------------
# measured shell weights


@dataclass
class WMeasurement:
    J: float
    L: int
    s_values: list[float]
    rows: list[tuple]
    w: dict[int, float]
    audits: dict
    transformed: dict = field(default_factory=dict, repr=False)

    def table(self) -> list[tuple]:
        return sorted(self.rows)


def measure_w(H: HamiltonianSpec, V: PerturbationSpec, s_values: Sequence[float], flow: FlowResult,
              L: int | None = None, audit_anchors: int = 1, anchors: Sequence[int] | None = None,
              keep: bool = True) -> WMeasurement:
    """w(r) = max over anchors and sampled s of (|Y_u(r)| + |Z_u(r)|)/J.

    The first ``audit_anchors`` anchors at every s also run the E_m and
    reconstruction audits.
    """
    L = H.lattice.L if L is None else L
    hs = H.hilbert
    rows, audits, kept = [], {}, {}
    w = {r: 0.0 for r in range(1, L + 1)}
    J = float(V.J)
    for s in s_values:
        tp = transform_decompose(H, V, s, flow)
        if keep:
            kept[s] = tp
        split = anchor_split(tp.X, H)
        cache: dict = {}
        us = split.anchors() if anchors is None else [u for u in anchors if u in split.anchors()]
        for i, u in enumerate(us):
            shells, _ = centred_shells(split, u, H, tp.Q0)
            P = anchor_projectors(H, u, tp.Q0, L, cache)
            wd = w_decomposition(shells, P, hs, L, u, audit=i < audit_anchors)
            if wd.audits:
                audits[(float(s), int(u))] = wd.audits
            for r, v in wd.w().items():
                rows.append((float(s), int(u), int(r), float(v)))
                if J > 0:
                    w[r] = max(w[r], v / J)
    return WMeasurement(J, L, [float(s) for s in s_values], rows, w, audits, kept)


# ---------------------------------------------------------------------------
# relative bound


@dataclass
class RelativeBoundReport:
    c: float
    J: float
    samples: dict
    worst_margin: float
    worst_ratio: float
    violations: int
    exact_ratio: float | None = None
    slack: float = AUDIT_SLACK

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {"c": self.c, "J": self.J, "cJ": self.c * self.J, "samples": self.samples,
                "worst_margin": self.worst_margin, "worst_ratio": self.worst_ratio,
                "violations": self.violations, "exact_ratio": self.exact_ratio,
                "slack": self.slack, "passed": self.passed}


def _as_apply(M) -> Callable[[np.ndarray], np.ndarray]:
    if callable(M):
        return M
    return lambda X: np.asarray(M @ X)


def relative_bound_check(W, H0, c: float, J: float, Q0: np.ndarray | None = None, n_random: int = 1000,
                         seed: int = 0, cutoff: float | None = None, exact: bool = True,
                         slack: float = AUDIT_SLACK, batch: int = 250) -> RelativeBoundReport:
    """Test |<psi|W|psi>| <= c J <psi|H0|psi> on ground, random, low and adversarial states.

    ``W`` is a matrix or an action on column blocks. Low-lying eigenstates
    are those of H0 with energy at most ``cutoff`` (default: the first
    excited level). With ``exact`` and a dense-sized H0, the state maximising
    |<W>|/<H0> on the complement of the kernel is added as well.
    """
    Wf = _as_apply(W)
    H0m = H0.matrix if isinstance(H0, QOperator) else H0
    n = H0m.shape[0]
    cJ = float(c) * float(J)
    worst = [-math.inf, 0.0, 0]

    def audit(Psi: np.ndarray) -> dict:
        Psi = Psi / np.linalg.norm(Psi, axis=0, keepdims=True)
        lhs = np.abs(np.einsum("ij,ij->j", Psi.conj(), Wf(Psi)))
        rhs = cJ * np.einsum("ij,ij->j", Psi.conj(), np.asarray(H0m @ Psi)).real
        margin = lhs - rhs
        bad = int(np.sum(margin > slack))
        worst[0] = max(worst[0], float(margin.max()))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rhs > slack, lhs / np.maximum(rhs, slack), 0.0)
        worst[1] = max(worst[1], float(ratio.max()))
        worst[2] += bad
        return {"count": int(Psi.shape[1]), "violations": bad, "max_lhs": float(lhs.max()),
                "worst_margin": float(margin.max())}

    samples = {}
    spec = None
    if n <= DENSE_CAP:
        Hd = H0m.toarray() if sp.issparse(H0m) else np.asarray(H0m)
        E, Vv = sla.eigh(Hd, driver="evd")
        spec = (E, Vv)
    if Q0 is None:
        if spec is None:
            Q0 = lowest_band(H0m).ground_basis()
        else:
            t = cluster_tol(max(abs(spec[0][0]), abs(spec[0][-1])))
            Q0 = spec[1][:, spec[0] <= spec[0][0] + t]
    g = Q0.shape[1]
    samples["ground"] = audit(Q0.astype(complex))
    rng = stream(seed, "stability", "relative_bound")
    rand_stats = []
    left = int(n_random)
    while left > 0:
        k = min(batch, left)
        Psi = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
        rand_stats.append(audit(Psi))
        left -= k
    samples["random"] = {"count": sum(s["count"] for s in rand_stats),
                         "violations": sum(s["violations"] for s in rand_stats),
                         "max_lhs": max(s["max_lhs"] for s in rand_stats) if rand_stats else 0.0,
                         "worst_margin": max(s["worst_margin"] for s in rand_stats) if rand_stats else -math.inf}
    if spec is not None:
        E, Vv = spec
        if cutoff is None:
            cutoff = float(E[g]) if n > g else float(E[-1])
        t = cluster_tol(max(abs(E[0]), abs(E[-1])))
        low = Vv[:, E <= cutoff + t]
        samples["low"] = audit(low.astype(complex))
        samples["low"]["cutoff"] = cutoff
    else:
        band = lowest_band(H0m, extra=64)
        samples["low"] = audit(band.eigenvectors.astype(complex))
        samples["low"]["cutoff"] = float(band.eigenvalues[-1])
    Wd = Wf(np.eye(n, dtype=complex)) if n <= DENSE_CAP else None
    if Wd is not None:
        Wd = 0.5 * (Wd + Wd.conj().T)
        wv, wV = sla.eigh(Wd, driver="evd")
        samples["adversarial_W"] = audit(wV[:, [0, -1]])
    exact_ratio = None
    if exact and spec is not None and Wd is not None and n > g:
        E, Vv = spec
        Vc = Vv[:, g:]
        Ec = E[g:]
        if Ec.min() > 0:
            S = Vc / np.sqrt(Ec)[None, :]
            M = S.conj().T @ Wd @ S
            mv, mV = sla.eigh(0.5 * (M + M.conj().T), driver="evd")
            exact_ratio = float(max(abs(mv[0]), abs(mv[-1])))
            idx = 0 if abs(mv[0]) >= abs(mv[-1]) else -1
            samples["adversarial_ratio"] = audit((S @ mV[:, [idx]]).astype(complex))
    return RelativeBoundReport(float(c), float(J), samples, worst[0], worst[1], worst[2], exact_ratio, slack)


# ---------------------------------------------------------------------------
# partition proof steps on small instances


@dataclass
class PartitionCheckReport:
    r: int
    C_d: int
    classes: list
    completeness: float
    orthogonality: float
    g_vs_h_min_eig: float
    coloring_min_eig: float
    per_class: list
    tol: float = AUDIT_SLACK

    @property
    def passed(self) -> bool:
        return (self.completeness <= 1e-10 and self.orthogonality <= 1e-10
                and self.g_vs_h_min_eig >= -self.tol and self.coloring_min_eig >= -self.tol)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _class_union(H: HamiltonianSpec, cls, r: int) -> tuple[int, ...]:
    sites = set()
    for a in cls:
        sites |= set(ball(a, r, H.lattice).sites)
    return tuple(sorted(sites))


def partition_smallcase_check(H: HamiltonianSpec, scheme: PartitionScheme, r: int | None = None,
                              max_class: int = 3) -> PartitionCheckReport:
    """Explicit R^Y_j products, G_j <= H_j / gamma_j and the colouring bound.

    Per class, everything is built on the union of its balls, where the
    remaining sites only contribute an identity factor.
    """
    r = scheme.r if r is None else int(r)
    lat = H.lattice
    hs = H.hilbert
    if not classes_separated(scheme.classes, r, lat):
        raise PartitionError(f"classes of the scheme overlap at radius {r}")
    too_big = [c for c in scheme.classes if len(c) > max_class]
    if too_big:
        raise EnumerationCapacityError(f"class of size {len(too_big[0])} above {max_class}")
    C_d = unit_ball_volume(lat.d)
    comp = orth = 0.0
    gh = math.inf
    per = []
    cache: dict = {}
    for cls in scheme.classes:
        U = _class_union(H, cls, r)
        if hs.sub_dim(U) > DENSE_CAP:
            raise CapacityError(f"class union of dimension {hs.sub_dim(U)} above {DENSE_CAP}")
        dim = hs.sub_dim(U)
        I = np.eye(dim)
        Ps, Hs, gams = [], [], []
        for a in cls:
            B = ball(a, r, lat).sorted_sites
            Pa = region_projector(H, B, cache=cache).projector
            Ps.append(qop.expand(Pa, U, hs, sparse=False).dense())
            HB = H.region_hamiltonian(B, sparse=False)
            Hs.append(qop.expand(HB, U, hs, sparse=False).dense())
            gams.append(region_gap(H, B))
        R = {}
        for ys in itertools.product((0, 1), repeat=len(cls)):
            M = I.astype(complex)
            for y, P in zip(ys, Ps):
                M = M @ ((I - P) if y else P)
            R[ys] = M
        total = sum(R.values())
        comp = max(comp, float(np.abs(total - I).max()))
        keys = list(R)
        for i, y in enumerate(keys):
            for z in keys[i:]:
                prod = R[y] @ R[z]
                ref = R[y] if y == z else 0.0
                orth = max(orth, float(np.abs(prod - ref).max()))
        G = sum(sum(y) * R[y] for y in keys)
        Hj = sum(Hs)
        finite = [x for x in gams if math.isfinite(x)]
        gam_j = min(finite) if finite else math.inf
        D = (Hj / gam_j if math.isfinite(gam_j) else 0.0 * Hj) - G
        lam = float(sla.eigvalsh(0.5 * (D + D.conj().T))[0])
        gh = min(gh, lam)
        per.append({"class": list(cls), "union_dim": dim, "gamma_j": gam_j if math.isfinite(gam_j) else None,
                    "g_vs_h_min_eig": lam})
    full = tuple(range(hs.n_sites))
    regions = [H.region_hamiltonian(ball(a, r, lat).sorted_sites) for cls in scheme.classes for a in cls]
    S = qop.add(regions, hs, support=full).matrix
    D = (C_d * r ** lat.d) * H.matrix() - S
    col = qop.min_eigenvalue(D)
    return PartitionCheckReport(r, C_d, [list(c) for c in scheme.classes], comp, orth, gh, col, per)


# ---------------------------------------------------------------------------
# end-to-end experiment


@dataclass
class ExperimentConfig:
    seed: int = 0
    s_grid: tuple = tuple(np.round(np.linspace(0.0, 1.0, 21), 12))
    w_s: tuple = (1.0,)
    tqo_u: int = 0
    tqo_r: int = 1
    L_star: int | None = None
    gap_radii: tuple | None = None
    gap_family: tuple | None = None
    M_max: int = 3
    n_random: int = 1000
    rescale: float = 0.5
    max_rounds: int = 4
    refine_below: float = 0.6
    refine_depth: int = 3
    audit_anchors: int = 1
    gamma_prime_factor: float = 0.5
    low_cutoff: float | None = None
    threads: int = 1


@dataclass
class StabilityReport:
    model: str
    J_initial: float
    J: float
    frustration: dict
    tqo: dict
    local_gap: dict
    w: dict
    partition_bound: dict
    relative_bound: dict
    sweep: dict
    checkpoints: dict
    verdicts: dict
    overall: str
    rounds: list
    audits: dict
    gamma: float
    gamma_prime: float
    s0: float | None
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return None if not math.isfinite(v) else v
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def family_companion(tag: ModelTag | None) -> ModelTag | None:
    """Next system size of a catalogue model, used to test size independence of gamma(r)."""
    if tag is None:
        return None
    k = tag.kind.lower()
    p = list(tag.params)
    if k == "paperchain":
        return ModelTag(tag.kind, (int(p[0]) + 1,))
    if k in ("isingchain", "heisenbergring"):
        return ModelTag(tag.kind, (int(p[0]) + 2,))
    if k == "toriccode":
        return ModelTag(tag.kind, (int(p[0]) + 1, int(p[1])))
    return None


def local_gap_stage(H: HamiltonianSpec, radii: Sequence[int], family: Sequence | None = None,
                    threads: int = 1) -> tuple[LocalGapProfile, dict]:
    """gamma(r) on H plus a size-independence test against companion sizes."""
    prof = local_gap_profile(H, radii, threads=threads)
    R = covering_radius(H.lattice)
    profiles = {H.n_sites: prof}
    compared = []
    if family is None:
        comp = family_companion(H.tag)
        family = [comp] if comp is not None else []
    for tag in family:
        tag = ModelTag.parse(tag) if isinstance(tag, str) else tag
        Hc = build_model(tag)
        Rc = covering_radius(Hc.lattice)
        rs = [r for r in radii if r < min(R, Rc)]
        if not rs:
            continue
        pc = local_gap_profile(Hc, rs, threads=threads)
        profiles[Hc.n_sites] = pc
        compared.append({"model": str(tag), "gamma_of_r": pc.gamma_of_r})
    if len(profiles) > 1:
        sub = {n: LocalGapProfile({}, {r: g for r, g in p.gamma_of_r.items() if r < R}) for n, p in profiles.items()}
        cls, _ = classify_local_gap(sub)
        if cls == "system-size-dependent":
            prof.fit_class, prof.exponent = cls, None
    positive = all(g > 0 for g in prof.gamma_of_r.values())
    ok = positive and prof.fit_class in ("constant", "polynomial")
    return prof, {"gamma_of_r": prof.gamma_of_r, "entries": [list(row) for row in prof.rows()],
                  "fit_class": prof.fit_class, "exponent": prof.exponent, "compared": compared, "passed": ok}


def _refine_grid(H, V, table: SweepTable, threshold: float, depth: int, seed: int) -> SweepTable:
    grid = [r.s for r in table.rows]
    for _ in range(depth):
        low = [i for i, row in enumerate(table.rows) if row.gap < threshold]
        new = set()
        for i in low:
            if i > 0:
                new.add(round(0.5 * (grid[i - 1] + grid[i]), 15))
            if i + 1 < len(grid):
                new.add(round(0.5 * (grid[i] + grid[i + 1]), 15))
        new -= set(grid)
        if not new:
            break
        grid = sorted(set(grid) | new)
        table = gap_sweep(H, V, grid, g=table.g, gamma=table.gamma, seed=seed)
    return table


def _stage(name: str, fn, timings: dict):
    t = time.perf_counter()
    try:
        return fn()
    except FFStabError as e:
        raise StageError(name, e) from e
    finally:
        timings[name] = time.perf_counter() - t


def main_theorem_experiment(H: HamiltonianSpec, V: PerturbationSpec, config: ExperimentConfig | None = None,
                            timings: dict | None = None) -> StabilityReport:
    """Run every stage of the bootstrap on one instance and collect checkpoints."""
    cfg = ExperimentConfig() if config is None else config
    timings = {} if timings is None else timings
    L = H.lattice.L
    d = H.lattice.d
    seed = cfg.seed

    fr = _stage("frustration", lambda: frustration_check(H), timings)
    base = _stage("spectrum", lambda: lowest_band(H.matrix(), extra=1, seed=seed), timings)
    g = base.ground_degeneracy
    gamma = float(base.eigenvalues[g] - base.eigenvalues[g - 1])
    gamma_prime = cfg.gamma_prime_factor * gamma

    tq: TqoProfile = _stage("tqo", lambda: tqo_profile(H, cfg.tqo_u, cfg.tqo_r, cfg.L_star, seed=seed,
                                                      threads=cfg.threads), timings)
    radii = list(cfg.gap_radii) if cfg.gap_radii else list(range(1, L + 1))
    lg, lg_summary = _stage("localgap", lambda: local_gap_stage(H, radii, cfg.gap_family, cfg.threads), timings)

    grid = sorted(set(float(s) for s in cfg.s_grid) | set(float(s) for s in cfg.w_s) | {0.0})
    J0_init = float(V.J)
    rounds = []
    Vc = V
    for _ in range(max(1, cfg.max_rounds)):
        fl = _stage("flow", lambda: spectral_flow(H, Vc, grid, g=g, seed=seed), timings)
        wm = _stage("w", lambda: measure_w(H, Vc, cfg.w_s, fl, L, cfg.audit_anchors), timings)
        sched = _stage("schedule", lambda: schedule_optimizer(wm.w, lg, d, L, cfg.M_max), timings)
        pb = _stage("structural_constant", lambda: structural_constant(wm.w, lg, sched, d, L), timings)
        single = structural_constant(wm.w, lg, [L], d, L)
        rounds.append({"J": Vc.J, "c": pb.c, "J0": pb.J0, "c_single_shell": single.c, "schedule": sched})
        if Vc.J <= pb.J0:
            break
        Vc = Vc.scaled(cfg.rescale * pb.J0)
    s_rel = max(cfg.w_s)
    tp_rel = wm.transformed[s_rel]
    rel = _stage("relative_bound", lambda: relative_bound_check(
        tp_rel.W_apply, H.matrix(), pb.c, Vc.J, tp_rel.Q0, cfg.n_random, seed, cutoff=cfg.low_cutoff), timings)

    sweep = _stage("sweep", lambda: gap_sweep(H, Vc, list(cfg.s_grid), g=g, gamma=gamma, seed=seed), timings)
    sweep = _stage("sweep_refine", lambda: _refine_grid(H, Vc, sweep, cfg.refine_below * gamma,
                                                        cfg.refine_depth, seed), timings)
    s_all = [r.s for r in sweep.rows]
    if not set(s_all) <= set(fl.s_grid):
        fl = _stage("flow", lambda: spectral_flow(H, Vc, sorted(set(s_all) | set(grid)), g=g, seed=seed), timings)

    def deltas():
        out = {}
        for s in s_all:
            tp = transform_decompose(H, Vc, s, fl)
            out[s] = (tp.delta_norm, tp.commutator, tp.WP0)
        return out

    dl = _stage("delta", deltas, timings)
    rows = []
    for row in sweep.rows:
        dn = dl[row.s][0]
        rows.append({"s": row.s, "gap": row.gap, "splitting": row.splitting, "delta_norm": dn,
                     "delta_small": dn <= gamma / 13, "gap_floor": row.gap >= 20 * gamma / 39,
                     "half_gap": row.gap >= gamma / 2})
    s0 = next((r["s"] for r in rows if not r["half_gap"]), None)
    checkpoints = {"gamma_over_13": gamma / 13, "gap_floor_value": 20 * gamma / 39, "half_gap_value": gamma / 2,
                   "DeltaSmall": all(r["delta_small"] for r in rows),
                   "gapFloor": all(r["gap_floor"] for r in rows),
                   "halfGap": all(r["half_gap"] for r in rows),
                   "max_delta_norm": max(r["delta_norm"] for r in rows),
                   "min_gap": min(r["gap"] for r in rows), "rows": rows}
    within = Vc.J <= pb.J0
    verdicts = {"frustration_free": fr.passed, "local_tqo": tq.passes, "local_gap": lg_summary["passed"],
                "J_within_threshold": within, "relative_bound": rel.passed,
                "recompute_c": pb.recompute_ok(), "rational_J0": pb.rational_ok(),
                "halfGap": checkpoints["halfGap"]}
    if not (fr.passed and tq.passes and lg_summary["passed"]):
        overall = "unstable-precondition"
    elif not within:
        overall = "inconclusive"
    elif checkpoints["halfGap"] and rel.passed:
        overall = "stable"
    else:
        overall = "falsified"
    audits = {"w": {f"s={k[0]},u={k[1]}": v for k, v in wm.audits.items()},
              "flow_residual": fl.max_residual,
              "max_commutator": max(v[1] for v in dl.values()),
              "max_WP0": max(v[2] for v in dl.values())}
    w_out = {"normalised": wm.w, "s_values": wm.s_values,
             "rows": [{"s": s, "u": u, "r": r, "w_u": v} for s, u, r, v in wm.table()]}
    return StabilityReport(
        model=str(H.tag) if H.tag else "custom",
        J_initial=J0_init, J=float(Vc.J),
        frustration={"E0": fr.E0, "degeneracy": fr.degeneracy, "max_residual": fr.max_residual, "passed": fr.passed},
        tqo={"u": tq.u, "r": tq.r, "L_star": tq.L_star, "decay_class": tq.decay_class,
             "rows": [{"ell": x.ell, "delta_op": x.delta_op, "delta_state": x.delta_state} for x in tq.rows],
             "passed": tq.passes},
        local_gap=lg_summary, w=w_out, partition_bound=pb.to_dict(), relative_bound=rel.to_dict(),
        sweep={"g": sweep.g, "gamma": sweep.gamma, "header": sweep.header(),
               "rows": [[r.s, *r.energies.tolist(), r.splitting, r.gap] for r in sweep.rows],
               "first_below_half": sweep.first_below_half, "warnings": sweep.warnings},
        checkpoints=checkpoints, verdicts=verdicts, overall=overall, rounds=rounds, audits=audits,
        gamma=gamma, gamma_prime=gamma_prime, s0=s0)


# ---------------------------------------------------------------------------
# counterexamples


def chain_demo(N: int = 3, s_grid: Sequence[float] | None = None, seed: int = 0) -> dict:
    """Neel chain with the cancelling perturbation: the splitting closes at s = 1."""
    H = paper_chain(N)
    V = paper_chain_v(N)
    grid = list(np.round(np.linspace(0, 1, 21), 12)) if s_grid is None else list(s_grid)
    table = gap_sweep(H, V, grid, g=2, seed=seed)
    end = diagonalize(H.matrix() + V.matrix(H.hilbert), k=4, seed=seed)
    E = end.eigenvalues
    kernel = int(np.sum(np.abs(E) <= 1e-10))
    fr = frustration_check(paper_chain(N, perturbed=True))
    return {"which": "chain", "N": N, "sweep": table, "endpoint_energies": E.tolist(), "kernel_dim": kernel,
            "frustration_free": fr.passed, "splitting_at_1": float(E[1] - E[0]),
            "passed": kernel == 2 and fr.passed}


def pinned_ising_demo(L: int = 10, J_values: Sequence[float] | None = None, axis: str = "z", seed: int = 0) -> dict:
    """Gap of the pinned Ising ring along the field path J' in [0, 4/L].

    The field favours the unpinned ordered state, so levels cross at J' of
    order 1/L; the reported quantity is the smallest gap on the path.
    """
    H = pinned_ising(1, L)
    base = lowest_band(H.matrix(), extra=1, seed=seed)
    g = base.ground_degeneracy
    gamma = float(base.eigenvalues[g] - base.eigenvalues[g - 1])
    J_end = 4.0 / L
    Js = list(np.round(np.linspace(0, J_end, 21), 12)) if J_values is None else list(J_values)
    Js = sorted(set(Js) | {J_end})
    rows = []
    for J in Js:
        M = H.matrix()
        if J:
            M = M + uniform_field(H, J, axis).matrix(H.hilbert)
        E = diagonalize(M, k=min(M.shape[0], g + 2), seed=seed).eigenvalues
        rows.append({"J": float(J), "gap": float(E[g] - E[g - 1]) if len(E) > g else math.inf})
    path = [r for r in rows if r["J"] <= J_end + 1e-12]
    worst = min(path, key=lambda r: r["gap"])
    return {"which": "pinned-ising", "L": L, "gamma": gamma, "axis": axis, "rows": rows,
            "gap_at_4_over_L": path[-1]["gap"], "min_gap": worst["gap"], "argmin_J": worst["J"],
            "passed": worst["gap"] < gamma / 2}


def ising_tqo_demo(L: int = 6, u: int = 0, r: int = 0, seed: int = 0) -> dict:
    """Ising chain: Delta_0 is 1 at every distance, witnessed by sigma^z_u."""
    H = build_model(ModelTag("IsingChain", (L,)))
    prof = tqo_profile(H, u, r, seed=seed)
    band = lowest_band(H.matrix())
    Q0 = band.ground_basis()
    Z = local_op(PAULI_Z, [u], H.hilbert)
    Zf = qop.embed(Z, H.hilbert).dense()
    blk = Q0.conj().T @ Zf @ Q0
    ev = sla.eigvalsh(0.5 * (blk + blk.conj().T))
    witness = float(ev[-1] - ev[0]) / 2
    vals = [x.delta_op for x in prof.rows]
    return {"which": "ising-tqo", "L": L, "rows": [{"ell": x.ell, "delta_op": x.delta_op,
                                                    "delta_state": x.delta_state} for x in prof.rows],
            "witness": witness, "passed": all(abs(v - 1) <= 1e-9 for v in vals) and abs(witness - 1) <= 1e-9}


DEMOS = {"chain": chain_demo, "pinned-ising": pinned_ising_demo, "ising-tqo": ising_tqo_demo}


def instability_demos(which: str | Sequence[str] = ("chain", "pinned-ising", "ising-tqo"), seed: int = 0) -> dict:
    names = [which] if isinstance(which, str) else list(which)
    out = {}
    for n in names:
        if n not in DEMOS:
            raise ValueError(f"unknown demo {n!r}")
        out[n] = DEMOS[n](seed=seed)
    return out
