"""Spectral flow U(s) by composing direct rotations between exact band projectors.

Each step rotates span Q(s_k) onto span Q(s_{k+1}) with the polar factor of
P'P + (1-P')(1-P), which acts as the identity off span(Q, Q'). The whole
path therefore lives in the span of all band bases, so U is stored as
U = 1 + B (U~ - 1) B^dagger with one orthonormal B for the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ..errors import FlowRankError, StepTooLargeError
from ..models import HamiltonianSpec, PerturbationSpec
from ..spectral import SpectralData, diagonalize

FLOW_TOL = 1e-8
MAX_ANGLE = 0.5
KRYLOV_ABOVE = 1024


@dataclass
class BandPoint:
    s: float
    Q: np.ndarray
    energies: np.ndarray

    @property
    def gap(self) -> float:
        g = self.Q.shape[1]
        return float(self.energies[g] - self.energies[g - 1]) if len(self.energies) > g else math.inf


@dataclass
class FlowResult:
    s_grid: list[float]
    g: int
    basis: np.ndarray
    reduced: list[np.ndarray]
    residuals: list[float]
    unitarity: list[float]
    points: list[BandPoint]
    step_control: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def index(self, s: float) -> int:
        for k, x in enumerate(self.s_grid):
            if abs(x - s) <= 1e-15:
                return k
        raise KeyError(f"s = {s} is not on the flow grid")

    def apply(self, k: int, M: np.ndarray, adjoint: bool = False) -> np.ndarray:
        """U(s_k) M (or U(s_k)^dagger M)."""
        B = self.basis
        K = self.reduced[k] - np.eye(B.shape[1])
        if adjoint:
            K = K.conj().T
        return M + B @ (K @ (B.conj().T @ M))

    def unitary(self, k: int) -> np.ndarray:
        return self.apply(k, np.eye(self.dim, dtype=complex))

    def band(self, k: int) -> np.ndarray:
        """Q(s_k), the band basis at the requested grid point."""
        s = self.s_grid[k]
        return next(p.Q for p in self.points if p.s == s)

    @property
    def max_residual(self) -> float:
        return max(self.residuals, default=0.0)


def band_point(M, s: float, g: int, seed: int = 0) -> BandPoint:
    n = M.shape[0]
    k = min(n, g + 1)
    method = "dense" if n <= KRYLOV_ABOVE else "krylov"
    data: SpectralData = diagonalize(M, k=k, method=method, seed=seed)
    E = data.eigenvalues
    if len(E) > g:
        scale = max(1.0, data.norm)
        if E[g] - E[g - 1] <= FLOW_TOL * scale:
            raise FlowRankError(f"band of rank {g} merges with the next level at s = {s}")
    return BandPoint(float(s), np.ascontiguousarray(data.eigenvectors[:, :g]), E)


def _cos_min(Qa: np.ndarray, Qb: np.ndarray) -> float:
    return float(sla.svdvals(Qb.conj().T @ Qa).min())


def rotation_reduced(qa: np.ndarray, qb: np.ndarray, min_sv: float = 1e-6) -> np.ndarray:
    """Direct rotation in coordinates where both bands are expressed (rows)."""
    m = qa.shape[0]
    Pa = qa @ qa.conj().T
    Pb = qb @ qb.conj().T
    I = np.eye(m)
    A = Pb @ Pa + (I - Pb) @ (I - Pa)
    Uu, sv, Vh = np.linalg.svd(A)
    if sv.min() < min_sv:
        raise StepTooLargeError(f"polar factor nearly singular (sigma_min = {sv.min():.2e})")
    return Uu @ Vh


def _orth(blocks: list[np.ndarray], tol: float = 1e-13) -> np.ndarray:
    A = np.concatenate(blocks, axis=1)
    U, sv, _ = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(sv > tol * max(1.0, sv[0])))
    return U[:, :rank]


def spectral_flow(H: HamiltonianSpec, V: PerturbationSpec | None, s_grid: Sequence[float],
                  g: int | None = None, tol: float = FLOW_TOL, max_angle: float = MAX_ANGLE,
                  max_points: int = 512, seed: int = 0) -> FlowResult:
    """U(s) on ``s_grid`` (sorted, starting at 0) with adaptive refinement.

    A step is split whenever its largest principal angle exceeds
    ``max_angle`` or its polar factor is nearly singular.
    """
    s_grid = sorted(float(s) for s in s_grid)
    if not s_grid or s_grid[0] != 0.0:
        s_grid = [0.0] + s_grid
    H0 = H.matrix()
    Vm = V.matrix(H.hilbert) if V is not None else None
    if H0.shape[0] > KRYLOV_ABOVE:
        H0 = sp.csr_matrix(H0)
        Vm = sp.csr_matrix(Vm) if Vm is not None else None

    def at(s):
        return H0 if Vm is None or s == 0 else H0 + s * Vm

    first = diagonalize(H0, k=min(H0.shape[0], 8 if g is None else g + 1),
                        method="dense" if H0.shape[0] <= KRYLOV_ABOVE else "krylov", seed=seed)
    if g is None:
        g = first.ground_degeneracy
    pts = {0.0: band_point(H0, 0.0, g, seed)}
    for s in s_grid[1:]:
        pts[s] = band_point(at(s), s, g, seed)
    refined = []
    queue = list(zip(s_grid[:-1], s_grid[1:]))
    while queue:
        a, b = queue.pop(0)
        if _cos_min(pts[a].Q, pts[b].Q) >= math.cos(max_angle):
            continue
        if len(pts) >= max_points or b - a < 1e-9:
            raise StepTooLargeError(f"refinement budget exhausted between s = {a} and {b}")
        mid = 0.5 * (a + b)
        pts[mid] = band_point(at(mid), mid, g, seed)
        refined.append(mid)
        queue[:0] = [(a, mid), (mid, b)]
    order = sorted(pts)
    B = _orth([pts[s].Q for s in order])
    m = B.shape[1]
    red = {s: B.conj().T @ pts[s].Q for s in order}
    Ut = np.eye(m, dtype=complex)
    cum = {0.0: Ut}
    for a, b in zip(order[:-1], order[1:]):
        Ut = rotation_reduced(red[a], red[b]) @ Ut
        cum[b] = Ut
    reduced, residuals, unit = [], [], []
    q0 = red[0.0]
    for s in s_grid:
        Uk = cum[s]
        reduced.append(Uk)
        # |U P0 U^dagger - P(s)| = |(1 - P(s)) U Q0| for equal ranks
        x = Uk @ q0
        qs = red[s]
        residuals.append(float(np.linalg.norm(x - qs @ (qs.conj().T @ x), 2)))
        unit.append(float(np.abs(Uk.conj().T @ Uk - np.eye(m)).max()))
    if max(residuals) > tol:
        raise StepTooLargeError(f"flow residual {max(residuals):.2e} above {tol}")
    control = {"refined": sorted(refined), "points": len(order), "span_rank": m,
               "max_angle": max_angle, "min_gap": min(p.gap for p in pts.values())}
    return FlowResult(s_grid, g, B, reduced, residuals, unit, [pts[s] for s in order], control)
