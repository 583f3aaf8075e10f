"""Band-limited spectral filter O -> integral w(t) exp(iHt) O exp(-iHt) dt.

The default profile is the Fejér triangle w_hat(omega) = max(0, 1 - |omega|/g')
whose time kernel (g'/2 pi) sinc^2(g' t / 2) is non-negative, so the filter
is a convex average of unitary conjugations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..errors import DomainError, FilterGapError
from ..qop import QOperator, opnorm
from ..spectral import SpectralData, diagonalize


@dataclass
class FilterSpec:
    gamma_prime: float
    family: str = "fejer"
    table: tuple[tuple[float, float], ...] | None = None
    dt: float | None = None
    T: float | None = None

    def __post_init__(self):
        if not self.gamma_prime > 0:
            raise DomainError("gamma' must be positive")
        if self.family == "table":
            if not self.table:
                raise DomainError("table family needs (omega, value) pairs")
            om = np.array([p[0] for p in self.table], dtype=float)
            if np.any(np.diff(om) <= 0) or om[0] != 0.0:
                raise DomainError("table frequencies must start at 0 and increase")
            if abs(self.table[0][1] - 1.0) > 1e-15:
                raise DomainError("table profile must equal 1 at omega = 0")
        elif self.family != "fejer":
            raise DomainError(f"unknown filter family {self.family!r}")

    def w_hat(self, omega) -> np.ndarray:
        x = np.abs(np.asarray(omega, dtype=float))
        if self.family == "fejer":
            return np.maximum(0.0, 1.0 - x / self.gamma_prime)
        om = np.array([p[0] for p in self.table])
        val = np.array([p[1] for p in self.table])
        out = np.interp(x, om, val, right=0.0)
        return np.where(x >= self.gamma_prime, 0.0, out)

    def w(self, t) -> np.ndarray:
        """Time kernel (Fejér family only)."""
        if self.family != "fejer":
            raise DomainError("time kernel only available for the fejer family")
        g = self.gamma_prime
        x = 0.5 * g * np.asarray(t, dtype=float)
        return g / (2 * math.pi) * np.sinc(x / math.pi) ** 2


@dataclass
class FilterResult:
    op: QOperator
    mode: str
    truncation_bound: float = 0.0
    deviation: float | None = None
    nodes: int = 0
    checks: dict = field(default_factory=dict)


def _spectral(H) -> SpectralData:
    if isinstance(H, SpectralData):
        return H
    M = H.matrix if isinstance(H, QOperator) else H
    return diagonalize(M)


def band_gap(data: SpectralData, g: int | None = None) -> tuple[int, float]:
    E = data.eigenvalues
    if g is None:
        g = data.ground_degeneracy
    if g >= len(E):
        return g, math.inf
    return g, float(E[g] - E[g - 1])


def _eigenbasis(O: np.ndarray, data: SpectralData, spec: FilterSpec) -> np.ndarray:
    E, V = data.eigenvalues, data.eigenvectors
    kernel = spec.w_hat(E[:, None] - E[None, :])
    return V @ (kernel * (V.conj().T @ O @ V)) @ V.conj().T


def _time_domain(O: np.ndarray, data: SpectralData, spec: FilterSpec) -> tuple[np.ndarray, float, int]:
    """Trapezoid sum h * sum_k w(kh) tau_{kh}(O) with |kh| <= T.

    The step must satisfy h < 2 pi / (spread + gamma') so that aliased copies
    of w_hat miss every Bohr frequency. Then the only error is the dropped
    tail, bounded by |O| (1 - h sum_{|k| <= K} w(kh)) since w >= 0 and sums
    to one on the full grid.
    """
    E = data.eigenvalues
    spread = float(E[-1] - E[0])
    hmax = 2 * math.pi / (spread + spec.gamma_prime)
    h = spec.dt if spec.dt is not None else 0.9 * hmax
    if h >= hmax:
        raise DomainError(f"time step {h} too coarse; need < {hmax}")
    T = spec.T if spec.T is not None else 400.0 / spec.gamma_prime
    K = int(T // h)
    V = data.eigenvectors
    # propagate by a fixed one-step unitary, built from the Hamiltonian itself
    Hm = (V * E) @ V.conj().T
    step = sla.expm(-1j * h * Hm)
    weights = h * spec.w(np.arange(0, K + 1) * h)
    acc = weights[0] * O.astype(complex)
    Ut = np.eye(O.shape[0], dtype=complex)
    for k in range(1, K + 1):
        Ut = step @ Ut
        acc += weights[k] * (Ut.conj().T @ O @ Ut + Ut @ O @ Ut.conj().T)
    kept = weights[0] + 2 * weights[1:].sum()
    return acc, max(0.0, 1.0 - kept) * opnorm(O), 2 * K + 1


def filter_apply(O, H, spec: FilterSpec, mode: str = "eigenbasis", g: int | None = None,
                 check_gap: bool = True) -> FilterResult:
    """Apply the filter defined by ``spec`` to ``O`` with respect to ``H``.

    ``H`` may be a matrix, a QOperator or precomputed full SpectralData. The
    ground band has ``g`` levels (lowest cluster by default). When the band
    gap is below gamma', the commutation property is void and
    FilterGapError is raised unless ``check_gap`` is False.
    """
    data = _spectral(H)
    Om = O.dense() if isinstance(O, QOperator) else np.asarray(O)
    support = O.support if isinstance(O, QOperator) else tuple()
    g, gap = band_gap(data, g)
    if check_gap and spec.gamma_prime > gap:
        raise FilterGapError(f"gamma' = {spec.gamma_prime} exceeds the band gap {gap}")
    if mode == "eigenbasis":
        out = _eigenbasis(Om, data, spec)
        return FilterResult(QOperator(out, support), mode)
    if mode in ("time", "time-domain"):
        out, bound, nodes = _time_domain(Om, data, spec)
        exact = _eigenbasis(Om, data, spec)
        dev = opnorm(out - exact)
        return FilterResult(QOperator(out, support), "time-domain", bound, dev, nodes)
    raise ValueError(f"unknown filter mode {mode!r}")


def filter_properties(O, data: SpectralData, spec: FilterSpec, g: int) -> dict:
    """Measured defects of the three operational filter properties."""
    E, V = data.eigenvalues, data.eigenvectors
    Hm = (V * E) @ V.conj().T
    FH = _eigenbasis(Hm, data, spec)
    Om = O.dense() if isinstance(O, QOperator) else np.asarray(O)
    FO = _eigenbasis(Om, data, spec)
    Q0 = V[:, :g]
    leak = FO @ Q0 - Q0 @ (Q0.conj().T @ FO @ Q0)
    nH = opnorm(Hm)
    return {"fixes_H": opnorm(FH - Hm) / max(nH, 1e-300),
            "leak": float(np.linalg.norm(leak, 2)),
            "norm_excess": opnorm(FO) - opnorm(Om)}
