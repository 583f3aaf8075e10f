"""Analytic decay functions entering the Lieb-Robinson estimate for local flows.

All evaluators are pure. ``assemble`` adds the four displayed estimate lines
with the lattice double sums computed exactly on the finite lattice, per
unit norm of the localized operator.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DomainError
from ..lattice import LatticeSpec, ball

G2_PLATEAU = 7354.0
G2_THRESHOLD = 36058.0
_SUM_CHUNK = 1 << 20
_SUM_MAX = 1 << 32


@dataclass(frozen=True)
class BoundParams:
    """Constants of the Lieb-Robinson machinery, supplied by the user.

    ``C_a``, ``F_norm``, ``C_Fa`` and ``phi_a`` appear only inside G1 and K.
    """

    mu: float
    a: float
    v_a: float
    C_F: float
    psi_F: float
    dphi_a: float
    Fa0: float
    gamma_prime: float
    d: int = 1
    C_a: float = 1.0
    F_norm: float = 1.0
    C_Fa: float = 1.0
    phi_a: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise DomainError(f"bound parameter {k} must be strictly positive")

    @classmethod
    def from_dict(cls, d: dict) -> "BoundParams":
        return cls(**{k: (int(v) if k == "d" else float(v)) for k, v in d.items()})


def _log_u(mu, x):
    x = np.asarray(x, dtype=float)
    return -mu * x / np.log(x) ** 2


def u_mu(x, mu: float):
    """exp(-mu x / ln^2 x) for x > 1."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 1.0):
        raise DomainError("u_mu needs x > 1")
    out = np.exp(_log_u(mu, x))
    return float(out) if out.ndim == 0 else out


def u_tilde(x, mu: float):
    """u_mu(x), clamped to u_mu(e^2) for 0 <= x <= e^2."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("u_tilde needs x >= 0")
    e2 = math.e ** 2
    out = np.exp(_log_u(mu, np.maximum(x, e2)))
    return float(out) if out.ndim == 0 else out


def F(r, d: int):
    """(1 + r)^-(d+1)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("F needs r >= 0")
    out = (1.0 + r) ** (-(d + 1))
    return float(out) if out.ndim == 0 else out


def F_psi(r, p: BoundParams):
    x = p.gamma_prime / (8.0 * p.v_a) * np.asarray(r, dtype=float)
    return u_tilde(x, p.mu) * F(x, p.d)


def G2(zeta, gamma_prime: float):
    """7354/g' on [0, 36058], 130 e^2 zeta^10 u_{2/7}(zeta)/g' above."""
    z = np.asarray(zeta, dtype=float)
    if np.any(z < 0):
        raise DomainError("G2 needs zeta >= 0")
    hi = z > G2_THRESHOLD
    zs = np.where(hi, z, 2.0 * G2_THRESHOLD)
    tail = np.exp(math.log(130.0) + 2.0 + 10.0 * np.log(zs) + _log_u(2.0 / 7.0, zs))
    out = np.where(hi, tail, G2_PLATEAU) / gamma_prime
    return float(out) if out.ndim == 0 else out


def G1(n, p: BoundParams):
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise DomainError("G1 needs n >= 0")
    out = 4.0 * G2(p.gamma_prime * n / (2.0 * p.v_a), p.gamma_prime) \
        + p.C_a * p.F_norm / (p.a * p.v_a) * np.exp(-p.a * n / 2.0)
    return float(out) if np.ndim(out) == 0 else out


def K(x, p: BoundParams):
    x = np.abs(np.asarray(x, dtype=float))
    out = 4.0 * G2(p.gamma_prime * x / (2.0 * p.v_a), p.gamma_prime) \
        + p.C_a * p.C_Fa * p.phi_a * p.F_norm / (p.a ** 2 * p.v_a ** 2) * np.exp(-p.a * x / 2.0)
    return float(out) if np.ndim(out) == 0 else out


def filter_envelope(t, gamma_prime: float):
    """2e^2 g'(g'|t|) exp(-(2/7) g'|t| / ln^2(g'|t|)) for g'|t| >= e^(1/sqrt 2), g'/pi below."""
    x = gamma_prime * np.abs(np.asarray(t, dtype=float))
    cut = math.exp(1.0 / math.sqrt(2.0))
    xs = np.maximum(x, cut)
    big = 2.0 * math.e ** 2 * gamma_prime * xs * np.exp(_log_u(2.0 / 7.0, xs))
    out = np.where(x >= cut, big, gamma_prime / math.pi)
    return float(out) if out.ndim == 0 else out


def flow_prefactor(s: float, p: BoundParams) -> float:
    """Upper bound e^{2 s |Psi|_F C_F} - 1 for the integrated generator weight."""
    return math.expm1(2.0 * s * p.psi_F * p.C_F)


def sqrt_G1_sum(p: BoundParams, rtol: float = 1e-15) -> float:
    """sum_{n >= 1} sqrt(G1(n - 1)), summed in chunks until the tail is negligible."""
    total, start = 0.0, 0
    z_peak = G2_THRESHOLD  # G2 decreases beyond the plateau threshold
    while start < _SUM_MAX:
        n = np.arange(start, start + _SUM_CHUNK, dtype=float)
        terms = np.sqrt(G1(n, p))
        total += float(terms.sum())
        start += _SUM_CHUNK
        z_end = p.gamma_prime * (start - 1) / (2.0 * p.v_a)
        if z_end > z_peak and terms[-1] * _SUM_CHUNK <= rtol * total:
            return total
    raise DomainError("sum of sqrt(G1) did not converge within the term budget")


@dataclass
class AssembledBound:
    rprime: int
    lines: tuple[float, float, float, float]

    @property
    def value(self) -> float:
        return float(sum(self.lines))


def _shell_pair_sum(lat: LatticeSpec, outer: set, minus: set, inner: set, p: BoundParams) -> float:
    zs = sorted(outer - minus)
    xs = sorted(inner)
    if not zs or not xs:
        return 0.0
    Dm = lat.distance_matrix[np.ix_(xs, zs)]
    return float(np.sum(F_psi(Dm, p)))


def assemble(rprime: int, u, r: int, s: float, lat: LatticeSpec, p: BoundParams,
             g1_sum: float | None = None) -> AssembledBound:
    """Four-line bound on |alpha^{Lambda_{r'}}(O) - alpha^{Lambda_{r'-1}}(O)| / |O|.

    Lambda_n = b_u(n + r); the sets are finite-lattice balls, so the sums
    over z and x are exact.
    """
    if rprime < 1:
        raise DomainError("assemble needs r' >= 1")
    lam = lambda n: set(ball(u, n + r, lat).sites)  # noqa: E731
    pref = flow_prefactor(s, p)
    k1, k2 = (rprime - 1) // 3, (2 * (rprime - 1)) // 3
    l1 = pref * _shell_pair_sum(lat, lam(rprime), lam(rprime - 1), lam(0), p)
    l2 = 2.0 * pref * _shell_pair_sum(lat, lam(rprime - 1), lam(k1), lam(0), p)
    l3 = 4.0 * s * p.psi_F * _shell_pair_sum(lat, lam(rprime - 1), lam(k2), lam(k1), p)
    if g1_sum is None:
        g1_sum = sqrt_G1_sum(p)
    l4 = 16.0 * s * p.dphi_a * p.Fa0 * g1_sum * len(lam(k2)) * math.sqrt(K(k1, p))
    return AssembledBound(int(rprime), (l1, l2, l3, l4))


def bound_curve(rprimes, u, r: int, s: float, lat: LatticeSpec, p: BoundParams) -> list[AssembledBound]:
    g1 = sqrt_G1_sum(p)
    return [assemble(rp, u, r, s, lat, p, g1) for rp in rprimes]


_SCALAR = {
    "u_mu": lambda x, p: u_mu(x, p.mu),
    "u_tilde": lambda x, p: u_tilde(x, p.mu),
    "F": lambda x, p: F(x, p.d),
    "F_psi": F_psi,
    "G2": lambda x, p: G2(x, p.gamma_prime),
    "G1": G1,
    "K": K,
    "envelope": lambda x, p: filter_envelope(x, p.gamma_prime),
}

NAMES = tuple(_SCALAR) + ("assemble",)


def bound_functions(name: str, arg, params: BoundParams, **context) -> float:
    """Evaluate one named bound function; ``assemble`` needs u, r, s and lattice."""
    if name == "assemble":
        return assemble(int(arg), context["u"], int(context["r"]), float(context["s"]),
                        context["lattice"], params).value
    try:
        f = _SCALAR[name]
    except KeyError:
        raise DomainError(f"unknown bound function {name!r}") from None
    return f(arg, params)
