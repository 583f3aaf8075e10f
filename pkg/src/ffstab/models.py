"""Model Hamiltonians, perturbations and their truncations to balls.

A :class:`HamiltonianSpec` stores positive semidefinite local terms, each
anchored at a site ``u`` with a declared ball ``b_u(radius)`` containing its
support. Region Hamiltonians ``H_B`` collect the terms whose declared balls
fit inside ``B``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from . import qop
from .errors import ConfigError, DecayCertificationError, DomainError
from .lattice import Ball, LatticeSpec, ball, covering_radius
from .qop import HilbertSpec, QOperator
from .rng import stream

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Y = np.array([[0.0, -1j], [1j, 0.0]])
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]])
PSD_TOL = 1e-12


def _ket_proj(bits: str) -> np.ndarray:
    """Projector onto a computational basis product state, e.g. '01'."""
    idx = int(bits, 2)
    P = np.zeros((2 ** len(bits),) * 2)
    P[idx, idx] = 1.0
    return P


def local_op(matrix: np.ndarray, sites: Sequence[int], hs: HilbertSpec) -> QOperator:
    """Build a QOperator from a matrix written in the order of ``sites``."""
    sites = [int(s) for s in sites]
    if len(set(sites)) != len(sites):
        raise ValueError("repeated site in operator support")
    order = sorted(sites)
    M = np.asarray(matrix)
    if sites != order:
        perm = qop._perm_to(sites, order, hs)
        M = M[np.ix_(perm, perm)]
    return QOperator(M, tuple(order))


@dataclass
class Term:
    anchor: int
    op: QOperator
    radius: int = 1
    shift: float = 0.0


@dataclass(frozen=True)
class ModelTag:
    kind: str
    params: tuple = ()

    _PATTERN = re.compile(r"^\s*(\w+)\s*(?:\((.*)\))?\s*$")

    @classmethod
    def parse(cls, text: str) -> "ModelTag":
        m = cls._PATTERN.match(text)
        if not m:
            raise ConfigError("model", f"cannot parse model tag {text!r}")
        args = []
        if m.group(2):
            for a in m.group(2).split(","):
                a = a.strip()
                if "=" in a:
                    a = a.split("=", 1)[1].strip()
                args.append(int(a) if re.fullmatch(r"-?\d+", a) else a)
        return cls(m.group(1), tuple(args))

    def __str__(self) -> str:
        return f"{self.kind}({', '.join(str(p) for p in self.params)})"


@dataclass
class HamiltonianSpec:
    lattice: LatticeSpec
    hilbert: HilbertSpec
    terms: list[Term]
    tag: ModelTag | None = None

    @property
    def shift_record(self) -> list[float]:
        return [t.shift for t in self.terms]

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def dim(self) -> int:
        return self.hilbert.dim

    @property
    def all_sites(self) -> tuple[int, ...]:
        return tuple(range(self.n_sites))

    def term_ball(self, t: Term) -> Ball:
        return ball(t.anchor, t.radius, self.lattice)

    def validate(self) -> None:
        for t in self.terms:
            if not set(t.op.support) <= self.term_ball(t).sites:
                raise DomainError(f"term at {t.anchor} has support outside its declared ball")
            w = sla.eigvalsh(t.op.dense())
            if w[0] < -PSD_TOL * max(1.0, abs(w[-1])):
                raise DomainError(f"term at {t.anchor} is not positive semidefinite (min eig {w[0]})")

    def region_terms(self, region: Iterable[int], rule: str = "ball") -> list[Term]:
        """Terms counted in H_B.

        ``rule='ball'`` keeps terms whose declared ball lies in the region;
        ``rule='support'`` keeps terms whose support does.
        """
        region = set(region)
        if rule == "ball":
            return [t for t in self.terms if self.term_ball(t).sites <= region]
        if rule == "support":
            return [t for t in self.terms if set(t.op.support) <= region]
        raise ValueError(f"unknown region rule {rule!r}")

    def region_hamiltonian(self, region: Iterable[int], rule: str = "ball",
                           sparse: bool | None = None) -> QOperator:
        region = tuple(sorted(set(region)))
        ops = [t.op for t in self.region_terms(region, rule)]
        out = qop.add(ops, self.hilbert, support=region, sparse=sparse)
        out.hermitian = True
        return out

    @cached_property
    def _full(self) -> QOperator:
        return self.region_hamiltonian(self.all_sites)

    def matrix(self):
        """Full H_0 on all sites (dense up to 1024, sparse above)."""
        return self._full.matrix

    def operator(self) -> QOperator:
        return self._full


# ---------------------------------------------------------------------------
# model catalogue


def _qubit_hilbert(n: int) -> HilbertSpec:
    return HilbertSpec((2,) * n)


def _shifted(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    lam = float(sla.eigvalsh(matrix)[0])
    return matrix - lam * np.eye(matrix.shape[0]), lam


def paper_chain(N: int, perturbed: bool = False) -> HamiltonianSpec:
    """Ring of 2N qubits with bond terms favouring the Neel state |0101...01>.

    Bonds are labelled k = 1..2N with k+1 taken mod 2N and sit on lattice
    sites k-1 and k (mod 2N). With ``perturbed`` the weak penalty of each bond
    is cancelled, which leaves two degenerate Neel ground states.
    """
    if N < 1:
        raise ValueError("N must be positive")
    L = 2 * N
    lat = LatticeSpec(1, L)
    hs = _qubit_hilbert(L)
    terms = []
    for k in range(1, L + 1):
        weak = "01" if k % 2 == 0 else "10"
        M = _ket_proj("11") + _ket_proj("00")
        if not perturbed:
            M = M + _ket_proj(weak) / (3 * N)
        i = k - 1
        terms.append(Term(i, local_op(M, [i, (i + 1) % L], hs), radius=1))
    tag = ModelTag("PaperChainPerturbed" if perturbed else "PaperChain", (N,))
    return HamiltonianSpec(lat, hs, terms, tag)


def paper_chain_v(N: int) -> "PerturbationSpec":
    """The cancelling perturbation V = -sum_k V_k of the Neel chain."""
    L = 2 * N
    hs = _qubit_hilbert(L)
    terms = []
    for k in range(1, L + 1):
        weak = "01" if k % 2 == 0 else "10"
        i = k - 1
        op = local_op(-_ket_proj(weak) / (3 * N), [i, (i + 1) % L], hs)
        terms.append(PTerm(i, 1, op))
    V = PerturbationSpec(J=1.0 / (3 * N), decay=Decay("finite_range", 1), terms=terms,
                         directive={"kind": "paper_chain", "N": N})
    V.certify()
    return V


def _bond_terms(lat: LatticeSpec, hs: HilbertSpec, pin: bool) -> list[Term]:
    terms = []
    for u in lat.sites():
        c = lat.coord(u)
        ops = []
        for ax in range(lat.d):
            nb = list(c)
            nb[ax] = (nb[ax] + 1) % lat.shape[ax]
            ops.append(lat.index(tuple(nb)))
        sites = [u] + ops
        dim = 2 ** len(sites)
        M = np.zeros((dim, dim))
        for j, v in enumerate(ops, start=1):
            zz = [np.eye(2)] * len(sites)
            zz[0] = PAULI_Z
            zz[j] = PAULI_Z
            M -= _kron_all(zz)
        if pin and u == 0:
            z0 = [np.eye(2)] * len(sites)
            z0[0] = PAULI_Z
            M -= _kron_all(z0)
        Q, lam = _shifted(M)
        terms.append(Term(u, local_op(Q, sites, hs), radius=1, shift=lam))
    return terms


def _kron_all(mats) -> np.ndarray:
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


def ising_chain(L: int) -> HamiltonianSpec:
    """Ferromagnetic Ising ring, -sum Z_u Z_{u+1}, shifted to 1 - Z Z per bond."""
    lat = LatticeSpec(1, L)
    hs = _qubit_hilbert(L)
    return HamiltonianSpec(lat, hs, _bond_terms(lat, hs, pin=False), ModelTag("IsingChain", (L,)))


def ising_2d(L: int) -> HamiltonianSpec:
    lat = LatticeSpec(2, L)
    hs = _qubit_hilbert(L * L)
    return HamiltonianSpec(lat, hs, _bond_terms(lat, hs, pin=False), ModelTag("Ising2D", (L,)))


def pinned_ising(d: int, L: int) -> HamiltonianSpec:
    """Ising model with an extra -Z field on site 0 selecting |0...0>."""
    lat = LatticeSpec(d, L)
    hs = _qubit_hilbert(lat.n_sites)
    return HamiltonianSpec(lat, hs, _bond_terms(lat, hs, pin=True), ModelTag("PinnedIsing", (d, L)))


def toric_code(L1: int, L2: int) -> HamiltonianSpec:
    """Kitaev's toric code on an L1 x L2 torus of cells.

    The geometry uses a doubled lattice of shape (2 L1, 2 L2): sites with two
    even coordinates are vertices, two odd coordinates are plaquette centres
    (both of dimension 1, they only anchor terms), and mixed-parity sites are
    the edge qubits. Star and plaquette projectors (1 - A)/2, (1 - B)/2 are
    anchored at their vertex or centre, so every term sits inside b_u(1).
    """
    if L1 < 2 or L2 < 2:
        raise ValueError("toric code needs at least 2 cells per direction")
    shape = (2 * L1, 2 * L2)
    lat = LatticeSpec(2, max(shape), shape=shape)
    dims = [2 if (a + b) % 2 else 1 for a, b in (lat.coord(i) for i in lat.sites())]
    hs = HilbertSpec(tuple(dims))
    terms = []
    for i in lat.sites():
        a, b = lat.coord(i)
        if (a + b) % 2:
            continue
        nbrs = [((a + 1) % shape[0], b), ((a - 1) % shape[0], b), (a, (b + 1) % shape[1]), (a, (b - 1) % shape[1])]
        sites = [lat.index(p) for p in nbrs]
        P = PAULI_X if a % 2 == 0 else PAULI_Z
        M = 0.5 * (np.eye(16) - _kron_all([P] * 4))
        terms.append(Term(i, local_op(M, sites, hs), radius=1))
    return HamiltonianSpec(lat, hs, terms, ModelTag("ToricCode", (L1, L2)))


def build_model(tag, lat: LatticeSpec | None = None) -> HamiltonianSpec:
    """Build a catalogue model from a :class:`ModelTag` (or its string form)."""
    if isinstance(tag, str):
        tag = ModelTag.parse(tag)
    if isinstance(tag, dict):
        tag = _tag_from_dict(tag)
    p = list(tag.params)
    kind = tag.kind.replace("_", "").lower()
    try:
        if kind == "paperchain":
            H = paper_chain(int(p[0]))
        elif kind == "paperchainperturbed":
            H = paper_chain(int(p[0]), perturbed=True)
        elif kind == "isingchain":
            H = ising_chain(int(p[0]) if p else (lat.L if lat else 8))
        elif kind == "ising2d":
            H = ising_2d(int(p[0]) if p else (lat.L if lat else 3))
        elif kind == "pinnedising":
            d = int(p[0]) if p else 1
            L = int(p[1]) if len(p) > 1 else (lat.L if lat else 10)
            H = pinned_ising(d, L)
        elif kind == "toriccode":
            H = toric_code(int(p[0]), int(p[1]))
        elif kind == "heisenbergring":
            H = heisenberg_ring(int(p[0]))
        elif kind == "custom":
            H = load_custom(p[0])[0]
        else:
            raise ConfigError("model", f"unknown model {tag.kind!r}")
    except IndexError:
        raise ConfigError("model", f"missing parameters for {tag}") from None
    if lat is not None and (lat.shape != H.lattice.shape or lat.periodic != H.lattice.periodic):
        raise ConfigError("lattice", f"lattice {lat.shape} incompatible with model {tag}")
    H.validate()
    return H


def _tag_from_dict(d: dict) -> ModelTag:
    d = dict(d)
    kind = d.pop("kind")
    order = {"paperchain": ["N"], "paperchainperturbed": ["N"], "isingchain": ["L"],
             "ising2d": ["L"], "pinnedising": ["d", "L"], "toriccode": ["L1", "L2"], "heisenbergring": ["L"],
             "custom": ["file"]}
    names = order.get(kind.replace("_", "").lower(), [])
    return ModelTag(kind, tuple(d[n] for n in names if n in d))


# ---------------------------------------------------------------------------
# perturbations


@dataclass(frozen=True)
class Decay:
    """Decay family f(r): finite_range(R), exponential(mu) or power(p)."""

    kind: str
    param: float

    def __call__(self, r: float) -> float:
        if self.kind == "finite_range":
            return 1.0 if r <= self.param else 0.0
        if self.kind == "exponential":
            return math.exp(-self.param * r)
        if self.kind == "power":
            return (1.0 + r) ** (-self.param)
        raise ValueError(f"unknown decay family {self.kind!r}")

    def validate(self, d: int) -> None:
        if self.kind == "exponential" and not self.param > 0:
            raise DomainError("exponential decay needs mu > 0")
        if self.kind == "power" and not self.param > d + 2:
            raise DomainError(f"power decay needs p > d + 2 = {d + 2}")
        if self.kind == "finite_range" and self.param < 0:
            raise DomainError("finite range must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "Decay":
        kind = d["kind"]
        key = {"finite_range": "R", "exponential": "mu", "power": "p"}.get(kind)
        if key is None:
            raise ConfigError("decay.kind", f"unknown decay family {kind!r}")
        return cls(kind, float(d.get(key, d.get("param", 1.0))))


@dataclass
class PTerm:
    anchor: int
    r: int
    op: QOperator


@dataclass
class PerturbationSpec:
    J: float
    decay: Decay
    terms: list[PTerm]
    seed: int | None = None
    directive: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def certify(self, rel_slack: float = 1e-12) -> None:
        for t in self.terms:
            n = qop.opnorm(t.op.dense(), hermitian=True)
            bound = self.J * self.decay(t.r)
            if n > bound * (1 + rel_slack) + 1e-15:
                raise DecayCertificationError(
                    f"term (u={t.anchor}, r={t.r}) has norm {n} above J f(r) = {bound}")

    def scaled(self, J_new: float) -> "PerturbationSpec":
        """Same shape of perturbation at a different strength."""
        a = 0.0 if self.J == 0 else J_new / self.J
        terms = [PTerm(t.anchor, t.r, t.op.scaled(a)) for t in self.terms]
        return PerturbationSpec(J_new, self.decay, terms, self.seed, dict(self.directive, J=J_new))

    def operator(self, hs: HilbertSpec, support: Sequence[int] | None = None) -> QOperator:
        support = tuple(range(hs.n_sites)) if support is None else support
        return qop.add([t.op for t in self.terms], hs, support=support)

    def matrix(self, hs: HilbertSpec):
        key = hs.site_dims
        if key not in self._cache:
            self._cache[key] = self.operator(hs).matrix
        return self._cache[key]


def uniform_field(H: HamiltonianSpec, J: float, axis: str = "x") -> PerturbationSpec:
    """J times a Pauli on every qubit site."""
    P = {"x": PAULI_X, "y": PAULI_Y, "z": PAULI_Z}[axis]
    terms = [PTerm(u, 0, QOperator(J * P, (u,), True))
             for u in H.lattice.sites() if H.hilbert.site_dims[u] == 2]
    V = PerturbationSpec(J, Decay("finite_range", 0), terms,
                         directive={"kind": "field", "J": J, "axis": axis})
    V.certify()
    return V


def _random_hermitian(dim: int, rng: np.random.Generator, real: bool) -> np.ndarray:
    if real:
        G = rng.standard_normal((dim, dim))
        return (G + G.T) / 2
    G = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return (G + G.conj().T) / 2


def random_perturbation(H: HamiltonianSpec, J: float, decay: Decay, seed: int,
                        r_max: int = 2, real: bool = False) -> PerturbationSpec:
    """Seeded GUE (or GOE if ``real``) terms on every ball b_u(r), r <= r_max.

    Each term is rescaled to norm exactly J f(r). Balls containing only
    dimension-one sites and terms with f(r) = 0 are skipped.
    """
    decay.validate(H.lattice.d)
    terms = []
    hs = H.hilbert
    for u in H.lattice.sites():
        for r in range(r_max + 1):
            if r > covering_radius(H.lattice):
                break
            strength = J * decay(r)
            if strength == 0.0:
                continue
            sites = hs.active(ball(u, r, H.lattice).sites)
            if not sites:
                continue
            rng = stream(seed, "models", "random_perturbation", u, r)
            M = _random_hermitian(hs.sub_dim(sites), rng, real)
            M *= strength / qop.opnorm(M, hermitian=True)
            terms.append(PTerm(u, r, QOperator(M, sites, True)))
    V = PerturbationSpec(J, decay, terms, seed,
                         {"kind": "random", "J": J, "decay": {"kind": decay.kind, "param": decay.param},
                          "seed": seed, "r_max": r_max, "real": real})
    V.certify()
    return V


def build_perturbation(directive: dict, H: HamiltonianSpec, seed: int | None = None) -> PerturbationSpec:
    """Dispatch on ``directive['kind']`` in {field, paper_chain, random, custom}."""
    kind = directive.get("kind", "random")
    if kind == "field":
        return uniform_field(H, float(directive["J"]), directive.get("axis", "x"))
    if kind == "paper_chain":
        N = int(directive.get("N", H.n_sites // 2))
        V = paper_chain_v(N)
        if "J" in directive:
            V = V.scaled(float(directive["J"]))
        return V
    if kind == "random":
        s = directive.get("seed", seed)
        if s is None:
            raise ConfigError("perturbation.seed", "random perturbations need a seed")
        return random_perturbation(H, float(directive["J"]), Decay.from_dict(directive.get("decay", {"kind": "exponential", "mu": 1.0})),
                                   int(s), int(directive.get("r_max", 2)), bool(directive.get("real", False)))
    if kind == "custom":
        _, V = load_custom(directive["file"])
        if V is None:
            raise ConfigError("perturbation.file", "custom file has no perturbation section")
        return V
    raise ConfigError("perturbation.kind", f"unknown perturbation builder {kind!r}")


# ---------------------------------------------------------------------------
# truncations


def truncate_hamiltonian(H: HamiltonianSpec, V: PerturbationSpec | None, s: float, u, q: int,
                         sparse: bool | None = None) -> QOperator:
    """H^u_s(q): terms of H_0 and s V whose declared balls fit in b_u(q).

    The result is an operator on the sites of b_u(q) (open truncation).
    """
    if q < 0:
        raise ValueError("q must be non-negative")
    B = ball(u, q, H.lattice)
    region = B.sorted_sites
    ops = [t.op for t in H.region_terms(region)]
    if V is not None and s != 0:
        for t in V.terms:
            if ball(t.anchor, t.r, H.lattice).sites <= B.sites:
                ops.append(t.op.scaled(s))
    out = qop.add(ops, H.hilbert, support=region, sparse=sparse)
    out.hermitian = True
    return out


def hamiltonian_at(H: HamiltonianSpec, V: PerturbationSpec | None, s: float):
    """Full matrix of H_0 + s V."""
    M = H.matrix()
    if V is None or s == 0:
        return M
    return M + s * V.matrix(H.hilbert)


# ---------------------------------------------------------------------------
# custom model files (JSON)


def _parse_matrix(entries, dim: int) -> np.ndarray:
    """Flat row-major entry list; complex entries as [re, im] or {"re", "im"}."""
    vals = []
    for x in entries:
        if isinstance(x, (list, tuple)):
            vals.append(complex(float(x[0]), float(x[1])))
        elif isinstance(x, dict):
            vals.append(complex(float(x.get("re", 0.0)), float(x.get("im", 0.0))))
        else:
            vals.append(complex(float(x)))
    if len(vals) != dim * dim:
        raise ConfigError("matrix", f"expected {dim * dim} entries, got {len(vals)}")
    M = np.array(vals).reshape(dim, dim)
    return M.real.copy() if not np.any(M.imag) else M


def load_custom(path) -> tuple[HamiltonianSpec, PerturbationSpec | None]:
    """Read a custom model file. See README for the schema."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    ld = doc["lattice"]
    lat = LatticeSpec(int(ld["d"]), int(ld.get("L", max(ld.get("shape", [2])))),
                      bool(ld.get("periodic", True)), tuple(ld["shape"]) if "shape" in ld else None)
    if "site_dims" in doc:
        dims = tuple(int(x) for x in doc["site_dims"])
    else:
        dims = (int(doc.get("site_dim", 2)),) * lat.n_sites
    if len(dims) != lat.n_sites:
        raise ConfigError("site_dims", "length differs from lattice site count")
    hs = HilbertSpec(dims)
    terms = []
    for k, t in enumerate(doc["terms"]):
        sites = [int(x) for x in t["support"]]
        M = _parse_matrix(t["matrix"], hs.sub_dim(sites))
        M = (M + M.conj().T) / 2
        lam = float(sla.eigvalsh(M)[0])
        shift = min(lam, 0.0) if t.get("shift", "auto") == "auto" else float(t["shift"])
        M = M - shift * np.eye(M.shape[0])
        terms.append(Term(int(t["anchor"]), local_op(M, sites, hs), int(t.get("radius", 1)), shift))
    H = HamiltonianSpec(lat, hs, terms, ModelTag("Custom", (str(path),)))
    V = None
    if "perturbation" in doc:
        pd = doc["perturbation"]
        pts = []
        for t in pd["terms"]:
            sites = [int(x) for x in t["support"]]
            pts.append(PTerm(int(t["anchor"]), int(t["r"]), local_op(_parse_matrix(t["matrix"], hs.sub_dim(sites)), sites, hs)))
        V = PerturbationSpec(float(pd["J"]), Decay.from_dict(pd["decay"]), pts,
                             directive={"kind": "custom", "file": str(path)})
        V.certify()
    return H, V


def write_custom(path, H: HamiltonianSpec, V: PerturbationSpec | None = None) -> None:
    def mat(M):
        M = np.asarray(M)
        return [[float(x.real), float(x.imag)] if np.iscomplexobj(M) else float(x) for x in M.reshape(-1)]

    doc = {"lattice": {"d": H.lattice.d, "L": H.lattice.L, "shape": list(H.lattice.shape),
                       "periodic": H.lattice.periodic},
           "site_dims": list(H.hilbert.site_dims),
           "terms": [{"anchor": t.anchor, "radius": t.radius, "support": list(t.op.support),
                      "shift": 0.0, "matrix": mat(t.op.dense())} for t in H.terms]}
    if V is not None:
        doc["perturbation"] = {"J": V.J, "decay": {"kind": V.decay.kind, "param": V.decay.param},
                               "terms": [{"anchor": t.anchor, "r": t.r, "support": list(t.op.support),
                                          "matrix": mat(t.op.dense())} for t in V.terms]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def heisenberg_ring(L: int) -> HamiltonianSpec:
    """Ring of singlet projectors (ferromagnetic Heisenberg), frustration free."""
    lat = LatticeSpec(1, L)
    hs = _qubit_hilbert(L)
    singlet = np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2)
    P = np.outer(singlet, singlet)
    terms = [Term(u, local_op(P, [u, (u + 1) % L], hs), radius=1) for u in range(L)]
    return HamiltonianSpec(lat, hs, terms, ModelTag("HeisenbergRing", (L,)))
