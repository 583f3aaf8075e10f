"""Operators and states on tensor-product spaces of finite-dimensional sites.

Operators carry an explicit support (a sorted tuple of site indices) and a
matrix acting on the tensor product of those sites only, in canonical order
(lowest site index is the most significant factor). Functions here move
between supports without materialising identities where possible: local
factors are applied to larger operators by tensor contraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapacityError, DomainError, EmbeddingError, RegionError

DEFAULT_CAP = 2**20
DENSE_CAP = 2**12
SPARSE_ABOVE = 2**10
EIG_CLIP = 1e-14


@dataclass(frozen=True)
class HilbertSpec:
    site_dims: tuple[int, ...]
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        dims = tuple(int(x) for x in self.site_dims)
        if any(x < 1 for x in dims):
            raise ValueError("site dimensions must be positive")
        object.__setattr__(self, "site_dims", dims)
        total = 1
        for x in dims:
            total *= x
            if total > self.cap:
                raise CapacityError(f"Hilbert space dimension exceeds cap {self.cap}")

    @property
    def n_sites(self) -> int:
        return len(self.site_dims)

    @property
    def dim(self) -> int:
        return self.sub_dim(range(self.n_sites))

    @property
    def site_order(self) -> tuple[int, ...]:
        return tuple(range(self.n_sites))

    def sub_dim(self, sites: Iterable[int]) -> int:
        out = 1
        for s in sites:
            out *= self.site_dims[s]
        return out

    def dims_of(self, sites: Sequence[int]) -> list[int]:
        return [self.site_dims[s] for s in sites]

    def active(self, sites: Iterable[int]) -> tuple[int, ...]:
        """Sites with local dimension above one, sorted."""
        return tuple(sorted(s for s in sites if self.site_dims[s] > 1))


def _as_support(sites: Iterable[int]) -> tuple[int, ...]:
    return tuple(sorted(set(int(s) for s in sites)))


@dataclass
class QOperator:
    """A matrix acting on the sites in ``support`` (identity elsewhere)."""

    matrix: np.ndarray | sp.spmatrix
    support: tuple[int, ...]
    hermitian: bool | None = None

    def __post_init__(self):
        self.support = _as_support(self.support)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else np.asarray(self.matrix)

    def check_hermitian(self, tol: float = 1e-12) -> bool:
        M = self.dense()
        scale = max(np.abs(M).max(initial=0.0), 1.0)
        return bool(np.abs(M - M.conj().T).max(initial=0.0) <= tol * scale)

    def scaled(self, a) -> "QOperator":
        return QOperator(self.matrix * a, self.support, self.hermitian if np.isrealobj(a) else None)


@dataclass
class DensityMatrix:
    matrix: np.ndarray
    region: tuple[int, ...]

    def validate(self, tol: float = 1e-12) -> None:
        tr = np.trace(self.matrix).real
        if abs(tr - 1.0) > tol:
            raise DomainError(f"density matrix trace {tr} differs from 1")
        if sla.eigvalsh(self.matrix).min() < -tol:
            raise DomainError("density matrix is not positive semidefinite")


# ---------------------------------------------------------------------------
# moving operators between supports


def _check_subset(inner: Sequence[int], outer: Sequence[int]):
    if not set(inner) <= set(outer):
        raise EmbeddingError(f"support {tuple(inner)} not contained in {tuple(outer)}")


def apply_left(local: np.ndarray, loc_support: Sequence[int], M: np.ndarray,
               M_support: Sequence[int], hs: HilbertSpec) -> np.ndarray:
    """Return (local ⊗ 1) @ M where rows of M are indexed by ``M_support``.

    ``M`` may have any number of columns, so this also applies a local
    operator to a batch of state vectors.
    """
    loc_support = tuple(loc_support)
    M_support = tuple(M_support)
    _check_subset(loc_support, M_support)
    if not loc_support:
        return local.reshape(()) * M if local.size == 1 else M
    dims = hs.dims_of(M_support)
    pos = [M_support.index(s) for s in loc_support]
    k = len(pos)
    T = M.reshape(dims + [-1])
    A = local.reshape(hs.dims_of(loc_support) * 2)
    out = np.tensordot(A, T, axes=(list(range(k, 2 * k)), pos))
    out = np.moveaxis(out, list(range(k)), pos)
    return out.reshape(M.shape)


def apply_right(M: np.ndarray, local: np.ndarray, loc_support: Sequence[int],
                M_support: Sequence[int], hs: HilbertSpec) -> np.ndarray:
    """Return M @ (local ⊗ 1) where columns of M are indexed by ``M_support``."""
    return apply_left(local.T, loc_support, M.T, M_support, hs).T


def front_factor(M: np.ndarray, sub: Sequence[int], M_support: Sequence[int], hs: HilbertSpec):
    """Reshape M (rows on ``M_support``) to (D_sub, rest) with ``sub`` rows first.

    Returns the reshaped array and a function mapping an array of the same
    shape back to the layout of ``M``.
    """
    sub, M_support = tuple(sub), tuple(M_support)
    _check_subset(sub, M_support)
    dims = hs.dims_of(M_support)
    pos = [M_support.index(s) for s in sub]
    other = [i for i in range(len(dims)) if i not in pos]
    T = M.reshape(dims + [-1])
    order = pos + other + [len(dims)]
    X = np.transpose(T, order).reshape(hs.sub_dim(sub), -1)
    shape_t = [dims[i] for i in order[:-1]] + [T.shape[-1]]
    inv = np.argsort(order)

    def back(Y: np.ndarray) -> np.ndarray:
        return np.transpose(Y.reshape(shape_t), inv).reshape(M.shape)

    return X, back


def _perm_to(src_order: Sequence[int], target: Sequence[int], hs: HilbertSpec) -> np.ndarray:
    """Index permutation taking basis order ``src_order`` to ``target``."""
    dims = hs.dims_of(src_order)
    idx = np.arange(int(np.prod(dims, dtype=np.int64))).reshape(dims)
    axes = [list(src_order).index(s) for s in target]
    return np.transpose(idx, axes).reshape(-1)


def expand(op: QOperator, target_support: Sequence[int], hs: HilbertSpec,
           sparse: bool | None = None) -> QOperator:
    """Re-express ``op`` on a larger support by tensoring with identity."""
    target = _as_support(target_support)
    _check_subset(op.support, target)
    if tuple(op.support) == target:
        return op
    rest = [s for s in target if s not in op.support]
    d_rest = hs.sub_dim(rest)
    dim = hs.sub_dim(target)
    if dim > hs.cap:
        raise CapacityError("target dimension above cap")
    if sparse is None:
        sparse = dim > DENSE_CAP
    perm = _perm_to(list(op.support) + rest, target, hs)
    if sparse:
        big = sp.kron(sp.csr_matrix(op.matrix), sp.identity(d_rest, format="csr"), format="csr")
        big = big[perm][:, perm]
    else:
        big = np.kron(op.dense(), np.eye(d_rest))[np.ix_(perm, perm)]
    return QOperator(big, target, op.hermitian)


def embed(op: QOperator, target: HilbertSpec, sparse: bool | None = None) -> QOperator:
    """Place ``op`` into the full space described by ``target``."""
    if op.support and max(op.support) >= target.n_sites:
        raise EmbeddingError("operator support exceeds target sites")
    expected = target.sub_dim(op.support)
    if op.matrix.shape != (expected, expected):
        raise EmbeddingError(f"matrix shape {op.matrix.shape} does not match support dimension {expected}")
    return expand(op, range(target.n_sites), target, sparse=sparse)


def restrict_identity(dim: int, support: Sequence[int]) -> QOperator:
    return QOperator(np.eye(dim), support, True)


def add(ops: Sequence[QOperator], hs: HilbertSpec, support: Sequence[int] | None = None,
        sparse: bool | None = None) -> QOperator:
    """Sum of operators, expressed on the union of supports (or ``support``)."""
    if support is None:
        support = sorted(set().union(*[set(o.support) for o in ops])) if ops else []
    support = _as_support(support)
    dim = hs.sub_dim(support)
    if sparse is None:
        sparse = dim > SPARSE_ABOVE
    dtype = np.result_type(*[o.matrix.dtype for o in ops]) if ops else np.float64
    if sparse:
        total = sp.csr_matrix((dim, dim), dtype=dtype)
        for o in ops:
            total = total + expand(o, support, hs, sparse=True).matrix
    else:
        total = np.zeros((dim, dim), dtype=dtype)
        for o in ops:
            if tuple(o.support) == support:
                total += o.dense()
            else:
                total += _expand_dense(o, support, hs)
    return QOperator(total, support)


def _expand_dense(op: QOperator, target: tuple[int, ...], hs: HilbertSpec) -> np.ndarray:
    return expand(op, target, hs, sparse=False).matrix


# ---------------------------------------------------------------------------
# partial traces and marginals


def partial_trace(x, keep: Iterable[int], hs: HilbertSpec,
                  support: Sequence[int] | None = None) -> DensityMatrix:
    """Trace out everything except ``keep``.

    ``x`` is a state vector, a matrix, or a QOperator; ``support`` names the
    sites its indices run over (all sites by default).
    """
    if isinstance(x, QOperator):
        support = x.support
        x = x.dense()
    if support is None:
        support = tuple(range(hs.n_sites))
    support = tuple(support)
    keep = _as_support(keep)
    if not set(keep) <= set(support):
        raise RegionError(f"keep {keep} is not a subset of {support}")
    x = np.asarray(x)
    rest = [s for s in support if s not in keep]
    dk, dr = hs.sub_dim(keep), hs.sub_dim(rest)
    dims = hs.dims_of(support)
    order = [support.index(s) for s in keep] + [support.index(s) for s in rest]
    if x.ndim == 1:
        v = np.transpose(x.reshape(dims), order).reshape(dk, dr)
        rho = v @ v.conj().T
    else:
        n = len(support)
        T = x.reshape(dims * 2)
        T = np.transpose(T, order + [n + i for i in order]).reshape(dk, dr, dk, dr)
        rho = np.einsum("arbr->ab", T)
    return DensityMatrix(rho, keep)


def cross_marginals(vectors: np.ndarray, keep: Iterable[int], hs: HilbertSpec,
                    support: Sequence[int]) -> np.ndarray:
    """sigma[i, j] = Tr_rest |e_j><e_i| for the columns e of ``vectors``.

    Returns an array of shape (g, g, dk, dk).
    """
    support = tuple(support)
    keep = _as_support(keep)
    if not set(keep) <= set(support):
        raise RegionError(f"keep {keep} is not a subset of {support}")
    rest = [s for s in support if s not in keep]
    dk, dr = hs.sub_dim(keep), hs.sub_dim(rest)
    g = vectors.shape[1]
    dims = hs.dims_of(support)
    order = [support.index(s) for s in keep] + [support.index(s) for s in rest]
    V = np.transpose(vectors.reshape(dims + [g]), order + [len(dims)]).reshape(dk, dr, g)
    return np.einsum("arj,bri->ijab", V, V.conj())


def conditional_expectation(op: QOperator, region: Iterable[int], hs: HilbertSpec) -> QOperator:
    """Normalised partial trace onto ``region`` (identity elsewhere).

    This is the trace-preserving projection used to localise quasi-local
    operators: the result is supported on ``region`` ∩ support.
    """
    region = set(region)
    keep = _as_support(s for s in op.support if s in region)
    rest = [s for s in op.support if s not in region]
    if not rest:
        return op
    red = partial_trace(op.dense(), keep, hs, op.support).matrix / hs.sub_dim(rest)
    return QOperator(red, keep, op.hermitian)


# ---------------------------------------------------------------------------
# norms


def _is_hermitian_matrix(M) -> bool:
    if sp.issparse(M):
        diff = abs(M - M.conj().T)
        scale = max(abs(M).max(), 1.0)
        return diff.max() <= 1e-12 * scale if diff.nnz else True
    scale = max(np.abs(M).max(initial=0.0), 1.0)
    return bool(np.abs(M - M.conj().T).max(initial=0.0) <= 1e-12 * scale)


def _start_vector(n: int, dtype) -> np.ndarray:
    v = np.cos(np.arange(n) * 0.7 + 0.3) + 1.5
    return v.astype(dtype)


def opnorm(M, hermitian: bool | None = None, tol: float = 0.0) -> float:
    """Largest singular value of a dense or sparse matrix (or LinearOperator).

    ``tol`` is the relative accuracy requested from the iterative path.
    """
    if isinstance(M, QOperator):
        if hermitian is None:
            hermitian = M.hermitian
        M = M.matrix
    if M.shape[0] == 0 or M.shape[1] == 0:
        return 0.0
    if isinstance(M, spla.LinearOperator):
        return _iter_norm(M, bool(hermitian), tol)
    if hermitian is None:
        hermitian = M.shape[0] == M.shape[1] and _is_hermitian_matrix(M)
    if not sp.issparse(M) and max(M.shape) <= 1024:
        if not np.any(M):
            return 0.0
        if hermitian:
            w = sla.eigvalsh(M)
            return float(max(abs(w[0]), abs(w[-1])))
        return float(sla.svdvals(M)[0])
    if sp.issparse(M) and M.nnz == 0:
        return 0.0
    if not sp.issparse(M) and not np.any(M):
        return 0.0
    return _iter_norm(M, hermitian, tol)


def _iter_norm(M, hermitian: bool, tol: float = 0.0) -> float:
    try:
        return _arpack_norm(M, hermitian, tol)
    except spla.ArpackError:
        # ARPACK stops when the start vector lies in the kernel; fall back
        # to materialising the operator column by column
        n = M.shape[1]
        dtype = np.result_type(M.dtype, np.float64)
        if n <= DENSE_CAP:
            A = np.asarray(M @ np.eye(n, dtype=dtype))
            return float(sla.svdvals(A)[0]) if np.any(A) else 0.0
        # a generic block mapped exactly to zero means the operator vanishes
        probe = np.cos(np.outer(np.arange(n), np.arange(1, 9)) * 0.37 + 0.1).astype(dtype)
        if not np.any(M @ probe):
            return 0.0
        raise


def _arpack_norm(M, hermitian: bool, tol: float) -> float:
    n, m = M.shape
    dtype = np.result_type(M.dtype, np.float64)
    if hermitian:
        if n <= 2:
            return float(np.abs(sla.eigvalsh(np.asarray(M @ np.eye(n)))).max())
        w = spla.eigsh(M, k=1, which="LM", v0=_start_vector(n, dtype), tol=tol,
                       return_eigenvectors=False)
        return float(abs(w[0]))
    if isinstance(M, spla.LinearOperator):
        A = M
    else:
        A = spla.aslinearoperator(M)
    gram = spla.LinearOperator((m, m), matvec=lambda x: A.rmatvec(A.matvec(x)), dtype=dtype)
    if m <= 2:
        G = np.column_stack([gram.matvec(e) for e in np.eye(m, dtype=dtype)])
        return float(np.sqrt(max(sla.eigvalsh(G).max(), 0.0)))
    w = spla.eigsh(gram, k=1, which="LA", v0=_start_vector(m, dtype), tol=tol,
                   return_eigenvectors=False)
    return float(np.sqrt(max(w[0], 0.0)))


def trace_norm(M, cap: int = DENSE_CAP) -> float:
    if isinstance(M, QOperator):
        M = M.matrix
    if max(M.shape) > cap:
        raise CapacityError(f"trace norm requires dense SVD; dimension {max(M.shape)} exceeds {cap}")
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    if M.size == 0:
        return 0.0
    return float(sla.svdvals(M).sum())


def norm(op, kind: str = "operator") -> float:
    if kind == "operator":
        return opnorm(op)
    if kind == "trace":
        return trace_norm(op)
    raise ValueError(f"unknown norm kind {kind!r}")


def min_eigenvalue(M) -> float:
    """Smallest eigenvalue of a Hermitian matrix (dense, sparse or operator)."""
    if isinstance(M, QOperator):
        M = M.matrix
    n = M.shape[0]
    if not sp.issparse(M) and not isinstance(M, spla.LinearOperator) and n <= 2048:
        M = np.asarray(M)
        return float(sla.eigvalsh(M, subset_by_index=[0, 0])[0])
    if sp.issparse(M) and n <= 2048:
        return float(sla.eigvalsh(M.toarray(), subset_by_index=[0, 0])[0])
    dtype = np.result_type(M.dtype, np.float64)
    w = spla.eigsh(M, k=1, which="SA", v0=_start_vector(n, dtype), tol=0,
                   return_eigenvectors=False)
    return float(w[0])


# ---------------------------------------------------------------------------
# entropies


def von_neumann_entropy(rho) -> float:
    if isinstance(rho, DensityMatrix):
        rho = rho.matrix
    w = sla.eigvalsh(np.asarray(rho))
    w = w[w > EIG_CLIP]
    return float(-(w * np.log(w)).sum())


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability {p} outside [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * np.log(p) - (1 - p) * np.log(1 - p))


def fannes_audenaert_bound(t: float, dim: int) -> float:
    """Continuity bound (t/2) ln(dim) + H(t/2) for trace distance ``t``."""
    if not 0.0 <= t <= 2.0:
        raise DomainError(f"trace distance {t} outside [0, 2]")
    return float(0.5 * t * np.log(dim) + binary_entropy(0.5 * t))


def entropy_tools(x, dim: int | None = None) -> float:
    """Dispatch: density matrix -> S(rho); probability -> H(p); with ``dim`` -> FA bound."""
    if isinstance(x, (DensityMatrix, np.ndarray)):
        return von_neumann_entropy(x)
    if dim is not None:
        return fannes_audenaert_bound(float(x), dim)
    return binary_entropy(float(x))


# ---------------------------------------------------------------------------
# orthonormal operator basis (Hilbert-Schmidt), identity first


@lru_cache(maxsize=None)
def site_basis(D: int) -> np.ndarray:
    """Orthonormal Hermitian basis of D x D matrices, shape (D*D, D, D).

    Element 0 is the normalised identity; for D = 2 the rest are Paulis / sqrt 2.
    """
    mats = [np.eye(D, dtype=complex) / np.sqrt(D)]
    for j in range(D):
        for k in range(j + 1, D):
            m = np.zeros((D, D), dtype=complex)
            m[j, k] = m[k, j] = 1 / np.sqrt(2)
            mats.append(m)
            m = np.zeros((D, D), dtype=complex)
            m[j, k], m[k, j] = -1j / np.sqrt(2), 1j / np.sqrt(2)
            mats.append(m)
    for l in range(1, D):
        diag = np.zeros(D)
        diag[:l] = 1.0
        diag[l] = -l
        mats.append(np.diag(diag / np.sqrt(l * (l + 1))).astype(complex))
    return np.array(mats)


def _site_transform(D: int, inverse: bool) -> np.ndarray:
    B = site_basis(D).reshape(D * D, D * D)  # rows: alpha, cols: (i, j)
    return B.T.copy() if inverse else B.conj()


def to_string_basis(M: np.ndarray, support: Sequence[int], hs: HilbertSpec) -> np.ndarray:
    """Coefficients c[a_1, ..., a_n] = Tr(B_a^dagger M) over the support sites."""
    dims = hs.dims_of(support)
    n = len(dims)
    if n == 0:
        return np.asarray(M, dtype=complex).reshape(())
    T = np.asarray(M, dtype=complex).reshape(dims * 2)
    T = np.transpose(T, [a for i in range(n) for a in (i, n + i)]).reshape([D * D for D in dims])
    for ax, D in enumerate(dims):
        T = np.moveaxis(np.tensordot(_site_transform(D, False), T, axes=([1], [ax])), 0, ax)
    return T


def from_string_basis(C: np.ndarray, support: Sequence[int], hs: HilbertSpec) -> np.ndarray:
    dims = hs.dims_of(support)
    n = len(dims)
    if n == 0:
        return np.asarray(C).reshape(1, 1)
    T = C
    for ax, D in enumerate(dims):
        T = np.moveaxis(np.tensordot(_site_transform(D, True), T, axes=([1], [ax])), 0, ax)
    T = T.reshape([x for D in dims for x in (D, D)])
    T = np.transpose(T, list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2)))
    dim = int(np.prod(dims))
    return T.reshape(dim, dim)
