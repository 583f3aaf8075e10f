"""Hypercubic lattice geometry: torus metric, balls and the sparse partition.

Sites are addressed by integer index in row-major order over the per-axis
shape, with axis 0 most significant. Coordinates are tuples. Every function
that takes a site accepts either form.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from .errors import InvalidSiteError, PartitionError


@dataclass(frozen=True)
class LatticeSpec:
    """A d-dimensional box of sites, periodic by default.

    ``shape`` defaults to ``(L,) * d``. Non-square tori (needed for toric-code
    instances such as a 3x2 cell array) set ``shape`` explicitly, in which case
    ``L`` is the largest side.
    """

    d: int
    L: int
    periodic: bool = True
    shape: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        shape = tuple(self.shape) if self.shape is not None else (self.L,) * self.d
        if len(shape) != self.d or any(n < 1 for n in shape):
            raise ValueError(f"bad shape {shape} for d={self.d}")
        if self.shape is None and self.L < 2:
            raise ValueError("L must be at least 2")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "L", max(shape))

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    def coord(self, site) -> tuple[int, ...]:
        if isinstance(site, (tuple, list, np.ndarray)):
            c = tuple(int(x) for x in site)
            if len(c) != self.d or any(not 0 <= x < n for x, n in zip(c, self.shape)):
                raise InvalidSiteError(f"site {c} outside lattice {self.shape}")
            return c
        i = int(site)
        if not 0 <= i < self.n_sites:
            raise InvalidSiteError(f"site index {i} outside [0, {self.n_sites})")
        return tuple(int(x) for x in np.unravel_index(i, self.shape))

    def index(self, site) -> int:
        return int(np.ravel_multi_index(self.coord(site), self.shape))

    def sites(self) -> range:
        return range(self.n_sites)

    @cached_property
    def _coords(self) -> np.ndarray:
        return np.array([self.coord(i) for i in range(self.n_sites)], dtype=np.int64)

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        """All pairwise distances, shape (n_sites, n_sites)."""
        c = self._coords
        diff = np.abs(c[:, None, :] - c[None, :, :])
        if self.periodic:
            diff = np.minimum(diff, np.array(self.shape) - diff)
        return diff.max(axis=2) if self.d else np.zeros((1, 1), dtype=np.int64)


def distance(u, v, lat: LatticeSpec) -> int:
    """Chebyshev (l-infinity) distance, wrapping around periodic axes."""
    a, b = lat.coord(u), lat.coord(v)
    best = 0
    for x, y, n in zip(a, b, lat.shape):
        dx = abs(x - y)
        if lat.periodic:
            dx = min(dx, n - dx)
        best = max(best, dx)
    return best


@dataclass(frozen=True)
class Ball:
    center: int
    radius: int
    sites: frozenset[int]

    def __contains__(self, site) -> bool:
        return site in self.sites

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def sorted_sites(self) -> tuple[int, ...]:
        return tuple(sorted(self.sites))


def _axis_window(x: int, r: int, n: int, periodic: bool) -> list[int]:
    if periodic:
        if 2 * r + 1 >= n:
            return list(range(n))
        return sorted({(x + k) % n for k in range(-r, r + 1)})
    return list(range(max(0, x - r), min(n - 1, x + r) + 1))


def ball(u, r: int, lat: LatticeSpec) -> Ball:
    """The set of sites within distance ``r`` of ``u``."""
    if r < 0:
        raise ValueError("radius must be non-negative")
    c = lat.coord(u)
    axes = [_axis_window(x, r, n, lat.periodic) for x, n in zip(c, lat.shape)]
    sites = frozenset(int(np.ravel_multi_index(p, lat.shape)) for p in itertools.product(*axes))
    return Ball(center=lat.index(c), radius=int(r), sites=sites)


def covering_radius(lat: LatticeSpec) -> int:
    """Smallest r with b_u(r) equal to the whole lattice (same for every u)."""
    if lat.periodic:
        return max(n // 2 for n in lat.shape)
    return max(n - 1 for n in lat.shape)


@dataclass(frozen=True)
class PartitionScheme:
    r: int
    classes: tuple[tuple[int, ...], ...]
    box_half_width: Fraction
    boxes_per_axis: tuple[int, ...] = field(default=())

    @property
    def class_count(self) -> int:
        return len(self.classes)


def _axis_boxes(n_sites: int, r: int) -> int:
    q, _ = divmod(n_sites, 2 * r)
    return q - (q % 2)


def _boundaries(n_sites: int, n_boxes: int) -> list[int]:
    # round(k * n / m) with halves rounded up, kept exact in integers
    return [(2 * k * n_sites + n_boxes) // (2 * n_boxes) for k in range(n_boxes + 1)]


def _classes_for(lat: LatticeSpec, boxes: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
    bounds = [_boundaries(n, m) for n, m in zip(lat.shape, boxes)]
    groups: dict[tuple, list[int]] = {}
    for i in range(lat.n_sites):
        c = lat.coord(i)
        key_color, key_off = [], []
        for x, b in zip(c, bounds):
            k = int(np.searchsorted(b, x, side="right")) - 1
            key_color.append(k % 2)
            key_off.append(x - b[k])
        groups.setdefault((tuple(key_color), tuple(key_off)), []).append(i)
    return tuple(tuple(groups[k]) for k in sorted(groups))


def classes_separated(classes, r: int, lat: LatticeSpec) -> bool:
    """True when every intra-class pair has disjoint radius-r balls."""
    dist = lat.distance_matrix
    for cls in classes:
        idx = np.array(cls)
        if len(idx) < 2:
            continue
        sub = dist[np.ix_(idx, idx)]
        np.fill_diagonal(sub, 2 * r + 1)
        if sub.min() <= 2 * r:
            return False
    return True


def partition(r: int, lat: LatticeSpec) -> PartitionScheme:
    """Split the lattice into classes whose radius-r balls are pairwise disjoint.

    Each axis is tiled by an even number of boxes of (possibly fractional)
    width 2r', boxes are 2^d-coloured by index parity, and a class collects
    the sites sharing colour and in-box offset. When 8r exceeds the lattice
    side every site forms its own class.
    """
    if r < 1:
        raise ValueError("partition radius must be at least 1")
    if any(8 * r > n for n in lat.shape):
        singles = tuple((i,) for i in range(lat.n_sites))
        return PartitionScheme(r=r, classes=singles, box_half_width=Fraction(0), boxes_per_axis=())
    boxes = tuple(_axis_boxes(n, r) for n in lat.shape)
    while True:
        classes = _classes_for(lat, boxes)
        if classes_separated(classes, r, lat):
            half = Fraction(lat.shape[0], 2 * boxes[0])
            return PartitionScheme(r=r, classes=classes, box_half_width=half, boxes_per_axis=boxes)
        # touching balls: widen boxes on the offending axes by dropping two boxes
        bumped = tuple(m - 2 if m > 2 else m for m in boxes)
        if bumped == boxes:
            raise PartitionError(f"cannot separate classes at r={r} on shape {lat.shape}")
        boxes = bumped
