"""Finite-support model of l2: sparse vectors, affine frames, balls.

Coordinates are positive integers in a single global index space. Vectors
are immutable; the only mutable object here is :class:`IndexAllocator`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

STORE_THRESHOLD = 1e-300


class SparseVec:
    """Immutable finite-support vector ``{index: coefficient}``.

    Coefficients with ``abs(c) < 1e-300`` are dropped, so two canonical
    vectors are equal iff their entry maps are equal.
    """

    __slots__ = ("_e", "_hash")

    def __init__(self, entries: Mapping[int, float] | Iterable[tuple[int, float]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        e = {}
        for i, c in items:
            c = float(c)
            if not math.isfinite(c):
                raise ValueError(f"non-finite coefficient {c!r} at index {i}")
            if i < 1:
                raise ValueError(f"coordinate indices start at 1, got {i}")
            if abs(c) >= STORE_THRESHOLD:
                e[int(i)] = c
        self._e = e
        self._hash = None

    @classmethod
    def _raw(cls, e: dict) -> "SparseVec":
        # trusted constructor: e is already canonical
        v = object.__new__(cls)
        v._e = e
        v._hash = None
        return v

    @classmethod
    def from_dense(cls, values: Sequence[float], start: int = 1) -> "SparseVec":
        return cls((start + k, c) for k, c in enumerate(values))

    @classmethod
    def from_coords(cls, indices: Sequence[int], values: Sequence[float]) -> "SparseVec":
        return cls(zip(indices, values))

    @classmethod
    def basis(cls, i: int, scale: float = 1.0) -> "SparseVec":
        return cls({i: scale})

    @classmethod
    def zero(cls) -> "SparseVec":
        return cls._raw({})

    # -- access ---------------------------------------------------------
    @property
    def entries(self) -> dict:
        return dict(self._e)

    def items(self):
        return self._e.items()

    def support(self) -> frozenset:
        return frozenset(self._e)

    def get(self, i: int) -> float:
        return self._e.get(i, 0.0)

    def to_dense(self, indices: Sequence[int]) -> np.ndarray:
        return np.array([self._e.get(i, 0.0) for i in indices])

    def __len__(self):
        return len(self._e)

    def is_zero(self) -> bool:
        return not self._e

    # -- algebra --------------------------------------------------------
    def __add__(self, other: "SparseVec") -> "SparseVec":
        return self.axpy(1.0, other)

    def __sub__(self, other: "SparseVec") -> "SparseVec":
        return self.axpy(-1.0, other)

    def __neg__(self) -> "SparseVec":
        return SparseVec._raw({i: -c for i, c in self._e.items()})

    def __mul__(self, a: float) -> "SparseVec":
        a = float(a)
        if a == 0.0:
            return SparseVec._raw({})
        return SparseVec(((i, a * c) for i, c in self._e.items()))

    __rmul__ = __mul__

    def __truediv__(self, a: float) -> "SparseVec":
        return self * (1.0 / a)

    def axpy(self, a: float, other: "SparseVec") -> "SparseVec":
        """Return ``self + a * other``."""
        e = dict(self._e)
        for i, c in other._e.items():
            e[i] = e.get(i, 0.0) + a * c
        return SparseVec(e)

    def dot(self, other: "SparseVec") -> float:
        a, b = self._e, other._e
        if len(a) > len(b):
            a, b = b, a
        return math.fsum(c * b[i] for i, c in a.items() if i in b)

    def norm_sq(self) -> float:
        return math.fsum(c * c for c in self._e.values())

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def canonical(self) -> "SparseVec":
        return SparseVec(self._e)

    # -- protocol -------------------------------------------------------
    def __eq__(self, other):
        if not isinstance(other, SparseVec):
            return NotImplemented
        return self._e == other._e

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._e.items()))
        return self._hash

    def __repr__(self):
        body = ", ".join(f"{i}:{c:.6g}" for i, c in sorted(self._e.items()))
        return f"SparseVec({{{body}}})"


def dot(u: SparseVec, v: SparseVec) -> float:
    return u.dot(v)


def dist(u: SparseVec, v: SparseVec) -> float:
    return (u - v).norm()


def combine(coeffs: Sequence[float], vecs: Sequence[SparseVec]) -> SparseVec:
    """Linear combination ``sum(c_k * v_k)``."""
    e: dict = {}
    for a, v in zip(coeffs, vecs):
        if a == 0.0:
            continue
        for i, c in v.items():
            e[i] = e.get(i, 0.0) + a * c
    return SparseVec(e)


@dataclass(frozen=True)
class Ball:
    center: SparseVec
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")

    def contains(self, x: SparseVec) -> bool:
        return dist(x, self.center) < self.radius


@dataclass(frozen=True)
class AffineFrame:
    """Origin plus orthonormal directions spanning an affine subspace."""

    origin: SparseVec
    directions: tuple = ()
    rank_deficient: bool = False

    @property
    def dim(self) -> int:
        return len(self.directions)

    def coords(self, x: SparseVec) -> np.ndarray:
        d = x - self.origin
        return np.array([d.dot(u) for u in self.directions])

    def point(self, u: Sequence[float]) -> SparseVec:
        return self.origin + combine(list(u), self.directions)

    def project(self, x: SparseVec) -> SparseVec:
        return self.point(self.coords(x))

    def residual(self, x: SparseVec) -> float:
        """Distance from ``x`` to the affine subspace."""
        return dist(x, self.project(x))

    def support(self) -> list:
        s = set(self.origin.support())
        for u in self.directions:
            s |= u.support()
        return sorted(s)


def affine_frame(points: Sequence[SparseVec], drop_tol: float = 1e-10) -> AffineFrame:
    """Orthonormal frame of the affine span of ``points`` (origin = first point).

    Directions whose residual norm after Gram-Schmidt falls below
    ``drop_tol`` are dropped and the frame is flagged ``rank_deficient``.
    """
    if not points:
        raise ValueError("affine_frame needs at least one point")
    origin = points[0]
    dirs: list = []
    deficient = False
    for p in points[1:]:
        v = p - origin
        # two Gram-Schmidt passes keep orthogonality near machine precision
        for _ in range(2):
            for u in dirs:
                v = v.axpy(-v.dot(u), u)
        n = v.norm()
        if n < drop_tol:
            deficient = True
            continue
        dirs.append(v / n)
    return AffineFrame(origin, tuple(dirs), deficient)


@dataclass
class IndexAllocator:
    """Hands out coordinate indices that were never issued before."""

    next_index: int = 1

    def __post_init__(self):
        if self.next_index < 1:
            raise ValueError("next_index must be a positive integer")


def fresh_index(alloc: IndexAllocator, count: int = 1) -> list:
    if count < 1:
        raise ValueError("count must be >= 1")
    out = list(range(alloc.next_index, alloc.next_index + count))
    alloc.next_index += count
    return out
