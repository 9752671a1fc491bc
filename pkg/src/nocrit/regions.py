"""Open regions built from balls by union, intersection and complement.

``depth(x)`` is a signed lower bound for the distance from ``x`` to the
complement: positive exactly inside the region. For a single ball, a
complement of a closed ball, or a union of pairwise disjoint balls it is
the exact distance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .space import SparseVec, dist


class Region:
    def depth(self, x: SparseVec, dists: Optional[Mapping] = None) -> float:
        raise NotImplementedError

    def contains(self, x: SparseVec, dists: Optional[Mapping] = None) -> bool:
        return self.depth(x, dists) > 0.0

    def distance_to_complement(self, x: SparseVec) -> float:
        return max(self.depth(x), 0.0)

    def balls(self) -> list:
        """All (center, radius, key) triples referenced by the region."""
        return []


def _dist(center, key, x, dists):
    if dists is not None and key is not None and key in dists:
        return dists[key]
    return dist(x, center)


@dataclass(frozen=True)
class BallRegion(Region):
    center: SparseVec
    radius: float
    key: Optional[int] = None

    def depth(self, x, dists=None):
        return self.radius - _dist(self.center, self.key, x, dists)

    def balls(self):
        return [(self.center, self.radius, self.key)]


@dataclass(frozen=True)
class OutsideBall(Region):
    """Complement of the closed ball."""

    center: SparseVec
    radius: float
    key: Optional[int] = None

    def depth(self, x, dists=None):
        return _dist(self.center, self.key, x, dists) - self.radius

    def balls(self):
        return [(self.center, self.radius, self.key)]


@dataclass(frozen=True)
class Union(Region):
    parts: tuple

    def depth(self, x, dists=None):
        if not self.parts:
            return float("-inf")
        return max(p.depth(x, dists) for p in self.parts)

    def balls(self):
        return [b for p in self.parts for b in p.balls()]


@dataclass(frozen=True)
class Intersection(Region):
    parts: tuple

    def depth(self, x, dists=None):
        if not self.parts:
            return float("inf")
        return min(p.depth(x, dists) for p in self.parts)

    def balls(self):
        return [b for p in self.parts for b in p.balls()]


@dataclass(frozen=True)
class CustomRegion(Region):
    """User-supplied open set: a signed depth function."""

    depth_fn: Callable[[SparseVec], float]

    def depth(self, x, dists=None):
        return float(self.depth_fn(x))


def disjoint_balls(centers: Sequence[SparseVec], radii: Sequence[float]) -> Union:
    balls = [BallRegion(c, r) for c, r in zip(centers, radii)]
    for i, a in enumerate(balls):
        for b in balls[i + 1:]:
            if dist(a.center, b.center) < a.radius + b.radius:
                raise ValueError("balls are not pairwise disjoint")
    return Union(tuple(balls))
