"""Ball cover of a bounded region, radius perturbation, scalloped balls.

Indices are 0-based throughout: center ``n`` here is ``y_{n+1}`` in the
usual one-based notation. ``lambdas[n]`` is the shrink factor used to
carve ball ``n`` out of its predecessors (``lambdas[0]`` is unused), and
``mus[n]`` is the matching isolation factor (``mus[1] = 1/2``).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import CoverBudgetExceeded, DegenerateFrame, EngineError
from .space import Ball, IndexAllocator, SparseVec, affine_frame, dist, fresh_index

ModulusOracle = Callable[[SparseVec], float]


@dataclass(frozen=True)
class CoverConfig:
    max_centers: int = 32
    cover_factor: float = 0.75  # grid points count as covered within this fraction of s_n
    grid_factor: float = 0.3    # grid spacing * sqrt(d) / s_min
    max_grid_points: int = 250_000
    delta_cap: Optional[float] = None  # default: region diameter
    scan_resolution: int = 1000
    gap: float = 1e-3


@dataclass(frozen=True)
class CoverAtlas:
    centers: tuple
    raw_radii: tuple
    radii: tuple
    region: Ball
    ambient_dim: int
    base_points: tuple = ()
    lambdas: tuple = ()
    mus: tuple = ()

    def __len__(self):
        return len(self.centers)

    @cached_property
    def coords(self) -> list:
        s = set()
        for c in self.centers:
            s |= c.support()
        return sorted(s)

    @cached_property
    def dense_centers(self) -> np.ndarray:
        return np.array([c.to_dense(self.coords) for c in self.centers])

    def split(self, x: SparseVec) -> tuple:
        """Dense part of ``x`` over the center coordinates, and the norm^2 of the rest."""
        idx = {i: k for k, i in enumerate(self.coords)}
        xc = np.zeros(len(self.coords))
        rest = 0.0
        for i, c in x.items():
            k = idx.get(i)
            if k is None:
                rest += c * c
            else:
                xc[k] = c
        return xc, rest

    def sq_dists(self, x: SparseVec) -> np.ndarray:
        xc, rest = self.split(x)
        return ((self.dense_centers - xc) ** 2).sum(axis=1) + rest

    def ball(self, n: int) -> Ball:
        return Ball(self.centers[n], self.radii[n])


# ---------------------------------------------------------------------------
# building the cover


def _region_coords(region: Ball, d: int) -> np.ndarray:
    if any(i > d for i in region.center.support()):
        raise ValueError("region center must lie in span{e_1..e_d}")
    return region.center.to_dense(range(1, d + 1))


def _grid(center: np.ndarray, reach: float, h: float) -> np.ndarray:
    d = len(center)
    k = int(math.ceil(reach / h))
    axis = np.arange(-k, k + 1) * h
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    keep = np.linalg.norm(pts, axis=1) < reach
    return pts[keep] + center


def build_cover(
    oracle: ModulusOracle,
    region: Ball,
    ambient_dim: int,
    alloc: IndexAllocator,
    config: CoverConfig = CoverConfig(),
    domain=None,
) -> CoverAtlas:
    """Greedy finite cover of ``region`` (inside ``span{e_1..e_d}``).

    A grid point ``g`` counts as covered by candidate ``x`` when
    ``|g - x| <= cover_factor * s_x``; with the grid spacing used here
    every point of the region then lies within ``0.9 s_n`` of some
    ``x_n``, hence inside ``B(y_n, s_n)`` after the fresh-coordinate shift.

    ``domain`` optionally restricts the cover to an open subset (a
    :class:`~nocrit.regions.Region`); centers are then taken in it.
    """
    d = ambient_dim
    if d < 1:
        raise ValueError("ambient_dim must be >= 1")
    if not math.isfinite(region.radius):
        raise ValueError("region radius must be finite")
    c = _region_coords(region, d)
    R = region.radius
    cap = config.delta_cap if config.delta_cap is not None else 2.0 * R

    def to_vec(p):
        return SparseVec.from_dense(p)

    def delta_at(pts):
        out = np.empty(len(pts))
        for k, p in enumerate(pts):
            v = float(oracle(to_vec(p)))
            if not v > 0:
                raise EngineError(f"modulus oracle returned {v} at {p}", stage="cover")
            out[k] = min(v, cap)
        return out

    def domain_depth(pts):
        if domain is None:
            return np.full(len(pts), np.inf)
        return np.array([domain.depth(to_vec(p)) for p in pts])

    # coarse pass fixes the grid spacing, refined until consistent
    coarse = _grid(c, R, R / 4.0)
    coarse = coarse[domain_depth(coarse) > 0] if domain is not None else coarse
    if len(coarse) == 0:
        coarse = c[None, :]
    s_min = delta_at(coarse).min()
    for _ in range(8):
        h = config.grid_factor * s_min / math.sqrt(d)
        slack = h * math.sqrt(d) / 2.0
        est = (2 * (R + slack) / h + 1) ** d
        if est > 4 * config.max_grid_points:
            raise CoverBudgetExceeded(
                f"grid of ~{est:.0f} points needed (spacing {h:.3g}); region too large for the modulus",
                witness=to_vec(c),
            )
        pts = _grid(c, R + slack, h)
        if len(pts) > config.max_grid_points:
            raise CoverBudgetExceeded(f"grid of {len(pts)} points exceeds budget", witness=to_vec(c))
        depth = domain_depth(pts)
        targets = depth > -slack
        cand = (np.linalg.norm(pts - c, axis=1) < R) & (depth > 0)
        if not cand.any():
            raise EngineError("region has no admissible center candidates", stage="cover")
        s = np.full(len(pts), np.nan)
        s[cand] = delta_at(pts[cand])
        new_min = np.nanmin(s)
        if new_min >= s_min * 0.999:
            break
        s_min = new_min
    else:
        raise EngineError("grid spacing did not stabilise", stage="cover")

    target_idx = np.flatnonzero(targets)
    cand_idx = np.flatnonzero(cand)
    tree = cKDTree(pts[target_idx])
    reach = [tree.query_ball_point(pts[i], config.cover_factor * s[i]) for i in cand_idx]
    uncovered = np.ones(len(target_idx), dtype=bool)
    chosen = []
    while uncovered.any():
        counts = np.array([uncovered[r].sum() if r else 0 for r in reach])
        best = int(np.argmax(counts))  # ties resolved by grid scan order
        if counts[best] == 0:
            raise EngineError("greedy cover stalled", stage="cover")
        if len(chosen) >= config.max_centers:
            w = pts[target_idx[np.flatnonzero(uncovered)[0]]]
            raise CoverBudgetExceeded(
                f"region not covered within {config.max_centers} centers", witness=to_vec(w)
            )
        chosen.append(cand_idx[best])
        uncovered[reach[best]] = False

    base, centers, raw = [], [], []
    for i in chosen:
        x = to_vec(pts[i])
        sn = float(s[i])
        (k,) = fresh_index(alloc, 1)
        base.append(x)
        centers.append(x + SparseVec.basis(k, sn / 4.0))
        raw.append(sn)
    return CoverAtlas(
        centers=tuple(centers),
        raw_radii=tuple(raw),
        radii=tuple(raw),
        region=region,
        ambient_dim=d,
        base_points=tuple(base),
    )


# ---------------------------------------------------------------------------
# spheres meeting affine spans


def sphere_affine_intersections(
    atlas: CoverAtlas, sphere_indices: Sequence[int], span_indices: Sequence[int], tol: float = 1e-12
) -> list:
    """All points of ``A[y_span] ∩ S_k`` (k in ``sphere_indices``).

    The sphere equations are reduced to frame coordinates; differences
    give a linear system, one equation stays quadratic. The set must be
    finite (at most one free direction after the linear solve).
    """
    span = list(span_indices)
    spheres = list(sphere_indices)
    if not span:
        raise ValueError("span_indices must be nonempty")
    pts = [atlas.centers[i] for i in span]
    frame = affine_frame(pts)
    if frame.rank_deficient:
        raise DegenerateFrame(f"centers {span} are affinely dependent")
    D = frame.dim
    if not spheres:
        if D == 0:
            return [frame.origin]
        raise EngineError("empty sphere list over a positive-dimensional span", stage="cover")
    coords = sorted(set(frame.support()) | {i for k in spheres for i in atlas.centers[k].support()})
    P = np.array([u.to_dense(coords) for u in frame.directions]).reshape(D, len(coords))
    o = frame.origin.to_dense(coords)
    cs, rho = [], []
    for k in spheres:
        yk = atlas.centers[k].to_dense(coords) - o
        ck = P @ yk if D else np.zeros(0)
        hk2 = float(yk @ yk - ck @ ck)
        cs.append(ck)
        rho.append(atlas.radii[k] ** 2 - max(hk2, 0.0))
    scale = max(1.0, max(atlas.radii[k] for k in spheres) ** 2)
    ttol = tol * scale
    c1, r1 = cs[0], rho[0]

    def quad_res(u):
        return float((u - c1) @ (u - c1) - r1)

    sols = []
    if D == 0:
        u = np.zeros(0)
        if all(abs(float(ck @ ck) - rk) <= ttol for ck, rk in zip(cs, rho)):
            sols.append(u)
    else:
        A = np.array([2.0 * (ck - c1) for ck in cs[1:]]).reshape(len(cs) - 1, D)
        b = np.array([r1 - rk + ck @ ck - c1 @ c1 for ck, rk in zip(cs[1:], rho[1:])])
        if len(b):
            u0, *_ = np.linalg.lstsq(A, b, rcond=None)
            _, sv, vt = np.linalg.svd(A)
            rank = int(np.sum(sv > 1e-12 * max(1.0, sv.max())))
            if np.linalg.norm(A @ u0 - b) > ttol * max(1.0, np.linalg.norm(b)):
                return []
            null = vt[rank:]
        else:
            u0 = np.zeros(D)
            null = np.eye(D)
        q = null.shape[0]
        if q == 0:
            if abs(quad_res(u0)) <= ttol:
                sols.append(u0)
        elif q == 1:
            v = null[0]
            w = u0 - c1
            bb = float(v @ w)
            cc = float(w @ w - r1)
            disc = bb * bb - cc
            if disc > ttol:
                r = math.sqrt(disc)
                sols += [u0 + (-bb + r) * v, u0 + (-bb - r) * v]
            elif disc >= -ttol:
                sols.append(u0 - bb * v)
        else:
            raise EngineError(
                f"intersection of spheres {spheres} with span {span} is not finite", stage="cover"
            )
    out = []
    for u in sols:
        x = o + (P.T @ u if D else 0.0)
        out.append(SparseVec.from_coords(coords, x))
    return out


def _spheres_meet(atlas, a, b):
    d = dist(atlas.centers[a], atlas.centers[b])
    ra, rb = atlas.radii[a], atlas.radii[b]
    return abs(ra - rb) <= d <= ra + rb


def _sphere_cliques(atlas, pool: Sequence[int], max_size: Optional[int]):
    """Nonempty subsets of ``pool`` whose spheres meet pairwise."""
    pool = sorted(pool)
    meet = {(a, b): _spheres_meet(atlas, a, b) for a, b in itertools.combinations(pool, 2)}

    def extend(clique, rest):
        yield clique
        if max_size is not None and len(clique) >= max_size:
            return
        for k, j in enumerate(rest):
            if all(meet[(i, j)] for i in clique):
                yield from extend(clique + [j], rest[k + 1:])

    for k, j in enumerate(pool):
        yield from extend([j], pool[k + 1:])


def forbidden_radii(atlas: CoverAtlas, n: int, max_subset: Optional[int] = None) -> list:
    """Radii of S_n that would put an earlier intersection point or a center on S_n."""
    yn = atlas.centers[n]
    s = atlas.raw_radii[n]
    vals = [dist(yn, y) for j, y in enumerate(atlas.centers) if j != n]
    pool = [j for j in range(n) if dist(atlas.centers[j], yn) <= atlas.radii[j] + 1.5 * s * (1 + 1e-9)]
    for clique in _sphere_cliques(atlas, pool, max_subset):
        for z in sphere_affine_intersections(atlas, clique, clique + [n]):
            vals.append(dist(z, yn))
    return vals


def perturb_radii(atlas: CoverAtlas, config: CoverConfig = CoverConfig(), max_subset: Optional[int] = None) -> CoverAtlas:
    """Choose ``r_n`` in ``[s_n, 1.5 s_n]`` avoiding every forbidden value.

    Deterministic scan over ``s (1 + k / (2K))``; the first candidate at
    distance ``> gap * (0.5 s)`` from all forbidden values wins.
    """
    radii = list(atlas.raw_radii)
    cur = replace(atlas, radii=tuple(radii))
    K = config.scan_resolution
    for n in range(len(atlas)):
        s = atlas.raw_radii[n]
        margin = config.gap * 0.5 * s
        forb = np.array(forbidden_radii(cur, n, max_subset))
        for k in range(K + 1):
            r = s * (1.0 + k / (2.0 * K))
            if forb.size == 0 or np.min(np.abs(forb - r)) > margin:
                break
        else:
            raise EngineError(f"no admissible radius for center {n}", stage="perturb_radii")
        radii[n] = r
        cur = replace(atlas, radii=tuple(radii))
        # re-check with the new sphere in place
        yn = cur.centers[n]
        pool = [j for j in range(n) if dist(cur.centers[j], yn) <= cur.radii[j] + r]
        for clique in _sphere_cliques(cur, pool, max_subset):
            for z in sphere_affine_intersections(cur, clique, clique + [n]):
                if abs(dist(z, yn) - r) <= 1e-9:
                    raise EngineError(f"sphere {n} meets the span of {clique}", stage="perturb_radii", witness=z)
    return cur


def sphere_margins(atlas: CoverAtlas, max_size: int = 4) -> dict:
    """Smallest clearances certifying both sphere conditions.

    ``span``: over subsets ``S`` (|S| <= max_size), distance from the points
    of ``A[y_S] ∩ S_k (k in S minus its last element)`` to the last sphere.
    ``centers``: min over ``n != k`` of ``| |y_n - y_k| - r_k |``.
    """
    N = len(atlas)
    span_margin = math.inf
    checked = 0
    for size in range(1, max_size + 1):
        for S in itertools.combinations(range(N), size):
            *rest, last = S
            yl, rl = atlas.centers[last], atlas.radii[last]
            for z in sphere_affine_intersections(atlas, rest, S):
                span_margin = min(span_margin, abs(dist(z, yl) - rl))
            checked += 1
    center_margin = math.inf
    for n in range(N):
        for k in range(N):
            if n != k:
                center_margin = min(center_margin, abs(dist(atlas.centers[n], atlas.centers[k]) - atlas.radii[k]))
    return {"span": span_margin, "centers": center_margin, "subsets": checked}


# ---------------------------------------------------------------------------
# scalloped balls


def scalloped_membership(atlas: CoverAtlas, n: int, x: SparseVec, dists: Optional[np.ndarray] = None) -> tuple:
    """``(inside, margin)`` for ``B_n = B(y_n, r_n)`` minus the closed balls
    ``B(y_j, lambda_n r_j)``, ``j < n``."""
    if n > 0 and (len(atlas.lambdas) <= n or atlas.lambdas[n] is None):
        raise EngineError(f"lambda for ball {n} not assigned yet", stage="cover")
    if dists is None:
        dists = np.sqrt(atlas.sq_dists(x))
    margin = atlas.radii[n] - dists[n]
    if n > 0:
        lam = atlas.lambdas[n]
        r = np.asarray(atlas.radii[:n])
        margin = min(margin, float(np.min(dists[:n] - lam * r)))
    return margin > 0.0, float(margin)
