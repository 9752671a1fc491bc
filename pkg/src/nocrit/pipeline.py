"""Assembly of psi = phi o h_n and the checks run against it."""
from __future__ import annotations

import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .catalog import CatalogFn, EpsFn, combined_modulus, constant_eps
from .cover import CoverConfig, build_cover, perturb_radii
from .errors import EngineError, OutsideDomain
from .negligibility import (
    CompactNet,
    ExtractionDiffeo,
    build_extraction,
    clearance,
    extract,
    extract_inverse,
    extract_pullback,
)
from .pou import PartitionFn, RootConfig, isolate_all, make_partition
from .regions import CustomRegion, Region
from .smooth import Jet
from .space import Ball, IndexAllocator, SparseVec, dist

DEFAULT_MAX_CENTERS = 32


def max_centers_from_env(default: int = DEFAULT_MAX_CENTERS) -> int:
    raw = os.environ.get("NOCRIT_MAX_CENTERS")
    if raw is None:
        return default
    v = int(raw)
    if v < 1:
        raise ValueError("NOCRIT_MAX_CENTERS must be a positive integer")
    return v


@dataclass
class ApproxHandle:
    f: Callable[[SparseVec], float]
    eps: EpsFn
    partition: PartitionFn
    clusters: list
    diffeos: list  # one per cluster, None when the cluster is empty
    region: Ball
    ambient_dim: int
    mode: str = "constant"
    domain: Optional[Region] = None
    timings: dict = field(default_factory=dict)

    def cluster_of(self, x: SparseVec) -> Optional[int]:
        for n, cl in enumerate(self.clusters):
            if self.diffeos[n] is not None and cl.region.contains(x):
                return n
        return None


def build_psi(
    fn: CatalogFn,
    eps,
    region: Ball,
    ambient_dim: int,
    *,
    cover: Optional[CoverConfig] = None,
    roots: RootConfig = RootConfig(),
    domain: Optional[Region] = None,
    modulus: Optional[Callable] = None,
) -> ApproxHandle:
    """Cover, perturb, blend, isolate the critical points, remove them."""
    eps_fn = eps if isinstance(eps, EpsFn) else constant_eps(float(eps))
    if cover is None:
        cover = CoverConfig(max_centers=max_centers_from_env())
    mod = modulus or combined_modulus(fn, eps_fn)
    alloc = IndexAllocator(ambient_dim + 1)
    timings = {}
    t0 = time.perf_counter()
    atlas = build_cover(mod, region, ambient_dim, alloc, cover, domain)
    timings["cover"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    atlas = perturb_radii(atlas, cover)
    timings["perturb_radii"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    pf = make_partition(atlas, fn.f, eps_fn)
    state, pf = isolate_all(pf, roots)
    timings["isolate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    diffeos = []
    for cl in state.clusters:
        diffeos.append(build_extraction(cl.points, cl.region, alloc) if cl.points else None)
    timings["extract"] = time.perf_counter() - t0
    mode = "constant" if eps_fn.lipschitz == 0 else "variable"
    return ApproxHandle(fn.f, eps_fn, pf, state.clusters, diffeos, region, ambient_dim, mode, domain, timings)


def eval_psi(h: ApproxHandle, x: SparseVec) -> Jet:
    n = h.cluster_of(x)
    if n is None:
        return h.partition.phi_jet(x)
    ed = h.diffeos[n]
    hx = extract(ed, x)
    j = h.partition.phi_jet(hx)
    return Jet(j.value, extract_pullback(ed, x, j.gradient))


# ---------------------------------------------------------------------------
# corollaries


def _net_distance(net: Sequence[SparseVec], x: SparseVec) -> float:
    return min(dist(x, z) for z in net)


def urysohn(c1: Sequence[SparseVec], c2: Sequence[SparseVec]) -> CatalogFn:
    """``d1 / (d1 + d2)``; its modulus is ``(d1 + d2) / 28`` at tolerance 1/3."""
    def f(x):
        d1, d2 = _net_distance(c1, x), _net_distance(c2, x)
        return d1 / (d1 + d2)

    def mod(x, eps):
        D = _net_distance(c1, x) + _net_distance(c2, x)
        # |grad f| <= 1/D and D drops by at most 4 delta on B(x, 2 delta):
        # 2 delta / (D - 4 delta) <= eps / 4
        return eps * D / (8.0 + 4.0 * eps)

    return CatalogFn("urysohn", f, mod, {})


def separate(c1: Sequence[SparseVec], c2: Sequence[SparseVec], region: Ball, ambient_dim: int, **kw):
    """Smooth psi with ``psi < 1/2`` on ``c1`` and ``psi > 1/2`` on ``c2``."""
    gap = min(dist(a, b) for a in c1 for b in c2)
    if not gap > 0:
        raise EngineError("nets are not separated", stage="separate")
    h = build_psi(urysohn(c1, c2), 1.0 / 3.0, region, ambient_dim, **kw)
    return h, 0.5


@dataclass
class SupportHandle:
    handle: ApproxHandle
    open_set: Region
    floor: float  # cover only reaches points with dist to the complement >= floor

    def eval(self, x: SparseVec) -> Jet:
        d = self.open_set.depth(x)
        if d <= 0.0:
            if d < 0.0:
                return Jet(0.0, SparseVec.zero())
            raise OutsideDomain("boundary point: psi vanishes but is not differentiable there", witness=x)
        if d < self.floor:
            raise OutsideDomain(f"point closer than {self.floor:g} to the boundary is not covered", witness=x)
        return eval_psi(self.handle, x)


def support_function(open_set: Region, region: Ball, ambient_dim: int, floor: float, max_centers: int = 200, **kw) -> SupportHandle:
    """psi with ``eps <= psi <= 3 eps`` on ``U``, ``eps = dist(., X minus U)``.

    Runs the variable tolerance ``eps / 4`` against ``f = 2 eps``. The
    build is restricted to ``{eps >= floor}``; below it no balls exist.
    """
    if not floor > 0:
        raise ValueError("floor must be positive")

    def depth(x):
        return max(open_set.depth(x), 0.0)

    f = CatalogFn("support", lambda x: 2.0 * depth(x), lambda x, e: math.inf, {})
    eps = EpsFn("quarter_depth", lambda x: 0.25 * depth(x), 0.25)

    def modulus(x):
        # f is 2-Lipschitz: 2 * 2 delta <= eps'/4 = depth/16; eps' varies by <= eps'/8
        return depth(x) / 64.0

    dom = CustomRegion(lambda x: open_set.depth(x) - floor)
    cover = CoverConfig(max_centers=max_centers)
    h = build_psi(f, eps, region, ambient_dim, cover=cover, roots=kw.get("roots", RootConfig()), domain=dom, modulus=modulus)
    return SupportHandle(h, open_set, floor)


# ---------------------------------------------------------------------------
# verification


@dataclass
class VerificationReport:
    samples: int
    sup_error: float
    bound_ratio: float  # max |psi - f| / bound
    min_gradient_norm: float
    structural_failures: int
    identity_violations: int
    identity_checked: int
    roundtrip_max: float
    roundtrip_checked: int
    min_clearance: float
    clusters: int
    centers: int
    tolerances: dict
    passes: dict

    @property
    def all_pass(self) -> bool:
        return all(self.passes.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["all_pass"] = self.all_pass
        return d


def sample_ball(region: Ball, d: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in the ``d``-dimensional ball ``region``."""
    c = region.center.to_dense(range(1, d + 1))
    g = rng.normal(size=(count, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = region.radius * rng.random(count) ** (1.0 / d)
    return c + g * rad[:, None]


def verify(h: ApproxHandle, sample_count: int = 2000, seed: int = 0, slack: float = 1e-6) -> VerificationReport:
    """Seeded sampling of the region against the approximation and no-critical-point contracts."""
    rng = np.random.default_rng(seed)
    d = h.ambient_dim
    pts = sample_ball(h.region, d, sample_count, rng)
    sup_err, ratio, min_g = 0.0, 0.0, math.inf
    struct_fail = 0
    used = 0
    mult = 2.0 if h.mode == "constant" else 4.0
    inside = {n: [] for n in range(len(h.clusters))}
    outside = {n: 0 for n in range(len(h.clusters))}
    idviol = 0
    for p in pts:
        x = SparseVec.from_dense(p)
        if h.domain is not None and not h.domain.depth(x) > 0:
            continue
        used += 1
        n = h.cluster_of(x)
        if n is None:
            j = h.partition.phi_jet(x)
            gnorm = j.gradient.norm()
            if not gnorm > 1e-10:
                struct_fail += 1
        else:
            ed = h.diffeos[n]
            hx = extract(ed, x)
            j0 = h.partition.phi_jet(hx)
            g = extract_pullback(ed, x, j0.gradient)
            if not (j0.gradient.norm() > 1e-10 and g.norm() > 0):
                struct_fail += 1
            j = Jet(j0.value, g)
            gnorm = g.norm()
            inside[n].append(x)
        for m, ed in enumerate(h.diffeos):
            if ed is None or m == n:
                continue
            if outside[m] < 200 and not h.clusters[m].region.contains(x):
                outside[m] += 1
                if (extract(ed, x) - x).norm() > 1e-9:
                    idviol += 1
        err = abs(j.value - h.f(x))
        sup_err = max(sup_err, err)
        ratio = max(ratio, err / (mult * h.eps(x) + slack))
        min_g = min(min_g, gnorm)

    rt, rt_n, clear = 0.0, 0, math.inf
    for n, xs in inside.items():
        ed = h.diffeos[n]
        if ed is None:
            continue
        probes = list(xs[:50]) + list(ed.net.points)
        for x in probes:
            hx = extract(ed, x)
            clear = min(clear, clearance(ed, hx))
            rt = max(rt, (extract_inverse(ed, hx) - x).norm())
            rt_n += 1
    if rt_n == 0:
        clear = float("nan")
    passes = {
        "approximation": ratio <= 1.0,
        "no_critical_points": min_g > 0 and struct_fail == 0,
        "identity_outside": idviol == 0,
        "roundtrip": rt <= 1e-8,
        "clearance": rt_n == 0 or clear > 0,
    }
    tol = {"bound_multiplier": mult, "slack": slack, "identity": 1e-9, "roundtrip": 1e-8, "gradient_floor": 1e-10}
    return VerificationReport(
        samples=used,
        sup_error=sup_err,
        bound_ratio=ratio,
        min_gradient_norm=min_g,
        structural_failures=struct_fail,
        identity_violations=idviol,
        identity_checked=sum(outside.values()),
        roundtrip_max=rt,
        roundtrip_checked=rt_n,
        min_clearance=clear,
        clusters=sum(1 for e in h.diffeos if e is not None),
        centers=len(h.partition.atlas),
        tolerances=tol,
        passes=passes,
    )
