"""Perturbed partition of unity, its critical points, and isolation of them.

With ``t_j = |x - y_j|^2`` every bump is a function of the ``t`` vector only:

    phi_n = theta_nn(t_n) * prod_{j<n} theta_nj(t_j)
    f_m   = sum_{k<m} alpha_k phi_k / sum_{k<m} phi_k,   alpha_k = a_k(t_k)

so ``grad f_m = 2 sum_j (df/dt_j) (x - y_j)``. The kernel works on dense
``t`` arrays in batches; a point only feels the centers whose balls
contain it, which keeps the critical set inside finite-dimensional spans.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .cover import CoverAtlas
from .errors import EngineError, OutsideDomain
from .regions import BallRegion, Intersection, OutsideBall, Region, Union
from .smooth import BumpProfile, Jet, _log_unit_step, _unit_step
from .space import SparseVec, affine_frame, dist

DENOM_FLOOR = 0.0


@dataclass(frozen=True)
class RootConfig:
    max_seeds: int = 3000
    seeds_per_dim: int = 25
    max_clique: int = 6
    newton_iters: int = 50
    newton_tol: float = 1e-12
    grad_tol: float = 1e-8
    cluster_tol: float = 1e-6
    mu_margin: float = 0.1
    lambda_fraction: float = 0.1  # lambda_n sits this far from mu_n towards 1


@dataclass(frozen=True)
class PartitionFn:
    atlas: CoverAtlas
    profiles: tuple

    def __post_init__(self):
        if len(self.profiles) != len(self.atlas):
            raise ValueError("one profile per center required")

    # -- cached arrays --------------------------------------------------
    @cached_property
    def _r(self):
        return np.asarray(self.atlas.radii, dtype=float)

    @cached_property
    def _lam(self):
        lam = np.full(len(self.atlas), np.nan)
        for n, v in enumerate(self.atlas.lambdas):
            if n > 0 and v is not None:
                lam[n] = v
        return lam

    @cached_property
    def _prof(self):
        p = self.profiles
        return (np.array([q.base for q in p]), np.array([q.amplitude for q in p]), np.array([q.rate for q in p]))

    @property
    def ready(self) -> int:
        """Number of leading bumps whose shrink factors are assigned."""
        k = 1
        while k < len(self.atlas) and not np.isnan(self._lam[k]):
            k += 1
        return k

    def with_lambdas(self, lambdas) -> "PartitionFn":
        return PartitionFn(replace(self.atlas, lambdas=tuple(lambdas)), self.profiles)

    # -- kernel ---------------------------------------------------------
    def factors(self, t: np.ndarray, m: int):
        """Per-bump factor table ``M[b, n, j]`` and derivatives for ``n, j < m``."""
        if m > self.ready:
            raise EngineError(f"bumps beyond {self.ready} have no shrink factor yet", stage="pou")
        t = t[:, :m]
        r2 = self._r[:m] ** 2
        lam = self._lam[:m]
        B = t.shape[0]
        M = np.ones((B, m, m))
        dM = np.zeros((B, m, m))
        lower = np.tril(np.ones((m, m), dtype=bool), -1)
        if m > 1:
            lo = (np.nan_to_num(lam)[:, None] ** 2) * r2[None, :]
            width = r2[None, :] - lo
            width = np.where(lower, width, 1.0)
            u = (t[:, None, :] - lo[None]) / width[None]
            v, d = _unit_step(u)
            M = np.where(lower[None], v, M)
            dM = np.where(lower[None], d / width[None], dM)
        v, d = _unit_step(t / r2[None, :], complement=True)
        diag = np.arange(m)
        M[:, diag, diag] = v
        dM[:, diag, diag] = -d / r2[None, :]
        return M, dM

    def log_factors(self, t: np.ndarray, m: int):
        """``log M[b, n, j]`` and ``dM/M``; same layout as :meth:`factors`."""
        if m > self.ready:
            raise EngineError(f"bumps beyond {self.ready} have no shrink factor yet", stage="pou")
        t = t[:, :m]
        r2 = self._r[:m] ** 2
        lam = self._lam[:m]
        B = t.shape[0]
        L = np.zeros((B, m, m))
        G = np.zeros((B, m, m))
        lower = np.tril(np.ones((m, m), dtype=bool), -1)
        if m > 1:
            lo = (np.nan_to_num(lam)[:, None] ** 2) * r2[None, :]
            width = np.where(lower, r2[None, :] - lo, 1.0)
            u = (t[:, None, :] - lo[None]) / width[None]
            v, d = _log_unit_step(u)
            L = np.where(lower[None], v, L)
            G = np.where(lower[None], d / width[None], G)
        v, d = _log_unit_step(t / r2[None, :], complement=True)
        diag = np.arange(m)
        L[:, diag, diag] = v
        G[:, diag, diag] = d / r2[None, :]
        return L, G

    def kernel(self, t: np.ndarray, m: int):
        """Batch evaluation over ``t`` of shape ``(B, N)``.

        Returns ``value, c, D, phi, P, alpha, dalpha`` with ``c = df/dt``,
        ``D = sum phi`` and ``P[b, n, j] = d phi_n / d t_j``. The quotient
        is scale free, so ``phi``, ``P`` and ``D`` are divided by the largest
        bump of each row; they are assembled from log-factors and cannot
        underflow inside the cover. ``D = 0`` exactly when no ball contains
        the point.
        """
        t = np.asarray(t, dtype=float)
        L, G = self.log_factors(t, m)
        logphi = L.sum(axis=-1)
        top = logphi.max(axis=1)
        top = np.where(np.isfinite(top), top, 0.0)
        phs = np.exp(logphi - top[:, None])
        Ps = phs[:, :, None] * G
        base, amp, rate = (a[:m] for a in self._prof)
        tm = t[:, :m]
        alpha = base + amp * np.expm1(-rate * tm)
        dalpha = -amp * rate * np.exp(-rate * tm)
        D = phs.sum(axis=1)
        num = (alpha * phs).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            value = num / D
            w = alpha * D[:, None] - num[:, None]
            c = (dalpha * phs * D[:, None] + np.einsum("bnj,bn->bj", Ps, w)) / (D**2)[:, None]
        return value, c, D, phs, Ps, alpha, dalpha

    # -- sparse-vector interface ---------------------------------------
    def _t(self, x: SparseVec) -> np.ndarray:
        return self.atlas.sq_dists(x)[None, :]

    def _grad(self, x: SparseVec, c: np.ndarray) -> SparseVec:
        m = len(c)
        # 2 sum c_j (x - y_j)
        return x * (2.0 * float(c.sum())) - _mix(self.atlas, 2.0 * c, m)

    def phi_n_jet(self, n: int, x: SparseVec) -> Jet:
        m = n + 1
        t = self._t(x)
        M, dM = self.factors(t, m)
        row, drow = M[0, n], dM[0, n]
        val = float(np.prod(row))
        if val == 0.0 and not np.any(drow):
            return Jet(0.0, SparseVec.zero())
        partials = np.array([drow[j] * np.prod(np.delete(row, j)) for j in range(m)])
        return Jet(val, self._grad(x, partials))

    def phi_jet(self, x: SparseVec, upto: Optional[int] = None) -> Jet:
        m = len(self.atlas) if upto is None else upto
        value, c, D, *_ = self.kernel(self._t(x), m)
        if not D[0] > DENOM_FLOOR:
            raise OutsideDomain(f"point is outside the first {m} balls", witness=x)
        return Jet(float(value[0]), self._grad(x, c[0]))

    def phi_values(self, X: np.ndarray, upto: Optional[int] = None) -> np.ndarray:
        """Values at dense points (rows in the atlas coordinates; other coordinates zero)."""
        m = len(self.atlas) if upto is None else upto
        Y = self.atlas.dense_centers
        t = ((X[:, None, :] - Y[None]) ** 2).sum(-1)
        return self.kernel(t, m)[0]

    def alpha(self, n: int, x: SparseVec) -> float:
        p = self.profiles[n]
        return p.base + p.amplitude * math.expm1(-p.rate * dist(x, self.atlas.centers[n]) ** 2)


def _mix(atlas: CoverAtlas, coeffs, m: int) -> SparseVec:
    v = coeffs @ atlas.dense_centers[:m]
    return SparseVec.from_coords(atlas.coords, v)


def make_partition(atlas: CoverAtlas, f: Callable, eps_at: Callable) -> PartitionFn:
    """Bump profiles with ``a_n(0) = f(y_n)``, amplitude ``eps(y_n)/2``, rate ``1/r_n^2``."""
    profs = []
    for y, r in zip(atlas.centers, atlas.radii):
        profs.append(BumpProfile(float(f(y)), 0.5 * float(eps_at(y)), 1.0 / r**2))
    return PartitionFn(atlas, tuple(profs))


def beta_coefficients(pf: PartitionFn, m: int, x: SparseVec) -> tuple:
    """Common-factor form of ``grad f_m``: ``(2 / D^2) sum_j beta_j (x - y_j)``.

    Computed term by term as an independent check on the batch kernel.
    """
    t = pf._t(x)
    _, _, D, phi, P, alpha, dalpha = pf.kernel(t, m)
    D, phi, P, alpha, dalpha = D[0], phi[0], P[0], alpha[0], dalpha[0]
    beta = []
    for j in range(m):
        b = dalpha[j] * phi[j] * D
        for k in range(m):
            b += P[k, j] * math.fsum((alpha[k] - alpha[i]) * phi[i] for i in range(m))
        beta.append(b)
    return np.array(beta), float(D)


# ---------------------------------------------------------------------------
# critical points


def _cliques_with(atlas: CoverAtlas, n: int, max_size: int):
    """Sets ``J`` containing ``n`` (other members ``< n``) of pairwise overlapping balls."""
    r = atlas.radii
    c = atlas.centers
    pool = [j for j in range(n) if dist(c[j], c[n]) < r[j] + r[n]]
    meets = {(a, b): dist(c[a], c[b]) < r[a] + r[b] for a, b in itertools.combinations(pool, 2)}

    def grow(cl, rest):
        yield cl
        if len(cl) >= max_size:
            return
        for k, j in enumerate(rest):
            if all(meets[(min(i, j), max(i, j))] for i in cl if i != n):
                yield from grow(cl + [j], rest[k + 1:])

    for k, j in enumerate(pool):
        yield from grow([j], pool[k + 1:])


def local_partition(pf: PartitionFn, keep: list) -> PartitionFn:
    """Sub-partition on the centers ``keep`` (increasing order).

    Exact on any set that dropped balls do not meet: there their
    carving factors equal 1 and their own bumps vanish.
    """
    at = pf.atlas
    lam = [None] + [at.lambdas[i] for i in keep[1:]]
    sub = CoverAtlas(
        centers=tuple(at.centers[i] for i in keep),
        raw_radii=tuple(at.raw_radii[i] for i in keep),
        radii=tuple(at.radii[i] for i in keep),
        region=at.region,
        ambient_dim=at.ambient_dim,
        lambdas=tuple(lam),
    )
    return PartitionFn(sub, tuple(pf.profiles[i] for i in keep))


class _Restricted:
    """Gradient of ``f`` projected on the frame of a set of centers."""

    def __init__(self, pf: PartitionFn, J: list):
        at = pf.atlas
        self.pf, self.m = pf, len(at)
        self.Y = at.dense_centers
        idx = {i: k for k, i in enumerate(at.coords)}
        frame = affine_frame([at.centers[j] for j in J])
        if frame.rank_deficient:
            raise EngineError(f"centers {J} are affinely dependent", stage="critical_points")
        self.o = frame.origin.to_dense(at.coords)
        P = np.zeros((frame.dim, len(at.coords)))
        for a, u in enumerate(frame.directions):
            for i, v in u.items():
                P[a, idx[i]] = v
        self.P = P

    def points(self, U):
        return self.o + U @ self.P

    def __call__(self, U):
        shape = U.shape
        U = U.reshape(-1, shape[-1])
        X = self.points(U)
        t = ((X[:, None, :] - self.Y[None]) ** 2).sum(-1)
        _, c, D, *_ = self.pf.kernel(t, self.m)
        g = 2.0 * c.sum(1)[:, None] * X - 2.0 * c @ self.Y
        F = g @ self.P.T
        F[~(D > DENOM_FLOOR)] = np.nan
        return F.reshape(shape)


_STEPS = np.array([1.0, 0.5, 0.25, 0.125, 0.0625])


def _newton(F, U, scale, cfg: RootConfig, keep=None):
    B, k = U.shape
    h = 1e-6 * scale
    E = np.concatenate([np.eye(k), -np.eye(k)]) * h
    alive = np.ones(B, dtype=bool)
    done = np.zeros(B, dtype=bool)
    for _ in range(cfg.newton_iters):
        act = alive & ~done
        if not act.any():
            break
        Ua = U[act]
        # value and central-difference stencil in one batch
        stencil = np.concatenate([Ua[:, None, :], Ua[:, None, :] + E[None]], axis=1)
        Fs = F(stencil)
        Fa = Fs[:, 0]
        J = ((Fs[:, 1 : k + 1] - Fs[:, k + 1 :]) / (2 * h)).transpose(0, 2, 1)
        bad = ~np.isfinite(Fa).all(1) | ~np.isfinite(J).all((1, 2))
        J[bad] = np.eye(k)
        Fa = np.where(bad[:, None], 0.0, Fa)
        step = -np.einsum("bij,bj->bi", np.linalg.pinv(J), Fa)
        sn = np.linalg.norm(step, axis=1)
        step *= np.minimum(1.0, 0.25 * scale / np.maximum(sn, 1e-300))[:, None]
        f0 = np.linalg.norm(Fa, axis=1)
        trials = Ua[:, None, :] + _STEPS[None, :, None] * step[:, None, :]
        ft = np.linalg.norm(F(trials), axis=2)
        ok = np.isfinite(ft) & (ft <= f0[:, None])
        pick = np.where(ok.any(1), ok.argmax(1), len(_STEPS) - 1)
        newU = trials[np.arange(len(Ua)), pick]
        idx = np.flatnonzero(act)
        if keep is not None:
            bad |= ~keep(newU)
        alive[idx[bad]] = False
        moved = np.linalg.norm(newU - Ua, axis=1)
        U[idx] = newU
        done[idx[(moved < cfg.newton_tol * scale) | (f0 == 0.0)]] = True
    return U[alive]


def critical_points(
    pf: PartitionFn, n: int, region_filter: Optional[Callable] = None, cfg: RootConfig = RootConfig()
) -> list:
    """Critical points of ``f_{n+1}`` (bumps ``0..n``) lying in ``B(y_n, r_n)``.

    Seeds cover ``B(y_n, r_n)`` inside each span ``A[y_J]`` where ``J`` is a
    set of mutually overlapping balls containing ``n``; the single-center
    span contributes ``y_n`` itself. ``region_filter(x) -> bool`` prunes.
    """
    at = pf.atlas
    m = n + 1
    rn = at.radii[n]
    found: list = []

    def accept(x: SparseVec):
        if dist(x, at.centers[n]) >= rn:
            return
        if region_filter is not None and not region_filter(x):
            return
        try:
            g = pf.phi_jet(x, upto=m).gradient.norm()
        except OutsideDomain:
            return
        if g >= cfg.grad_tol:
            return
        if all(dist(x, z) > cfg.cluster_tol for z in found):
            found.append(x)

    accept(at.centers[n])
    if n == 0:
        return found
    keep = [j for j in range(m) if dist(at.centers[j], at.centers[n]) < at.radii[j] + rn]
    pos = {j: k for k, j in enumerate(keep)}
    loc = local_partition(pf, keep)
    for J in _cliques_with(at, n, cfg.max_clique - 1):
        J = [n] + J
        k = len(J) - 1
        per = min(cfg.seeds_per_dim, max(2, int(cfg.max_seeds ** (1.0 / k))))
        axis = np.linspace(-rn, rn, per)
        U = np.stack([g.ravel() for g in np.meshgrid(*([axis] * k), indexing="ij")], axis=1)
        F = _Restricted(loc, [pos[j] for j in J])
        X = F.points(U)
        Y = loc.atlas.dense_centers
        inside = np.ones(len(U), dtype=bool)
        for j in J:
            inside &= ((X - Y[pos[j]]) ** 2).sum(1) < at.radii[j] ** 2
        if not inside.any():
            continue
        Yj = Y[[pos[j] for j in J]]
        Rj = (1.05 * np.asarray([at.radii[j] for j in J])) ** 2

        def keep_iter(V):
            Xv = F.points(V)
            return np.all(((Xv[:, None, :] - Yj[None]) ** 2).sum(-1) < Rj, axis=1)

        roots = _newton(F, U[inside].copy(), rn, cfg, keep_iter)
        for u in roots:
            accept(SparseVec.from_coords(loc.atlas.coords, F.points(u[None])[0]))
    return found


# ---------------------------------------------------------------------------
# isolation


@dataclass(frozen=True)
class CriticalCluster:
    index: int
    points: tuple
    region: Region
    center_included: bool = False
    delta: float = 0.0


@dataclass
class IsolationState:
    step: int = 0
    lambdas: list = field(default_factory=list)
    mus: list = field(default_factory=list)
    clusters: list = field(default_factory=list)


def _inside_earlier(at: CoverAtlas, n: int, x: SparseVec, slack: float = 1e-12) -> bool:
    d2 = at.sq_dists(x)[:n]
    r = np.asarray(at.radii[:n])
    return bool(np.any(np.sqrt(d2) <= r * (1 + slack)))


def isolate_step(state: IsolationState, pf: PartitionFn, cfg: RootConfig = RootConfig()) -> tuple:
    """Advance the induction by one center; returns ``(state, pf)``.

    Fixes the shrink factor of the new bump, finds the critical points of
    the new partial quotient that the previous bumps do not account for,
    and wraps them in an isolating region disjoint from all earlier ones.
    """
    at = pf.atlas
    n = state.step
    if n >= len(at):
        raise EngineError("all centers already processed", stage="isolate")
    y, r = at.centers, at.radii
    if n == 0:
        lam = [None]
        mus = [None, 0.5]
        reg = BallRegion(y[0], 0.5 * r[0], key=0)
        cl = CriticalCluster(0, (y[0],), reg, True, 0.5 * r[0])
        pf = pf.with_lambdas(lam)
        return IsolationState(1, lam, mus, [cl]), pf

    mu_n = state.mus[n]
    base = max(mu_n, 1.0 - 1.0 / (n + 1))
    lam_n = base + cfg.lambda_fraction * (1.0 - base)
    lambdas = state.lambdas + [lam_n]
    pf = pf.with_lambdas(lambdas)
    at = pf.atlas

    def in_scallop(x):
        d = np.sqrt(at.sq_dists(x))
        if d[n] >= r[n]:
            return False
        return bool(np.all(d[:n] > lam_n * np.asarray(r[:n])))

    roots = critical_points(pf, n, lambda x: in_scallop(x) and _inside_earlier(at, n, x), cfg)

    worst = lam_n
    for x in roots:
        d = np.sqrt(at.sq_dists(x))[:n]
        ratio = float(np.min(d / np.asarray(r[:n])))
        if ratio >= 1.0 - 1e-12:
            raise EngineError("critical point on the boundary of the earlier balls", stage="isolate", witness=x)
        worst = max(worst, ratio)
    mu_next = worst + cfg.mu_margin * (1.0 - worst)

    near = [i for i in range(n) if dist(y[i], y[n]) < r[i] + r[n]]
    carved = Intersection(
        (BallRegion(y[n], r[n], key=n),)
        + tuple(OutsideBall(y[i], mu_n * r[i], key=i) for i in near)
        + (Union(tuple(BallRegion(y[i], mu_next * r[i], key=i) for i in near)),)
    )
    points = list(roots)
    parts = [carved] if near else []
    delta = 0.0
    if not _inside_earlier(at, n, y[n]):
        gap = min([r[n], mu_next * r[n]] + [dist(y[i], y[n]) - r[i] for i in range(n)])
        delta = 0.5 * gap
        parts.append(BallRegion(y[n], delta, key=n))
        points.insert(0, y[n])
    region = Union(tuple(parts))
    for x in points:
        if not region.contains(x):
            raise EngineError(f"critical point escapes its isolating region (center {n})", stage="isolate", witness=x)
    cl = CriticalCluster(n, tuple(points), region, delta > 0, delta)
    return IsolationState(n + 1, lambdas, state.mus + [mu_next], state.clusters + [cl]), pf


def isolate_all(pf: PartitionFn, cfg: RootConfig = RootConfig()) -> tuple:
    state = IsolationState()
    for _ in range(len(pf.atlas)):
        state, pf = isolate_step(state, pf, cfg)
    pf = PartitionFn(replace(pf.atlas, lambdas=tuple(state.lambdas), mus=tuple(state.mus)), pf.profiles)
    return state, pf
