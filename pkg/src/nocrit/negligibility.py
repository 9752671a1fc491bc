"""Smooth removal of a finite net from an open set.

The map ``h = F^-1 o G^-1 o F`` is the identity off ``U`` and sends the
whole space into the complement of the net. The ingredients:

* ``omega``: a noncomplete norm that shrinks a block ``W`` of fresh
  coordinates with weights ``2^-j``;
* ``WhitneyFn``: an omega-1-Lipschitz function vanishing only on the net
  and constant (``plateau``) at omega-distance ``>= eps``;
* ``DeletingPath``: a curve with omega-speed ``<= 1/4`` that runs off to
  infinity in ``W`` as ``t -> 0`` and is 0 for ``t >= delta``;
* ``RadialPush``: rescales the ``Y``-orthogonal part so that ``U`` becomes
  an omega-neighbourhood of the net.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceFailure, EngineError
from .regions import Region
from .smooth import Jet, _unit_step, transition_array, unit_step
from .space import IndexAllocator, SparseVec, affine_frame, fresh_index

W_COORDS = 64


# ---------------------------------------------------------------------------
# omega


@dataclass(frozen=True)
class OmegaSplit:
    """``Y`` = span of finitely many vectors, ``W`` = weighted fresh block, rest ``V``."""

    y_dirs: tuple
    w_indices: tuple

    def __post_init__(self):
        ys = set()
        for u in self.y_dirs:
            ys |= u.support()
        if ys & set(self.w_indices):
            raise ValueError("W coordinates must be disjoint from Y")

    @cached_property
    def shrink(self) -> dict:
        """``index -> 1 - 4^-j``: how much of ``x_w^2`` the norm drops."""
        return {w: 1.0 - 4.0 ** -(j + 1) for j, w in enumerate(self.w_indices)}

    @cached_property
    def scale(self) -> dict:
        return {w: 4.0 ** -(j + 1) for j, w in enumerate(self.w_indices)}

    def weight(self, j: int) -> float:
        """Weight ``2^-j`` of the ``j``-th W coordinate (1-based)."""
        return 2.0 ** -j

    def project_y(self, x: SparseVec) -> SparseVec:
        out = SparseVec.zero()
        for u in self.y_dirs:
            out = out.axpy(x.dot(u), u)
        return out

    def metric(self, v: SparseVec) -> SparseVec:
        """``M v`` with ``omega(v)^2 = <v, M v>``."""
        sc = self.scale
        return SparseVec({i: c * sc.get(i, 1.0) for i, c in v.items()})

    def omega_sq(self, v: SparseVec) -> float:
        sh = self.shrink
        return max(v.norm_sq() - math.fsum(sh[i] * c * c for i, c in v.items() if i in sh), 0.0)


def make_split(points, alloc: IndexAllocator, n_w: int = W_COORDS) -> OmegaSplit:
    """Split with ``Y`` spanned by ``points`` and ``n_w`` fresh W coordinates."""
    frame = affine_frame([SparseVec.zero()] + list(points))
    return OmegaSplit(frame.directions, tuple(fresh_index(alloc, n_w)))


def omega(split: OmegaSplit, x: SparseVec) -> Jet:
    val = math.sqrt(split.omega_sq(x))
    if val == 0.0:
        raise EngineError("omega has no gradient at the origin", stage="omega")
    return Jet(val, split.metric(x) / val)


def omega_value(split: OmegaSplit, x: SparseVec) -> float:
    return math.sqrt(split.omega_sq(x))


# ---------------------------------------------------------------------------
# Whitney function

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def _ramp_integral(u: float) -> float:
    """``int_0^u rho`` for the unit transition ``rho``, ``0 <= u <= 1``."""
    if u <= 0.0:
        return 0.0
    s = 0.5 * u * (_GL_X + 1.0)
    v, _ = transition_array(0.0, 1.0, s)
    return float(0.5 * u * np.dot(_GL_W, v))


@dataclass(frozen=True)
class CompactNet:
    points: tuple
    net_radius: float = 0.0

    def __post_init__(self):
        if not self.points:
            raise ValueError("net must be nonempty")
        if self.net_radius < 0:
            raise ValueError("net_radius must be >= 0")


@dataclass(frozen=True)
class WhitneyFn:
    """``f = L q(s / L)`` with ``s`` a p-norm soft minimum of omega-distances.

    ``q(u) = u - int_0^u rho`` for ``u <= 1`` and ``1/2`` beyond, so
    ``0 <= q' <= 1``; with ``L = eps * m^(-1/p)`` the plateau ``L/2`` is
    reached wherever every net point is at omega-distance ``>= eps``.
    """

    net: CompactNet
    split: OmegaSplit
    eps: float
    power: float = 8.0

    def __post_init__(self):
        if not (self.eps > 0 and self.power >= 1):
            raise ValueError("eps must be positive and power >= 1")

    @property
    def scale_length(self) -> float:
        return self.eps * len(self.net.points) ** (-1.0 / self.power)

    @property
    def plateau(self) -> float:
        return 0.5 * self.scale_length


def softmin_distance(wf: WhitneyFn, x: SparseVec):
    """``(s, grad s)``; ``grad`` is ``None`` when ``x`` is a net point."""
    split = wf.split
    diffs = [x - z for z in wf.net.points]
    d = np.array([math.sqrt(split.omega_sq(v)) for v in diffs])
    dmin = d.min()
    if dmin == 0.0:
        return 0.0, None
    ratio = dmin / d
    s = dmin * np.sum(ratio ** wf.power) ** (-1.0 / wf.power)
    coef = (s / d) ** (wf.power + 1) / d
    grad = SparseVec.zero()
    for c, v in zip(coef, diffs):
        if c > 1e-300:
            grad = grad.axpy(c, split.metric(v))
    return float(s), grad


def whitney_eval(wf: WhitneyFn, x: SparseVec) -> Jet:
    s, gs = softmin_distance(wf, x)
    L = wf.scale_length
    if gs is None:
        return Jet(0.0, SparseVec.zero())
    u = s / L
    if u >= 1.0:
        return Jet(wf.plateau, SparseVec.zero())
    rho, _ = unit_step(u)
    return Jet(L * (u - _ramp_integral(u)), gs * (1.0 - rho))


# ---------------------------------------------------------------------------
# deleting path


@dataclass(frozen=True)
class DeletingPath:
    """Piecewise path through cumulative waypoints ``C (z_1 + ... + z_k)``.

    On ``[delta / 2^(k+1), delta / 2^k]`` it slides along ``C z_(k+1)`` with
    a flat-ended transition; ``C = 2 beta``, ``beta = delta / 16``, so each
    segment has omega-length ``beta 2^-k`` and omega-speed ``<= 1/4``.
    """

    delta: float
    split: OmegaSplit
    base_index: int = 1

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 1 <= self.base_index <= len(self.split.w_indices):
            raise ValueError("base_index must point into the W block")

    @property
    def beta(self) -> float:
        return self.delta / 16.0

    @property
    def coefficient(self) -> float:
        return self.beta * 2.0 ** self.base_index

    @property
    def segments(self) -> int:
        return len(self.split.w_indices) - self.base_index + 1

    @property
    def t_min(self) -> float:
        return self.delta * 2.0 ** -self.segments

    def waypoint_index(self, k: int) -> int:
        return self.split.w_indices[self.base_index - 1 + k]


def path_eval(p: DeletingPath, t: float) -> tuple:
    """``(p(t), p'(t))``."""
    if not t > 0:
        raise ValueError(f"path is defined for t > 0, got {t}")
    if t >= p.delta:
        return SparseVec.zero(), SparseVec.zero()
    if t < p.t_min:
        raise EngineError(f"path parameter {t:.3g} below the allocated range", stage="extract")
    k = int(math.floor(math.log2(p.delta / t)))
    # guard against rounding at the dyadic seams
    while k > 0 and t >= p.delta * 2.0 ** -k:
        k -= 1
    while t < p.delta * 2.0 ** -(k + 1):
        k += 1
    a = p.delta * 2.0 ** -(k + 1)
    u = (t - a) / a
    rest, drho = (float(a[0]) for a in _unit_step(np.array([u]), complement=True))
    C = p.coefficient
    e = {p.waypoint_index(i): C for i in range(k)}
    e[p.waypoint_index(k)] = C * rest
    vel = SparseVec({p.waypoint_index(k): -C * drho / a})
    return SparseVec(e), vel


# ---------------------------------------------------------------------------
# radial push


@dataclass(frozen=True)
class RadialPush:
    centers: tuple
    radii: tuple
    split: OmegaSplit

    def __post_init__(self):
        if len(self.centers) != len(self.radii) or not self.centers:
            raise ValueError("need one positive radius per center")
        if min(self.radii) <= 0:
            raise ValueError("radii must be positive")


def _g(rp: RadialPush, x: SparseVec, grad: bool = False):
    d = np.array([(x - c).norm() for c in rp.centers])
    r = np.asarray(rp.radii)
    v, dv = transition_array(r, 2.0 * r, d)
    g = float(np.prod(v))
    if not grad:
        return g, None
    gg = SparseVec.zero()
    for i, c in enumerate(rp.centers):
        if dv[i] == 0.0:
            continue
        others = float(np.prod(np.delete(v, i)))
        if others == 0.0:
            continue
        gg = gg.axpy(dv[i] * others / d[i], x - c)
    return g, gg


def _ratio(split: OmegaSplit, z: SparseVec) -> float:
    n2 = z.norm_sq()
    if n2 == 0.0:
        return 1.0
    w2 = split.omega_sq(z)
    return math.sqrt(n2 / w2)


def _push_parts(rp: RadialPush, x: SparseVec, grad: bool = False):
    y = rp.split.project_y(x)
    z = x - y
    R = _ratio(rp.split, z)
    g, gg = _g(rp, x, grad)
    lam = 1.0 + g * (R - 1.0)
    if not grad:
        return y, z, lam, None
    if z.is_zero():
        return y, z, lam, SparseVec.zero()
    nz = z.norm()
    wz = math.sqrt(rp.split.omega_sq(z))
    gR = z * (1.0 / (nz * wz)) - rp.split.metric(z) * (nz / wz**3)
    glam = gg * (R - 1.0) + gR * g
    return y, z, lam, glam


def radial_push(rp: RadialPush, x: SparseVec, direction: str = "forward") -> SparseVec:
    if direction == "forward":
        y, z, lam, _ = _push_parts(rp, x)
        return y + z * lam
    if direction != "inverse":
        raise ValueError("direction must be 'forward' or 'inverse'")
    y = rp.split.project_y(x)
    zs = x - y
    nz = zs.norm()
    if nz == 0.0:
        return x
    zhat = zs / nz
    R = _ratio(rp.split, zhat)
    if R == 1.0:
        return x
    # |y + s zhat - c|^2 = |y - c|^2 + s^2 since centers lie in Y
    base = np.array([(y - c).norm_sq() for c in rp.centers])
    r = np.asarray(rp.radii)

    def resid(s):
        v, _ = transition_array(r, 2.0 * r, np.sqrt(base + s * s))
        return s * (1.0 + (R - 1.0) * float(np.prod(v))) - nz

    lo, hi = nz / R, nz
    if resid(lo) >= 0.0:
        s = lo
    elif resid(hi) <= 0.0:
        s = hi
    else:
        s = brentq(resid, lo, hi, xtol=1e-16 * nz, maxiter=200)
    return y + zhat * s


def push_jacobian(rp: RadialPush, x: SparseVec, v: SparseVec, transpose: bool = False, inverse: bool = False) -> SparseVec:
    """Action of ``DF(x)`` (or its transpose / inverse) on ``v``.

    ``DF = D + z (grad lambda)^T`` with ``D = P_Y + lambda (I - P_Y)``;
    inverses follow from the rank-one update formula.
    """
    y, z, lam, glam = _push_parts(rp, x, grad=True)
    split = rp.split

    def Dmul(u, power):
        py = split.project_y(u)
        return py + (u - py) * (lam**power)

    a, b = (glam, z) if transpose else (z, glam)  # rank-one term a <b, .>
    if not inverse:
        return Dmul(v, 1) + a * b.dot(v)
    Dv = Dmul(v, -1)
    Da = Dmul(a, -1)
    den = 1.0 + b.dot(Da)
    if abs(den) < 1e-12:
        raise EngineError("singular radial push differential", stage="extract", witness=x)
    return Dv - Da * (b.dot(Dv) / den)


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class ExtractionDiffeo:
    push: RadialPush
    whitney: WhitneyFn
    path: DeletingPath
    region: Region
    max_iter: int = 200
    tol: float = 1e-15

    @property
    def net(self) -> CompactNet:
        return self.whitney.net


def build_extraction(
    points, region: Region, alloc: IndexAllocator, radius_factor: float = 0.45, power: float = 8.0
) -> ExtractionDiffeo:
    """Diffeo removing the finite set ``points`` inside the open ``region``.

    Push radii are ``radius_factor`` times the region depth at each point,
    so the doubled balls stay inside the region.
    """
    pts = tuple(points)
    if not pts:
        raise ValueError("nothing to extract")
    radii = []
    for p in pts:
        dep = region.depth(p)
        if not dep > 0:
            raise EngineError("net point not inside its isolating region", stage="extract", witness=p)
        radii.append(radius_factor * dep)
    split = make_split(pts, alloc)
    push = RadialPush(pts, tuple(radii), split)
    wf = WhitneyFn(CompactNet(pts), split, min(radii), power)
    path = DeletingPath(wf.plateau, split)
    return ExtractionDiffeo(push, wf, path, region)


def g_perturbation(ed: ExtractionDiffeo, x: SparseVec, direction: str = "forward") -> SparseVec:
    if direction == "forward":
        t = whitney_eval(ed.whitney, x).value
        if t == 0.0:
            raise EngineError("perturbation undefined on the net", stage="extract", witness=x)
        return x + path_eval(ed.path, t)[0]
    if direction != "inverse":
        raise ValueError("direction must be 'forward' or 'inverse'")
    return _g_inverse(ed, x)[0]


def _g_inverse(ed: ExtractionDiffeo, y: SparseVec):
    """Solve ``x + p(f(x)) = y`` through the scalar fixed point ``t = f(y - p(t))``."""
    t = whitney_eval(ed.whitney, y).value
    plateau = ed.whitney.plateau
    if t >= plateau:
        return y, t
    tmin = ed.path.t_min
    step = math.inf
    for _ in range(ed.max_iter):
        tt = max(t, tmin)
        x = y - path_eval(ed.path, tt)[0]
        t_new = whitney_eval(ed.whitney, x).value
        step = abs(t_new - t)
        t = t_new
        if step <= ed.tol * plateau:
            break
    else:
        raise ConvergenceFailure(f"fixed point did not converge (last step {step:.3g})", stage="extract", witness=y)
    if t <= 0.0:
        raise EngineError("inverse perturbation landed on the net", stage="extract", witness=y)
    return y - path_eval(ed.path, t)[0], t


def extract(ed: ExtractionDiffeo, x: SparseVec) -> SparseVec:
    u = radial_push(ed.push, x)
    v = g_perturbation(ed, u, "inverse")
    return radial_push(ed.push, v, "inverse")


def extract_inverse(ed: ExtractionDiffeo, x: SparseVec) -> SparseVec:
    u = radial_push(ed.push, x)
    v = g_perturbation(ed, u, "forward")
    return radial_push(ed.push, v, "inverse")


def _g_inverse_jacobian(ed: ExtractionDiffeo, y: SparseVec, w: SparseVec, transpose: bool):
    x, t = _g_inverse(ed, y)
    if t >= ed.whitney.plateau:
        return x, w
    fj = whitney_eval(ed.whitney, x)
    _, dp = path_eval(ed.path, t)
    a, b = (fj.gradient, dp) if transpose else (dp, fj.gradient)
    den = 1.0 + fj.gradient.dot(dp)
    if abs(den) < 1e-12:
        raise EngineError("singular perturbation differential", stage="extract", witness=y)
    return x, w - a * (b.dot(w) / den)


def extract_jacobian_action(ed: ExtractionDiffeo, x: SparseVec, v: SparseVec) -> SparseVec:
    """``Dh(x)[v]``."""
    u = radial_push(ed.push, x)
    w = push_jacobian(ed.push, x, v)
    xg, w = _g_inverse_jacobian(ed, u, w, transpose=False)
    return push_jacobian(ed.push, radial_push(ed.push, xg, "inverse"), w, inverse=True)


def extract_pullback(ed: ExtractionDiffeo, x: SparseVec, g: SparseVec) -> SparseVec:
    """``Dh(x)^T g``: pulls a gradient at ``h(x)`` back to ``x``."""
    u = radial_push(ed.push, x)
    xg, _ = _g_inverse(ed, u)
    hx = radial_push(ed.push, xg, "inverse")
    w = push_jacobian(ed.push, hx, g, transpose=True, inverse=True)
    _, w = _g_inverse_jacobian(ed, u, w, transpose=True)
    return push_jacobian(ed.push, x, w, transpose=True)


def clearance(ed: ExtractionDiffeo, x: SparseVec) -> float:
    """omega-distance from ``x`` to the net."""
    return min(omega_value(ed.whitney.split, x - z) for z in ed.net.points)
