"""C-infinity scalar primitives and first-order jets.

The transition is the classical ``sigma(u) / (sigma(u) + sigma(1 - u))``
with ``sigma(s) = exp(-1/s)`` for ``s > 0``, evaluated on the normalised
variable ``u = (t - a) / (b - a)`` and rewritten as a logistic in
``1/(1-u) - 1/u`` so it stays finite for very short intervals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .space import SparseVec


@dataclass(frozen=True)
class Jet:
    """Value and gradient of a scalar function at one point."""

    value: float
    gradient: SparseVec

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"jet value must be finite, got {self.value}")


@dataclass(frozen=True)
class Transition:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"transition needs a < b, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class BumpProfile:
    """Decreasing profile ``base - amplitude * (1 - exp(-rate * t))``."""

    base: float
    amplitude: float
    rate: float = 1.0

    def __post_init__(self):
        if not (self.amplitude > 0 and self.rate > 0):
            raise ValueError("amplitude and rate must be positive")


def sigma(s: float) -> tuple:
    """``exp(-1/s)`` for ``s > 0`` and 0 otherwise, with its derivative."""
    if s <= 0.0:
        return 0.0, 0.0
    v = math.exp(-1.0 / s)
    return v, v / (s * s)


def _unit_step(u, complement: bool = False):
    """Rising unit transition on [0, 1] and its derivative, vectorised.

    With ``complement`` the first output is ``1 - rho`` computed without
    cancellation, which matters deep in the tail where ``rho`` rounds to 1.
    """
    u = np.asarray(u, dtype=float)
    if complement:
        val = np.where(u <= 0.0, 1.0, 0.0)
    else:
        val = np.where(u >= 1.0, 1.0, 0.0)
    der = np.zeros_like(u)
    inner = (u > 0.0) & (u < 1.0)
    if np.any(inner):
        ui = u[inner]
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            e = 1.0 / (1.0 - ui) - 1.0 / ui
            v = expit(e)
            vc = expit(-e)
            w = v * vc
            k = 1.0 / ui**2 + 1.0 / (1.0 - ui) ** 2
            d = np.where(w > 0.0, w * k, 0.0)
        val[inner] = vc if complement else v
        der[inner] = np.nan_to_num(d, nan=0.0, posinf=0.0)
    return val, der


def _log_unit_step(u, complement: bool = False):
    """``log`` of the unit transition (or its complement) and its ``u``-derivative.

    Never underflows inside ``(0, 1)``; exact zeros give ``-inf`` with
    derivative 0, since every derivative vanishes on the flat pieces.
    """
    u = np.asarray(u, dtype=float)
    if complement:
        val = np.where(u <= 0.0, 0.0, -np.inf)
    else:
        val = np.where(u >= 1.0, 0.0, -np.inf)
    der = np.zeros_like(u)
    inner = (u > 0.0) & (u < 1.0)
    if np.any(inner):
        ui = u[inner]
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            e = 1.0 / (1.0 - ui) - 1.0 / ui
            k = np.minimum(1.0 / ui**2 + 1.0 / (1.0 - ui) ** 2, 1e300)
            if complement:
                val[inner] = -np.logaddexp(0.0, e)
                der[inner] = -expit(e) * k
            else:
                val[inner] = -np.logaddexp(0.0, -e)
                der[inner] = expit(-e) * k
    return val, der


def unit_step(u: float) -> tuple:
    v, d = _unit_step(np.array([u]))
    return float(v[0]), float(d[0])


def transition_eval(tr: Transition, t: float, rising: bool = True) -> tuple:
    """Value and derivative of the rising (or falling) transition at ``t``."""
    v, d = transition_array(tr.a, tr.b, np.array([t], dtype=float), rising)
    return float(v[0]), float(d[0])


def transition_array(a, b, t, rising: bool = True):
    """Vectorised transition; ``a``, ``b`` broadcast against ``t``."""
    width = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    u = (np.asarray(t, dtype=float) - a) / width
    v, d = _unit_step(u, complement=not rising)
    d = d / width
    return (v, d) if rising else (v, -d)


def sq_dist_jet(x: SparseVec, y: SparseVec) -> Jet:
    diff = x - y
    return Jet(diff.norm_sq(), diff * 2.0)


def g_n_eval(transitions: Sequence, t: Sequence[float]) -> tuple:
    """Product of transitions and its partial derivatives.

    ``transitions`` is a list of ``(Transition, rising)`` pairs; the
    convention is rising factors first and one falling factor last.
    """
    if len(transitions) != len(t):
        raise ValueError(f"length mismatch: {len(transitions)} transitions, {len(t)} arguments")
    if not transitions:
        raise ValueError("g_n needs at least one factor")
    vals, ders = [], []
    for (tr, rising), ti in zip(transitions, t):
        v, d = transition_eval(tr, ti, rising)
        vals.append(v)
        ders.append(d)
    value = math.prod(vals)
    partials = []
    for j in range(len(vals)):
        others = math.prod(vals[:j] + vals[j + 1:])
        partials.append(ders[j] * others)
    return value, partials


def profile_eval(p: BumpProfile, t: float) -> tuple:
    if t < 0:
        raise ValueError(f"profile argument must be >= 0, got {t}")
    e = math.exp(-p.rate * t)
    return p.base + p.amplitude * math.expm1(-p.rate * t), -p.amplitude * p.rate * e


def profile_array(base, amplitude, rate, t):
    e = np.exp(-rate * t)
    return base + amplitude * np.expm1(-rate * t), -amplitude * rate * e


def central_difference(fun, x: SparseVec, v: SparseVec, step: float = 1e-5, richardson: bool = True) -> float:
    """Directional derivative of a scalar function by central differences.

    With ``richardson`` the step-``h`` and step-``h/2`` estimates are
    combined to cancel the leading error term.
    """
    def cd(h):
        return (fun(x.axpy(h, v)) - fun(x.axpy(-h, v))) / (2.0 * h)

    d1 = cd(step)
    if not richardson:
        return d1
    d2 = cd(step / 2.0)
    return (4.0 * d2 - d1) / 3.0
