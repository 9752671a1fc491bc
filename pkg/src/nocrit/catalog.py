"""Closed catalog of test functions, each with an analytic modulus.

A modulus ``delta(x, eps)`` guarantees ``|f(y) - f(x)| <= eps / 4``
whenever ``|y - x| <= 2 delta``. Functions read coordinates ``1..d`` only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .space import SparseVec


@dataclass(frozen=True)
class CatalogFn:
    name: str
    f: Callable[[SparseVec], float]
    modulus: Callable[[SparseVec, float], float]
    params: dict


def _vec(a: Sequence[float]) -> SparseVec:
    return SparseVec.from_dense(a)


def constant(c: float = 0.0) -> CatalogFn:
    return CatalogFn("constant", lambda x: float(c), lambda x, eps: math.inf, {"c": c})


def linear(a: Sequence[float]) -> CatalogFn:
    av = _vec(a)
    na = av.norm()
    mod = (lambda x, eps: math.inf) if na == 0 else (lambda x, eps: eps / (8.0 * na))
    return CatalogFn("linear", lambda x: av.dot(x), mod, {"a": list(a)})


def quadratic(c: Sequence[float]) -> CatalogFn:
    cv = _vec(c)

    def mod(x, eps):
        rho = (x - cv).norm()
        return 0.5 * (math.sqrt(rho * rho + eps / 4.0) - rho)

    return CatalogFn("quadratic", lambda x: (x - cv).norm_sq(), mod, {"c": list(c)})


def oscillatory(a: Sequence[float]) -> CatalogFn:
    av = _vec(a)
    na = av.norm()
    mod = (lambda x, eps: math.inf) if na == 0 else (lambda x, eps: eps / (8.0 * na))
    return CatalogFn("oscillatory", lambda x: math.sin(av.dot(x)), mod, {"a": list(a)})


def custom(b0: float, b: Sequence[float], q: Sequence[float]) -> CatalogFn:
    """``b0 + sum b_i x_i + sum q_i x_i^2`` over ``e_1..e_d``."""
    b = np.asarray(b, dtype=float)
    q = np.asarray(q, dtype=float)
    if b.shape != q.shape:
        raise ValueError("b and q must have the same length")
    idx = range(1, len(b) + 1)
    Q = float(np.max(np.abs(q))) if len(q) else 0.0
    nb = float(np.linalg.norm(b))

    def f(x):
        v = x.to_dense(idx)
        return float(b0 + b @ v + q @ (v * v))

    def mod(x, eps):
        v = x.to_dense(idx)
        B = nb + 2.0 * float(np.linalg.norm(q * v))
        # B s + Q s^2 <= eps/4 with s = 2 delta
        if Q == 0.0:
            return math.inf if B == 0.0 else eps / (8.0 * B)
        s = (-B + math.sqrt(B * B + Q * eps)) / (2.0 * Q)
        return 0.5 * s

    return CatalogFn("custom", f, mod, {"b0": b0, "b": b.tolist(), "q": q.tolist()})


def from_spec(spec: dict, d: int) -> CatalogFn:
    """Build a catalog entry from ``{"id": ..., params}``; vectors are padded to ``d``."""
    kind = spec["id"]

    def pad(v):
        v = list(v)
        if len(v) > d:
            raise ValueError(f"coefficient vector longer than ambient_dim={d}")
        return v + [0.0] * (d - len(v))

    if kind == "constant":
        return constant(spec.get("c", 0.0))
    if kind == "linear":
        return linear(pad(spec["a"]))
    if kind == "quadratic":
        return quadratic(pad(spec.get("c", [])))
    if kind == "oscillatory":
        return oscillatory(pad(spec["a"]))
    if kind == "custom":
        return custom(spec.get("b0", 0.0), pad(spec.get("b", [])), pad(spec.get("q", [])))
    raise ValueError(f"unknown function id {kind!r}")


# ---------------------------------------------------------------------------
# tolerance functions


@dataclass(frozen=True)
class EpsFn:
    """Positive tolerance ``eps(x)`` with a global Lipschitz constant."""

    name: str
    value: Callable[[SparseVec], float]
    lipschitz: float

    def __call__(self, x: SparseVec) -> float:
        return self.value(x)


def constant_eps(e: float) -> EpsFn:
    if not e > 0:
        raise ValueError("eps must be positive")
    return EpsFn("constant", lambda x: float(e), 0.0)


def affine_norm_eps(scale: float = 0.1, offset: float = 1.0) -> EpsFn:
    """``scale * (offset + |x|)``."""
    if not (scale > 0 and offset > 0):
        raise ValueError("scale and offset must be positive")
    return EpsFn("affine_norm", lambda x: scale * (offset + x.norm()), scale)


def eps_from_spec(spec) -> EpsFn:
    if isinstance(spec, (int, float)):
        return constant_eps(float(spec))
    if spec.get("id") == "affine_norm":
        return affine_norm_eps(spec.get("scale", 0.1), spec.get("offset", 1.0))
    raise ValueError(f"unknown eps id {spec!r}")


def combined_modulus(fn: CatalogFn, eps: EpsFn) -> Callable[[SparseVec], float]:
    """Cover modulus for a possibly variable tolerance.

    Besides the function modulus at tolerance ``eps(x)``, the radius is
    capped by ``alpha_x = eps(x) / (16 L)`` so that ``eps`` varies by at
    most ``eps(x)/8`` over ``B(x, 2 alpha_x)``.
    """
    def delta(x):
        e = eps(x)
        d = fn.modulus(x, e)
        if eps.lipschitz > 0:
            d = min(d, e / (16.0 * eps.lipschitz))
        return d

    return delta
