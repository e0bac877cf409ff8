"""Wiener-Ito chaos on tensor-power step kernels.

A term ``(n, c, g)`` stands for ``c * I_n(g^{(x)n}) = c * n! * J_n(g)`` where
``J_n`` is the iterated integral over the ordered simplex.  Orders are
limited to 0..3.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import InvalidArgumentError, UnsupportedOrderError
from .paths import PathBundle, TimeGrid

MAX_ORDER = 3


@dataclass(frozen=True)
class StepFunction:
    """Left-continuous step function: ``vals[k]`` on ``(breaks[k], breaks[k+1]]``.

    The first interval also owns its left endpoint; outside
    ``[breaks[0], breaks[-1]]`` the function is 0.
    """

    breaks: tuple
    vals: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.breaks)
        v = tuple(float(x) for x in self.vals)
        if len(b) < 2 or len(v) != len(b) - 1:
            raise InvalidArgumentError("a step function needs K+1 breaks and K values")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise InvalidArgumentError("step-function breaks must be strictly increasing")
        if not all(math.isfinite(x) for x in b + v):
            raise InvalidArgumentError("step-function breaks and values must be finite")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "vals", v)

    @classmethod
    def constant(cls, value: float, T: float, start: float = 0.0) -> "StepFunction":
        return cls((start, T), (value,))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        b = np.asarray(self.breaks)
        v = np.append(np.asarray(self.vals), 0.0)
        k = np.searchsorted(b, t, side="left") - 1
        k = np.where(t == b[0], 0, k)
        k = np.where((k < 0) | (t > b[-1]), len(self.vals), k)
        out = v[k]
        return float(out) if out.ndim == 0 else out

    def on_grid(self, grid: TimeGrid) -> np.ndarray:
        """Value on each step ``(t_m, t_{m+1}]``; breaks must lie on the grid."""
        for x in self.breaks:
            if x < -1e-12 or x > grid.T * (1 + 1e-12):
                raise InvalidArgumentError(f"step-function break {x} outside [0, {grid.T}]")
            grid.index_of(x)
        mid = grid.times[:-1] + 0.5 * grid.dt
        return np.asarray(self(mid), dtype=np.float64)

    def _merged(self, other: "StepFunction"):
        pts = np.union1d(self.breaks, other.breaks)
        mid = 0.5 * (pts[:-1] + pts[1:])
        return np.diff(pts), np.asarray(self(mid)), np.asarray(other(mid))

    def inner(self, other: "StepFunction") -> float:
        w, a, b = self._merged(other)
        return float(np.sum(w * a * b))

    def norm2(self) -> float:
        return float(np.sum(np.diff(self.breaks) * np.square(self.vals)))

    def scale(self, c: float) -> "StepFunction":
        return StepFunction(self.breaks, tuple(c * x for x in self.vals))

    def restrict(self, t: float) -> "StepFunction":
        """``g * 1_{[0, t]}``."""
        b = np.asarray(self.breaks)
        if t <= b[0]:
            return StepFunction(self.breaks, (0.0,) * len(self.vals))
        if t >= b[-1]:
            return self
        k = int(np.searchsorted(b, t, side="left"))
        breaks = list(b[:k]) + [t, b[-1]]
        vals = list(self.vals[: k - 1]) + [self.vals[k - 1], 0.0]
        return StepFunction(tuple(breaks), tuple(vals))

    def to_dict(self) -> dict:
        return {"breaks": list(self.breaks), "vals": list(self.vals)}

    @classmethod
    def from_dict(cls, d) -> "StepFunction":
        return cls(tuple(d["breaks"]), tuple(d["vals"]))


@dataclass(frozen=True)
class ChaosTerm:
    n: int
    c: float
    g: StepFunction | None = None

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)):
            raise InvalidArgumentError(f"chaos order must be an integer, got {self.n!r}")
        if not 0 <= self.n <= MAX_ORDER:
            raise UnsupportedOrderError(f"chaos order {self.n} outside [0, {MAX_ORDER}]")
        if self.n >= 1 and self.g is None:
            raise InvalidArgumentError(f"order-{self.n} term needs a kernel")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "c", float(self.c))

    def to_dict(self) -> dict:
        d = {"n": self.n, "c": self.c}
        if self.g is not None:
            d["g"] = self.g.to_dict()
        return d


@dataclass(frozen=True)
class ChaosExpansion:
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def max_order(self) -> int:
        return max((t.n for t in self.terms), default=0)

    def constant(self) -> float:
        return sum(t.c for t in self.terms if t.n == 0)

    def to_json(self) -> str:
        return json.dumps({"terms": [t.to_dict() for t in self.terms]})

    @classmethod
    def from_json(cls, text: str | dict) -> "ChaosExpansion":
        d = json.loads(text) if isinstance(text, (str, bytes)) else text
        terms = []
        for i, t in enumerate(d.get("terms", [])):
            try:
                g = StepFunction.from_dict(t["g"]) if "g" in t else None
                terms.append(ChaosTerm(t["n"], t.get("c", 1.0), g))
            except KeyError as e:
                raise InvalidArgumentError(f"terms[{i}] is missing field {e}") from None
        return cls(tuple(terms))


# -- operations ---------------------------------------------------------------


def hermite(n: int, x):
    """Probabilists' Hermite polynomial ``He_n(x)`` by the three-term recurrence."""
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 0:
        raise InvalidArgumentError(f"Hermite order must be a nonnegative integer, got {n!r}")
    x = np.asarray(x, dtype=np.float64)
    prev, cur = np.ones_like(x), x.copy()
    if n == 0:
        out = prev
    else:
        for k in range(1, n):
            prev, cur = cur, x * cur - k * prev
        out = cur
    return float(out) if out.ndim == 0 else out


def _increments(paths: PathBundle, channel: str) -> np.ndarray:
    return paths.increments(channel)


def iterated_integrals(paths: PathBundle, g: StepFunction, n: int, channel: str = "W.0") -> np.ndarray:
    """All of ``J_0 .. J_n`` at T, shape ``(n_paths, n + 1)``."""
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_ORDER:
        raise UnsupportedOrderError(f"iterated integrals are supported for orders 1..{MAX_ORDER}, got {n!r}")
    return kernels.iterated_integrals(_increments(paths, channel), g.on_grid(paths.grid), n)


def iterated_integral(paths: PathBundle, g: StepFunction, n: int, channel: str = "W.0") -> np.ndarray:
    """Per-path ``J_n(g^{(x)n})`` by the left-point forward recursion."""
    return iterated_integrals(paths, g, n, channel)[:, n]


def chaos_norm(F: ChaosExpansion) -> float:
    """``E F^2 = sum over equal-order pairs of c_i c_j n! <g_i, g_j>^n``."""
    total = 0.0
    for a in F.terms:
        for b in F.terms:
            if a.n != b.n:
                continue
            if a.n == 0:
                total += a.c * b.c
            else:
                total += a.c * b.c * math.factorial(a.n) * a.g.inner(b.g) ** a.n
    return float(total)


def chaos_sample(F: ChaosExpansion, paths: PathBundle, channel: str = "W.0") -> np.ndarray:
    """Per-path value of ``sum c I_n(g^{(x)n})``."""
    out = np.zeros(paths.n_paths)
    for t in F.terms:
        if t.n == 0:
            out += t.c
        else:
            out += t.c * math.factorial(t.n) * iterated_integral(paths, t.g, t.n, channel)
    return out


def doleans_exp(paths: PathBundle, h: StepFunction, channel: str = "W.0") -> np.ndarray:
    """Path of ``Y_t = exp(int h dW - 1/2 int h^2 ds)`` with left-point sums, shape (P, M+1)."""
    hv = h.on_grid(paths.grid)
    dW = _increments(paths, channel)
    expo = np.zeros((paths.n_paths, paths.grid.M + 1))
    np.cumsum(hv[None, :] * dW, axis=1, out=expo[:, 1:])
    expo[:, 1:] -= 0.5 * np.cumsum(hv**2 * paths.grid.dt)[None, :]
    return np.exp(expo)


def project_kernel(term: ChaosTerm, t: float, grid: TimeGrid | None = None) -> ChaosTerm:
    """Conditional expectation given the path up to ``t``: kernel becomes ``g 1_{[0,t]}``."""
    if grid is not None:
        grid.index_of(t)
    if t < 0 or (grid is not None and t > grid.T):
        raise InvalidArgumentError(f"window [0, {t}] outside the grid")
    if term.n == 0:
        return term
    return ChaosTerm(term.n, term.c, term.g.restrict(t))


def project_expansion(F: ChaosExpansion, t: float, grid: TimeGrid | None = None) -> ChaosExpansion:
    return ChaosExpansion(tuple(project_kernel(term, t, grid) for term in F.terms))


def malliavin_chaos(F: ChaosExpansion) -> "ChaosDerivative":
    """Derivative ``D_t`` of an expansion: each ``(n, c, g)`` becomes ``(n-1, n c g(t), g)``."""
    return ChaosDerivative(F)


@dataclass(frozen=True)
class ChaosDerivative:
    F: ChaosExpansion

    def at(self, t: float) -> ChaosExpansion:
        terms = []
        for term in self.F.terms:
            if term.n == 0:
                continue
            coef = term.n * term.c * term.g(t)
            terms.append(ChaosTerm(term.n - 1, coef, term.g if term.n > 1 else None))
        return ChaosExpansion(tuple(terms))

    def evaluate(self, paths: PathBundle, channel: str = "W.0") -> np.ndarray:
        """Per-path ``D_t F`` on each step ``(t_m, t_{m+1}]``, shape (P, M)."""
        out = np.zeros((paths.n_paths, paths.grid.M))
        for term in self.F.terms:
            if term.n == 0:
                continue
            gv = term.g.on_grid(paths.grid)
            if term.n == 1:
                lower = np.ones(paths.n_paths)
            else:
                lower = math.factorial(term.n - 1) * iterated_integral(paths, term.g, term.n - 1, channel)
            out += term.n * term.c * lower[:, None] * gv[None, :]
        return out


def terms_from(spec: Sequence[tuple]) -> ChaosExpansion:
    """Shorthand: ``[(n, c, g), ...]`` to an expansion."""
    return ChaosExpansion(tuple(ChaosTerm(*s) for s in spec))
