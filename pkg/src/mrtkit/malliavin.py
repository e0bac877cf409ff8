"""Malliavin derivatives of cylinder functionals and the Poisson difference operator.

A :class:`CylinderFunctional` is an expression tree over sampled channel
values ``X(channel, t_i)``.  Evaluation is forward-mode: every node returns
its value together with its Malliavin derivative as a ``(P, M)`` array, where
column ``m`` holds ``D_t F`` for ``t`` in the step ``(t_m, t_{m+1}]``.  A
variable ``W(t_i)`` contributes the indicator of ``[0, t_i]``, and products
combine by ``a Db + b Da`` so the product rule holds with identical
arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import kernels
from .errors import InvalidArgumentError, UnsupportedFunctionalError
from .paths import PathBundle, TimeGrid

# channel -> additive shift when one jump of mark z is inserted
_JUMP_SHIFT = {
    "N": lambda z: 1.0,
    "Nbar": lambda z: 1.0,
    "compjump": lambda z: z,
    "total": lambda z: z,
    "bigjump": lambda z: z if abs(z) > 1 else 0.0,
}


def _brownian_loading(channel: str, paths: PathBundle, wrt: str) -> float:
    """Sensitivity of ``channel`` to the Brownian driver ``wrt``."""
    if channel.startswith("W.") or channel == "Wtilde":
        base = "W.0" if channel == "Wtilde" else channel
        return 1.0 if base == wrt else 0.0
    if channel in ("diff", "total"):
        return float(paths.spec.get("sigma", 0.0)) if wrt == "W.0" else 0.0
    return 0.0


class _Ctx:
    """Evaluation context shared by all nodes of one tree."""

    def __init__(self, paths: PathBundle, wrt: str | None, shift: Mapping | None = None):
        self.paths = paths
        self.wrt = wrt
        self.shift = shift or {}
        self.P = paths.n_paths
        self.M = paths.grid.M

    def index(self, time) -> int:
        if isinstance(time, str):
            if time != "T":
                raise InvalidArgumentError(f"time must be a number or 'T', got {time!r}")
            return self.paths.grid.M
        return self.paths.grid.index_of(float(time))


class Node:
    def eval(self, ctx: _Ctx):
        """Return ``(value, derivative)``; derivative is None when identically zero."""
        raise NotImplementedError

    def variables(self) -> set:
        return set()


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _mul(v, d):
    return None if d is None else v[:, None] * d


@dataclass(frozen=True)
class Var(Node):
    channel: str
    time: object = "T"

    def eval(self, ctx):
        k = ctx.index(self.time)
        val = ctx.paths[self.channel][:, k]
        s = ctx.shift.get((self.channel, k))
        if s is not None:
            val = val + s
        if ctx.wrt is None:
            return val, None
        load = _brownian_loading(self.channel, ctx.paths, ctx.wrt)
        if load == 0.0:
            return val, None
        row = np.zeros(ctx.M)
        row[:k] = load
        return val, np.broadcast_to(row, (ctx.P, ctx.M))

    def variables(self):
        return {(self.channel, self.time)}


@dataclass(frozen=True)
class Const(Node):
    value: float

    def eval(self, ctx):
        return np.full(ctx.P, float(self.value)), None


@dataclass(frozen=True)
class Sum(Node):
    terms: tuple

    def eval(self, ctx):
        val, der = None, None
        for t in self.terms:
            v, d = t.eval(ctx)
            val = v if val is None else val + v
            der = _add(der, d)
        return val, der

    def variables(self):
        return set().union(*(t.variables() for t in self.terms))


@dataclass(frozen=True)
class Scale(Node):
    c: float
    x: Node

    def eval(self, ctx):
        v, d = self.x.eval(ctx)
        return self.c * v, None if d is None else self.c * d

    def variables(self):
        return self.x.variables()


@dataclass(frozen=True)
class Prod(Node):
    a: Node
    b: Node

    def eval(self, ctx):
        va, da = self.a.eval(ctx)
        vb, db = self.b.eval(ctx)
        return va * vb, _add(_mul(va, db), _mul(vb, da))

    def variables(self):
        return self.a.variables() | self.b.variables()


@dataclass(frozen=True)
class Power(Node):
    x: Node
    p: float

    def eval(self, ctx):
        v, d = self.x.eval(ctx)
        if self.p == 0:
            return np.ones_like(v), None
        val = v**self.p
        return val, _mul(self.p * v ** (self.p - 1), d)

    def variables(self):
        return self.x.variables()


@dataclass(frozen=True)
class Exp(Node):
    x: Node

    def eval(self, ctx):
        v, d = self.x.eval(ctx)
        val = np.exp(v)
        return val, _mul(val, d)

    def variables(self):
        return self.x.variables()


def smooth_call(x, K: float, eps: float):
    """Call payoff with the kink replaced by a quadratic on ``[K - eps, K + eps]``; returns (f, f')."""
    x = np.asarray(x, dtype=np.float64)
    if eps <= 0:
        return np.maximum(x - K, 0.0), (x > K).astype(np.float64)
    u = np.clip(x - K + eps, 0.0, 2 * eps)
    inside = (x > K - eps) & (x < K + eps)
    f = np.where(x >= K + eps, x - K, np.where(inside, u * u / (4 * eps), 0.0))
    df = np.where(x >= K + eps, 1.0, np.where(inside, u / (2 * eps), 0.0))
    return f, df


@dataclass(frozen=True)
class SmoothCall(Node):
    x: Node
    K: float
    eps: float | None = None

    def __post_init__(self):
        if self.eps is None:
            object.__setattr__(self, "eps", 0.01 * abs(self.K))
        if self.eps < 0:
            raise InvalidArgumentError("smoothing width must be nonnegative")

    def eval(self, ctx):
        v, d = self.x.eval(ctx)
        f, df = smooth_call(v, self.K, self.eps)
        return f, _mul(df, d)

    def variables(self):
        return self.x.variables()


def _as_node(x) -> Node:
    if isinstance(x, CylinderFunctional):
        return x.expr
    if isinstance(x, Node):
        return x
    if isinstance(x, (int, float, np.integer, np.floating)):
        return Const(float(x))
    raise InvalidArgumentError(f"cannot build a functional from {x!r}")


@dataclass(frozen=True)
class CylinderFunctional:
    """Smooth function of finitely many sampled channel values."""

    expr: Node
    name: str = ""

    def times(self) -> list:
        return sorted({t for _, t in self.expr.variables()}, key=lambda t: math.inf if t == "T" else float(t))

    def channels(self) -> set:
        return {c for c, _ in self.expr.variables()}

    def value(self, paths: PathBundle) -> np.ndarray:
        return np.array(self.expr.eval(_Ctx(paths, None))[0], dtype=np.float64)

    __call__ = value

    def value_and_derivative(self, paths: PathBundle, wrt: str = "W.0"):
        v, d = self.expr.eval(_Ctx(paths, wrt))
        if d is None:
            d = np.zeros((paths.n_paths, paths.grid.M))
        return np.array(v, dtype=np.float64), np.array(d, dtype=np.float64)

    def __add__(self, other):
        return CylinderFunctional(Sum((self.expr, _as_node(other))))

    __radd__ = __add__

    def __sub__(self, other):
        return CylinderFunctional(Sum((self.expr, Scale(-1.0, _as_node(other)))))

    def __rsub__(self, other):
        return CylinderFunctional(Sum((_as_node(other), Scale(-1.0, self.expr))))

    def __mul__(self, other):
        if isinstance(other, (int, float, np.integer, np.floating)):
            return CylinderFunctional(Scale(float(other), self.expr))
        return CylinderFunctional(Prod(self.expr, _as_node(other)))

    def __rmul__(self, other):
        if isinstance(other, (int, float, np.integer, np.floating)):
            return CylinderFunctional(Scale(float(other), self.expr))
        return CylinderFunctional(Prod(_as_node(other), self.expr))

    def __neg__(self):
        return CylinderFunctional(Scale(-1.0, self.expr))

    def __pow__(self, p):
        return CylinderFunctional(Power(self.expr, float(p)))


def var(channel: str = "W.0", time="T") -> CylinderFunctional:
    return CylinderFunctional(Var(channel, time))


def const(c: float) -> CylinderFunctional:
    return CylinderFunctional(Const(float(c)))


def exp(F) -> CylinderFunctional:
    return CylinderFunctional(Exp(_as_node(F)))


def call(F, K: float, eps: float | None = None) -> CylinderFunctional:
    return CylinderFunctional(SmoothCall(_as_node(F), float(K), eps))


# -- config catalog -----------------------------------------------------------

CATALOG_FNS = ("const", "linear", "power", "exp", "exp_linear", "call", "sum", "product", "scale")


def functional_from_config(cfg: Mapping) -> CylinderFunctional:
    """Build a functional from a catalog entry, e.g. ``{"fn": "power", "channel": "W.0", "time": "T", "exponent": 2}``.

    ``power``, ``exp`` and ``call`` accept either ``channel``/``time`` or a
    nested ``of`` entry, so catalog members compose.
    """
    if not isinstance(cfg, Mapping) or "fn" not in cfg:
        raise InvalidArgumentError(f"functional config needs an 'fn' field, got {cfg!r}")
    fn = cfg["fn"]

    def inner():
        if "of" in cfg:
            return functional_from_config(cfg["of"])
        return var(cfg.get("channel", "W.0"), cfg.get("time", "T"))

    if fn == "const":
        return const(float(cfg["value"]))
    if fn == "linear":
        return float(cfg.get("coef", 1.0)) * inner()
    if fn == "power":
        return inner() ** float(cfg.get("exponent", 1))
    if fn == "exp":
        x = float(cfg.get("a", 1.0)) * inner() + float(cfg.get("b", 0.0))
        return exp(x)
    if fn == "exp_linear":
        x = const(float(cfg.get("b", 0.0)))
        for item in cfg["terms"]:
            x = x + float(item.get("a", 1.0)) * var(item.get("channel", "W.0"), item.get("time", "T"))
        return exp(x)
    if fn == "call":
        eps = cfg.get("eps")
        return call(inner(), float(cfg["strike"]), None if eps is None else float(eps))
    if fn == "sum":
        out = const(0.0)
        for item in cfg["terms"]:
            out = out + functional_from_config(item)
        return out
    if fn == "product":
        factors = [functional_from_config(item) for item in cfg["factors"]]
        out = factors[0]
        for f in factors[1:]:
            out = out * f
        return out
    if fn == "scale":
        return float(cfg["c"]) * functional_from_config(cfg["of"])
    raise UnsupportedFunctionalError(f"unknown catalog function {fn!r}; expected one of {', '.join(CATALOG_FNS)}")


# -- operations ---------------------------------------------------------------


def malliavin_cylinder(F: CylinderFunctional, paths: PathBundle, wrt: str = "W.0") -> np.ndarray:
    """Per-path ``D_t F`` on each grid step, shape ``(n_paths, M)``.

    Column ``m`` is the sum of partials over variables with ``t_i >= t_{m+1}``.
    """
    return F.value_and_derivative(paths, wrt)[1]


def poisson_difference(F, paths: PathBundle, t: float, z: float = 1.0) -> np.ndarray:
    """``F(omega + delta_(t, z)) - F(omega)`` per path.

    ``F`` is a :class:`CylinderFunctional` (variables shifted in place) or
    any callable taking a :class:`PathBundle`.
    """
    if paths.jump_records is None:
        raise InvalidArgumentError("poisson_difference needs a bundle with jump records")
    grid = paths.grid
    if not 0 < t <= grid.T:
        raise InvalidArgumentError(f"jump time must lie in (0, T], got {t}")
    if not isinstance(F, CylinderFunctional):
        return np.asarray(F(paths.with_extra_jump(t, z))) - np.asarray(F(paths))
    k_star = min(int(math.ceil(t / grid.dt - 1e-9)), grid.M)
    shift = {}
    probe = _Ctx(paths, None)
    for channel, time in F.expr.variables():
        k = probe.index(time)
        if channel in _JUMP_SHIFT and k >= k_star:
            s = _JUMP_SHIFT[channel](z)
            if s:
                shift[(channel, k)] = s
    base = F.expr.eval(_Ctx(paths, None))[0]
    bumped = F.expr.eval(_Ctx(paths, None, shift))[0]
    return np.asarray(bumped - base, dtype=np.float64)


def skorohod_adapted(u, paths: PathBundle, channel: str = "W.0") -> np.ndarray:
    """Left-point Ito sum ``sum_m u(t_m) dW_m`` for an adapted integrand.

    ``u`` is either a callable ``u(m, history)`` receiving the read-only
    prefix ``X[:, :m+1]`` and returning one value per path, or a ``(P, M)``
    array whose column ``m`` is already the value at ``t_m``.
    """
    dW = paths.increments(channel)
    if callable(u):
        X = paths[channel]
        vals = np.empty_like(dW)
        for m in range(paths.grid.M):
            hist = X[:, : m + 1]
            vals[:, m] = np.broadcast_to(np.asarray(u(m, hist), dtype=np.float64), (paths.n_paths,))
    else:
        vals = np.broadcast_to(np.asarray(u, dtype=np.float64), dW.shape)
    return kernels.ito_sum(vals, dW)


@dataclass(frozen=True)
class SobolevNorms:
    d12: float
    d11: float


def sobolev_norms(F: CylinderFunctional, paths: PathBundle, wrt: str = "W.0") -> SobolevNorms:
    """Monte Carlo ``D_{1,2}`` and ``D_{1,1}`` norms."""
    v, d = F.value_and_derivative(paths, wrt)
    energy = np.sum(d * d, axis=1) * paths.grid.dt
    d12 = math.sqrt(float(np.mean(v * v)) + float(np.mean(energy)))
    d11 = float(np.mean(np.abs(v))) + float(np.mean(np.sqrt(energy)))
    return SobolevNorms(d12, d11)


def doleans_functional(h, grid: TimeGrid, channel: str = "W.0") -> CylinderFunctional:
    """``exp(int h dW - 1/2 int h^2)`` as a cylinder functional of W at the breaks of ``h``."""
    b = h.breaks
    x = const(-0.5 * h.norm2())
    for lo, hi, val in zip(b[:-1], b[1:], h.vals):
        if val == 0:
            continue
        upper = "T" if abs(hi - grid.T) < 1e-12 else hi
        term = var(channel, upper) if lo == 0 else var(channel, upper) - var(channel, lo)
        x = x + float(val) * term
    return exp(x)


def named_functional(fid: str, grid: TimeGrid, h=None) -> CylinderFunctional:
    """Cylinder form of the closed-form catalog ids."""
    W, N = var("W.0", "T"), var("Nbar", "T")
    table: dict[str, Callable[[], CylinderFunctional]] = {
        "W_T": lambda: W,
        "W_T^2": lambda: W**2,
        "exp(W_T-T/2)": lambda: exp(W - 0.5 * grid.T),
        "Ntilde_T": lambda: N,
        "Ntilde_T^2": lambda: N**2,
        "W_T+Ntilde_T": lambda: W + N,
        "W_T*Ntilde_T": lambda: W * N,
    }
    if fid == "doleans":
        if h is None:
            raise InvalidArgumentError("the 'doleans' functional needs a kernel h")
        return doleans_functional(h, grid)
    if fid not in table:
        raise UnsupportedFunctionalError(
            f"unknown functional id {fid!r}; expected one of {', '.join(sorted(table) + ['doleans'])}")
    return table[fid]()
