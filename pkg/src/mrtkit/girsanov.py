"""Change of measure: density paths, drifted Brownian motion and the generalized Clark-Ocone integrand.

Expectations under the new measure are computed by likelihood weighting
on the original paths: ``Et(X | F_t) = E(X Z_T / Z_t | F_t)``, with the
right-hand side estimated by the same least-squares device as the plain
Clark-Ocone engine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .chaos import StepFunction
from .clark_ocone import (IntegrandEstimate, ReconstructionReport, _check_degree, _check_lineage,
                          _check_unit_marks, _recompute_from_fits, _regress, _require, _sample_mean, _state_builder,
                          error_report, levy_targets, INTEGRATORS)
from .errors import InvalidArgumentError, UnsupportedConfigurationError
from .malliavin import CylinderFunctional, malliavin_cylinder, named_functional
from .paths import PathBundle

THETA_MAX = 10.0

# bounded smooth maps with known derivative, for frozen-functional drifts
SMOOTH_CATALOG = {
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "sin": (np.sin, np.cos),
    "atan": (np.arctan, lambda x: 1.0 / (1.0 + x * x)),
    "sigmoid": (lambda x: 1.0 / (1.0 + np.exp(-x)), lambda x: np.exp(-x) / (1.0 + np.exp(-x)) ** 2),
}


@dataclass(frozen=True)
class ConstantTheta:
    c: float

    deterministic = True

    def values(self, paths: PathBundle) -> np.ndarray:
        return np.full((1, paths.grid.M), float(self.c))

    def bound(self) -> float:
        return abs(float(self.c))

    def to_dict(self) -> dict:
        return {"kind": "constant", "c": self.c}


@dataclass(frozen=True)
class StepTheta:
    g: StepFunction

    deterministic = True

    def values(self, paths: PathBundle) -> np.ndarray:
        return self.g.on_grid(paths.grid)[None, :]

    def bound(self) -> float:
        return float(max(abs(v) for v in self.g.vals))

    def to_dict(self) -> dict:
        return {"kind": "step", "g": self.g.to_dict()}


@dataclass(frozen=True)
class FrozenTheta:
    """``theta_u = a g(W_{t0})`` for ``u >= t0`` and 0 before."""

    t0: float
    fn: str = "tanh"
    a: float = 1.0
    channel: str = "W.0"

    deterministic = False

    def __post_init__(self):
        if self.fn not in SMOOTH_CATALOG:
            raise InvalidArgumentError(f"unknown frozen-drift map {self.fn!r}; expected one of {sorted(SMOOTH_CATALOG)}")

    def k0(self, paths: PathBundle) -> int:
        return paths.grid.index_of(self.t0)

    def anchor(self, paths: PathBundle) -> np.ndarray:
        return paths[self.channel][:, self.k0(paths)]

    def values(self, paths: PathBundle) -> np.ndarray:
        g, _ = SMOOTH_CATALOG[self.fn]
        level = self.a * g(self.anchor(paths))
        out = np.zeros((paths.n_paths, paths.grid.M))
        out[:, self.k0(paths):] = level[:, None]
        return out

    def slope(self, paths: PathBundle) -> np.ndarray:
        """``d theta_u / d W_{t0}`` per path."""
        _, dg = SMOOTH_CATALOG[self.fn]
        return self.a * dg(self.anchor(paths))

    def bound(self) -> float:
        return abs(self.a) * (1.0 if self.fn != "atan" else math.pi / 2)

    def to_dict(self) -> dict:
        return {"kind": "frozen", "t0": self.t0, "fn": self.fn, "a": self.a}


def theta_from_config(cfg) -> ConstantTheta | StepTheta | FrozenTheta:
    if isinstance(cfg, (int, float)) and not isinstance(cfg, bool):
        return ConstantTheta(float(cfg))
    kind = cfg.get("kind", "constant")
    if kind == "constant":
        return ConstantTheta(float(cfg.get("c", 0.0)))
    if kind == "step":
        return StepTheta(StepFunction.from_dict(cfg["g"]))
    if kind == "frozen":
        return FrozenTheta(float(cfg["t0"]), cfg.get("fn", "tanh"), float(cfg.get("a", 1.0)))
    raise InvalidArgumentError(f"unknown theta kind {kind!r}; expected 'constant', 'step' or 'frozen'")


@dataclass
class MeasureChange:
    theta: object
    Z: np.ndarray = field(repr=False)
    Lambda: np.ndarray = field(repr=False)
    warnings: list = field(default_factory=list)

    @property
    def Z_T(self) -> np.ndarray:
        return self.Z[:, -1]


def _theta_matrix(theta, paths: PathBundle) -> np.ndarray:
    if not isinstance(theta, (ConstantTheta, StepTheta, FrozenTheta)):
        raise InvalidArgumentError(f"unsupported theta descriptor {theta!r}")
    th = theta.values(paths)
    if not np.all(np.isfinite(th)):
        raise InvalidArgumentError("theta evaluates to non-finite values")
    if theta.bound() > THETA_MAX:
        raise InvalidArgumentError(f"|theta| bound {theta.bound()} exceeds the limit {THETA_MAX}")
    return th


def density_path(theta, paths: PathBundle, channel: str = "W.0") -> MeasureChange:
    """``Z_t = exp(-int theta dW - 1/2 int theta^2 ds)`` with left-point sums, and ``Lambda = 1 / Z``."""
    th = _theta_matrix(theta, paths)
    dW = paths.increments(channel)
    logz = np.zeros((paths.n_paths, paths.grid.M + 1))
    np.cumsum(-(th * dW) - 0.5 * (th * th) * paths.grid.dt, axis=1, out=logz[:, 1:])
    warn = []
    if not theta.deterministic:
        warn.append("integrability conditions for a path-dependent drift are only checked through boundedness")
    return MeasureChange(theta, np.exp(logz), np.exp(-logz), warn)


def drifted_bm(paths: PathBundle, theta, channel: str = "W.0") -> PathBundle:
    """Bundle with an added ``Wtilde = W + int theta ds`` channel."""
    th = np.broadcast_to(_theta_matrix(theta, paths), (paths.n_paths, paths.grid.M))
    drift = np.zeros((paths.n_paths, paths.grid.M + 1))
    np.cumsum(th * paths.grid.dt, axis=1, out=drift[:, 1:])
    return paths.with_channels(Wtilde=paths[channel] + drift)


def _with_wtilde(paths: PathBundle, mc: MeasureChange) -> PathBundle:
    return paths if "Wtilde" in paths else drifted_bm(paths, mc.theta)


def gco_integrand(F: CylinderFunctional, mc: MeasureChange, paths: PathBundle, degree: int = 3, *,
                  threads: int = 1) -> IntegrandEstimate:
    """Generalized Clark-Ocone integrand ``Et(D_t F | F_t) - Et(F int_t^T D_t theta_u dWt_u | F_t)``.

    The correction vanishes for deterministic drifts.  For a frozen drift
    ``D_t theta_u = a g'(W_{t0})`` when ``t <= t0 <= u``.
    """
    _check_degree(degree, paths.n_paths)
    _require(paths, "W.0")
    theta = mc.theta
    if mc.Z.shape != (paths.n_paths, paths.grid.M + 1):
        raise InvalidArgumentError("measure change was built on a different bundle")
    uses_tilde = "Wtilde" in F.channels()
    if uses_tilde and not theta.deterministic:
        raise InvalidArgumentError("functionals of Wtilde are supported only for deterministic theta")
    work = _with_wtilde(paths, mc) if uses_tilde else paths
    D = malliavin_cylinder(F, work)
    ZT = mc.Z[:, -1]
    if theta.deterministic:
        Fv = None
        k0 = None
        tail = None
        state = _state_builder(F, work, ("W.0",))
    else:
        Fv = F.value(work)
        k0 = theta.k0(paths)
        wt = drifted_bm(paths, theta)["Wtilde"]
        tail = theta.slope(paths) * (wt[:, -1] - wt[:, k0])
        base_state = _state_builder(F, work, ("W.0",))
        anchor = theta.channel

        def state(p, m):
            X = base_state(p, m)
            if m >= k0 and k0 > 0:
                X = np.column_stack([X, p[anchor][:, k0]])
            return X

    def target(m):
        ratio = ZT * mc.Lambda[:, m]
        if tail is not None and m < k0:
            return (D[:, m] - Fv * tail) * ratio
        return D[:, m] * ratio

    values, fits = _regress({"Wtilde": target}, state, work, degree, threads)
    mean = _sample_mean(F.value(work), ZT)
    return IntegrandEstimate(paths.grid, values, "regression", int(degree), paths.seed, paths.n_paths, mean,
                             recompute=_recompute_from_fits(fits, state), fits=fits)


def gco_reconstruct(F, integrand: IntegrandEstimate, mc: MeasureChange, paths: PathBundle) -> ReconstructionReport:
    """``F_hat = Et(F) + sum phi dWt`` with errors under the ``Z_T``-weighted empirical measure."""
    F = np.asarray(F, dtype=np.float64)
    _check_lineage(integrand, paths, F)
    work = _with_wtilde(paths, mc)
    ZT = mc.Z[:, -1]
    mean = _sample_mean(F, ZT)
    total = np.zeros(paths.n_paths)
    for ch, vals in integrand.values.items():
        total = total + kernels.ito_sum(vals, work.increments(INTEGRATORS[ch]))
    return error_report(F, mean + total, mean, paths, weights=ZT, measure="Ptilde")


# -- Levy setting with deterministic drift changes ----------------------------


def _deterministic_profile(x, paths: PathBundle, name: str) -> np.ndarray:
    if isinstance(x, bool):
        raise UnsupportedConfigurationError(f"{name} must be a number or a step function")
    if isinstance(x, (int, float, np.integer, np.floating)):
        return np.full(paths.grid.M, float(x))
    if isinstance(x, StepFunction):
        return x.on_grid(paths.grid)
    if isinstance(x, ConstantTheta):
        return np.full(paths.grid.M, float(x.c))
    if isinstance(x, StepTheta):
        return x.g.on_grid(paths.grid)
    raise UnsupportedConfigurationError(f"{name} must be deterministic (a number or a step function), got {x!r}")


@dataclass
class LevyGirsanovResult:
    integrand: IntegrandEstimate
    report: ReconstructionReport
    Z_T: np.ndarray = field(repr=False)
    q_mean_N_T: float = 0.0
    q_intensity: np.ndarray | None = field(default=None, repr=False)


def levy_density(u, theta_jump, paths: PathBundle):
    """Log-density path for a Brownian drift ``u`` and a jump-intensity thinning ``1 - theta``."""
    uv = _deterministic_profile(u, paths, "u")
    tv = _deterministic_profile(theta_jump, paths, "theta")
    if np.any(tv > 1):
        raise InvalidArgumentError("jump thinning requires theta <= 1")
    lam = float(paths.spec.get("lambda", 0.0))
    dt = paths.grid.dt
    dW = paths.increments("W.0")
    dN = paths.increments("N")
    with np.errstate(divide="ignore"):
        log1m = np.log1p(-tv)
    jump_term = np.where(dN != 0, dN * log1m[None, :], 0.0)
    steps = -(uv[None, :] * dW) - 0.5 * (uv * uv)[None, :] * dt + jump_term + (lam * tv * dt)[None, :]
    logz = np.zeros((paths.n_paths, paths.grid.M + 1))
    np.cumsum(steps, axis=1, out=logz[:, 1:])
    return logz, uv, tv


def gco_levy_reduced(F, u, theta_jump, paths: PathBundle, degree: int = 2, *, threads: int = 1) -> LevyGirsanovResult:
    """Levy Clark-Ocone under ``Q`` with ``W^Q = W + int u ds`` and jump intensity ``lam (1 - theta)``.

    Only deterministic ``u`` and ``theta`` are supported, so the Malliavin
    corrections of the general formula vanish.
    """
    _require(paths, "W.0", "Nbar", "N")
    if paths.jump_records is None:
        raise InvalidArgumentError("the Levy measure change needs jump records")
    _check_unit_marks(paths)
    _check_degree(degree, paths.n_paths)
    Fc = named_functional(F, paths.grid) if isinstance(F, str) else F
    logz, uv, tv = levy_density(u, theta_jump, paths)
    lam = float(paths.spec.get("lambda", 0.0))
    trivial = not np.any(uv) and not np.any(tv)
    ZT = np.exp(logz[:, -1])
    targets = levy_targets(Fc, paths)
    state = _state_builder(Fc, paths, ("W.0", "Nbar"))
    if trivial:
        weighted = targets
    else:
        def wrap(fn):
            return lambda m: fn(m) * np.exp(logz[:, -1] - logz[:, m])
        weighted = {ch: wrap(fn) for ch, fn in targets.items()}
    values, fits = _regress(weighted, state, paths, degree, threads)
    Fv = Fc.value(paths)
    mean = _sample_mean(Fv) if trivial else _sample_mean(Fv, ZT)
    est = IntegrandEstimate(paths.grid, values, "regression", int(degree), paths.seed, paths.n_paths, mean,
                            recompute=_recompute_from_fits(fits, state), fits=fits)
    dt = paths.grid.dt
    dWQ = paths.increments("W.0") + uv[None, :] * dt
    dNQ = paths.increments("Nbar") + (lam * tv * dt)[None, :]
    Fhat = mean + kernels.ito_sum(values["W"], dWQ) + kernels.ito_sum(values["N"], dNQ)
    rep = error_report(Fv, Fhat, mean, paths, weights=None if trivial else ZT, measure="P" if trivial else "Q")
    qN = _sample_mean(paths["N"][:, -1], None if trivial else ZT)
    return LevyGirsanovResult(est, rep, ZT, qN, lam * (1.0 - tv))
