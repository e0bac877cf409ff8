"""Clark-Ocone integrands, reconstruction and the Black-Scholes replication demo.

An integrand is stored per channel as a ``(P, M)`` array whose column ``m``
multiplies the increment over ``(t_m, t_{m+1}]``.  Channel ``"W"``
integrates against ``W.0``, ``"N"`` against the compensated count
``Nbar`` and ``"Wtilde"`` against the drifted Brownian motion.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import ndtr

from . import kernels
from .chaos import StepFunction, doleans_exp
from .errors import InvalidArgumentError, UnsupportedConfigurationError, UnsupportedFunctionalError
from .malliavin import CylinderFunctional, malliavin_cylinder, named_functional, poisson_difference
from .paths import TAG_RESIM, PathBundle, TimeGrid, gen_brownian
from .regression import fit_ls

INTEGRATORS = {"W": "W.0", "N": "Nbar", "Wtilde": "Wtilde"}

CLOSED_IDS = ("W_T", "W_T^2", "exp(W_T-T/2)", "doleans", "Ntilde_T", "Ntilde_T^2")
LEVY_IDS = ("W_T", "Ntilde_T", "W_T+Ntilde_T", "W_T*Ntilde_T", "Ntilde_T^2")


@dataclass
class IntegrandEstimate:
    grid: TimeGrid
    values: dict
    method: str
    basis_degree: int | None = None
    seed: int | None = None
    n_paths: int = 0
    mean_F: float | None = None
    recompute: Callable | None = field(default=None, repr=False)
    fits: dict | None = field(default=None, repr=False)

    def at_step(self, paths: PathBundle, m: int) -> dict:
        """Re-evaluate column ``m`` from ``paths`` using only data up to ``t_m``."""
        if self.recompute is None:
            raise InvalidArgumentError("this integrand cannot be re-evaluated")
        return self.recompute(paths, m)

    def channels(self) -> list:
        return list(self.values)


@dataclass(frozen=True)
class ReconstructionReport:
    mean_F: float
    rel_l2_error: float
    abs_l2_error: float
    max_abs_error: float
    n_paths: int
    M: int
    seed: int | None
    measure: str = "P"

    def to_dict(self) -> dict:
        return {
            "mean_F": self.mean_F,
            "rel_l2_error": self.rel_l2_error,
            "abs_l2_error": self.abs_l2_error,
            "max_abs_error": self.max_abs_error,
            "n_paths": self.n_paths,
            "M": self.M,
            "seed": self.seed,
            "measure": self.measure,
        }


def _require(paths: PathBundle, *channels: str):
    missing = [c for c in channels if c not in paths]
    if missing:
        raise InvalidArgumentError(f"bundle lacks channel(s) {missing}; available: {sorted(paths.channels)}")


def _lam(paths: PathBundle) -> float:
    return float(paths.spec.get("lambda", 0.0))


# -- closed-form catalog -------------------------------------------------------


def _closed_formula(fid: str, paths: PathBundle, h: StepFunction | None):
    """Return ``(values_fn(paths) -> dict, mean)`` for a catalog id."""
    g = paths.grid
    t = g.times[:-1]
    if fid == "W_T":
        return (lambda p: {"W": np.ones((p.n_paths, g.M))}), 0.0
    if fid == "W_T^2":
        return (lambda p: {"W": 2.0 * p["W.0"][:, :-1]}), g.T
    if fid == "exp(W_T-T/2)":
        return (lambda p: {"W": np.exp(p["W.0"][:, :-1] - 0.5 * t[None, :])}), 1.0
    if fid == "doleans":
        if h is None:
            raise InvalidArgumentError("the 'doleans' functional needs a kernel h")
        hv = h.on_grid(g)
        return (lambda p: {"W": doleans_exp(p, h)[:, :-1] * hv[None, :]}), 1.0
    if fid == "Ntilde_T":
        return (lambda p: {"N": np.ones((p.n_paths, g.M))}), 0.0
    if fid == "Ntilde_T^2":
        return (lambda p: {"N": 2.0 * p["Nbar"][:, :-1] + 1.0}), _lam(paths) * g.T
    raise UnsupportedFunctionalError(f"no closed-form integrand for {fid!r}; expected one of {', '.join(CLOSED_IDS)}")


def co_integrand_closed(fid: str, paths: PathBundle, h: StepFunction | None = None) -> IntegrandEstimate:
    """Exact ``E(D_t F | F_t)`` for the closed-form catalog."""
    fn, mean = _closed_formula(fid, paths, h)
    _require(paths, *(INTEGRATORS[c] for c in fn(_probe(paths))))
    return IntegrandEstimate(paths.grid, fn(paths), "closed_form", None, paths.seed, paths.n_paths, mean,
                             recompute=lambda p, m: {k: v[:, m] for k, v in fn(p).items()})


def _probe(paths: PathBundle) -> PathBundle:
    """A one-path slice used to discover which channels a formula touches."""
    chans = {k: v[:1] for k, v in paths.channels.items()}
    return PathBundle(paths.grid, 1, chans, paths.seed, None, paths.spec)


def functional_samples(fid: str, paths: PathBundle, h: StepFunction | None = None) -> np.ndarray:
    """Terminal samples of a catalog functional."""
    if fid == "doleans":
        if h is None:
            raise InvalidArgumentError("the 'doleans' functional needs a kernel h")
        return doleans_exp(paths, h)[:, -1]
    return named_functional(fid, paths.grid).value(paths)


# -- regression route ---------------------------------------------------------


def _state_builder(F: CylinderFunctional, paths: PathBundle, current: tuple):
    """State at step m: current values of ``current`` channels plus observed cylinder coordinates."""
    g = paths.grid
    coords = []
    for ch, time in F.expr.variables():
        k = g.M if time == "T" else g.index_of(float(time))
        coords.append((k, ch))
    coords.sort()

    def state(p: PathBundle, m: int) -> np.ndarray:
        cols = [p[ch][:, m] for ch in current]
        for k, ch in coords:
            if k <= m and not (k == m and ch in current) and k > 0:
                cols.append(p[ch][:, k])
        return np.column_stack(cols) if cols else np.zeros((p.n_paths, 0))

    return state


def _check_degree(degree, n_paths):
    if isinstance(degree, bool) or not isinstance(degree, (int, np.integer)) or not 1 <= degree <= 6:
        raise InvalidArgumentError(f"basis degree must be an integer in [1, 6], got {degree!r}")
    if n_paths < 50 * (degree + 1):
        raise InvalidArgumentError(f"degree {degree} needs at least {50 * (degree + 1)} paths, got {n_paths}")


def _regress(targets: Mapping[str, Callable[[int], np.ndarray]], state, paths, degree, threads=1,
             weights: Callable[[int], np.ndarray] | None = None, post: Callable | None = None):
    """Fit every block at every step; returns ``(values, fits)``."""
    M = paths.grid.M

    def one(m):
        X = state(paths, m)
        w = None if weights is None else weights(m)
        out = {}
        for ch, target in targets.items():
            fit = fit_ls(X, target(m), degree, weights=w, step=m)
            out[ch] = fit
        return out

    steps = range(M)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            per_step = list(ex.map(one, steps))
    else:
        per_step = [one(m) for m in steps]
    fits = {ch: [s[ch] for s in per_step] for ch in targets}
    values = {ch: np.empty((paths.n_paths, M)) for ch in targets}
    for m in steps:
        X = state(paths, m)
        for ch in targets:
            v = fits[ch][m].predict(X)
            values[ch][:, m] = v if post is None else post(m, v)
    return values, fits


def _recompute_from_fits(fits, state, post=None):
    def recompute(p: PathBundle, m: int) -> dict:
        X = state(p, m)
        out = {}
        for ch, fl in fits.items():
            v = fl[m].predict(X)
            out[ch] = v if post is None else post(m, v, p)
        return out

    return recompute


def co_integrand_regress(F: CylinderFunctional, paths: PathBundle, degree: int = 3, *,
                         threads: int = 1) -> IntegrandEstimate:
    """Regression estimate of ``E(D_t F | F_t)`` on polynomials in the current Brownian state."""
    _check_degree(degree, paths.n_paths)
    _require(paths, "W.0")
    D = malliavin_cylinder(F, paths)
    state = _state_builder(F, paths, ("W.0",))
    values, fits = _regress({"W": lambda m: D[:, m]}, state, paths, degree, threads)
    return IntegrandEstimate(paths.grid, values, "regression", int(degree), paths.seed, paths.n_paths, None,
                             recompute=_recompute_from_fits(fits, state), fits=fits)


# -- reconstruction -----------------------------------------------------------


def _stochastic_sum(integrand: IntegrandEstimate, paths: PathBundle) -> np.ndarray:
    total = np.zeros(paths.n_paths)
    for ch, vals in integrand.values.items():
        total = total + kernels.ito_sum(vals, paths.increments(INTEGRATORS[ch]))
    return total


def _sample_mean(F: np.ndarray, weights: np.ndarray | None = None) -> float:
    if F.size and np.all(F == F[0]):
        return float(F[0])
    if weights is None:
        return float(np.mean(F))
    return float(np.sum(weights * F) / np.sum(weights))


def error_report(F, Fhat, mean, paths: PathBundle, weights=None, measure="P") -> ReconstructionReport:
    F = np.asarray(F, dtype=np.float64)
    err = F - Fhat
    if weights is None:
        w = np.full(F.shape, 1.0 / F.size)
    else:
        w = np.asarray(weights, dtype=np.float64) / np.sum(weights)
    abs_l2 = math.sqrt(float(np.sum(w * err * err)))
    norm = math.sqrt(float(np.sum(w * F * F)))
    rel = abs_l2 / norm if norm > 0 else abs_l2
    return ReconstructionReport(float(mean), rel, abs_l2, float(np.max(np.abs(err))) if err.size else 0.0,
                                paths.n_paths, paths.grid.M, paths.seed, measure)


def _check_lineage(integrand: IntegrandEstimate, paths: PathBundle, F):
    if integrand.grid != paths.grid:
        raise InvalidArgumentError(f"integrand grid {integrand.grid} does not match bundle grid {paths.grid}")
    if integrand.seed is not None and integrand.seed != paths.seed:
        raise InvalidArgumentError(f"integrand seed {integrand.seed} does not match bundle seed {paths.seed}")
    if integrand.n_paths and integrand.n_paths != paths.n_paths:
        raise InvalidArgumentError("integrand and bundle cover different path counts")
    if np.shape(F) != (paths.n_paths,):
        raise InvalidArgumentError(f"F samples have shape {np.shape(F)}, expected ({paths.n_paths},)")


def co_reconstruct(F, integrand: IntegrandEstimate, paths: PathBundle) -> ReconstructionReport:
    """``F_hat = E F + sum phi dW (+ sum psi dNbar)`` and its error against ``F``.

    ``E F`` is the integrand's analytic mean when it has one, else the
    sample mean.
    """
    F = np.asarray(F, dtype=np.float64)
    _check_lineage(integrand, paths, F)
    mean = integrand.mean_F if integrand.mean_F is not None else _sample_mean(F)
    return error_report(F, mean + _stochastic_sum(integrand, paths), mean, paths)


# -- Levy setting -------------------------------------------------------------


def _levy_closed(fid: str, paths: PathBundle):
    g = paths.grid
    M = g.M
    table = {
        "W_T": (lambda p: {"W": np.ones((p.n_paths, M)), "N": np.zeros((p.n_paths, M))}, 0.0),
        "Ntilde_T": (lambda p: {"W": np.zeros((p.n_paths, M)), "N": np.ones((p.n_paths, M))}, 0.0),
        "W_T+Ntilde_T": (lambda p: {"W": np.ones((p.n_paths, M)), "N": np.ones((p.n_paths, M))}, 0.0),
        "W_T*Ntilde_T": (lambda p: {"W": np.array(p["Nbar"][:, :-1]), "N": np.array(p["W.0"][:, :-1])}, 0.0),
        "Ntilde_T^2": (lambda p: {"W": np.zeros((p.n_paths, M)), "N": 2.0 * p["Nbar"][:, :-1] + 1.0},
                       _lam(paths) * g.T),
    }
    if fid not in table:
        raise UnsupportedFunctionalError(f"no closed-form Levy integrand for {fid!r}; expected one of {', '.join(LEVY_IDS)}")
    return table[fid]


def _check_unit_marks(paths: PathBundle):
    spec = paths.spec
    if spec.get("process") == "poisson":
        return
    marks = spec.get("marks", {})
    if spec.get("process") == "levy" and marks.get("law") == "discrete" and list(marks.get("values", [])) == [1.0]:
        return
    raise UnsupportedConfigurationError("Levy Clark-Ocone integrands are implemented for unit jump marks only")


def levy_targets(F: CylinderFunctional, paths: PathBundle):
    """Per-step samples of ``D_t F`` and of the add-one-jump difference at ``t_{m+1}``."""
    D = malliavin_cylinder(F, paths)
    times = paths.grid.times

    def jump(m):
        return poisson_difference(F, paths, float(times[m + 1]), 1.0)

    return {"W": lambda m: D[:, m], "N": jump}


def co_levy(F, paths: PathBundle, method: str = "auto", degree: int = 2, *, threads: int = 1) -> IntegrandEstimate:
    """Brownian and jump blocks of the Levy Clark-Ocone integrand.

    ``F`` is a catalog id or a :class:`CylinderFunctional`.  ``method`` is
    ``"closed"``, ``"regression"`` or ``"auto"`` (closed form when the id is
    in the Levy catalog).
    """
    _require(paths, "W.0", "Nbar")
    if paths.jump_records is None:
        raise InvalidArgumentError("co_levy needs jump records")
    _check_unit_marks(paths)
    if method not in ("auto", "closed", "regression"):
        raise InvalidArgumentError(f"method must be 'auto', 'closed' or 'regression', got {method!r}")
    fid = F if isinstance(F, str) else None
    if method == "closed" or (method == "auto" and fid in LEVY_IDS):
        if fid is None:
            raise InvalidArgumentError("closed-form Levy integrands need a catalog id")
        fn, mean = _levy_closed(fid, paths)
        return IntegrandEstimate(paths.grid, fn(paths), "closed_form", None, paths.seed, paths.n_paths, mean,
                                 recompute=lambda p, m: {k: v[:, m] for k, v in fn(p).items()})
    Fc = named_functional(fid, paths.grid) if fid is not None else F
    _check_degree(degree, paths.n_paths)
    state = _state_builder(Fc, paths, ("W.0", "Nbar"))
    values, fits = _regress(levy_targets(Fc, paths), state, paths, degree, threads)
    return IntegrandEstimate(paths.grid, values, "regression", int(degree), paths.seed, paths.n_paths, None,
                             recompute=_recompute_from_fits(fits, state), fits=fits)


# -- Black-Scholes replication ------------------------------------------------


def bs_delta(S, K, r, sigma, tau):
    """Black-Scholes call delta ``N(d_1)``; ``tau = 0`` gives the payoff indicator."""
    S = np.asarray(S, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(S / K) + (r + 0.5 * sigma**2) * tau) / (sigma * np.sqrt(tau))
    return np.where(tau > 0, ndtr(d1), (S > K).astype(np.float64))


def bs_call_price(S0, K, r, sigma, T):
    if K == 0:
        return float(S0)
    d1 = (math.log(S0 / K) + (r + 0.5 * sigma**2) * T) / (sigma * math.sqrt(T))
    return float(S0 * ndtr(d1) - K * math.exp(-r * T) * ndtr(d1 - sigma * math.sqrt(T)))


@dataclass
class HedgeReport:
    C0: float
    bs_price: float
    terminal_error: float
    delta_deviation: float
    phi: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    S: np.ndarray = field(repr=False)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"C0": self.C0, "bs_price": self.bs_price, "terminal_error": self.terminal_error,
                "delta_deviation": self.delta_deviation, **self.params}


def _moneyness(S, K, sigma, tau):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.log(S / K) / (sigma * math.sqrt(tau))
    return np.clip(np.nan_to_num(z, nan=0.0, posinf=3.0, neginf=-3.0), -3.0, 3.0) / 3.0


def replicate_bs(K: float, r: float, sigma: float, S0: float, grid: TimeGrid, n_paths: int, seed: int = 0, *,
                 degree: int = 4, window=(0.1, 0.9), threads: int = 1, paths: PathBundle | None = None) -> HedgeReport:
    """Replicate a European call with the Clark-Ocone hedge, estimated by regression.

    The hedge ratio ``phi_t = E(1{S_T > K} S_T | F_t) / E(S_T | F_t)`` is the
    Clark-Ocone integrand of the discounted payoff rescaled by
    ``e^{rt} / (sigma S_t)``.  It is fitted by least squares with weights
    ``S_T / S_t`` on a polynomial in the clipped log-moneyness
    ``log(S_t / K) / (sigma sqrt(T - t))``.
    """
    if not (S0 > 0 and math.isfinite(S0)):
        raise InvalidArgumentError(f"S_0 must be positive, got {S0}")
    if not (sigma > 0 and math.isfinite(sigma)):
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    if K < 0 or not math.isfinite(K):
        raise InvalidArgumentError(f"strike must be nonnegative, got {K}")
    if not math.isfinite(r):
        raise InvalidArgumentError(f"rate must be finite, got {r}")
    _check_degree(degree, n_paths)
    if paths is None:
        paths = gen_brownian(grid, n_paths, 1, seed, threads=threads)
    t = grid.times
    W = paths["W.0"]
    S = S0 * np.exp((r - 0.5 * sigma**2) * t[None, :] + sigma * W)
    B = np.exp(r * t)
    ST = S[:, -1]
    payoff = np.maximum(ST - K, 0.0)
    itm = (ST > K).astype(np.float64)

    # price with the discounted stock as control variate
    X = math.exp(-r * grid.T) * payoff
    Y = math.exp(-r * grid.T) * ST
    vy = float(np.var(Y))
    beta = float(np.mean((X - X.mean()) * (Y - Y.mean())) / vy) if vy > 0 else 0.0
    C0 = float(X.mean() - beta * (Y.mean() - S0))

    P, M = paths.n_paths, grid.M
    phi = np.empty((P, M))
    for m in range(M):
        tau = grid.T - t[m]
        Xs = _moneyness(S[:, m], K, sigma, tau) if K > 0 else np.zeros(P)
        fit = fit_ls(Xs, itm, degree, weights=ST / S[:, m], step=m)
        phi[:, m] = fit.predict(Xs[:, None])

    V = np.empty((P, M + 1))
    psi = np.empty((P, M))
    V[:, 0] = C0
    for m in range(M):
        if r != 0:
            # bond position from the drift-matching condition, mu = r under the pricing measure
            psi[:, m] = (r * V[:, m] - phi[:, m] * S[:, m] * r) / (r * B[m])
        else:
            psi[:, m] = (V[:, m] - phi[:, m] * S[:, m]) / B[m]
        V[:, m + 1] = phi[:, m] * S[:, m + 1] + psi[:, m] * B[m + 1]

    norm = float(np.sqrt(np.mean(payoff**2)))
    terr = float(np.sqrt(np.mean((V[:, -1] - payoff) ** 2)))
    terminal_error = terr / norm if norm > 0 else terr
    sel = np.nonzero((t[:-1] >= window[0] - 1e-12) & (t[:-1] <= window[1] + 1e-12))[0]
    delta = bs_delta(S[:, sel], K, r, sigma, grid.T - t[sel][None, :]) if K > 0 else np.ones((P, len(sel)))
    delta_dev = float(np.mean(np.abs(phi[:, sel] - delta))) if len(sel) else 0.0
    return HedgeReport(C0, bs_call_price(S0, K, r, sigma, grid.T), terminal_error, delta_dev, phi, psi, V, S,
                       {"K": K, "r": r, "sigma": sigma, "S0": S0, "degree": degree})


# -- writers ------------------------------------------------------------------


def write_integrand_csv(path, integrand: IntegrandEstimate, max_paths: int | None = 100, path_offset: int = 0):
    """Rows ``t,path_id,channel,value``."""
    times = integrand.grid.times[:-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "path_id", "channel", "value"])
        for ch, vals in integrand.values.items():
            n = vals.shape[0] if max_paths is None else min(vals.shape[0], max_paths)
            for p in range(n):
                for m, tm in enumerate(times):
                    w.writerow([repr(float(tm)), p + path_offset, ch, repr(float(vals[p, m]))])


def resimulated_brownian(grid: TimeGrid, n_paths: int, seed: int, threads: int = 1) -> PathBundle:
    """Fresh Brownian paths from an independent stream, for re-simulation cross-checks."""
    return gen_brownian(grid, n_paths, 1, seed, threads=threads, tag=TAG_RESIM)


__all__ = [
    "IntegrandEstimate", "ReconstructionReport", "HedgeReport", "co_integrand_closed", "co_integrand_regress",
    "co_reconstruct", "co_levy", "replicate_bs", "bs_delta", "bs_call_price", "write_integrand_csv",
    "functional_samples", "error_report", "resimulated_brownian",
]
