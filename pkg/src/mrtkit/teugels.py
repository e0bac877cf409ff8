"""Power-jump processes, Teugels martingales and marked point-process compensators."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, InvalidArgumentError, UnsupportedOrderError
from .paths import BLOCK, TAG_STAGES, LevySpec, PathBundle, TimeGrid, _check_seed, _resolve_range, _run_blocks, \
    _validate_counts, block_rng
from .regression import exponents

IMAX_CAP = 6


@dataclass
class PowerJumpFamily:
    """``X^i`` (power-jump sums) and ``Y^i = X^i - m_i t`` as arrays of shape (imax, P, M+1)."""

    imax: int
    m: np.ndarray
    X: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)


def _moments(spec: LevySpec, upto: int) -> np.ndarray:
    """``m[i]`` for i = 0..upto (index 0 unused)."""
    return np.array([0.0] + [spec.moment(i) for i in range(1, upto + 1)])


def power_jump_paths(spec: LevySpec, paths: PathBundle, imax: int) -> PowerJumpFamily:
    """``X^1 = beta t + sigma W + sum marks``, ``X^i = sum marks^i`` for i >= 2."""
    if isinstance(imax, bool) or not isinstance(imax, (int, np.integer)) or imax < 1:
        raise InvalidArgumentError(f"imax must be a positive integer, got {imax!r}")
    if imax > IMAX_CAP:
        raise UnsupportedOrderError(f"imax is capped at {IMAX_CAP}, got {imax}")
    rec = paths.jump_records
    if rec is None:
        raise InvalidArgumentError("power-jump processes need jump records")
    g = paths.grid
    t = g.times[None, :]
    m = _moments(spec, imax)
    X = np.empty((imax, paths.n_paths, g.M + 1))
    for i in range(1, imax + 1):
        X[i - 1] = kernels.jump_channel(rec.index, rec.offsets, rec.marks**i, g.M)
    if spec.beta:
        X[0] += spec.beta * t
    if spec.sigma:
        X[0] += spec.sigma * paths["W.0"]
    Y = X - m[1:, None, None] * t[None, :, :]
    return PowerJumpFamily(int(imax), m[1:], X, Y)


def gram_matrix(spec: LevySpec, imax: int) -> np.ndarray:
    """``G_ij = m_{i+j} + sigma^2 1{i = j = 1}`` for 1 <= i, j <= imax."""
    if imax < 1 or imax > IMAX_CAP:
        raise UnsupportedOrderError(f"imax must lie in [1, {IMAX_CAP}], got {imax}")
    m = _moments(spec, 2 * imax)
    G = np.empty((imax, imax))
    for i in range(1, imax + 1):
        for j in range(1, imax + 1):
            G[i - 1, j - 1] = m[i + j]
    G[0, 0] += spec.sigma**2
    return G


@dataclass
class OrthoFamily:
    """Orthogonalized martingales ``H = A Y`` with ``A`` lower unitriangular and ``A G A^T`` diagonal."""

    A: np.ndarray
    gram: np.ndarray
    pivots: np.ndarray
    degenerate: np.ndarray
    H: np.ndarray | None = field(default=None, repr=False)

    @property
    def active(self) -> list:
        return [i for i in range(len(self.pivots)) if not self.degenerate[i]]

    def apply(self, fam: PowerJumpFamily) -> "OrthoFamily":
        H = np.einsum("ij,jpk->ipk", self.A, fam.Y)
        return OrthoFamily(self.A, self.gram, self.pivots, self.degenerate, H)

    def to_csv(self, path) -> None:
        n = self.A.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row"] + [f"a_{j + 1}" for j in range(n)] + ["pivot", "degenerate"])
            for i in range(n):
                w.writerow([i + 1] + [repr(float(x)) for x in self.A[i]] +
                           [repr(float(self.pivots[i])), int(self.degenerate[i])])


def orthogonalize(G, tol: float = 1e-10) -> OrthoFamily:
    """Gram-Schmidt of the unit vectors in the inner product ``<u, v> = u^T G v``.

    A pivot below ``tol * G_ii`` (or with ``G_ii = 0``) is flagged
    degenerate: its row still has a unit diagonal but it has zero norm, and
    later rows are not projected on it.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise InvalidArgumentError(f"Gram matrix must be square, got shape {G.shape}")
    scale = max(1.0, float(np.max(np.abs(G)))) if G.size else 1.0
    if not np.allclose(G, G.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidArgumentError("Gram matrix must be symmetric")
    n = G.shape[0]
    A = np.eye(n)
    pivots = np.zeros(n)
    degenerate = np.zeros(n, dtype=bool)
    for i in range(n):
        row = np.eye(n)[i]
        for j in range(i):
            if degenerate[j]:
                continue
            row = row - (np.eye(n)[i] @ G @ A[j]) / pivots[j] * A[j]
        A[i] = row
        pivots[i] = row @ G @ row
        if G[i, i] <= 0 or pivots[i] <= tol * G[i, i]:
            degenerate[i] = True
    return OrthoFamily(A, G, pivots, degenerate)


@dataclass(frozen=True)
class PRPReport:
    residual: float
    degree: int
    n_features: int
    coef: np.ndarray = field(repr=False)


def prp_residual(target, fam: OrthoFamily, paths: PathBundle, degree: int = 1, include_time: bool = False) -> PRPReport:
    """Relative residual of projecting ``target - mean`` on predictable integrals against ``H^i``.

    Features are ``sum_m b_k(state_m) dH^i_m`` with ``b_k`` the monomials of
    total degree ``<= degree`` in the current non-degenerate ``H`` values
    (and ``t`` when requested); an intercept column absorbs the mean.
    """
    if fam.H is None:
        raise InvalidArgumentError("OrthoFamily has no H paths; call apply() first")
    y = np.asarray(target, dtype=np.float64)
    active = fam.active
    if not active:
        raise InvalidArgumentError("no non-degenerate martingales to project on")
    H = fam.H[active]
    scale = H[:, :, -1].std(axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    n_state = len(active) + (1 if include_time else 0)
    expo = exponents(n_state, degree)
    dH = np.diff(H, axis=2)
    M = paths.grid.M
    feats = np.zeros((paths.n_paths, len(active) * len(expo)))
    for m in range(M):
        cols = [H[i, :, m] / scale[i] for i in range(len(active))]
        if include_time:
            cols.append(np.full(paths.n_paths, paths.grid.times[m] / paths.grid.T))
        S = np.column_stack(cols)
        basis = np.ones((paths.n_paths, len(expo)))
        for j, e in enumerate(expo):
            for v, p in enumerate(e):
                if p:
                    basis[:, j] *= S[:, v] ** p
        for i in range(len(active)):
            feats[:, i * len(expo):(i + 1) * len(expo)] += basis * dH[i, :, m][:, None]
    design = np.column_stack([np.ones(paths.n_paths), feats])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    centred = y - y.mean()
    denom = float(np.sqrt(np.mean(centred**2)))
    num = float(np.sqrt(np.mean(resid**2)))
    return PRPReport(num / denom if denom > 0 else num, int(degree), feats.shape[1], coef)


def gamma_map(z):
    """``e^z - 1`` for ``z < 0`` and ``1 - e^{-z}`` for ``z > 0``."""
    za = np.asarray(z, dtype=np.float64)
    if np.any(za == 0):
        raise DomainError("gamma_map is defined on nonzero reals only")
    out = np.where(za < 0, np.expm1(np.minimum(za, 0.0)), -np.expm1(-np.maximum(za, 0.0)))
    return float(out) if out.ndim == 0 else out


# -- marked point processes ---------------------------------------------------


@dataclass(frozen=True)
class MarkedProcessSpec:
    """Jumps arrive in stages: stage ``i`` waits ``Exp(rates[i])`` and draws its mark from ``probs[i]``."""

    marks: tuple
    rates: tuple
    probs: tuple
    k_max: int

    def __post_init__(self):
        marks = tuple(float(x) for x in self.marks)
        if not marks:
            raise InvalidArgumentError("mark set must be nonempty")
        if len(set(marks)) != len(marks):
            raise InvalidArgumentError("mark values must be distinct")
        if isinstance(self.k_max, bool) or not isinstance(self.k_max, (int, np.integer)) or self.k_max < 1:
            raise InvalidArgumentError(f"k_max must be a positive integer, got {self.k_max!r}")
        rates = tuple(float(r) for r in self.rates)
        if len(rates) != self.k_max or any(not (r > 0 and math.isfinite(r)) for r in rates):
            raise InvalidArgumentError(f"need {self.k_max} positive finite stage rates, got {rates}")
        probs = tuple(tuple(float(p) for p in row) for row in self.probs)
        if len(probs) == 1 and self.k_max > 1:
            probs = probs * self.k_max
        if len(probs) != self.k_max:
            raise InvalidArgumentError("need one mark distribution per stage")
        for row in probs:
            if len(row) != len(marks) or any(p < 0 for p in row) or abs(sum(row) - 1.0) > 1e-12:
                raise InvalidArgumentError(f"stage mark probabilities must be nonnegative and sum to 1, got {row}")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "k_max", int(self.k_max))

    def mass(self, A) -> np.ndarray:
        """``pi_i(A)`` per stage."""
        A = set(float(a) for a in A)
        unknown = A - set(self.marks)
        if unknown:
            raise InvalidArgumentError(f"marks {sorted(unknown)} are not in the mark set {self.marks}")
        sel = np.array([z in A for z in self.marks])
        return np.array([float(np.sum(np.asarray(row)[sel])) for row in self.probs])


@dataclass
class MarkedPaths:
    """Stage arrival times ``T_1 < ... < T_kmax`` (may exceed T) and mark indices per path."""

    spec: MarkedProcessSpec
    grid: TimeGrid
    arrivals: np.ndarray = field(repr=False)
    mark_index: np.ndarray = field(repr=False)
    seed: int = 0

    @property
    def n_paths(self) -> int:
        return self.arrivals.shape[0]


def simulate_marked(spec: MarkedProcessSpec, grid: TimeGrid, n_paths: int, seed: int = 0, *,
                    threads: int = 1, path_range=None) -> MarkedPaths:
    _validate_counts(grid, n_paths)
    seed = _check_seed(seed)
    lo, hi = _resolve_range(n_paths, path_range)
    rates = np.asarray(spec.rates)
    cdfs = np.cumsum(np.asarray(spec.probs), axis=1)
    cdfs[:, -1] = 1.0

    def work(b, r0, r1):
        rng = block_rng(seed, TAG_STAGES, b)
        gaps = rng.standard_exponential((BLOCK, spec.k_max)) / rates[None, :]
        u = rng.random((BLOCK, spec.k_max))
        idx = np.empty_like(u, dtype=np.int64)
        for i in range(spec.k_max):
            idx[:, i] = np.searchsorted(cdfs[i], u[:, i], side="right")
        return np.cumsum(gaps, axis=1)[r0:r1], idx[r0:r1]

    parts = _run_blocks(lo, hi, work, threads)
    return MarkedPaths(spec, grid, np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]), seed)


@dataclass
class MarkedCompensator:
    p: np.ndarray = field(repr=False)
    ptilde: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    A: tuple = ()


def _in_set(mp: MarkedPaths, A) -> np.ndarray:
    A = set(float(a) for a in A)
    marks = np.asarray(mp.spec.marks)
    return np.isin(marks[mp.mark_index], list(A))


def compensator_marked(spec: MarkedProcessSpec, A, paths: MarkedPaths) -> MarkedCompensator:
    """Counting process ``p(t, A)``, compensator ``ptilde`` and ``q = p - ptilde`` on the grid."""
    if not len(spec.marks):
        raise InvalidArgumentError("mark set must be nonempty")
    mass = spec.mass(A)
    times = paths.grid.times
    hit = _in_set(paths, A)
    p = np.zeros((paths.n_paths, len(times)))
    for i in range(spec.k_max):
        p += (hit[:, i, None] & (paths.arrivals[:, i, None] <= times[None, :]))
    ptilde = kernels.stage_compensator(paths.arrivals, np.asarray(spec.rates) * mass, times)
    return MarkedCompensator(p, ptilde, p - ptilde, tuple(sorted(float(a) for a in A)))


def q_stopped(spec: MarkedProcessSpec, A, paths: MarkedPaths, t: float, k: int) -> np.ndarray:
    """``q(t ^ T_k, A)`` per path, evaluated exactly in continuous time."""
    if not 1 <= k <= spec.k_max:
        raise InvalidArgumentError(f"stage index must lie in [1, {spec.k_max}], got {k}")
    mass = spec.mass(A)
    hit = _in_set(paths, A)
    tau = np.minimum(t, paths.arrivals[:, k - 1])
    count = np.zeros(paths.n_paths)
    comp = np.zeros(paths.n_paths)
    start = np.zeros(paths.n_paths)
    for i in range(k):
        Ti = paths.arrivals[:, i]
        count += hit[:, i] & (Ti <= tau)
        comp += spec.rates[i] * mass[i] * np.clip(tau - start, 0.0, Ti - start)
        start = Ti
    return count - comp
