"""Seed-deterministic simulation of the driving processes.

Random streams
--------------
Paths are grouped into blocks of :data:`BLOCK` consecutive path indices.
Block ``b`` of stream ``tag`` draws from a Philox generator keyed by
``SeedSequence(seed, spawn_key=(tag, b))``.  A path's values therefore
depend only on ``(seed, tag, path index)``: generating blocks in parallel,
or generating a sub-range of paths, reproduces exactly the same numbers as
one sequential run.

Tags: 0 Brownian increments, 1 jump arrivals, 2 jump marks, 3 marked-point
stages, 4 fresh Brownian motion for re-simulation cross-checks.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping

import numpy as np

from . import kernels
from .errors import InvalidArgumentError

BLOCK = 4096

TAG_BROWNIAN = 0
TAG_ARRIVALS = 1
TAG_MARKS = 2
TAG_STAGES = 3
TAG_RESIM = 4

_MAX_SEED = 2**64


def _check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise InvalidArgumentError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise InvalidArgumentError(f"seed must lie in [0, 2**64), got {seed}")
    return seed


def block_rng(seed: int, tag: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=(int(tag), int(block)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k T / M`` on ``[0, T]``."""

    T: float
    M: int

    def __post_init__(self):
        if not (isinstance(self.M, (int, np.integer)) and not isinstance(self.M, bool)):
            raise InvalidArgumentError(f"grid.M must be an integer, got {self.M!r}")
        if self.M < 1:
            raise InvalidArgumentError(f"grid.M must be >= 1, got {self.M}")
        if not (math.isfinite(self.T) and self.T > 0):
            raise InvalidArgumentError(f"grid.T must be positive and finite, got {self.T!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "M", int(self.M))

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M + 1)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Grid index of ``t``; raises if ``t`` is not a grid point."""
        k = t / self.dt
        kr = int(round(k))
        if abs(k - kr) > tol * max(1.0, abs(k)) or not 0 <= kr <= self.M:
            raise InvalidArgumentError(f"time {t!r} is not on the grid (T={self.T}, M={self.M})")
        return kr

    def to_dict(self) -> dict:
        return {"T": self.T, "M": self.M}


# -- mark laws and Levy triplets ---------------------------------------------


@dataclass(frozen=True)
class DiscreteMarks:
    values: tuple
    probs: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        p = tuple(float(x) for x in self.probs)
        if len(v) == 0 or len(v) != len(p):
            raise InvalidArgumentError("discrete mark law needs equally many values and probabilities")
        if any(x < 0 or not math.isfinite(x) for x in p) or abs(sum(p) - 1.0) > 1e-12:
            raise InvalidArgumentError(f"mark probabilities must be nonnegative and sum to 1, got {p}")
        if any(not math.isfinite(x) for x in v):
            raise InvalidArgumentError("mark values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    def moment(self, k: int) -> float:
        return float(sum(pi * vi**k for vi, pi in zip(self.values, self.probs)))

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if len(self.values) == 1:
            return np.full(shape, self.values[0])
        u = rng.random(shape)
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return np.asarray(self.values)[np.searchsorted(cdf, u, side="right")]

    def to_dict(self) -> dict:
        return {"law": "discrete", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class GaussianMarks:
    mean: float
    sd: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.sd) and self.sd >= 0):
            raise InvalidArgumentError(f"Gaussian mark law needs finite mean and sd >= 0, got {self.mean}, {self.sd}")

    def moment(self, k: int) -> float:
        # E X^k = mean E X^{k-1} + (k-1) sd^2 E X^{k-2}
        prev, cur = 1.0, self.mean
        if k == 0:
            return 1.0
        for j in range(2, k + 1):
            prev, cur = cur, self.mean * cur + (j - 1) * self.sd**2 * prev
        return float(cur)

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        return self.mean + self.sd * rng.standard_normal(shape)

    def to_dict(self) -> dict:
        return {"law": "gaussian", "mean": self.mean, "sd": self.sd}


UNIT_MARKS = DiscreteMarks((1.0,), (1.0,))


def mark_law_from_dict(d: Mapping) -> DiscreteMarks | GaussianMarks:
    law = d.get("law")
    if law == "discrete":
        return DiscreteMarks(tuple(d["values"]), tuple(d["probs"]))
    if law == "gaussian":
        return GaussianMarks(float(d["mean"]), float(d["sd"]))
    if law == "unit":
        return UNIT_MARKS
    raise InvalidArgumentError(f"unknown mark law {law!r}; expected 'discrete', 'gaussian' or 'unit'")


@dataclass(frozen=True)
class LevySpec:
    """Finite-activity Levy triplet: drift, volatility, jump intensity and mark law."""

    beta: float = 0.0
    sigma: float = 0.0
    lam: float = 0.0
    marks: DiscreteMarks | GaussianMarks = UNIT_MARKS

    def __post_init__(self):
        if not isinstance(self.marks, (DiscreteMarks, GaussianMarks)):
            raise InvalidArgumentError(f"invalid mark law {self.marks!r}")
        for name in ("beta", "sigma", "lam"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgumentError(f"{name} must be finite")
        if self.sigma < 0:
            raise InvalidArgumentError(f"sigma must be >= 0, got {self.sigma}")
        if self.lam < 0:
            raise InvalidArgumentError(f"lambda must be >= 0, got {self.lam}")

    def moment(self, i: int) -> float:
        """Power-jump moment rate: ``beta + lam E[mark]`` for i = 1, ``lam E[mark^i]`` above."""
        if i == 1:
            return self.beta + self.lam * self.marks.moment(1)
        return self.lam * self.marks.moment(i)

    def unit_marks(self) -> bool:
        return isinstance(self.marks, DiscreteMarks) and self.marks.values == (1.0,)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "sigma": self.sigma, "lambda": self.lam, "marks": self.marks.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LevySpec":
        marks = d.get("marks", {"law": "unit"})
        return cls(float(d.get("beta", 0.0)), float(d.get("sigma", 0.0)),
                   float(d.get("lambda", 0.0)), mark_law_from_dict(marks))


# -- containers ---------------------------------------------------------------


@dataclass(frozen=True)
class JumpRecord:
    """Ragged per-path jump lists in CSR layout.

    Path ``p`` owns entries ``offsets[p]:offsets[p+1]`` of ``times``,
    ``marks`` and ``index`` (the grid index each jump is snapped to).
    """

    offsets: np.ndarray
    times: np.ndarray
    marks: np.ndarray
    index: np.ndarray

    def __post_init__(self):
        for name in ("offsets", "times", "marks", "index"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_paths(self) -> int:
        return len(self.offsets) - 1

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def path(self, p: int) -> list[tuple[float, float]]:
        lo, hi = self.offsets[p], self.offsets[p + 1]
        return list(zip(self.times[lo:hi].tolist(), self.marks[lo:hi].tolist()))

    def owner(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_paths), self.counts())

    def to_dict(self) -> dict:
        return {"offsets": self.offsets.tolist(), "times": self.times.tolist(), "marks": self.marks.tolist()}

    @classmethod
    def from_lists(cls, offsets, times, marks, grid: TimeGrid) -> "JumpRecord":
        offsets = np.asarray(offsets, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        idx = kernels.snap_jump_indices(times, offsets, grid.dt, grid.M)
        return cls(offsets, times, np.asarray(marks, dtype=np.float64), idx)


BROWNIAN_PREFIX = "W"
JUMP_CHANNELS = ("N", "Nbar", "compjump", "total", "bigjump")


@dataclass(frozen=True)
class PathBundle:
    """Immutable set of sampled channels on a shared grid.

    ``channels`` maps a name (``"W.0"``, ``"Nbar"``, ``"total"``...) to an
    array of shape ``(n_paths, M + 1)``.  ``path_offset`` is the global index
    of the first path when the bundle covers only a sub-range of paths.
    """

    grid: TimeGrid
    n_paths: int
    channels: Mapping[str, np.ndarray]
    seed: int
    jump_records: JumpRecord | None = None
    spec: Mapping = field(default_factory=dict)
    path_offset: int = 0

    def __post_init__(self):
        frozen = {}
        for name, arr in self.channels.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != (self.n_paths, self.grid.M + 1):
                raise InvalidArgumentError(
                    f"channel {name!r} has shape {arr.shape}, expected {(self.n_paths, self.grid.M + 1)}")
            if arr.flags.writeable:
                arr = arr.view()
                arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "channels", frozen)
        if self.jump_records is not None and self.jump_records.n_paths != self.n_paths:
            raise InvalidArgumentError("jump_records cover a different number of paths")

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise InvalidArgumentError(
                f"bundle has no channel {name!r}; available: {sorted(self.channels)}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.channels

    def increments(self, name: str) -> np.ndarray:
        return np.diff(self[name], axis=1)

    def terminal(self, name: str) -> np.ndarray:
        return self[name][:, -1]

    def with_channels(self, **new: np.ndarray) -> "PathBundle":
        chans = dict(self.channels)
        chans.update(new)
        return PathBundle(self.grid, self.n_paths, chans, self.seed, self.jump_records, self.spec, self.path_offset)

    def with_extra_jump(self, t: float, z: float) -> "PathBundle":
        """Insert one jump of mark ``z`` at time ``t`` on every path.

        Jump channels change from the first grid point at or after ``t``;
        compensators and Brownian channels are untouched.
        """
        if self.jump_records is None:
            raise InvalidArgumentError("bundle carries no jump records")
        if not 0 < t <= self.grid.T:
            raise InvalidArgumentError(f"jump time must lie in (0, T], got {t}")
        k = min(int(math.ceil(t / self.grid.dt - 1e-9)), self.grid.M)
        shifts = {"N": 1.0, "Nbar": 1.0, "compjump": z, "total": z,
                  "bigjump": z if abs(z) > 1 else 0.0}
        chans = {}
        for name, arr in self.channels.items():
            s = shifts.get(name, 0.0)
            if s:
                arr = arr.copy()
                arr[:, k:] += s
            chans[name] = arr
        jr = self.jump_records
        new_t, new_z, new_i, off = [], [], [], [0]
        for p in range(self.n_paths):
            lo, hi = jr.offsets[p], jr.offsets[p + 1]
            tt = jr.times[lo:hi]
            pos = int(np.searchsorted(tt, t))
            new_t.append(np.insert(tt, pos, t))
            new_z.append(np.insert(jr.marks[lo:hi], pos, z))
            new_i.append(np.insert(jr.index[lo:hi], pos, k))
            off.append(off[-1] + hi - lo + 1)
        rec = JumpRecord(np.asarray(off, dtype=np.int64), np.concatenate(new_t),
                         np.concatenate(new_z), np.concatenate(new_i))
        return PathBundle(self.grid, self.n_paths, chans, self.seed, rec, self.spec, self.path_offset)

    # -- export / import --------------------------------------------------------

    def manifest(self) -> dict:
        out = {
            "grid": self.grid.to_dict(),
            "seed": self.seed,
            "n_paths": self.n_paths,
            "path_offset": self.path_offset,
            "spec": dict(self.spec),
            "channels": list(self.channels),
        }
        if self.jump_records is not None:
            out["jump_records"] = self.jump_records.to_dict()
        return out

    def to_csv(self, fh=None, channels=None, max_paths=None) -> str | None:
        """Write ``path_id,channel,t_0,...,t_M`` rows; returns the text when ``fh`` is None."""
        close = False
        if fh is None:
            buf = io.StringIO()
        elif isinstance(fh, (str, Path)):
            buf = open(fh, "w", newline="")
            close = True
        else:
            buf = fh
        names = list(channels) if channels is not None else list(self.channels)
        n = self.n_paths if max_paths is None else min(self.n_paths, int(max_paths))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path_id", "channel"] + [f"t_{k}" for k in range(self.grid.M + 1)])
        for p in range(n):
            for name in names:
                w.writerow([p + self.path_offset, name] + [repr(float(x)) for x in self[name][p]])
        if fh is None:
            return buf.getvalue()
        if close:
            buf.close()
        return None

    def save(self, directory, max_paths=None) -> list[str]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.to_csv(d / "paths.csv", max_paths=max_paths)
        man = self.manifest()
        if max_paths is not None and max_paths < self.n_paths:
            man["exported_paths"] = int(max_paths)
            if "jump_records" in man:
                jr = self.jump_records
                hi = jr.offsets[int(max_paths)]
                man["jump_records"] = {"offsets": jr.offsets[: int(max_paths) + 1].tolist(),
                                       "times": jr.times[:hi].tolist(), "marks": jr.marks[:hi].tolist()}
        (d / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True))
        return ["paths.csv", "manifest.json"]

    @classmethod
    def from_csv(cls, text_or_path, manifest: Mapping) -> "PathBundle":
        if isinstance(text_or_path, Path) or (isinstance(text_or_path, str) and "\n" not in text_or_path):
            text = Path(text_or_path).read_text()
        else:
            text = text_or_path
        grid = TimeGrid(float(manifest["grid"]["T"]), int(manifest["grid"]["M"]))
        rows = list(csv.reader(io.StringIO(text)))
        header, rows = rows[0], rows[1:]
        expected = ["path_id", "channel"] + [f"t_{k}" for k in range(grid.M + 1)]
        if header != expected:
            raise InvalidArgumentError("CSV header does not match the manifest grid")
        ids = sorted({int(r[0]) for r in rows})
        offset = ids[0] if ids else 0
        n = len(ids)
        chans: dict[str, np.ndarray] = {}
        for r in rows:
            arr = chans.setdefault(r[1], np.zeros((n, grid.M + 1)))
            arr[int(r[0]) - offset] = [float(x) for x in r[2:]]
        jr = None
        if "jump_records" in manifest:
            j = manifest["jump_records"]
            off = np.asarray(j["offsets"], dtype=np.int64)
            first = offset - int(manifest.get("path_offset", 0))
            if first < 0 or first + n > len(off) - 1:
                raise InvalidArgumentError("CSV paths are not covered by the manifest jump records")
            lo, hi = off[first], off[first + n]
            jr = JumpRecord.from_lists(off[first:first + n + 1] - lo, j["times"][lo:hi], j["marks"][lo:hi], grid)
        return cls(grid, n, chans, int(manifest["seed"]), jr, manifest.get("spec", {}), offset)

    @classmethod
    def load(cls, directory) -> "PathBundle":
        d = Path(directory)
        man = json.loads((d / "manifest.json").read_text())
        return cls.from_csv(d / "paths.csv", man)


# -- block machinery ----------------------------------------------------------


def _validate_counts(grid: TimeGrid, n_paths: int):
    if not isinstance(grid, TimeGrid):
        raise InvalidArgumentError("grid must be a TimeGrid")
    if isinstance(n_paths, bool) or not isinstance(n_paths, (int, np.integer)) or n_paths < 1:
        raise InvalidArgumentError(f"n_paths must be a positive integer, got {n_paths!r}")


def _resolve_range(n_paths: int, path_range) -> tuple[int, int]:
    if path_range is None:
        return 0, int(n_paths)
    lo, hi = int(path_range[0]), int(path_range[1])
    if not 0 <= lo < hi <= n_paths:
        raise InvalidArgumentError(f"path_range {path_range} outside [0, {n_paths})")
    return lo, hi


def _run_blocks(lo: int, hi: int, work: Callable, threads: int) -> list:
    """Call ``work(block, row_lo, row_hi)`` for every block overlapping ``[lo, hi)``, in order."""
    jobs = []
    for b in range(lo // BLOCK, (hi - 1) // BLOCK + 1):
        start = b * BLOCK
        jobs.append((b, max(lo, start) - start, min(hi, start + BLOCK) - start))
    if threads and threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            return list(ex.map(lambda j: work(*j), jobs))
    return [work(*j) for j in jobs]


def iter_path_ranges(n_paths: int, chunk: int = 4 * BLOCK) -> Iterator[tuple[int, int]]:
    """Block-aligned ``(lo, hi)`` ranges for processing large path counts piecewise."""
    chunk = max(BLOCK, (chunk // BLOCK) * BLOCK)
    for lo in range(0, n_paths, chunk):
        yield lo, min(n_paths, lo + chunk)


def _brownian_increments(grid, dims, seed, lo, hi, threads, tag=TAG_BROWNIAN):
    sq = math.sqrt(grid.dt)

    def work(b, r0, r1):
        z = block_rng(seed, tag, b).standard_normal((r1, dims, grid.M))
        return z[r0:r1] * sq

    return np.concatenate(_run_blocks(lo, hi, work, threads), axis=0)


def _cumulate(dW: np.ndarray) -> np.ndarray:
    out = np.zeros(dW.shape[:-1] + (dW.shape[-1] + 1,))
    np.cumsum(dW, axis=-1, out=out[..., 1:])
    return out


def gen_brownian(grid: TimeGrid, n_paths: int, dims: int = 1, seed: int = 0, *,
                 threads: int = 1, path_range=None, tag: int = TAG_BROWNIAN) -> PathBundle:
    """Independent standard Brownian channels ``W.0 .. W.{dims-1}``."""
    _validate_counts(grid, n_paths)
    seed = _check_seed(seed)
    if isinstance(dims, bool) or not isinstance(dims, (int, np.integer)) or dims < 1:
        raise InvalidArgumentError(f"dims must be a positive integer, got {dims!r}")
    lo, hi = _resolve_range(n_paths, path_range)
    W = _cumulate(_brownian_increments(grid, dims, seed, lo, hi, threads, tag))
    chans = {f"W.{d}": np.ascontiguousarray(W[:, d, :]) for d in range(dims)}
    return PathBundle(grid, hi - lo, chans, seed, None, {"process": "brownian", "dims": int(dims)}, lo)


def _simulate_jumps(grid, lam, law, seed, lo, hi, threads) -> JumpRecord:
    T = grid.T
    if lam == 0:
        n = hi - lo
        empty = np.zeros(0)
        return JumpRecord(np.zeros(n + 1, dtype=np.int64), empty, empty.copy(), np.zeros(0, dtype=np.int64))
    width = int(math.ceil(lam * T + 8.0 * math.sqrt(lam * T) + 16))

    def work(b, r0, r1):
        rng = block_rng(seed, TAG_ARRIVALS, b)
        arr = np.cumsum(rng.exponential(1.0 / lam, (BLOCK, width)), axis=1)
        while np.any(arr[:, -1] <= T):
            more = np.cumsum(rng.exponential(1.0 / lam, (BLOCK, width)), axis=1)
            arr = np.concatenate([arr, arr[:, -1:] + more], axis=1)
        marks = law.sample(block_rng(seed, TAG_MARKS, b), arr.shape)
        arr, marks = arr[r0:r1], marks[r0:r1]
        keep = arr <= T
        return keep.sum(axis=1), arr[keep], marks[keep]

    parts = _run_blocks(lo, hi, work, threads)
    counts = np.concatenate([p[0] for p in parts])
    offsets = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    times = np.concatenate([p[1] for p in parts])
    marks = np.concatenate([p[2] for p in parts])
    return JumpRecord(offsets, times, marks, kernels.snap_jump_indices(times, offsets, grid.dt, grid.M))


def _check_lambda(lam):
    if not (isinstance(lam, (int, float, np.floating, np.integer)) and math.isfinite(lam) and lam >= 0):
        raise InvalidArgumentError(f"lambda must be a nonnegative finite number, got {lam!r}")
    return float(lam)


def gen_compensated_poisson(grid: TimeGrid, lam: float, n_paths: int, seed: int = 0, *,
                            threads: int = 1, path_range=None) -> PathBundle:
    """Poisson counts ``N`` and the compensated channel ``Nbar = N - lam t``."""
    _validate_counts(grid, n_paths)
    lam = _check_lambda(lam)
    seed = _check_seed(seed)
    lo, hi = _resolve_range(n_paths, path_range)
    rec = _simulate_jumps(grid, lam, UNIT_MARKS, seed, lo, hi, threads)
    N = kernels.jump_channel(rec.index, rec.offsets, np.ones_like(rec.times), grid.M)
    Nbar = N - lam * grid.times[None, :]
    return PathBundle(grid, hi - lo, {"N": N, "Nbar": Nbar}, seed, rec,
                      {"process": "poisson", "lambda": lam}, lo)


def gen_levy(spec: LevySpec, grid: TimeGrid, n_paths: int, seed: int = 0, *,
             threads: int = 1, path_range=None) -> PathBundle:
    """Levy-Ito channels of a finite-activity jump diffusion.

    ``total = drift + diff + compjump`` where ``compjump`` is the fully
    compensated jump sum.  ``bigjump`` holds the uncompensated jumps with
    ``|mark| > 1``.  ``W.0`` (the Brownian driver), ``N`` and ``Nbar``
    (jump counts) are included for the Malliavin engines.
    """
    if not isinstance(spec, LevySpec):
        raise InvalidArgumentError("spec must be a LevySpec")
    _validate_counts(grid, n_paths)
    seed = _check_seed(seed)
    lo, hi = _resolve_range(n_paths, path_range)
    t = grid.times[None, :]
    W = _cumulate(_brownian_increments(grid, 1, seed, lo, hi, threads))[:, 0, :]
    rec = _simulate_jumps(grid, spec.lam, spec.marks, seed, lo, hi, threads)
    N = kernels.jump_channel(rec.index, rec.offsets, np.ones_like(rec.times), grid.M)
    summed = kernels.jump_channel(rec.index, rec.offsets, rec.marks, grid.M)
    big = kernels.jump_channel(rec.index, rec.offsets, np.where(np.abs(rec.marks) > 1, rec.marks, 0.0), grid.M)
    n = hi - lo
    drift = np.broadcast_to(spec.beta * t, (n, grid.M + 1))
    diff = spec.sigma * W
    comp = summed - spec.lam * spec.marks.moment(1) * t
    chans = {
        "W.0": W,
        "N": N,
        "Nbar": N - spec.lam * t,
        "drift": drift,
        "diff": diff,
        "compjump": comp,
        "total": drift + diff + comp,
        "bigjump": big,
    }
    return PathBundle(grid, n, chans, seed, rec, {"process": "levy", **spec.to_dict()}, lo)
