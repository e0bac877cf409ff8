"""``mrtkit <kind> --config path.json [--seed N] [--out dir] [--threads K]``.

Exit status: 0 when every check passes, 2 when a check fails, 1 on an
execution or configuration error.  ``report.json`` is written whenever the
experiment ran, including on check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .chaos import ChaosExpansion, StepFunction, chaos_norm, chaos_sample, terms_from
from .clark_ocone import (IntegrandEstimate, co_integrand_closed, co_integrand_regress, co_levy, co_reconstruct,
                          functional_samples, replicate_bs, write_integrand_csv, _stochastic_sum)
from .config import (DEFAULT_EXPORT_PATHS, KINDS, ConfigParseError, ConfigValidationError, ExperimentConfig,
                     parse_config)
from .errors import MrtkitError
from .girsanov import density_path, drifted_bm, gco_integrand, gco_reconstruct, theta_from_config
from .malliavin import doleans_functional, functional_from_config, named_functional
from .paths import (BLOCK, LevySpec, PathBundle, TimeGrid, gen_brownian, gen_compensated_poisson, gen_levy,
                    iter_path_ranges)
from .teugels import (MarkedProcessSpec, compensator_marked, gram_matrix, orthogonalize, power_jump_paths,
                      prp_residual, q_stopped, simulate_marked)

CHUNK = 4 * BLOCK


@dataclass
class Check:
    name: str
    statistic: float
    tolerance: float
    passed: bool
    target: float | None = None
    rule: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "statistic": _py(self.statistic), "tolerance": _py(self.tolerance),
                "target": _py(self.target), "rule": self.rule, "passed": bool(self.passed)}


@dataclass
class RunReport:
    config: dict
    checks: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    wall_clock: float = 0.0
    threads: int = 1
    out_dir: Path = Path(".")
    measure: str = "P"

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"config": _py(self.config), "checks": [c.to_dict() for c in self.checks], "passed": self.passed,
                "results": _py(self.results), "artifacts": sorted(self.artifacts), "wall_clock": self.wall_clock,
                "threads": self.threads, "backend": _accel.backend_name(), "measure": self.measure}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _py(x):
    if isinstance(x, dict):
        return {str(k): _py(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_py(v) for v in x]
    if isinstance(x, np.ndarray):
        return _py(x.tolist())
    if isinstance(x, (np.floating,)):
        x = float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


# -- check constructors -------------------------------------------------------


def within_se(name, mean, se, target=0.0, k=3.0) -> Check:
    tol = k * se
    return Check(name, float(mean), float(tol), bool(abs(mean - target) <= tol + 1e-300 or (se == 0 and abs(mean - target) <= 1e-12)),
                 float(target), f"|statistic - target| <= {k:g} standard errors")


def within_rel(name, value, target, rel) -> Check:
    return Check(name, float(value), float(rel * abs(target)), bool(abs(value - target) <= rel * abs(target)),
                 float(target), f"within {rel:.0%} of target")


def at_most(name, value, tol) -> Check:
    return Check(name, float(value), float(tol), bool(value <= tol), None, "statistic <= tolerance")


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


class _Moments:
    """Streaming sums for means, variances and self-normalized weighted moments."""

    def __init__(self):
        self.n = 0
        self.s = self.ss = 0.0
        self.w = self.wx = self.wxx = self.w2 = self.w2x = self.w2xx = 0.0

    def add(self, x, w=None):
        x = np.asarray(x, dtype=np.float64)
        self.n += x.size
        self.s += float(np.sum(x))
        self.ss += float(np.sum(x * x))
        if w is not None:
            self.w += float(np.sum(w))
            self.wx += float(np.sum(w * x))
            self.wxx += float(np.sum(w * x * x))
            self.w2 += float(np.sum(w * w))
            self.w2x += float(np.sum(w * w * x))
            self.w2xx += float(np.sum(w * w * x * x))

    def mean(self):
        return self.s / self.n

    def var(self):
        m = self.mean()
        return (self.ss - self.n * m * m) / (self.n - 1)

    def se(self):
        return math.sqrt(max(self.var(), 0.0) / self.n)

    def wmean(self):
        return self.wx / self.w

    def wvar(self):
        m = self.wmean()
        return self.wxx / self.w - m * m

    def wse(self):
        m = self.wmean()
        num = self.w2xx - 2 * m * self.w2x + m * m * self.w2
        return math.sqrt(max(num, 0.0)) / self.w


# -- runners ------------------------------------------------------------------


@dataclass
class _Ctx:
    cfg: ExperimentConfig
    seed: int
    out: Path
    threads: int

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.cfg.T, self.cfg.M)

    @property
    def p(self) -> dict:
        return self.cfg.params

    @property
    def export(self) -> int:
        return min(int(self.p.get("export_paths", DEFAULT_EXPORT_PATHS)), self.cfg.n_paths)


def _levy_spec(d: dict | None, sigma=0.0, lam=0.0) -> LevySpec:
    d = dict(d or {})
    d.setdefault("sigma", sigma)
    d.setdefault("lambda", lam)
    return LevySpec.from_dict(d)


def _save_paths(ctx: _Ctx, bundle: PathBundle, report: RunReport, stem="paths"):
    if ctx.export <= 0:
        return
    d = ctx.out
    sub = bundle if bundle.n_paths <= ctx.export else None
    if sub is None:
        chans = {k: v[: ctx.export] for k, v in bundle.channels.items()}
        jr = bundle.jump_records
        if jr is not None:
            from .paths import JumpRecord
            hi = jr.offsets[ctx.export]
            jr = JumpRecord(jr.offsets[: ctx.export + 1], jr.times[:hi], jr.marks[:hi], jr.index[:hi])
        sub = PathBundle(bundle.grid, ctx.export, chans, bundle.seed, jr, bundle.spec, bundle.path_offset)
    sub.to_csv(d / f"{stem}.csv")
    man = sub.manifest()
    man["n_paths_total"] = ctx.cfg.n_paths
    (d / f"{stem}_manifest.json").write_text(json.dumps(_py(man), indent=2, sort_keys=True) + "\n")
    report.artifacts += [f"{stem}.csv", f"{stem}_manifest.json"]


def _write_integrand(ctx: _Ctx, integrand: IntegrandEstimate, report: RunReport):
    write_integrand_csv(ctx.out / "integrand.csv", integrand, max_paths=ctx.export)
    report.artifacts.append("integrand.csv")


def _zero_mean_check(integrand, paths) -> Check:
    m, se = _mean_se(_stochastic_sum(integrand, paths))
    return within_se("zero_mean_increment", m, se)


def run_simulate(ctx: _Ctx, rep: RunReport):
    g, n, p = ctx.grid, ctx.cfg.n_paths, ctx.p
    proc = p.get("process", "brownian")
    if proc == "brownian":
        dims = int(p.get("dims", 1))
        mom = [_Moments() for _ in range(dims)]
        qv, start = _Moments(), 0.0
        for lo, hi in iter_path_ranges(n, CHUNK):
            b = gen_brownian(g, n, dims, ctx.seed, threads=ctx.threads, path_range=(lo, hi))
            for d in range(dims):
                W = b[f"W.{d}"]
                mom[d].add(W[:, -1])
                qv.add(np.sum(np.diff(W, axis=1) ** 2, axis=1))
                start = max(start, float(np.max(np.abs(W[:, 0]))))
        rep.checks.append(at_most("initial_value_zero", start, 0.0))
        for d in range(dims):
            rep.checks.append(within_se(f"mean_W.{d}_T", mom[d].mean(), math.sqrt(g.T / n)))
        rep.checks.append(within_se("mean_quadratic_variation", qv.mean(), qv.se(), g.T))
        rep.results["var_W_T"] = [m.var() for m in mom]
        head = gen_brownian(g, n, dims, ctx.seed, path_range=(0, max(ctx.export, 1)))
    elif proc == "poisson":
        lam = float(p.get("lambda", 2.0))
        mom, start = _Moments(), 0.0
        for lo, hi in iter_path_ranges(n, CHUNK):
            b = gen_compensated_poisson(g, lam, n, ctx.seed, threads=ctx.threads, path_range=(lo, hi))
            mom.add(b["Nbar"][:, -1])
            start = max(start, float(np.max(np.abs(b["Nbar"][:, 0]))))
        rep.checks.append(at_most("initial_value_zero", start, 0.0))
        if lam == 0:
            rep.checks.append(at_most("Nbar_identically_zero", abs(mom.ss), 0.0))
        else:
            rep.checks.append(within_se("mean_Nbar_T", mom.mean(), math.sqrt(lam * g.T / n)))
            rep.checks.append(within_rel("var_Nbar_T", mom.var(), lam * g.T, 0.05))
        head = gen_compensated_poisson(g, lam, n, ctx.seed, path_range=(0, max(ctx.export, 1)))
    else:
        spec = _levy_spec(p.get("levy"), sigma=1.0, lam=1.0)
        mom, start = _Moments(), 0.0
        for lo, hi in iter_path_ranges(n, CHUNK):
            b = gen_levy(spec, g, n, ctx.seed, threads=ctx.threads, path_range=(lo, hi))
            mom.add(b["total"][:, -1])
            start = max(start, float(np.max(np.abs(b["total"][:, 0]))))
        var = (spec.sigma**2 + spec.lam * spec.marks.moment(2)) * g.T
        rep.checks.append(at_most("initial_value_zero", start, 0.0))
        if var > 0:
            rep.checks.append(within_se("mean_total_T", mom.mean(), math.sqrt(var / n), spec.beta * g.T))
            rep.checks.append(within_rel("var_total_T", mom.var(), var, 0.05))
        else:
            rep.checks.append(at_most("total_deterministic", abs(mom.mean() - spec.beta * g.T), 1e-12))
        head = gen_levy(spec, g, n, ctx.seed, path_range=(0, max(ctx.export, 1)))
    _save_paths(ctx, head, rep)


DEFAULT_EXPANSION = {"terms": [
    {"n": 0, "c": 0.5},
    {"n": 1, "c": 1.0, "g": {"breaks": [0.0, 1.0], "vals": [1.0]}},
    {"n": 2, "c": 0.5, "g": {"breaks": [0.0, 0.5, 1.0], "vals": [1.0, -1.0]}},
    {"n": 3, "c": 0.25, "g": {"breaks": [0.0, 1.0], "vals": [1.0]}},
]}


def _scaled_expansion(T: float) -> dict:
    out = json.loads(json.dumps(DEFAULT_EXPANSION))
    for t in out["terms"]:
        if "g" in t:
            t["g"]["breaks"] = [b * T for b in t["g"]["breaks"]]
    return out


def run_chaos(ctx: _Ctx, rep: RunReport):
    g, n = ctx.grid, ctx.cfg.n_paths
    F = ChaosExpansion.from_json(ctx.p.get("expansion", _scaled_expansion(g.T)))
    c0 = F.constant()
    mom = _Moments()
    for lo, hi in iter_path_ranges(n, CHUNK):
        b = gen_brownian(g, n, 1, ctx.seed, threads=ctx.threads, path_range=(lo, hi))
        mom.add(chaos_sample(F, b))
    pred = chaos_norm(F) - c0**2
    if pred > 0:
        rep.checks.append(within_rel("parseval_variance", mom.var(), pred, 0.05))
    else:
        rep.checks.append(at_most("parseval_variance", mom.var(), 1e-20))
    rep.checks.append(within_se("mean_equals_constant", mom.mean(), mom.se(), c0))
    rep.results.update(chaos_norm=chaos_norm(F), sample_second_moment=mom.ss / mom.n)
    (ctx.out / "expansion.json").write_text(F.to_json() + "\n")
    rep.artifacts.append("expansion.json")


def run_clark_ocone(ctx: _Ctx, rep: RunReport):
    g, n, p = ctx.grid, ctx.cfg.n_paths, ctx.p
    F = p.get("F", "W_T")
    h = StepFunction.from_dict(p["h"]) if "h" in p else StepFunction.constant(1.0, g.T)
    method = p.get("method") or ("closed" if isinstance(F, str) else "regression")
    paths = gen_brownian(g, n, 1, ctx.seed, threads=ctx.threads)
    if method == "closed":
        integrand = co_integrand_closed(F, paths, h=h)
        samples = functional_samples(F, paths, h)
        default_tol = 1e-10 if F == "W_T" else 0.05
    else:
        if isinstance(F, str):
            Fc = doleans_functional(h, g) if F == "doleans" else named_functional(F, g)
        else:
            Fc = functional_from_config(F)
        integrand = co_integrand_regress(Fc, paths, int(p.get("degree", 3)), threads=ctx.threads)
        samples = Fc.value(paths)
        default_tol = 0.10
    r = co_reconstruct(samples, integrand, paths)
    rep.checks.append(at_most("reconstruction_rel_l2", r.rel_l2_error, float(p.get("tolerance", default_tol))))
    rep.checks.append(_zero_mean_check(integrand, paths))
    rep.results.update(r.to_dict(), method=integrand.method)
    _write_integrand(ctx, integrand, rep)
    _save_paths(ctx, paths, rep)


def run_jump_co(ctx: _Ctx, rep: RunReport):
    g, n, p = ctx.grid, ctx.cfg.n_paths, ctx.p
    F = p.get("F", "Ntilde_T^2")
    lam = float(p.get("lambda", 2.0))
    paths = gen_compensated_poisson(g, lam, n, ctx.seed, threads=ctx.threads)
    integrand = co_integrand_closed(F, paths)
    r = co_reconstruct(functional_samples(F, paths), integrand, paths)
    tol = float(p.get("tolerance", 1e-10 if F == "Ntilde_T" else 0.05))
    rep.checks.append(at_most("reconstruction_rel_l2", r.rel_l2_error, tol))
    rep.checks.append(_zero_mean_check(integrand, paths))
    rep.results.update(r.to_dict())
    _write_integrand(ctx, integrand, rep)
    _save_paths(ctx, paths, rep)


def run_levy_co(ctx: _Ctx, rep: RunReport):
    g, n, p = ctx.grid, ctx.cfg.n_paths, ctx.p
    spec = _levy_spec(p.get("levy"), sigma=1.0, lam=2.0)
    paths = gen_levy(spec, g, n, ctx.seed, threads=ctx.threads)
    F = p.get("F", "W_T*Ntilde_T")
    Fc = named_functional(F, g) if isinstance(F, str) else functional_from_config(F)
    integrand = co_levy(F if isinstance(F, str) else Fc, paths, p.get("method", "auto"), int(p.get("degree", 2)),
                        threads=ctx.threads)
    r = co_reconstruct(Fc.value(paths), integrand, paths)
    rep.checks.append(at_most("reconstruction_rel_l2", r.rel_l2_error, float(p.get("tolerance", 0.08))))
    rep.checks.append(_zero_mean_check(integrand, paths))
    rep.results.update(r.to_dict(), method=integrand.method)
    _write_integrand(ctx, integrand, rep)
    _save_paths(ctx, paths, rep)


def run_girsanov(ctx: _Ctx, rep: RunReport):
    g, n, p = ctx.grid, ctx.cfg.n_paths, ctx.p
    theta = theta_from_config(p.get("theta", 0.5))
    zs, wt = _Moments(), _Moments()
    weights_path = ctx.out / "weights.csv"
    with open(weights_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "Z_T"])
        for lo, hi in iter_path_ranges(n, CHUNK):
            b = gen_brownian(g, n, 1, ctx.seed, threads=ctx.threads, path_range=(lo, hi))
            Z = density_path(theta, b).Z[:, -1]
            x = drifted_bm(b, theta)["Wtilde"][:, -1]
            zs.add(Z)
            wt.add(x, Z)
            for i, z in enumerate(Z):
                w.writerow([lo + i, repr(float(z))])
    rep.artifacts.append("weights.csv")
    rep.checks.append(within_se("mean_Z_T", zs.mean(), zs.se(), 1.0))
    rep.checks.append(within_se("weighted_mean_Wtilde_T", wt.wmean(), wt.wse(), 0.0))
    rep.checks.append(within_rel("weighted_var_Wtilde_T", wt.wvar(), g.T, 0.05))

    m = min(n, int(p.get("recon_paths", 20_000)))
    paths = gen_brownian(g, n, 1, ctx.seed, threads=ctx.threads, path_range=(0, m))
    mc = density_path(theta, paths)
    F = p.get("F", "W_T")
    Fc = named_functional(F, g) if isinstance(F, str) else functional_from_config(F)
    integrand = gco_integrand(Fc, mc, paths, int(p.get("degree", 3)), threads=ctx.threads)
    work = drifted_bm(paths, theta) if "Wtilde" in Fc.channels() else paths
    r = gco_reconstruct(Fc.value(work), integrand, mc, paths)
    default_tol = 0.10 if not theta.deterministic else 0.08
    rep.checks.append(at_most("reconstruction_rel_l2", r.rel_l2_error, float(p.get("tolerance", default_tol))))
    rep.measure = "Ptilde"
    rep.results.update(r.to_dict(), recon_paths=m, theta=theta.to_dict(), warnings=mc.warnings,
                       mean_Z_T=zs.mean(), var_Z_T=zs.var())
    _write_integrand(ctx, integrand, rep)


def _teugels_target(name: str, fam, paths):
    if name == "Y1":
        return fam.Y[0, :, -1]
    if name == "Ntilde_T^2":
        N = paths["Nbar"][:, -1]
        return N * N
    return paths["W.0"][:, -1] * paths["Nbar"][:, -1]


def run_teugels(ctx: _Ctx, rep: RunReport):
    g, n, p = ctx.grid, ctx.cfg.n_paths, ctx.p
    spec = _levy_spec(p.get("levy", {"lambda": 2.0, "marks": {"law": "discrete", "values": [-1.0, 1.0],
                                                              "probs": [0.5, 0.5]}}))
    imax = int(p.get("imax", 2))
    G = gram_matrix(spec, imax)
    ortho = orthogonalize(G, float(p.get("tol", 1e-10)))
    act = ortho.active
    D = ortho.A @ G @ ortho.A.T
    off = D[np.ix_(act, act)] - np.diag(np.diag(D[np.ix_(act, act)]))
    scale = max(1.0, float(np.max(np.abs(G))))
    rep.checks.append(at_most("gram_diagonal", float(np.max(np.abs(off))) / scale if off.size else 0.0, 1e-10))
    pairs = [(i, j) for a, i in enumerate(act) for j in act[a + 1:]]
    mom = {pr: _Moments() for pr in pairs}
    means = {i: _Moments() for i in act}
    for lo, hi in iter_path_ranges(n, CHUNK):
        b = gen_levy(spec, g, n, ctx.seed, threads=ctx.threads, path_range=(lo, hi))
        H = ortho.apply(power_jump_paths(spec, b, imax)).H[:, :, -1]
        for i in act:
            means[i].add(H[i])
        for i, j in pairs:
            mom[(i, j)].add(H[i] * H[j])
    for i in act:
        rep.checks.append(within_se(f"mean_H{i + 1}_T", means[i].mean(), means[i].se()))
    for i, j in pairs:
        rep.checks.append(within_se(f"orthogonality_H{i + 1}H{j + 1}", mom[(i, j)].mean(), mom[(i, j)].se()))
    m = min(n, int(p.get("prp_paths", 10_000)))
    paths = gen_levy(spec, g, n, ctx.seed, threads=ctx.threads, path_range=(0, m))
    fam = power_jump_paths(spec, paths, imax)
    of = ortho.apply(fam)
    target = p.get("target", "Y1")
    res = prp_residual(_teugels_target(target, fam, paths), of, paths, int(p.get("degree", 1)))
    tol = float(p.get("prp_tolerance", 1e-10 if target == "Y1" else 0.05))
    rep.checks.append(at_most("prp_residual", res.residual, tol))
    rep.results.update(gram=G, A=ortho.A, pivots=ortho.pivots, degenerate=[i + 1 for i in range(imax)
                                                                          if ortho.degenerate[i]],
                       prp_target=target, prp_paths=m)
    ortho.to_csv(ctx.out / "ortho.csv")
    rep.artifacts.append("ortho.csv")


def run_compensator(ctx: _Ctx, rep: RunReport):
    g, n, p = ctx.grid, ctx.cfg.n_paths, ctx.p
    marks = p.get("marks", [1.0, 2.0])
    k_max = int(p.get("k_max", 2))
    spec = MarkedProcessSpec(tuple(marks), tuple(p.get("rates", [2.0, 3.0])), tuple(map(tuple, p.get("probs", [[0.3, 0.7]]))),
                             k_max)
    A = set(p.get("A", marks[:1]))
    stage = int(p.get("stage", k_max))
    mp = simulate_marked(spec, g, n, ctx.seed, threads=ctx.threads)
    for t in p.get("times", [0.25 * g.T, 0.5 * g.T, g.T]):
        q = q_stopped(spec, A, mp, float(t), stage)
        mean, se = _mean_se(q)
        rep.checks.append(within_se(f"q_mean_t{t:g}", mean, se))
    if ctx.export > 0:
        head = simulate_marked(spec, g, n, ctx.seed, path_range=(0, ctx.export))
        comp = compensator_marked(spec, A, head)
        bundle = PathBundle(g, ctx.export, {"p": comp.p, "ptilde": comp.ptilde, "q": comp.q}, ctx.seed, None,
                            {"process": "marked", "marks": list(spec.marks), "rates": list(spec.rates)})
        _save_paths(ctx, bundle, rep, stem="compensator")


def run_hedge(ctx: _Ctx, rep: RunReport):
    g, n, p = ctx.grid, ctx.cfg.n_paths, ctx.p
    hr = replicate_bs(float(p.get("K", 100.0)), float(p.get("r", 0.05)), float(p.get("sigma", 0.2)),
                      float(p.get("S0", 100.0)), g, n, ctx.seed, degree=int(p.get("degree", 4)), threads=ctx.threads)
    rep.checks.append(at_most("delta_deviation", hr.delta_deviation, float(p.get("delta_tolerance", 0.05))))
    rep.checks.append(at_most("terminal_error", hr.terminal_error, float(p.get("terminal_tolerance", 0.05))))
    rep.results.update(hr.to_dict())
    est = IntegrandEstimate(g, {"phi": hr.phi, "psi": hr.psi}, "regression", int(p.get("degree", 4)), ctx.seed, n)
    _write_integrand(ctx, est, rep)


RUNNERS = {
    "simulate": run_simulate,
    "chaos": run_chaos,
    "clark-ocone": run_clark_ocone,
    "jump-co": run_jump_co,
    "levy-co": run_levy_co,
    "girsanov": run_girsanov,
    "teugels": run_teugels,
    "compensator": run_compensator,
    "hedge": run_hedge,
}


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, out: str | Path | None = None,
                   threads: int | None = None) -> RunReport:
    """Run one experiment, write its artifacts and ``report.json``, and return the report."""
    seed = cfg.effective_seed() if seed is None else int(seed)
    threads = int(threads or cfg.threads or 1)
    out_dir = Path(out or cfg.out or "mrtkit-out")
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = cfg.echo()
    echo["seed"] = seed
    rep = RunReport(echo, threads=threads, out_dir=out_dir)
    ctx = _Ctx(cfg, seed, out_dir, threads)
    t0 = time.perf_counter()
    RUNNERS[cfg.kind](ctx, rep)
    rep.wall_clock = round(time.perf_counter() - t0, 6)
    rep.artifacts.append("report.json")
    (out_dir / "report.json").write_text(rep.to_json())
    return rep


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mrtkit", description="Monte Carlo checks of martingale representations")
    ap.add_argument("kind", help="experiment kind: " + ", ".join(KINDS))
    ap.add_argument("--config", required=True, help="path to a JSON experiment config")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed and MRTKIT_SEED")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="worker threads; results do not depend on it")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    tag = f"mrtkit {args.kind}"
    try:
        if args.kind not in KINDS:
            raise ConfigValidationError([f"kind: unknown experiment kind {args.kind!r}; valid kinds: {', '.join(KINDS)}"])
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigValidationError([f"--seed: must lie in [0, 2**64), got {args.seed}"])
        if args.threads is not None and args.threads < 1:
            raise ConfigValidationError([f"--threads: must be >= 1, got {args.threads}"])
        text = Path(args.config).read_bytes()
        cfg = parse_config(text, kind=args.kind)
        rep = run_experiment(cfg, seed=args.seed, out=args.out, threads=args.threads)
    except (ConfigParseError, ConfigValidationError, MrtkitError, OSError) as e:
        print(f"{tag}: error: {e}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, MemoryError) as e:
        print(f"{tag}: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: statistic={c.statistic:.6g} tolerance={c.tolerance:.6g}")
    print(f"{tag}: {'all checks passed' if rep.passed else 'check failure'}; report at {rep.out_dir / 'report.json'}")
    return 0 if rep.passed else 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
