"""Experiment configuration: JSON parsing and aggregated validation."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any

from .errors import MrtkitError

KINDS = ("simulate", "chaos", "clark-ocone", "jump-co", "levy-co", "girsanov", "teugels", "compensator", "hedge")

DEFAULT_T = 1.0
DEFAULT_M = 512
DEFAULT_N_PATHS = 10_000
DEFAULT_SEED = 0
DEFAULT_EXPORT_PATHS = 100
SEED_ENV = "MRTKIT_SEED"

CLOSED_W = ("W_T", "W_T^2", "exp(W_T-T/2)", "doleans")
CLOSED_N = ("Ntilde_T", "Ntilde_T^2")
LEVY_FS = ("W_T", "Ntilde_T", "W_T+Ntilde_T", "W_T*Ntilde_T", "Ntilde_T^2")
PROCESSES = ("brownian", "poisson", "levy")


class ConfigParseError(MrtkitError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ConfigValidationError(MrtkitError, ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = list(errors)


@dataclass
class ExperimentConfig:
    kind: str
    T: float = DEFAULT_T
    M: int = DEFAULT_M
    n_paths: int = DEFAULT_N_PATHS
    seed: int | None = None
    params: dict = field(default_factory=dict)
    out: str | None = None
    threads: int = 1

    def effective_seed(self, env: dict | None = None) -> int:
        """Config seed, else ``MRTKIT_SEED``, else the default."""
        if self.seed is not None:
            return self.seed
        env = os.environ if env is None else env
        raw = env.get(SEED_ENV)
        if raw is not None and raw.strip() != "":
            try:
                value = int(raw.strip(), 0)
            except ValueError:
                raise ConfigValidationError([f"{SEED_ENV}: not an integer: {raw!r}"]) from None
            if not 0 <= value < 2**64:
                raise ConfigValidationError([f"{SEED_ENV}: must lie in [0, 2**64)"])
            return value
        return DEFAULT_SEED

    def echo(self) -> dict:
        return {"kind": self.kind, "grid": {"T": self.T, "M": self.M}, "n_paths": self.n_paths,
                "seed": self.seed, "params": self.params}


# -- low-level validators -------------------------------------------------------


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


class _Checker:
    def __init__(self):
        self.errors: list[str] = []

    def fail(self, where: str, msg: str):
        self.errors.append(f"{where}: {msg}")

    def num(self, d: dict, key: str, where: str, default=None, lo=None, hi=None, lo_open=False, required=False):
        if key not in d:
            if required:
                self.fail(where, "is required")
            return default
        v = d[key]
        if not _is_num(v):
            self.fail(where, f"must be a finite number, got {v!r}")
            return default
        if lo is not None and (v < lo or (lo_open and v == lo)):
            self.fail(where, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            self.fail(where, f"must be <= {hi}, got {v}")
        return float(v)

    def int_(self, d: dict, key: str, where: str, default=None, lo=None, hi=None):
        if key not in d:
            return default
        v = d[key]
        if not _is_int(v):
            self.fail(where, f"must be an integer, got {v!r}")
            return default
        if lo is not None and v < lo:
            self.fail(where, f"must be >= {lo}, got {v}")
        if hi is not None and v > hi:
            self.fail(where, f"must be <= {hi}, got {v}")
        return v

    def choice(self, d: dict, key: str, where: str, options, default=None):
        if key not in d:
            return default
        v = d[key]
        if v not in options:
            self.fail(where, f"must be one of {', '.join(map(str, options))}; got {v!r}")
            return default
        return v


def _check_step(c: _Checker, g, where: str, T: float):
    if not isinstance(g, dict) or "breaks" not in g or "vals" not in g:
        c.fail(where, "must be an object with 'breaks' and 'vals'")
        return
    b, v = g["breaks"], g["vals"]
    if not (isinstance(b, list) and isinstance(v, list) and len(b) >= 2 and len(v) == len(b) - 1):
        c.fail(where, "needs K+1 breaks and K values")
        return
    if not all(_is_num(x) for x in b + v):
        c.fail(where, "breaks and values must be finite numbers")
        return
    if any(y <= x for x, y in zip(b, b[1:])):
        c.fail(where + ".breaks", "must be strictly increasing")
    if b[0] < 0 or b[-1] > T + 1e-12:
        c.fail(where + ".breaks", f"must lie in [0, {T}]")


def _check_levy(c: _Checker, d, where: str, sigma_default=0.0, lam_default=0.0):
    if not isinstance(d, dict):
        c.fail(where, "must be an object")
        return
    c.num(d, "beta", f"{where}.beta", 0.0)
    c.num(d, "sigma", f"{where}.sigma", sigma_default, lo=0.0)
    c.num(d, "lambda", f"{where}.lambda", lam_default, lo=0.0)
    marks = d.get("marks", {"law": "unit"})
    if not isinstance(marks, dict):
        c.fail(f"{where}.marks", "must be an object")
        return
    law = marks.get("law")
    if law == "unit":
        return
    if law == "discrete":
        vals, probs = marks.get("values"), marks.get("probs")
        if not (isinstance(vals, list) and isinstance(probs, list) and vals and len(vals) == len(probs)):
            c.fail(f"{where}.marks", "discrete law needs equally long 'values' and 'probs'")
        elif not all(_is_num(x) for x in vals + probs) or any(p < 0 for p in probs) or abs(sum(probs) - 1) > 1e-12:
            c.fail(f"{where}.marks.probs", "must be nonnegative and sum to 1")
    elif law == "gaussian":
        c.num(marks, "mean", f"{where}.marks.mean", 0.0)
        c.num(marks, "sd", f"{where}.marks.sd", 1.0, lo=0.0)
    else:
        c.fail(f"{where}.marks.law", f"must be one of unit, discrete, gaussian; got {law!r}")


def _check_functional(c: _Checker, f, where: str, allowed_ids, depth=0):
    if isinstance(f, str):
        if f not in allowed_ids:
            c.fail(where, f"unknown functional id {f!r}; expected one of {', '.join(allowed_ids)} or a catalog object")
        return
    if not isinstance(f, dict) or "fn" not in f:
        c.fail(where, "must be a catalog id or an object with an 'fn' field")
        return
    from .malliavin import CATALOG_FNS
    fn = f["fn"]
    if fn not in CATALOG_FNS:
        c.fail(f"{where}.fn", f"must be one of {', '.join(CATALOG_FNS)}; got {fn!r}")
        return
    if depth > 16:
        c.fail(where, "nesting too deep")
        return
    if "time" in f and not (f["time"] == "T" or _is_num(f["time"])):
        c.fail(f"{where}.time", "must be a number or 'T'")
    if "channel" in f and not isinstance(f["channel"], str):
        c.fail(f"{where}.channel", "must be a string")
    for key in ("terms", "factors"):
        if key in f:
            if not isinstance(f[key], list) or not f[key]:
                c.fail(f"{where}.{key}", "must be a nonempty list")
            elif fn != "exp_linear":
                for i, sub in enumerate(f[key]):
                    _check_functional(c, sub, f"{where}.{key}[{i}]", allowed_ids, depth + 1)
    if "of" in f:
        _check_functional(c, f["of"], f"{where}.of", allowed_ids, depth + 1)
    if fn == "call" and not _is_num(f.get("strike")):
        c.fail(f"{where}.strike", "is required and must be a number")
    if fn == "const" and not _is_num(f.get("value")):
        c.fail(f"{where}.value", "is required and must be a number")
    if fn == "scale" and (not _is_num(f.get("c")) or "of" not in f):
        c.fail(where, "scale needs numeric 'c' and an 'of' entry")
    if fn == "power" and "exponent" in f and not _is_num(f["exponent"]):
        c.fail(f"{where}.exponent", "must be a number")


def _check_degree(c: _Checker, p, n_paths, where="params.degree", default=3):
    deg = c.int_(p, "degree", where, default, lo=1, hi=6)
    if deg is not None and _is_int(n_paths) and n_paths < 50 * (deg + 1):
        c.fail("n_paths", f"must be >= {50 * (deg + 1)} for regression degree {deg}, got {n_paths}")
    return deg


def _validate_params(c: _Checker, kind: str, p: dict, T: float, n_paths):
    w = "params"
    c.int_(p, "export_paths", f"{w}.export_paths", lo=0)
    if kind == "simulate":
        proc = c.choice(p, "process", f"{w}.process", PROCESSES, "brownian")
        c.int_(p, "dims", f"{w}.dims", lo=1, hi=64)
        if proc == "poisson":
            c.num(p, "lambda", f"{w}.lambda", lo=0.0)
        if proc == "levy" and "levy" in p:
            _check_levy(c, p["levy"], f"{w}.levy")
    elif kind == "chaos":
        if "expansion" in p:
            e = p["expansion"]
            if not isinstance(e, dict) or not isinstance(e.get("terms"), list):
                c.fail(f"{w}.expansion", "must be an object with a 'terms' list")
            else:
                for i, t in enumerate(e["terms"]):
                    tw = f"{w}.expansion.terms[{i}]"
                    if not isinstance(t, dict):
                        c.fail(tw, "must be an object")
                        continue
                    n = c.int_(t, "n", f"{tw}.n", lo=0, hi=3)
                    if "n" not in t:
                        c.fail(f"{tw}.n", "is required")
                    c.num(t, "c", f"{tw}.c")
                    if n is not None and n >= 1:
                        if "g" not in t:
                            c.fail(f"{tw}.g", "is required for order >= 1")
                        else:
                            _check_step(c, t["g"], f"{tw}.g", T)
    elif kind == "clark-ocone":
        method = c.choice(p, "method", f"{w}.method", ("closed", "regression"), None)
        F = p.get("F", "W_T")
        if isinstance(F, str):
            if F not in CLOSED_W:
                c.fail(f"{w}.F", f"unknown functional id {F!r}; expected one of {', '.join(CLOSED_W)}")
        else:
            _check_functional(c, F, f"{w}.F", ())
            if method == "closed":
                c.fail(f"{w}.method", "closed-form integrands need a catalog id in params.F")
        if method == "regression" or not isinstance(F, str):
            _check_degree(c, p, n_paths)
        if "h" in p:
            _check_step(c, p["h"], f"{w}.h", T)
        c.num(p, "tolerance", f"{w}.tolerance", lo=0.0)
    elif kind == "jump-co":
        F = p.get("F", "Ntilde_T^2")
        if F not in CLOSED_N:
            c.fail(f"{w}.F", f"unknown functional id {F!r}; expected one of {', '.join(CLOSED_N)}")
        c.num(p, "lambda", f"{w}.lambda", lo=0.0)
        c.num(p, "tolerance", f"{w}.tolerance", lo=0.0)
    elif kind == "levy-co":
        c.choice(p, "method", f"{w}.method", ("auto", "closed", "regression"), "auto")
        _check_functional(c, p.get("F", "W_T*Ntilde_T"), f"{w}.F", LEVY_FS)
        if "levy" in p:
            _check_levy(c, p["levy"], f"{w}.levy")
            marks = p["levy"].get("marks", {"law": "unit"}) if isinstance(p["levy"], dict) else {}
            unit = isinstance(marks, dict) and (marks.get("law", "unit") == "unit" or (
                marks.get("law") == "discrete" and marks.get("values") in ([1], [1.0])))
            if not unit:
                c.fail(f"{w}.levy.marks", "Levy Clark-Ocone runs support unit marks only")
        if p.get("method", "auto") == "regression" or not isinstance(p.get("F", "W_T*Ntilde_T"), str):
            _check_degree(c, p, n_paths, default=2)
        c.num(p, "tolerance", f"{w}.tolerance", lo=0.0)
    elif kind == "girsanov":
        th = p.get("theta", 0.5)
        if _is_num(th):
            if abs(th) > 10:
                c.fail(f"{w}.theta", "|theta| must be <= 10")
        elif isinstance(th, dict):
            kind_t = c.choice(th, "kind", f"{w}.theta.kind", ("constant", "step", "frozen"), "constant")
            if kind_t == "constant":
                c.num(th, "c", f"{w}.theta.c", 0.0, lo=-10, hi=10)
            elif kind_t == "step":
                if "g" not in th:
                    c.fail(f"{w}.theta.g", "is required")
                else:
                    _check_step(c, th["g"], f"{w}.theta.g", T)
            elif kind_t == "frozen":
                c.num(th, "t0", f"{w}.theta.t0", lo=0.0, hi=T, required=True)
                from .girsanov import SMOOTH_CATALOG
                c.choice(th, "fn", f"{w}.theta.fn", tuple(sorted(SMOOTH_CATALOG)), "tanh")
                c.num(th, "a", f"{w}.theta.a", 1.0, lo=-10, hi=10)
        else:
            c.fail(f"{w}.theta", "must be a number or an object")
        _check_functional(c, p.get("F", "W_T"), f"{w}.F", ("W_T", "W_T^2", "exp(W_T-T/2)"))
        c.int_(p, "recon_paths", f"{w}.recon_paths", lo=1)
        deg = c.int_(p, "degree", f"{w}.degree", 3, lo=1, hi=6)
        rp = p.get("recon_paths", n_paths)
        if deg is not None and _is_int(rp) and _is_int(n_paths) and min(rp, n_paths) < 50 * (deg + 1):
            c.fail("n_paths", f"reconstruction needs >= {50 * (deg + 1)} paths for degree {deg}")
        c.num(p, "tolerance", f"{w}.tolerance", lo=0.0)
    elif kind == "teugels":
        if "levy" in p:
            _check_levy(c, p["levy"], f"{w}.levy")
        c.int_(p, "imax", f"{w}.imax", lo=1, hi=6)
        c.int_(p, "degree", f"{w}.degree", lo=1, hi=6)
        c.choice(p, "target", f"{w}.target", ("Y1", "Ntilde_T^2", "W_T*Ntilde_T"), "Y1")
        c.num(p, "tol", f"{w}.tol", lo=0.0)
        c.int_(p, "prp_paths", f"{w}.prp_paths", lo=10)
        c.num(p, "prp_tolerance", f"{w}.prp_tolerance", lo=0.0)
    elif kind == "compensator":
        marks = p.get("marks", [1.0, 2.0])
        if not isinstance(marks, list) or not marks or not all(_is_num(x) for x in marks):
            c.fail(f"{w}.marks", "must be a nonempty list of numbers")
            marks = []
        k_max = c.int_(p, "k_max", f"{w}.k_max", 2, lo=1, hi=1000)
        rates = p.get("rates", [2.0, 3.0])
        if not isinstance(rates, list) or not all(_is_num(r) and r > 0 for r in rates):
            c.fail(f"{w}.rates", "must be a list of positive numbers")
        elif k_max is not None and len(rates) != k_max:
            c.fail(f"{w}.rates", f"needs exactly k_max = {k_max} entries")
        probs = p.get("probs", [[0.3, 0.7]])
        if not isinstance(probs, list) or not probs:
            c.fail(f"{w}.probs", "must be a list of per-stage probability lists")
        else:
            for i, row in enumerate(probs):
                if not isinstance(row, list) or len(row) != len(marks) or not all(_is_num(x) and x >= 0 for x in row) \
                        or abs(sum(row) - 1) > 1e-12:
                    c.fail(f"{w}.probs[{i}]", "must have one nonnegative entry per mark and sum to 1")
        A = p.get("A", marks[:1])
        if not isinstance(A, list) or any(a not in marks for a in A):
            c.fail(f"{w}.A", "must be a subset of the mark set")
        times = p.get("times", [0.25 * T, 0.5 * T, T])
        if not isinstance(times, list) or not times or not all(_is_num(t) and 0 <= t <= T for t in times):
            c.fail(f"{w}.times", f"must be a nonempty list of times in [0, {T}]")
        c.int_(p, "stage", f"{w}.stage", lo=1, hi=k_max if k_max else None)
    elif kind == "hedge":
        c.num(p, "K", f"{w}.K", 100.0, lo=0.0)
        c.num(p, "r", f"{w}.r", 0.05)
        c.num(p, "sigma", f"{w}.sigma", 0.2, lo=0.0, lo_open=True)
        c.num(p, "S0", f"{w}.S0", 100.0, lo=0.0, lo_open=True)
        _check_degree(c, p, n_paths, default=4)


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def parse_config(text: bytes | str, kind: str | None = None) -> ExperimentConfig:
    """Parse and validate a JSON experiment description.

    ``kind`` (from the command line) overrides the config's ``kind`` field.
    All validation problems are collected before raising.
    """
    if isinstance(text, bytes):
        try:
            s = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ConfigParseError(f"config is not valid UTF-8: {e.reason}", e.start) from None
    else:
        s = text
    try:
        raw = json.loads(s)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"malformed JSON: {e.msg}", _byte_offset(s, e.pos)) from None
    if not isinstance(raw, dict):
        raise ConfigValidationError(["<root>: config must be a JSON object"])
    c = _Checker()
    k = kind if kind is not None else raw.get("kind")
    if k not in KINDS:
        c.fail("kind", f"unknown experiment kind {k!r}; valid kinds: {', '.join(KINDS)}")
    grid = raw.get("grid", {})
    if not isinstance(grid, dict):
        c.fail("grid", "must be an object with T and M")
        grid = {}
    T = c.num(grid, "T", "grid.T", DEFAULT_T, lo=0.0, lo_open=True)
    M = c.int_(grid, "M", "grid.M", DEFAULT_M, lo=1, hi=1 << 20)
    n_paths = c.int_(raw, "n_paths", "n_paths", DEFAULT_N_PATHS, lo=1, hi=10**8)
    seed = c.int_(raw, "seed", "seed", None, lo=0, hi=2**64 - 1)
    threads = c.int_(raw, "threads", "threads", 1, lo=1, hi=1024)
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        c.fail("out", "must be a string path")
        out = None
    params = raw.get("params", {})
    if not isinstance(params, dict):
        c.fail("params", "must be an object")
        params = {}
    known = {"kind", "grid", "n_paths", "seed", "params", "out", "threads"}
    for key in raw:
        if key not in known:
            c.fail(key, f"unknown top-level field; expected one of {', '.join(sorted(known))}")
    if k in KINDS and T is not None:
        try:
            _validate_params(c, k, params, T, n_paths)
        except (TypeError, AttributeError, KeyError) as e:
            c.fail("params", f"malformed parameters ({type(e).__name__}: {e})")
    if c.errors:
        raise ConfigValidationError(c.errors)
    return ExperimentConfig(k, float(T), int(M), int(n_paths), seed, params, out, int(threads))


def dump_config(cfg: ExperimentConfig) -> str:
    d: dict[str, Any] = cfg.echo()
    if cfg.seed is None:
        d.pop("seed")
    return json.dumps(d, indent=2, sort_keys=True)
