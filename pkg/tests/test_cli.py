import csv
import json

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from mrtkit.cli import main
from mrtkit.config import KINDS


def run(tmp_path, cfg, *extra, name="out"):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([cfg.get("kind", "simulate"), "--config", str(cfg_path), "--out", str(out), *extra])
    rep = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, rep, out


def strip_volatile(rep):
    return {k: v for k, v in rep.items() if k not in ("wall_clock", "threads")}


def test_terminal_value_clark_ocone_passes(tmp_path):
    code, rep, out = run(tmp_path, {"kind": "clark-ocone", "grid": {"M": 64}, "n_paths": 1000,
                                    "params": {"F": "W_T"}})
    assert code == 0 and rep["passed"]
    chk = {c["name"]: c for c in rep["checks"]}["reconstruction_rel_l2"]
    assert chk["tolerance"] == 1e-10 and chk["passed"]
    with open(out / "integrand.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "path_id", "channel", "value"]
    assert len(rows) == 1 + 64 * 100


def test_girsanov_density_check_and_weights(tmp_path):
    code, rep, out = run(tmp_path, {"kind": "girsanov", "grid": {"M": 16}, "n_paths": 100_000,
                                    "params": {"theta": 0.5, "recon_paths": 5000}})
    assert code == 0
    chk = {c["name"]: c for c in rep["checks"]}["mean_Z_T"]
    assert chk["passed"] and chk["target"] == 1.0
    assert rep["measure"] == "Ptilde"
    with open(out / "weights.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["path_id", "Z_T"] and len(rows) == 100_001
    assert "weights.csv" in rep["artifacts"]


def test_plain_reports_are_under_P(tmp_path):
    _, rep, _ = run(tmp_path, {"kind": "simulate", "grid": {"M": 16}, "n_paths": 500})
    assert rep["measure"] == "P"


def test_reruns_and_thread_counts_are_identical(tmp_path):
    cfg = {"kind": "clark-ocone", "grid": {"M": 32}, "n_paths": 9000, "seed": 4, "params": {"F": "W_T^2",
                                                                                          "method": "regression"}}
    _, a, oa = run(tmp_path, cfg, name="a")
    _, b, ob = run(tmp_path, cfg, name="b")
    _, c, oc = run(tmp_path, cfg, "--threads", "3", name="c")
    assert strip_volatile(a) == strip_volatile(b) == strip_volatile(c)
    assert (oa / "integrand.csv").read_bytes() == (oc / "integrand.csv").read_bytes()
    ta = (oa / "report.json").read_text().replace(str(a["wall_clock"]), "")
    tb = (ob / "report.json").read_text().replace(str(b["wall_clock"]), "")
    assert ta == tb


def test_check_failure_exits_two_and_still_writes_report(tmp_path, capsys):
    code, rep, _ = run(tmp_path, {"kind": "clark-ocone", "grid": {"M": 32}, "n_paths": 500,
                                  "params": {"F": "W_T^2", "tolerance": 1e-9}})
    assert code == 2 and rep is not None and not rep["passed"]
    assert "FAIL reconstruction_rel_l2" in capsys.readouterr().out


def test_execution_errors_exit_one(tmp_path, capsys):
    code, rep, _ = run(tmp_path, {"kind": "simulate", "grid": {"M": 0}})
    assert code == 1 and rep is None
    err = capsys.readouterr().err
    assert err.startswith("mrtkit simulate: error:") and "grid.M" in err
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "byte" in capsys.readouterr().err
    assert main(["nonsense", "--config", str(bad)]) == 1
    assert main(["simulate", "--config", str(bad), "--threads", "0"]) == 1


def test_seed_precedence(tmp_path, monkeypatch):
    base = {"kind": "simulate", "grid": {"M": 8}, "n_paths": 50}
    monkeypatch.delenv("MRTKIT_SEED", raising=False)
    assert run(tmp_path, base, name="d")[1]["config"]["seed"] == 0
    monkeypatch.setenv("MRTKIT_SEED", "11")
    assert run(tmp_path, base, name="e")[1]["config"]["seed"] == 11
    assert run(tmp_path, dict(base, seed=5), name="f")[1]["config"]["seed"] == 5
    assert run(tmp_path, dict(base, seed=5), "--seed", "9", name="g")[1]["config"]["seed"] == 9
    _, r1, _ = run(tmp_path, dict(base, seed=11), name="h")
    _, r2, _ = run(tmp_path, base, name="i")
    assert r1["results"] == r2["results"]


@pytest.mark.parametrize("kind, files", [
    ("simulate", {"paths.csv", "paths_manifest.json"}),
    ("teugels", {"ortho.csv"}),
    ("compensator", {"compensator.csv"}),
    ("hedge", {"integrand.csv"}),
    ("chaos", {"expansion.json"}),
])
def test_artifacts_are_listed_and_present(tmp_path, kind, files):
    _, rep, out = run(tmp_path, {"kind": kind, "grid": {"M": 16}, "n_paths": 1000})
    assert files <= set(rep["artifacts"])
    for f in rep["artifacts"]:
        assert (out / f).exists()
    names = [c["name"] for c in rep["checks"]]
    assert len(names) == len(set(names)) and rep["passed"] == all(c["passed"] for c in rep["checks"])


small_params = st.fixed_dictionaries({}, optional={
    "F": st.sampled_from(["W_T", "W_T^2", "Ntilde_T", "W_T*Ntilde_T", "bogus", 3]),
    "theta": st.one_of(st.floats(-12, 12), st.just({"kind": "frozen", "t0": 0.5})),
    "degree": st.integers(-1, 7),
    "imax": st.integers(0, 8),
    "lambda": st.floats(-1, 5),
    "K": st.floats(-10, 200),
})


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.sampled_from(KINDS), st.integers(1, 8), st.integers(1, 200), small_params)
def test_fuzzed_runs_never_crash(tmp_path, kind, M, n, params):
    code, _, _ = run(tmp_path, {"kind": kind, "grid": {"M": M}, "n_paths": n, "params": params}, name="fz")
    assert code in (0, 1, 2)
