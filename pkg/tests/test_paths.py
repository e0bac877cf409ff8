import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrtkit.errors import InvalidArgumentError
from mrtkit.paths import (BLOCK, DiscreteMarks, GaussianMarks, JumpRecord, LevySpec, PathBundle, TimeGrid,
                          gen_brownian, gen_compensated_poisson, gen_levy, iter_path_ranges, mark_law_from_dict)


def se_mean(x):
    return np.std(x, ddof=1) / math.sqrt(len(x))


# -- TimeGrid -----------------------------------------------------------------


@given(T=st.floats(1e-3, 1e3), M=st.integers(1, 2000))
def test_grid_endpoints_and_monotone(T, M):
    g = TimeGrid(T, M)
    t = g.times
    assert t[0] == 0.0 and t[-1] == T and len(t) == M + 1
    assert np.all(np.diff(t) > 0)


@pytest.mark.parametrize("T,M", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, -3), (math.inf, 4)])
def test_grid_rejects_bad_arguments(T, M):
    with pytest.raises(InvalidArgumentError):
        TimeGrid(T, M)


def test_grid_index_of():
    g = TimeGrid(1.0, 8)
    assert g.index_of(0.25) == 2
    assert g.index_of(1.0) == 8
    with pytest.raises(InvalidArgumentError):
        g.index_of(0.3)


# -- Brownian -----------------------------------------------------------------


def test_brownian_starts_at_zero_and_is_deterministic():
    g = TimeGrid(1.0, 32)
    a = gen_brownian(g, 1000, dims=2, seed=7)
    b = gen_brownian(g, 1000, dims=2, seed=7)
    for ch in ("W.0", "W.1"):
        assert a[ch].shape == (1000, 33)
        assert np.all(a[ch][:, 0] == 0.0)
        np.testing.assert_array_equal(a[ch], b[ch])
    assert not np.array_equal(a["W.0"], gen_brownian(g, 1000, seed=8)["W.0"])


def test_brownian_terminal_mean_within_clt_band():
    W1 = gen_brownian(TimeGrid(1.0, 512), 100_000, seed=0)["W.0"][:, -1]
    assert abs(W1.mean()) <= 3 * math.sqrt(1 / 100_000)


@pytest.mark.parametrize("M", [512, 2048])
def test_brownian_quadratic_variation_band(M):
    # sd of the realized QV is sqrt(2 T dt); the 10% band covers 99% only once M >= 1327
    from scipy.stats import norm
    n = 5000
    W = gen_brownian(TimeGrid(1.0, M), n, seed=1)["W.0"]
    qv = np.sum(np.diff(W, axis=1) ** 2, axis=1)
    frac = np.mean(np.abs(qv - 1.0) <= 0.1)
    p = 2 * norm.cdf(0.1 / math.sqrt(2 / M)) - 1
    assert abs(frac - p) <= 3 * math.sqrt(p * (1 - p) / n) + 0.01
    if M >= 1327:
        assert frac >= 0.99


def test_brownian_increment_law():
    g = TimeGrid(2.0, 16)
    dW = np.diff(gen_brownian(g, 50_000, seed=3)["W.0"], axis=1)
    assert abs(dW.var() / g.dt - 1) < 0.01


def test_brownian_independent_increments():
    W = gen_brownian(TimeGrid(1.0, 64), 100_000, dims=2, seed=5)
    a = W["W.0"][:, 20] - W["W.0"][:, 10]
    b = W["W.0"][:, 50] - W["W.0"][:, 30]
    c = W["W.1"][:, 20] - W["W.1"][:, 10]
    for x, y in ((a, b), (a, c)):
        r = np.corrcoef(x, y)[0, 1]
        assert abs(r) <= 3 / math.sqrt(len(x))


def test_brownian_prefix_and_range_consistency():
    g = TimeGrid(1.0, 16)
    full = gen_brownian(g, BLOCK + 500, dims=2, seed=11)
    part = gen_brownian(g, BLOCK + 500, dims=2, seed=11, path_range=(BLOCK - 10, BLOCK + 20))
    np.testing.assert_array_equal(full["W.1"][BLOCK - 10:BLOCK + 20], part["W.1"])
    assert part.path_offset == BLOCK - 10
    # fewer paths is a prefix of more paths
    np.testing.assert_array_equal(gen_brownian(g, 10, dims=2, seed=11)["W.1"], full["W.1"][:10])


def test_brownian_thread_count_does_not_change_values():
    g = TimeGrid(1.0, 8)
    a = gen_brownian(g, 3 * BLOCK + 7, seed=2, threads=1)
    b = gen_brownian(g, 3 * BLOCK + 7, seed=2, threads=4)
    np.testing.assert_array_equal(a["W.0"], b["W.0"])


@pytest.mark.parametrize("kw", [dict(n_paths=0), dict(dims=0), dict(seed=-1), dict(seed=2**64), dict(seed=1.5)])
def test_brownian_rejects_bad_arguments(kw):
    args = dict(grid=TimeGrid(1.0, 4), n_paths=10, dims=1, seed=0)
    args.update(kw)
    with pytest.raises(InvalidArgumentError):
        gen_brownian(**args)


# -- Poisson ------------------------------------------------------------------


def test_poisson_zero_rate_is_identically_zero():
    b = gen_compensated_poisson(TimeGrid(1.0, 64), 0.0, 500, seed=1)
    assert np.all(b["Nbar"] == 0.0) and np.all(b["N"] == 0.0)
    assert b.jump_records.times.size == 0


def test_poisson_rejects_negative_rate():
    with pytest.raises(InvalidArgumentError):
        gen_compensated_poisson(TimeGrid(1.0, 4), -0.5, 10)


def test_poisson_mean_and_variance():
    b = gen_compensated_poisson(TimeGrid(1.0, 128), 2.0, 100_000, seed=0)
    x = b["Nbar"][:, -1]
    assert np.all(b["Nbar"][:, 0] == 0.0)
    assert abs(x.mean()) <= 3 * math.sqrt(2 / 100_000)
    assert abs(x.var(ddof=1) / 2.0 - 1) <= 0.05


def test_poisson_martingale_regression_slope():
    b = gen_compensated_poisson(TimeGrid(1.0, 64), 2.0, 100_000, seed=4)
    s, t = b["Nbar"][:, 32], b["Nbar"][:, 64]
    y = t - s
    X = np.column_stack([np.ones_like(s), s])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    se = math.sqrt(resid.var(ddof=2) / np.sum((s - s.mean()) ** 2))
    assert abs(beta[1]) <= 3 * se


def test_jump_records_sorted_and_consistent_with_channel():
    g = TimeGrid(1.0, 16)
    b = gen_compensated_poisson(g, 30.0, 400, seed=9)
    jr = b.jump_records
    for p in range(jr.n_paths):
        lo, hi = jr.offsets[p], jr.offsets[p + 1]
        t = jr.times[lo:hi]
        assert np.all(np.diff(t) > 0) and np.all((t > 0) & (t <= 1))
        idx = jr.index[lo:hi]
        # snapped indices are strictly increasing until they saturate at M
        below = idx[idx < g.M]
        assert np.all(np.diff(below) > 0) and np.all(idx >= 1)
    np.testing.assert_array_equal(b["N"][:, -1], jr.counts())


def test_snap_rounds_to_nearest_point_after_previous():
    g = TimeGrid(1.0, 10)
    rec = JumpRecord.from_lists([0, 4], [0.01, 0.02, 0.44, 0.46], [1, 1, 1, 1], g)
    # 0.01 -> 0 lifted to 1; 0.02 -> 0, must be > 1; 0.44 -> 4; 0.46 -> 5
    assert rec.index.tolist() == [1, 2, 4, 5]


# -- Levy ---------------------------------------------------------------------


def test_levy_pure_drift_is_exact():
    g = TimeGrid(1.0, 32)
    b = gen_levy(LevySpec(beta=0.3), g, 50, seed=0)
    np.testing.assert_array_equal(b["total"], np.broadcast_to(0.3 * g.times, (50, 33)))


def test_levy_unit_marks_share_streams_with_poisson():
    g = TimeGrid(1.0, 64)
    lev = gen_levy(LevySpec(lam=2.0), g, 1000, seed=3)
    poi = gen_compensated_poisson(g, 2.0, 1000, seed=3)
    np.testing.assert_array_equal(lev["Nbar"], poi["Nbar"])
    np.testing.assert_allclose(lev["total"], poi["Nbar"], atol=1e-12)
    np.testing.assert_array_equal(lev["W.0"], gen_brownian(g, 1000, seed=3)["W.0"])


def test_levy_unit_marks_mean():
    x = gen_levy(LevySpec(lam=2.0), TimeGrid(1.0, 64), 100_000, seed=1)["total"][:, -1]
    assert abs(x.mean()) <= 3 * math.sqrt(2 / 100_000)


def test_levy_variance_gaussian_marks():
    spec = LevySpec(sigma=1.0, lam=1.0, marks=GaussianMarks(0.0, 1.0))
    x = gen_levy(spec, TimeGrid(1.0, 64), 100_000, seed=2)["total"][:, -1]
    assert abs(x.var(ddof=1) / 2.0 - 1) <= 0.05


def test_levy_channels_decompose():
    spec = LevySpec(beta=0.1, sigma=0.5, lam=3.0, marks=DiscreteMarks((-2.0, 0.5, 1.5), (0.2, 0.5, 0.3)))
    b = gen_levy(spec, TimeGrid(1.0, 32), 300, seed=4)
    np.testing.assert_allclose(b["total"], b["drift"] + b["diff"] + b["compjump"], atol=1e-13)
    for ch in ("W.0", "N", "Nbar", "diff", "compjump", "total", "bigjump"):
        assert np.all(b[ch][:, 0] == 0.0)
    jr = b.jump_records
    big = np.zeros(300)
    np.add.at(big, jr.owner(), np.where(np.abs(jr.marks) > 1, jr.marks, 0.0))
    np.testing.assert_allclose(b["bigjump"][:, -1], big, atol=1e-12)


def test_poisson_ito_isometry_for_step_integrand():
    # phi = 1 on (0, 1/2], 3 on (1/2, 1]; marks N(0.5, 1) so E[mark^2] = 1.25
    lam, mean, sd = 2.0, 0.5, 1.0
    g = TimeGrid(1.0, 64)
    spec = LevySpec(lam=lam, marks=GaussianMarks(mean, sd))
    b = gen_levy(spec, g, 100_000, seed=6)
    phi = np.where(np.arange(g.M) < 32, 1.0, 3.0)
    I = np.diff(b["compjump"], axis=1) @ phi
    expected = lam * (mean**2 + sd**2) * (0.5 * 1.0 + 0.5 * 9.0)
    sq = I**2
    assert abs(sq.mean() - expected) <= 3 * se_mean(sq)


def test_invalid_mark_laws():
    with pytest.raises(InvalidArgumentError):
        DiscreteMarks((1.0, 2.0), (0.5, 0.6))
    with pytest.raises(InvalidArgumentError):
        GaussianMarks(0.0, -1.0)
    with pytest.raises(InvalidArgumentError):
        mark_law_from_dict({"law": "cauchy"})
    with pytest.raises(InvalidArgumentError):
        LevySpec(sigma=-1.0)
    with pytest.raises(InvalidArgumentError):
        LevySpec(marks="unit")


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(0.0, 20.0), seed=st.integers(0, 2**32), n=st.integers(1, 50))
def test_jump_channel_increments_match_records(lam, seed, n):
    b = gen_compensated_poisson(TimeGrid(1.0, 20), lam, n, seed=seed)
    assert np.all(np.diff(b["N"], axis=1) >= 0)
    assert np.all(b["N"][:, -1] == b.jump_records.counts())


# -- containers and I/O ----------------------------------------------------------


def test_bundle_is_read_only_and_reports_missing_channel():
    b = gen_brownian(TimeGrid(1.0, 4), 5, seed=0)
    with pytest.raises(ValueError):
        b["W.0"][0, 1] = 1.0
    with pytest.raises(InvalidArgumentError, match="W.0"):
        b["Nbar"]


def test_csv_roundtrip(tmp_path):
    spec = LevySpec(sigma=1.0, lam=4.0, marks=DiscreteMarks((-1.0, 2.0), (0.5, 0.5)))
    b = gen_levy(spec, TimeGrid(0.5, 8), 12, seed=21)
    b.save(tmp_path)
    header = (tmp_path / "paths.csv").read_text().splitlines()[0]
    assert header == "path_id,channel," + ",".join(f"t_{k}" for k in range(9))
    back = PathBundle.load(tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 21 and man["grid"] == {"T": 0.5, "M": 8} and man["spec"]["process"] == "levy"
    for ch in b.channels:
        np.testing.assert_array_equal(back[ch], b[ch])
    np.testing.assert_array_equal(back.jump_records.times, b.jump_records.times)
    np.testing.assert_array_equal(back.jump_records.index, b.jump_records.index)


def test_csv_partial_export_keeps_jump_records(tmp_path):
    b = gen_compensated_poisson(TimeGrid(1.0, 8), 3.0, 40, seed=2)
    b.save(tmp_path, max_paths=5)
    back = PathBundle.load(tmp_path)
    assert back.n_paths == 5
    np.testing.assert_array_equal(back.jump_records.counts(), b.jump_records.counts()[:5])


def test_with_extra_jump_shifts_jump_channels_only():
    g = TimeGrid(1.0, 10)
    b = gen_levy(LevySpec(sigma=1.0, lam=1.0, marks=GaussianMarks(0, 1)), g, 20, seed=0)
    e = b.with_extra_jump(0.35, 2.5)
    k = 4
    np.testing.assert_array_equal(e["N"][:, k:] - b["N"][:, k:], 1.0)
    np.testing.assert_array_equal(e["N"][:, :k], b["N"][:, :k])
    np.testing.assert_allclose(e["total"][:, k:] - b["total"][:, k:], 2.5)
    np.testing.assert_allclose(e["bigjump"][:, -1] - b["bigjump"][:, -1], 2.5)
    np.testing.assert_array_equal(e["W.0"], b["W.0"])
    assert np.all(e.jump_records.counts() == b.jump_records.counts() + 1)


def test_iter_path_ranges_is_block_aligned():
    r = list(iter_path_ranges(3 * BLOCK + 5, chunk=2 * BLOCK))
    assert r == [(0, 2 * BLOCK), (2 * BLOCK, 3 * BLOCK + 5)]
