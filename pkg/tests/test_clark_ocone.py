import csv
import math

import numpy as np
import pytest

from mrtkit.chaos import StepFunction
from mrtkit.clark_ocone import (IntegrandEstimate, bs_call_price, bs_delta, co_integrand_closed, co_integrand_regress,
                                co_levy, co_reconstruct, functional_samples, replicate_bs, write_integrand_csv,
                                _stochastic_sum)
from mrtkit.errors import InvalidArgumentError, UnsupportedConfigurationError, UnsupportedFunctionalError
from mrtkit.malliavin import call, const, exp, malliavin_cylinder, named_functional, var
from mrtkit.paths import DiscreteMarks, LevySpec, TimeGrid, gen_brownian, gen_compensated_poisson, gen_levy

G512 = TimeGrid(1.0, 512)


@pytest.fixture(scope="module")
def bm512():
    return gen_brownian(G512, 10_000, seed=0)


@pytest.fixture(scope="module")
def levy512():
    return gen_levy(LevySpec(sigma=1.0, lam=2.0), G512, 10_000, seed=0)


def zero_mean_ok(integrand, paths):
    x = _stochastic_sum(integrand, paths)
    return abs(x.mean()) <= 3 * x.std(ddof=1) / math.sqrt(len(x)) + 1e-12


# -- closed forms -------------------------------------------------------------


def test_terminal_value_reconstructs_exactly(bm512):
    est = co_integrand_closed("W_T", bm512)
    r = co_reconstruct(functional_samples("W_T", bm512), est, bm512)
    assert r.rel_l2_error <= 1e-10 and est.method == "closed_form"


@pytest.mark.parametrize("fid", ["W_T^2", "exp(W_T-T/2)", "doleans"])
def test_closed_form_reconstruction(bm512, fid):
    h = StepFunction.constant(1.0, 1.0)
    est = co_integrand_closed(fid, bm512, h=h)
    r = co_reconstruct(functional_samples(fid, bm512, h), est, bm512)
    assert 0 <= r.rel_l2_error <= 0.05
    assert zero_mean_ok(est, bm512)


def test_doleans_step_kernel(bm512):
    h = StepFunction((0.0, 0.25, 0.75, 1.0), (1.0, -0.5, 0.75))
    est = co_integrand_closed("doleans", bm512, h=h)
    r = co_reconstruct(functional_samples("doleans", bm512, h), est, bm512)
    assert r.rel_l2_error <= 0.05


def test_squared_terminal_integrand_formula(bm512):
    est = co_integrand_closed("W_T^2", bm512)
    np.testing.assert_array_equal(est.values["W"], 2 * bm512["W.0"][:, :-1])
    assert est.mean_F == 1.0


def test_unknown_closed_form_id(bm512):
    with pytest.raises(UnsupportedFunctionalError):
        co_integrand_closed("W_T^3", bm512)


def test_halving_dt_reduces_error_by_root_two():
    errs = []
    for M in (256, 512):
        b = gen_brownian(TimeGrid(1.0, M), 10_000, seed=1)
        est = co_integrand_closed("W_T^2", b)
        errs.append(co_reconstruct(functional_samples("W_T^2", b), est, b).rel_l2_error)
    assert 1.2 <= errs[0] / errs[1] <= 2.0


def test_constant_functional_has_zero_error(bm512):
    F = const(3.0)
    est = co_integrand_regress(F, bm512, 2)
    assert np.all(est.values["W"] == 0.0)
    r = co_reconstruct(F.value(bm512), est, bm512)
    assert r.rel_l2_error == 0.0 and r.mean_F == 3.0


def test_reconstruct_rejects_mismatched_grid(bm512):
    est = co_integrand_closed("W_T", bm512)
    other = gen_brownian(TimeGrid(1.0, 256), 10_000, seed=0)
    with pytest.raises(InvalidArgumentError, match="grid"):
        co_reconstruct(functional_samples("W_T", other), est, other)
    with pytest.raises(InvalidArgumentError, match="seed"):
        b = gen_brownian(G512, 10_000, seed=1)
        co_reconstruct(functional_samples("W_T", b), est, b)


# -- regression route -----------------------------------------------------------


def test_regression_of_constant_derivative(bm512):
    est = co_integrand_regress(var("W.0"), bm512, 3)
    assert np.max(np.abs(est.values["W"] - 1.0)) <= 1e-8


def test_regression_matches_closed_form_square(bm512):
    est = co_integrand_regress(var("W.0") ** 2, bm512, 1)
    assert np.mean(np.abs(est.values["W"] - 2 * bm512["W.0"][:, :-1])) <= 0.05


@pytest.mark.parametrize("fid", ["W_T^2", "exp(W_T-T/2)"])
def test_closed_and_regression_agree_at_degree_four(bm512, fid):
    reg = co_integrand_regress(named_functional(fid, G512), bm512, 4)
    closed = co_integrand_closed(fid, bm512)
    assert np.mean(np.abs(reg.values["W"] - closed.values["W"])) <= 0.05


def test_smoothed_call_reconstruction(bm512):
    F = call(var("W.0"), 0.0, 0.05)
    est = co_integrand_regress(F, bm512, 4)
    r = co_reconstruct(F.value(bm512), est, bm512)
    assert r.rel_l2_error <= 0.10
    assert zero_mean_ok(est, bm512)


def test_regression_uses_observed_past_coordinates():
    # F = W_{1/2} W_T: E(D_t F | F_t) = W_{1/2} + W_t before 1/2 and W_{1/2} after
    g = TimeGrid(1.0, 64)
    b = gen_brownian(g, 5000, seed=2)
    est = co_integrand_regress(var("W.0", 0.5) * var("W.0"), b, 2)
    W = b["W.0"][:, :-1]
    exact = np.where(np.arange(64) < 32, b["W.0"][:, 32:33] + W, b["W.0"][:, 32:33])
    exact[:, :32] = 2 * W[:, :32]
    assert np.mean(np.abs(est.values["W"] - exact)) <= 0.05


def test_jensen_guard(bm512):
    F = exp(0.5 * var("W.0", 0.5)) * call(var("W.0"), 0.2, 0.05)
    est = co_integrand_regress(F, bm512, 3)
    D = malliavin_cylinder(F, bm512)
    proj = np.sum(est.values["W"] ** 2, axis=1) * G512.dt
    full = np.sum(D**2, axis=1) * G512.dt
    assert np.all(np.isfinite(proj))
    assert proj.mean() <= full.mean() + 3 * full.std(ddof=1) / math.sqrt(len(full))


def test_adaptedness_under_scrambled_suffix(bm512):
    F = exp(0.5 * var("W.0", 0.5)) * var("W.0") ** 2
    est = co_integrand_regress(F, bm512, 3)
    closed = co_integrand_closed("exp(W_T-T/2)", bm512)
    rng = np.random.default_rng(99)
    for m in (0, 100, 255, 256, 400, 511):
        W = bm512["W.0"].copy()
        W[:, m + 1:] = W[:, m:m + 1] + np.cumsum(rng.standard_normal((W.shape[0], G512.M - m)), axis=1)
        scrambled = bm512.with_channels(**{"W.0": W})
        np.testing.assert_array_equal(est.at_step(scrambled, m)["W"], est.values["W"][:, m])
        np.testing.assert_array_equal(closed.at_step(scrambled, m)["W"], closed.values["W"][:, m])


def test_regression_deterministic_across_threads():
    b = gen_brownian(TimeGrid(1.0, 32), 2000, seed=4)
    F = call(var("W.0"), 0.1, 0.05)
    a = co_integrand_regress(F, b, 3, threads=1)
    c = co_integrand_regress(F, b, 3, threads=4)
    np.testing.assert_array_equal(a.values["W"], c.values["W"])


@pytest.mark.parametrize("degree,n", [(0, 1000), (7, 1000), (3, 199), (2.5, 1000)])
def test_regression_degree_bounds(degree, n):
    b = gen_brownian(TimeGrid(1.0, 4), n, seed=0)
    with pytest.raises(InvalidArgumentError):
        co_integrand_regress(var("W.0"), b, degree)


# -- jump and Levy settings -------------------------------------------------------


def test_jump_clark_ocone():
    g = TimeGrid(1.0, 1024)
    b = gen_compensated_poisson(g, 2.0, 10_000, seed=0)
    e1 = co_integrand_closed("Ntilde_T", b)
    assert co_reconstruct(functional_samples("Ntilde_T", b), e1, b).rel_l2_error <= 1e-10
    e2 = co_integrand_closed("Ntilde_T^2", b)
    np.testing.assert_array_equal(e2.values["N"], 2 * b["Nbar"][:, :-1] + 1)
    assert co_reconstruct(functional_samples("Ntilde_T^2", b), e2, b).rel_l2_error <= 0.05
    assert zero_mean_ok(e2, b)


def test_jump_integrand_needs_jump_channel(bm512):
    with pytest.raises(InvalidArgumentError, match="Nbar"):
        co_integrand_closed("Ntilde_T", bm512)


def test_levy_separable(levy512):
    est = co_levy("W_T+Ntilde_T", levy512)
    assert np.all(est.values["W"] == 1.0) and np.all(est.values["N"] == 1.0)
    F = named_functional("W_T+Ntilde_T", G512).value(levy512)
    assert co_reconstruct(F, est, levy512).rel_l2_error <= 1e-10


def test_levy_product(levy512):
    est = co_levy("W_T*Ntilde_T", levy512)
    np.testing.assert_array_equal(est.values["W"], levy512["Nbar"][:, :-1])
    np.testing.assert_array_equal(est.values["N"], levy512["W.0"][:, :-1])
    F = named_functional("W_T*Ntilde_T", G512).value(levy512)
    assert co_reconstruct(F, est, levy512).rel_l2_error <= 0.08
    assert zero_mean_ok(est, levy512)


def test_levy_pure_jump_functional_has_no_brownian_block(levy512):
    est = co_levy("Ntilde_T^2", levy512)
    assert np.all(est.values["W"] == 0.0)


def test_levy_regression_route(levy512):
    F = named_functional("W_T*Ntilde_T", G512)
    reg = co_levy(F, levy512, method="regression", degree=2)
    closed = co_levy("W_T*Ntilde_T", levy512)
    for ch in ("W", "N"):
        assert np.mean(np.abs(reg.values[ch] - closed.values[ch])) <= 0.05
    assert co_reconstruct(F.value(levy512), reg, levy512).rel_l2_error <= 0.08


def test_levy_regression_of_square_jump_functional(levy512):
    F = named_functional("Ntilde_T^2", G512)
    reg = co_levy(F, levy512, method="regression", degree=2)
    closed = co_levy("Ntilde_T^2", levy512)
    assert np.max(np.abs(reg.values["W"])) <= 1e-8
    assert np.mean(np.abs(reg.values["N"] - closed.values["N"])) <= 0.05


def test_levy_requires_both_channels(bm512):
    with pytest.raises(InvalidArgumentError, match="Nbar"):
        co_levy("W_T", bm512)


def test_levy_rejects_non_unit_marks():
    b = gen_levy(LevySpec(sigma=1.0, lam=1.0, marks=DiscreteMarks((-1.0, 1.0), (0.5, 0.5))), TimeGrid(1.0, 8), 500)
    with pytest.raises(UnsupportedConfigurationError):
        co_levy("W_T", b)


# -- Black-Scholes demo -----------------------------------------------------------


def test_bs_delta_is_price_derivative():
    # independent oracle: central finite difference of the closed-form price
    for S in (80.0, 100.0, 125.0):
        for tau in (0.1, 0.5, 1.0):
            h = 1e-4 * S
            fd = (bs_call_price(S + h, 100.0, 0.05, 0.2, tau) - bs_call_price(S - h, 100.0, 0.05, 0.2, tau)) / (2 * h)
            assert bs_delta(S, 100.0, 0.05, 0.2, tau) == pytest.approx(fd, abs=1e-6)


def test_bs_price_reference_value():
    # textbook value for S=K=100, r=5%, sigma=20%, T=1
    assert bs_call_price(100.0, 100.0, 0.05, 0.2, 1.0) == pytest.approx(10.450583572185565, rel=1e-12)


def test_zero_strike_hedge_is_exact():
    hr = replicate_bs(0.0, 0.05, 0.2, 100.0, TimeGrid(1.0, 64), 1000, seed=0)
    assert np.max(np.abs(hr.phi - 1.0)) <= 1e-10
    assert np.max(np.abs(hr.psi)) <= 1e-8
    assert hr.terminal_error <= 1e-10


def test_atm_call_hedge():
    hr = replicate_bs(100.0, 0.05, 0.2, 100.0, G512, 10_000, seed=0)
    assert hr.delta_deviation <= 0.05
    assert hr.terminal_error <= 0.05
    assert hr.C0 == pytest.approx(hr.bs_price, rel=0.01)


def test_zero_rate_uses_budget_identity():
    hr = replicate_bs(100.0, 0.0, 0.2, 100.0, TimeGrid(1.0, 128), 5000, seed=1)
    B = 1.0
    np.testing.assert_allclose(hr.V[:, :-1], hr.phi * hr.S[:, :-1] + hr.psi * B, rtol=1e-12, atol=1e-9)
    assert hr.terminal_error <= 0.1


@pytest.mark.parametrize("kw", [dict(S0=0.0), dict(S0=-5.0), dict(sigma=0.0), dict(sigma=-0.2)])
def test_hedge_rejects_bad_parameters(kw):
    args = dict(K=100.0, r=0.05, sigma=0.2, S0=100.0, grid=TimeGrid(1.0, 8), n_paths=500)
    args.update(kw)
    with pytest.raises(InvalidArgumentError):
        replicate_bs(**args)


def test_integrand_csv_layout(tmp_path, bm512):
    est = co_integrand_closed("W_T^2", bm512)
    write_integrand_csv(tmp_path / "integrand.csv", est, max_paths=2)
    rows = list(csv.reader(open(tmp_path / "integrand.csv")))
    assert rows[0] == ["t", "path_id", "channel", "value"]
    assert len(rows) == 1 + 2 * G512.M
    assert rows[1][:3] == ["0.0", "0", "W"] and float(rows[2][3]) == 2 * bm512["W.0"][0, 1]
