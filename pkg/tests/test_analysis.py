import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coloredshe import analysis as A
from coloredshe.exceptions import DomainError, FitError
from coloredshe.kernel import RieszKernel
from coloredshe.noise import convolution_covariance
from coloredshe.rng import RngSpec
from coloredshe.smallball import make_grid
from coloredshe.solver import sample_constant_sigma


def zero_kernel(n=32):
    return RieszKernel(0.5, np.zeros(n + 1), riesz=False)


# ---- variance and covariance of N -----------------------------------------------

def test_zero_kernel_variance():
    assert A.variance_of_N(zero_kernel(), 0.01) == 0.0


def test_small_time_expansion(kernel_small):
    k = RieszKernel(0.5, kernel_small.q, riesz=False)
    t = 1e-9
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", A.TruncationWarning)
        assert A.variance_of_N(k, t) / t == pytest.approx(k.q.sum(), rel=1e-3)


def test_small_time_closed_form(kernel_4096):
    # continuum limit: Var = 2^-g E|Z|^-g t^(1 - g/2) / (1 - g/2), Z standard normal
    from scipy import special
    g, t = 0.5, 1e-6
    moment = 2 ** (-g / 2) * special.gamma((1 - g) / 2) / math.sqrt(math.pi)
    oracle = 2**-g * moment * t ** (1 - g / 2) / (1 - g / 2)
    assert A.variance_of_N(kernel_4096, t) == pytest.approx(oracle, rel=1e-6)


def test_series_matches_truncated_closed_form(kernel_small):
    k = RieszKernel(0.5, kernel_small.q, riesz=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", A.TruncationWarning)
        assert A.variance_of_N(k, 0.01) == pytest.approx(convolution_covariance(k, 0.01, 0.0), rel=1e-12)


def test_truncation_warning_for_short_tables():
    k = RieszKernel(0.5, np.ones(5), riesz=False)
    with pytest.warns(A.TruncationWarning):
        A.variance_of_N(k, 0.1)


def test_lag_zero_is_variance(kernel_4096):
    assert A.covariance_of_N(kernel_4096, 1e-3, 0) == pytest.approx(A.variance_of_N(kernel_4096, 1e-3), rel=1e-12)
    lags = A.covariance_of_N(kernel_4096, 1e-3, [0, 1e-6])
    assert lags[1] == pytest.approx(lags[0], rel=1e-3)


def test_monte_carlo_agreement(kernel_4096):
    t1, R = 1e-3, 10_000
    u = sample_constant_sigma(kernel_4096, 1.0, t1, t1, 0.25, RngSpec(21), R)[:, -1]
    var = A.variance_of_N(kernel_4096, t1)
    assert abs(u[:, 3].var() - var) < 3 * var * math.sqrt(2 / R)
    prod = u[:, 3] * u[:, 4]
    cov = A.covariance_of_N(kernel_4096, t1, 1, epsilon=0.5)
    assert abs(prod.mean() - cov) < 3 * prod.std() / math.sqrt(R)


def test_variance_slope(kernel_4096):
    slope, ts, var = A.variance_slope(kernel_4096)
    assert abs(slope - 0.75) <= 0.05
    assert np.all(np.diff(var) > 0)


def test_covariance_decay(kernel_4096):
    rep = A.covariance_decay(kernel_4096, 1e-6, np.logspace(math.log10(0.005), math.log10(0.5), 9))
    assert abs(rep.slope + 0.5) <= 0.1
    assert rep.C8 > 0


def test_time_domain():
    with pytest.raises(DomainError):
        A.variance_of_N(zero_kernel(), 0.0)


# ---- conditioning coefficients ----------------------------------------------------

def test_diagonal_sigma_gives_zero_eta():
    E = A.conditioning_coefficients(np.diag([1.0, 2.0, 3.0, 0.5]))
    assert np.all(E == 0)


@settings(max_examples=30, deadline=None)
@given(rho=st.floats(-0.99, 0.99))
def test_two_points(rho):
    E = A.conditioning_coefficients(np.array([[1.0, rho], [rho, 1.0]]))
    assert E[1, 0] == pytest.approx(rho)
    assert abs(E[1, 0]) <= 1


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 8))
def test_coefficients_match_direct_solves(seed, n):
    gen = np.random.default_rng(seed)
    B = gen.standard_normal((n, n))
    S = B @ B.T + n * np.eye(n)
    E = A.conditioning_coefficients(S)
    for p in range(1, n):
        np.testing.assert_allclose(E[p, :p], np.linalg.solve(S[:p, :p], S[:p, p]), rtol=1e-9, atol=1e-12)


def test_eta_report_structure(kernel_small):
    g = make_grid(0.5, 0.5, 1e-3)
    rep = A.eta_report(kernel_small, g)
    M = g.distinct_indices.size
    assert rep.Sigma.shape == (M, M)
    np.testing.assert_allclose(rep.Sigma, rep.Sigma.T)
    assert rep.min_eigenvalue > 0
    assert len(rep.eta) == M and rep.eta[0].size == 0
    assert rep.implication_holds()


def test_rank_deficient_sigma_uses_ridge():
    k = RieszKernel(0.5, np.r_[2.0, np.zeros(8)], riesz=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", A.TruncationWarning)
        rep = A.eta_report(k, make_grid(0.5, 0.5, 1.0))
    assert rep.ridge > 0


def test_eta_sweep_monotone(kernel_small):
    sweep = A.eta_sweep(kernel_small, 0.5, np.logspace(-4, 1, 6))
    assert sweep.monotone and sweep.implication_holds
    assert np.all(np.diff(sweep.norm_11) > 0)


# ---- regularity --------------------------------------------------------------------

def test_lag_zero_msq(kernel_small):
    assert A.regularity_exact(kernel_small, "space", 0.5, [0.0])[0] == 0.0
    assert A.regularity_exact(kernel_small, "time", 0.5, [0.0])[0] == 0.0


def test_regularity_mc_matches_exact(kernel_small):
    lags = np.logspace(-2, -0.3, 6)
    rep = A.regularity_scan(kernel_small, "space", 1.0, lags, 4000, RngSpec(22))
    assert np.all(np.abs(rep.msq - rep.exact) < 4 * rep.msq_se)
    rep = A.regularity_scan(kernel_small, "time", 0.1, np.logspace(-4, -2, 6), 4000, RngSpec(23))
    assert np.all(np.abs(rep.msq - rep.exact) < 4 * rep.msq_se)


def test_regularity_inputs(kernel_small):
    with pytest.raises(DomainError):
        A.regularity_scan(kernel_small, "space", 1.0, [0.01, 0.1], 100, 0)
    with pytest.raises(DomainError):
        A.regularity_scan(kernel_small, "diagonal", 1.0, [0.001, 0.1], 100, 0)
    rep = A.regularity_scan(kernel_small, "space", 1.0, np.logspace(-3, -1, 6), 3, 0)
    assert rep.inconclusive and not rep.passes


# ---- tails --------------------------------------------------------------------------

def test_increment_tail_gaussian_reference(kernel_small):
    pair = ((0.5, 0.0), (0.5, 0.1))
    sd = math.sqrt(A.regularity_exact(kernel_small, "space", 0.5, [0.1])[0])
    R = 20_000
    rep = A.increment_tail_check(kernel_small, pair, sd * np.array([0.0, 1.0, 1.5, 2.0, 2.5]), R, RngSpec(24))
    assert rep.freq[0] == 1.0
    p = 0.0455
    assert abs(rep.freq[3] - p) < 3 * math.sqrt(p * (1 - p) / R)
    assert rep.passes


def test_sup_tail_large_lambda(kernel_small):
    rep = A.sup_tail_check(kernel_small, 1.0, 0.3, trials=2000, rng=RngSpec(25), modes=256,
                           lambdas=np.r_[np.linspace(0.2, 1.5, 8), 50.0])
    assert rep.freq[-1] == 0 and rep.one_sided[-1]
    assert rep.pointwise_dominated and rep.below_envelope


@pytest.mark.slow
def test_beta_quadrupling_ratio(kernel_4096):
    ratio, expected, first, second = A.beta_doubling_ratio(kernel_4096, 1.0, 0.3, 10_000, RngSpec(29),
                                                           factor=4.0)
    assert expected == pytest.approx(4**-0.75)
    assert abs(ratio / expected - 1) <= 0.2
    assert first.passes and second.passes


def test_envelope_needs_exceedances():
    with pytest.raises(FitError):
        A._fit_envelope(np.array([1.0, 2.0]), np.array([5, 0]), 100)


# ---- heat kernel integrals ---------------------------------------------------------

def test_integrals_vanish_at_equal_points():
    assert A.heat_space_integral(0.3, 0.0) == 0.0
    assert A.heat_time_integral(0.3, 0.7, 0.7) == 0.0


@pytest.mark.parametrize("u,d", [(1e-4, 0.01), (0.01, 0.3), (0.5, 0.8)])
def test_inner_integral_closed_form(u, d):
    assert A._space_inner(u, d) == pytest.approx(A.wrapped_normal_l1(u, d), abs=1e-9)


@pytest.mark.slow
def test_space_integral_holder():
    rep = A.holder_quadrature(0.3, 0.5, np.logspace(-3, -1, 5), "space")
    assert rep.passes and rep.slope >= 0.5


@pytest.mark.slow
def test_time_integral_holder():
    rep = A.holder_quadrature(0.3, 0.2, np.logspace(-3, -1, 4), "time")
    assert rep.passes and rep.slope >= 0.2


def test_quadrature_domain():
    with pytest.raises(DomainError):
        A.holder_quadrature(0.3, 0.7, [0.1], "space")
    with pytest.raises(DomainError):
        A.holder_quadrature(0.3, 0.2, [0.1], "diagonal")


# ---- Gaussian correlation -----------------------------------------------------------

def test_correlation_independent_equality():
    K = np.array([1.0, np.inf, 1.5, np.inf])
    L = np.array([np.inf, 0.7, np.inf, 1.2])
    rep = A.gaussian_correlation_spotcheck(4, np.eye(4), K, L, 40_000, RngSpec(26))
    assert abs(rep.margin) < 3.5 * rep.se


def test_correlation_same_box():
    gen = np.random.default_rng(27)
    cov, K, _ = A.random_box_pair(5, gen)
    rep = A.gaussian_correlation_spotcheck(5, cov, K, K, 5000, RngSpec(28))
    assert rep.mu_KL == rep.mu_K
    assert rep.mu_KL >= rep.mu_K**2


def test_correlation_validation():
    with pytest.raises(DomainError):
        A.gaussian_correlation_spotcheck(3, np.eye(2), 1.0, 1.0, 10, 0)
    with pytest.raises(DomainError):
        A.gaussian_correlation_spotcheck(2, np.eye(2), [1.0, 0.0], 1.0, 10, 0)
