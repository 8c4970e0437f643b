import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ep_perceptron.oracle import quad_moments
from ep_perceptron.priors import SpikeSlab, Theta, ThetaMixture
from ep_perceptron.tilted import (MILLS_SWITCH, DegeneratePartitionError, mills_ratio,
                                  spike_slab_moments, theta_mixture_moments, theta_moments,
                                  tilted_moments)

mp.mp.dps = 60


def mp_theta(mu, sigma):
    """Truncated-normal moments at 60 digits: (log Z, mean, var)."""
    mu, sigma = mp.mpf(mu), mp.mpf(sigma)
    s = mp.sqrt(sigma)
    a = mu / s
    z = mp.ncdf(a)
    r = mp.npdf(a) / z
    return float(mp.log1p(-mp.ncdf(-a))), float(mu + s * r), float(sigma * (1 - a * r - r * r))


def close(got, ref, rel, floor=0.0):
    return abs(got - ref) <= rel * abs(ref) + floor


# ---------------------------------------------------------------- spike and slab

def test_spike_slab_pure_slab_is_gaussian_product():
    m = spike_slab_moments(1.0, 1.0, 1.0, 1.0)
    assert m.mean == pytest.approx(0.5, abs=1e-15)
    assert m.second == pytest.approx(0.75, abs=1e-15)


def test_spike_slab_pure_spike():
    m = spike_slab_moments(0.7, 2.0, 0.0, 1.0)
    assert m.mean == 0.0 and m.second == 0.0


def test_spike_slab_matches_quadrature_example():
    got = spike_slab_moments(0.3, 0.5, 0.25, 1.0)
    ref = quad_moments(SpikeSlab(0.25, 1.0), 0.3, 0.5)
    assert close(float(got.mean), float(ref.mean), 1e-10)
    assert close(float(got.second), float(ref.second), 1e-10)
    assert close(float(got.log_z), float(ref.log_z), 1e-10)


def test_spike_slab_closed_form_partition():
    mu, s, rho, lam = 0.4, 0.7, 0.3, 2.0
    spike = np.exp(-mu ** 2 / (2 * s)) / np.sqrt(2 * np.pi * s)
    slab = np.sqrt(lam / (2 * np.pi * (1 + lam * s))) * np.exp(-lam * mu ** 2 / (2 * (1 + lam * s)))
    z = (1 - rho) * spike + rho * slab
    got = spike_slab_moments(mu, s, rho, lam)
    assert float(got.log_z) == pytest.approx(np.log(z), rel=1e-14)


def test_spike_slab_rho_one_reduction_exact():
    mu = np.linspace(-5, 5, 11)
    s = np.full_like(mu, 0.3)
    lam = 4.0
    got = spike_slab_moments(mu, s, 1.0, lam)
    np.testing.assert_allclose(got.mean, mu / (1 + lam * s), rtol=1e-12)
    np.testing.assert_allclose(got.var, s / (1 + lam * s), rtol=1e-12)


def test_spike_slab_log_space_survives_extreme_cavity():
    m = spike_slab_moments(500.0, 1e-3, 0.25, 1.0)
    assert np.isfinite(m.log_z) and np.isfinite(m.mean)
    assert float(m.mean) == pytest.approx(500.0 / (1 + 1e-3), rel=1e-12)


# ---------------------------------------------------------------------- theta

def test_theta_half_normal():
    m = theta_moments(0.0, 1.0)
    assert float(m.mean) == pytest.approx(np.sqrt(2 / np.pi), rel=1e-14)
    assert float(m.second) == pytest.approx(1.0, rel=1e-14)


def test_theta_inactive_constraint():
    m = theta_moments(10.0, 1.0)
    assert 10.0 <= float(m.mean) <= 10.0 + 1e-20
    assert abs(float(m.var) - 1.0) < 1e-6


def test_theta_quadrature_example():
    got = theta_moments(-2.0, 0.5)
    ref = quad_moments(Theta(), -2.0, 0.5)
    assert close(float(got.mean), float(ref.mean), 1e-10)
    assert close(float(got.second), float(ref.second), 1e-10)


@pytest.mark.parametrize("alpha", [-37.0, -30.0, -20.5, -19.5, -8.0, -5.0001, -4.9999, -1.0,
                                   0.0, 3.0, 37.0])
@pytest.mark.parametrize("sigma", [1e-4, 1.0, 1e4])
def test_theta_against_high_precision(alpha, sigma):
    mu = alpha * np.sqrt(sigma)
    log_z, mean, var = mp_theta(mu, sigma)
    got = theta_moments(mu, sigma)
    assert close(float(got.log_z), log_z, 1e-12, 1e-300)
    assert close(float(got.mean), mean, 1e-10, 1e-12 * np.sqrt(sigma))
    assert close(float(got.var), var, 1e-8, 1e-300)
    assert float(got.var) >= 0.0


def test_mills_ratio_crossover_continuous():
    x = np.array([MILLS_SWITCH - 1e-12, MILLS_SWITCH + 1e-12])
    r = mills_ratio(x)
    assert abs(r[0] - r[1]) <= 1e-10 * r[0]


def test_mills_ratio_accepts_scalars():
    r = mills_ratio(0.0)
    assert np.ndim(r) == 0
    assert float(r) == pytest.approx(2 * np.exp(-0.5 * np.log(2 * np.pi)), rel=1e-15)


@given(st.floats(-30, 30), st.floats(-30, 30), st.floats(1e-3, 1e3))
def test_theta_mean_monotone_in_mu(a, b, sigma):
    if a == b:
        return
    lo, hi = sorted((a, b))
    m = theta_moments(np.array([lo, hi]), sigma).mean
    if hi - lo > 1e-9 * max(1.0, abs(hi)):
        assert m[1] > m[0]


# -------------------------------------------------------------- theta mixture

def test_mixture_eta_one_is_theta():
    m = theta_mixture_moments(0.0, 1.0, 1.0)
    assert float(m.mean) == pytest.approx(np.sqrt(2 / np.pi), rel=1e-14)


def test_mixture_half_returns_cavity():
    m = theta_mixture_moments(0.3, 2.0, 0.5)
    assert float(m.mean) == pytest.approx(0.3, rel=1e-14)
    assert float(m.second) == pytest.approx(2.09, rel=1e-14)


def test_mixture_quadrature_example():
    got = theta_mixture_moments(-1.0, 2.0, 0.95)
    ref = quad_moments(ThetaMixture(0.95), -1.0, 2.0)
    assert close(float(got.mean), float(ref.mean), 1e-10)
    assert close(float(got.second), float(ref.second), 1e-10)


def test_mixture_closed_form_mean():
    from scipy.special import erfc
    mu, s, eta = 0.4, 1.7, 0.8
    corr = np.sqrt(2 * s / np.pi) * (2 * eta - 1) * np.exp(-mu ** 2 / (2 * s)) / (
        eta * erfc(-mu / np.sqrt(2 * s)) + (1 - eta) * erfc(mu / np.sqrt(2 * s)))
    m = theta_mixture_moments(mu, s, eta)
    assert float(m.mean) == pytest.approx(mu + corr, rel=1e-13)
    assert float(m.second) == pytest.approx(mu ** 2 + s + mu * corr, rel=1e-13)


@given(st.floats(-40, 40), st.floats(1e-4, 1e4))
def test_reduction_chain_mixture_to_theta(alpha, sigma):
    mu = alpha * np.sqrt(sigma)
    a = theta_mixture_moments(mu, sigma, 1.0)
    b = theta_moments(mu, sigma)
    for x, y in zip(a, b):
        assert close(float(x), float(y), 1e-12, 1e-300)


# ------------------------------------------------------------------ properties

priors = st.one_of(
    st.builds(SpikeSlab, st.sampled_from([0.0, 0.1, 0.25, 0.5, 1.0]),
              st.sampled_from([1e-2, 1.0, 1e4])),
    st.just(Theta()),
    st.builds(ThetaMixture, st.sampled_from([0.5, 0.8, 0.95, 1.0])),
)


@settings(max_examples=200)
@given(priors, st.floats(-37, 37), st.floats(1e-4, 1e4))
def test_variance_nonnegative(prior, alpha, sigma):
    mu = alpha * np.sqrt(sigma)
    m = tilted_moments(prior, mu, sigma)
    assert np.isfinite(m.log_z) and np.isfinite(m.mean) and np.isfinite(m.second)
    assert float(m.var) >= 0.0
    assert float(m.second) >= float(m.mean) ** 2 * (1 - 1e-12)


@settings(max_examples=60, deadline=None)
@given(priors, st.floats(-8, 8), st.floats(-4, 4))
def test_random_points_match_quadrature(prior, mu, log_sigma):
    sigma = 10.0 ** log_sigma
    got = tilted_moments(prior, mu, sigma)
    ref = quad_moments(prior, mu, sigma)
    assert close(float(got.mean), float(ref.mean), 1e-8, 1e-10)
    assert close(float(got.var), float(ref.var), 1e-8, 1e-10)


def test_vectorised_matches_scalar():
    mu = np.array([-3.0, 0.0, 2.5])
    s = np.array([0.5, 1.0, 4.0])
    vec = theta_mixture_moments(mu, s, 0.9)
    for i in range(3):
        sc = theta_mixture_moments(mu[i], s[i], 0.9)
        assert float(sc.mean) == vec.mean[i]


@pytest.mark.parametrize("mu,sigma", [(np.nan, 1.0), (0.0, 0.0), (0.0, -1.0), (np.inf, 1.0)])
def test_invalid_cavity_rejected(mu, sigma):
    with pytest.raises(ValueError):
        theta_moments(mu, sigma)


def test_prior_validation():
    with pytest.raises(ValueError):
        SpikeSlab(1.5, 1.0)
    with pytest.raises(ValueError):
        SpikeSlab(0.5, 0.0)
    with pytest.raises(ValueError):
        ThetaMixture(0.3)


def test_degenerate_partition_is_distinct_error():
    assert issubclass(DegeneratePartitionError, FloatingPointError)
