"""Univariate tilted moments.

Each kernel returns the log-partition, first and second moment of

    Q(h) = psi(h) N(h; mu, sigma) / Z

for the three site measures used by the diluted perceptron. All functions are
vectorised over ``mu`` and ``sigma`` (numpy broadcasting), pure, and work in
log space so that extreme cavities (|mu| / sqrt(sigma) in the hundreds) stay
finite.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtr

from .priors import SitePrior, SpikeSlab, Theta, ThetaMixture

LOG_2PI = np.log(2.0 * np.pi)
SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)

# below this standardized mean the Mills ratio is taken from erfcx
MILLS_SWITCH = -5.0
# below this the truncated-normal mean/variance come from their asymptotic series
SERIES_SWITCH = -20.0

# lambda(a) - a and 1 - lambda(a)(lambda(a) - a) for the upper tail X > a of a
# standard normal, as power series in u = 1/a (odd / even powers respectively)
_DELTA_COEFFS = np.array([1, -2, 10, -74, 706, -8162, 110410, -1708394, 29752066,
                          -576037442, 12277827850, -285764591114, 7213364729026,
                          -196316804255522], dtype=float)
_VAR_COEFFS = np.array([1, -6, 50, -518, 6354, -89782, 1435330, -25625910, 505785122,
                        -10944711398, 257834384850, -6572585595622, 180334118225650,
                        -5300553714899094], dtype=float)


class CavityParams(NamedTuple):
    mu: np.ndarray
    sigma: np.ndarray


class MomentTriple(NamedTuple):
    """Tilted log-partition and moments.

    ``var`` is evaluated directly rather than as ``second - mean**2`` so it
    keeps full relative precision when the tilted law is much narrower than
    its mean.
    """

    log_z: np.ndarray
    mean: np.ndarray
    second: np.ndarray
    var: np.ndarray


class DegeneratePartitionError(FloatingPointError):
    """The tilted distribution has zero (or non-finite) mass."""


def _check_cavity(mu, sigma):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise ValueError("cavity parameters must be finite")
    if np.any(sigma <= 0):
        raise ValueError("cavity variance must be positive")
    mu, sigma = np.broadcast_arrays(mu, sigma)
    return np.atleast_1d(mu).astype(float), np.atleast_1d(sigma).astype(float), mu.shape


def _finish(log_z, mean, var, shape):
    var = np.maximum(var, 0.0)
    if not np.all(np.isfinite(log_z)):
        raise DegeneratePartitionError("tilted partition function is zero or not finite")
    return MomentTriple(*(np.reshape(v, shape) for v in (log_z, mean, var + mean * mean, var)))


def mills_ratio(x):
    """R(x) = phi(x) / Phi(x), stable for large negative x."""
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    lo = x < MILLS_SWITCH
    xl = x[lo]
    out[lo] = SQRT_2_OVER_PI / erfcx(-xl / np.sqrt(2.0))
    xh = x[~lo]
    out[~lo] = np.exp(-0.5 * xh * xh - 0.5 * LOG_2PI) / ndtr(xh)
    return out.reshape(shape)


def _tail_series(a):
    """(lambda(a) - a, 1 - lambda(lambda - a)) for a >= 20 by asymptotic series."""
    u2 = 1.0 / (a * a)
    delta = np.zeros_like(a)
    var = np.zeros_like(a)
    for cd, cv in zip(_DELTA_COEFFS[::-1], _VAR_COEFFS[::-1]):
        delta = delta * u2 + cd
        var = var * u2 + cv
    return delta / a, var * u2


def spike_slab_moments(mu, sigma, rho: float, lam: float) -> MomentTriple:
    """Tilted moments for the spike-and-slab prior (1-rho) delta + rho N(0, 1/lam)."""
    mu, sigma, shape = _check_cavity(mu, sigma)
    SpikeSlab(rho, lam)  # validates
    one_ls = 1.0 + lam * sigma
    m_slab = mu / one_ls
    v_slab = sigma / one_ls
    log_spike = -0.5 * (LOG_2PI + np.log(sigma)) - mu * mu / (2.0 * sigma)
    log_slab = 0.5 * (np.log(lam) - LOG_2PI - np.log(one_ls)) - lam * mu * mu / (2.0 * one_ls)

    if rho == 1.0:
        return _finish(log_slab, m_slab, v_slab, shape)
    if rho == 0.0:
        zero = np.zeros_like(mu)
        return _finish(log_spike, zero, zero, shape)

    a = np.log1p(-rho) + log_spike
    b = np.log(rho) + log_slab
    log_z = np.logaddexp(a, b)
    p_slab = np.exp(b - log_z)
    p_spike = np.exp(a - log_z)
    mean = p_slab * m_slab
    var = p_slab * v_slab + p_slab * p_spike * m_slab * m_slab
    return _finish(log_z, mean, var, shape)


def theta_moments(mu, sigma) -> MomentTriple:
    """Tilted moments for the hard constraint Theta(h)."""
    mu, sigma, shape = _check_cavity(mu, sigma)
    s = np.sqrt(sigma)
    alpha = mu / s
    log_z = log_ndtr(alpha)
    r = mills_ratio(alpha)
    mean = mu + s * r
    var = sigma * (1.0 - alpha * r - r * r)

    tail = alpha < SERIES_SWITCH
    if np.any(tail):
        delta, vt = _tail_series(-alpha[tail])
        mean = np.where(tail, 0.0, mean)
        var = np.where(tail, 0.0, var)
        mean[tail] = s[tail] * delta
        var[tail] = sigma[tail] * vt
    return _finish(log_z, mean, var, shape)


def theta_mixture_moments(mu, sigma, eta: float) -> MomentTriple:
    """Tilted moments for eta Theta(h) + (1 - eta) Theta(-h)."""
    ThetaMixture(eta)
    if eta == 1.0:
        return theta_moments(mu, sigma)
    mu, sigma, shape = _check_cavity(mu, sigma)
    s = np.sqrt(sigma)
    alpha = mu / s
    log_z = np.logaddexp(np.log(eta) + log_ndtr(alpha), np.log1p(-eta) + log_ndtr(-alpha))
    log_phi = -0.5 * alpha * alpha - 0.5 * LOG_2PI
    r = (2.0 * eta - 1.0) * np.exp(log_phi - log_z)
    mean = mu + s * r
    var = sigma * (1.0 - alpha * r - r * r)
    return _finish(log_z, mean, var, shape)


def tilted_moments(prior: SitePrior, mu, sigma) -> MomentTriple:
    """Dispatch on the site measure."""
    if isinstance(prior, SpikeSlab):
        return spike_slab_moments(mu, sigma, prior.rho, prior.lam)
    if isinstance(prior, ThetaMixture):
        return theta_mixture_moments(mu, sigma, prior.eta)
    if isinstance(prior, Theta):
        return theta_moments(mu, sigma)
    raise TypeError(f"unknown site prior {prior!r}")
