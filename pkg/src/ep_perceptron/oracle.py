"""Brute-force references used to validate the EP machinery.

None of these routines share code paths with the closed-form kernels: tilted
moments come from adaptive quadrature, small posteriors from importance
sampling of the exact prior, gradients from central differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import warnings

import numpy as np
from scipy import integrate
from scipy.optimize import minimize_scalar

from .priors import PriorSet, SitePrior, SpikeSlab, Theta, ThetaMixture
from .tilted import MomentTriple

MAX_MC_DIM = 8


class QuadratureError(ArithmeticError):
    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class OracleSampleError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-13
    rel_tol: float = 1e-12
    max_subdivisions: int = 500
    window: float = 40.0  # half-width of the integration window in local scale units

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("quadrature tolerances must be positive")


def _log_gauss(h, mu, var):
    return -0.5 * np.log(2 * np.pi * var) - (h - mu) ** 2 / (2 * var)


def _piece(logf, mode, scale, lo, hi, spec):
    """Integrate exp(logf) over [lo, hi] around ``mode``.

    Returns (log mass, mean, variance) of the restricted measure. Moments are
    taken about the mode so that narrow, off-centre pieces keep precision.
    """
    ref = logf(mode)
    a = mode - spec.window * scale if lo is None else max(lo, mode - spec.window * scale)
    b = mode + spec.window * scale if hi is None else min(hi, mode + spec.window * scale)
    out = []
    for k in range(3):
        def f(h, k=k):
            return np.exp(logf(h) - ref) * (h - mode) ** k
        # absolute tolerance relative to the natural size i0 * scale**k of moment k
        tol = spec.abs_tol * (out[0] if out else scale) * scale ** k
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(f, a, b, points=[mode] if a < mode < b else None,
                                      epsabs=tol, epsrel=spec.rel_tol,
                                      limit=spec.max_subdivisions)
        if not np.isfinite(val) or err > 100 * max(tol, spec.rel_tol * abs(val)):
            raise QuadratureError(f"quadrature tolerance not reached (moment {k}: "
                                  f"{val!r} +/- {err!r})", estimate=val)
        out.append(val)
    i0, i1, i2 = out
    m1 = i1 / i0
    return ref + np.log(i0), mode + m1, max(i2 / i0 - m1 * m1, 0.0)


def _combine(pieces):
    """Law of total variance over (log mass, mean, var) pieces."""
    logw = np.array([p[0] for p in pieces])
    top = logw.max()
    log_z = top + np.log(np.sum(np.exp(logw - top)))
    w = np.exp(logw - log_z)
    means = np.array([p[1] for p in pieces])
    vars_ = np.array([p[2] for p in pieces])
    mean = float(np.sum(w * means))
    var = float(np.sum(w * vars_) + np.sum(w * (means - mean) ** 2))
    return MomentTriple(float(log_z), mean, var + mean * mean, var)


def _local_scale(logf, h, step):
    """min(curvature width, inverse slope) of logf at h, by finite differences."""
    g2 = (logf(h + step) - 2 * logf(h) + logf(h - step)) / step ** 2
    g1 = (logf(h + step) - logf(h - step)) / (2 * step)
    scale = 1.0 / np.sqrt(max(-g2, 1e-300))
    if abs(g1) > 0:
        scale = min(scale, 1.0 / abs(g1))
    return scale


def _half_line(mu, sigma, sign, spec):
    """Gaussian cavity restricted to sign*h >= 0, as a piece."""
    m = sign * mu  # mirror so the support is always h >= 0
    def logf(h):
        return _log_gauss(h, m, sigma)
    mode = max(m, 0.0)
    scale = _local_scale(logf, mode, 1e-4 * np.sqrt(sigma))
    log_mass, mean, var = _piece(logf, mode, scale, 0.0, None, spec)
    return log_mass, sign * mean, var


def quad_moments(prior: SitePrior, mu: float, sigma: float,
                 spec: QuadratureSpec = QuadratureSpec()) -> MomentTriple:
    """Tilted moments of psi(h) N(h; mu, sigma) by adaptive quadrature."""
    mu = float(mu)
    sigma = float(sigma)
    if isinstance(prior, SpikeSlab):
        pieces = []
        if prior.rho < 1:
            pieces.append((np.log1p(-prior.rho) + _log_gauss(0.0, mu, sigma), 0.0, 0.0))
        if prior.rho > 0:
            def logf(h):
                return np.log(prior.rho) + _log_gauss(h, 0.0, 1 / prior.lam) + _log_gauss(h, mu, sigma)
            lo, hi = min(0.0, mu), max(0.0, mu)
            if hi > lo:
                res = minimize_scalar(lambda h: -logf(h), bounds=(lo, hi), method="bounded",
                                      options={"xatol": 1e-14 * max(1.0, hi - lo)})
                mode = float(res.x)
            else:
                mode = lo
            step = 1e-4 * min(np.sqrt(sigma), 1 / np.sqrt(prior.lam))
            scale = _local_scale(logf, mode, step)
            pieces.append(_piece(logf, mode, scale, None, None, spec))
        return _combine(pieces)
    if isinstance(prior, Theta):
        return _combine([_half_line(mu, sigma, +1, spec)])
    if isinstance(prior, ThetaMixture):
        pieces = []
        pos = _half_line(mu, sigma, +1, spec)
        pieces.append((pos[0] + np.log(prior.eta), pos[1], pos[2]))
        if prior.eta < 1:
            neg = _half_line(mu, sigma, -1, spec)
            pieces.append((neg[0] + np.log1p(-prior.eta), neg[1], neg[2]))
        return _combine(pieces)
    raise TypeError(f"unknown site prior {prior!r}")


@dataclass
class MCPosterior:
    mean: np.ndarray
    se: np.ndarray
    ess: float
    n_samples: int


def mc_posterior(x_sigma: np.ndarray, priors: PriorSet, n_samples: int = 200_000,
                 rng=None, batch: int = 100_000, min_ess: float = 100.0,
                 labels=None) -> MCPosterior:
    """Self-normalised importance sampling of the exact weight posterior.

    Proposals come from the spike-and-slab prior; each draw is weighted by the
    product of the label measures evaluated at ``x_sigma @ w``.

    The spike makes w = 0 an event of positive probability, and there every
    signed field is exactly 0. With sign(0) = +1 such a field agrees with a
    +1 label and contradicts a -1 label, so pass ``labels`` to score it
    correctly; without them a zero field counts as satisfied for every row.
    """
    x_sigma = np.atleast_2d(np.asarray(x_sigma, dtype=float))
    m, n = x_sigma.shape
    if n > MAX_MC_DIM or m > MAX_MC_DIM:
        raise ValueError(f"mc_posterior is capped at N, M <= {MAX_MC_DIM}, got N={n}, M={m}")
    if n_samples < 100_000:
        raise ValueError("mc_posterior needs at least 1e5 samples")
    rng = np.random.default_rng(rng)
    rho, lam = priors.weight.rho, priors.weight.lam
    eta = priors.eta
    neg = np.zeros(m, dtype=bool) if labels is None else np.asarray(labels) < 0

    sw = 0.0
    sw2 = 0.0
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    chunks = []
    done = 0
    while done < n_samples:
        b = min(batch, n_samples - done)
        w = rng.standard_normal((b, n)) / np.sqrt(lam)
        w *= rng.random((b, n)) < rho
        if m:
            y = w @ x_sigma.T
            n_bad = np.sum((y < 0) | ((y == 0) & neg), axis=1)
            if eta == 1.0:
                wt = (n_bad == 0).astype(float)
            else:
                wt = eta ** (m - n_bad) * (1 - eta) ** n_bad
                wt /= eta ** m
        else:
            wt = np.ones(b)
        sw += wt.sum()
        sw2 += np.sum(wt * wt)
        s1 += wt @ w
        s2 += wt @ (w * w)
        chunks.append((wt, w))
        done += b
    if sw == 0:
        raise OracleSampleError("no sample satisfied the constraints; increase n_samples")
    ess = sw * sw / sw2
    if ess < min_ess:
        raise OracleSampleError(f"effective sample size {ess:.1f} < {min_ess}; increase n_samples")
    mean = s1 / sw
    # delta-method standard error of the ratio estimator
    acc = np.zeros(n)
    for wt, w in chunks:
        acc += (wt * wt) @ ((w - mean) ** 2)
    se = np.sqrt(acc) / sw
    return MCPosterior(mean, se, float(ess), int(n_samples))


def fd_gradient(f, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
