"""EP free energy and online maximum-likelihood learning of prior parameters.

The free energy is

    F = -log Z_EP,
    log Z_EP = log Z_Q + sum_k [log Z_k - log Z_k^site],

with Z_Q the mass of the unnormalised Gaussian approximation, Z_k the tilted
partition of site k (normalised cavity times exact measure) and Z_k^site the
same integral with the Gaussian site in place of the exact measure. Its
derivatives with respect to site parameters vanish at an EP fixed point, so the
gradient in a prior parameter reduces to the explicit dependence of the Z_k.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import erf

from .core import (DesignMatrix, EPConfig, EPResult, GaussianSummary, IterationResult,
                   SiteParams, assemble_weight_precision, cavity_from_marginal, ep_run,
                   site_tilted_moments)
from .priors import PriorSet, SpikeSlab, ThetaMixture
from .tilted import LOG_2PI

RHO_BOUNDS = (1e-4, 1 - 1e-4)
ETA_BOUNDS = (0.5 + 1e-6, 1 - 1e-6)


@dataclass(frozen=True)
class HyperParams:
    rho: float
    lam: float = 1.0
    eta: float = 1.0
    lr_rho: float = 1e-5
    lr_eta: float = 1e-5

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0.5 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0.5, 1], got {self.eta}")
        if self.lr_rho <= 0 or self.lr_eta <= 0:
            raise ValueError("learning rates must be positive")

    @classmethod
    def from_priors(cls, priors: PriorSet, lr_rho: float = 1e-5, lr_eta: float = 1e-5):
        return cls(priors.weight.rho, priors.weight.lam, priors.eta, lr_rho, lr_eta)

    def priors(self, noisy: bool) -> PriorSet:
        w = SpikeSlab(self.rho, self.lam)
        return PriorSet(w, ThetaMixture(self.eta)) if noisy else PriorSet(w)


@dataclass
class FreeEnergyReport:
    """``f_ep`` = -log Z_EP; ``site_terms`` are the normalised tilted log-partitions
    log Z_k; ``log_det_term`` is log det of the approximate covariance (weight
    block at zero temperature); ``log_z_q`` the log-mass of the Gaussian
    approximation itself."""

    f_ep: float
    site_terms: np.ndarray
    log_det_term: float
    log_z_q: float


def ep_free_energy(x: DesignMatrix, site: SiteParams, priors: PriorSet,
                   assemble=assemble_weight_precision, var_floor: float = 1e-12
                   ) -> FreeEnergyReport:
    """Free energy of the EP approximation defined by ``site`` (meaningful at a fixed point)."""
    g: GaussianSummary = assemble(x, site)
    cav = cavity_from_marginal(g, site, var_floor)
    tilted = site_tilted_moments(priors, x.n, cav.cav_mean, cav.cav_var)
    a, d = site
    dim = g.chol.shape[0]
    log_z_q = 0.5 * (dim * LOG_2PI + g.log_det + g.quad - np.sum(a * a / d))
    s = cav.cav_var
    mu = cav.cav_mean
    r = a / d
    # -log Z_k^site - a^2 / (2d), regrouped so nearly flat sites (d ~ d_max,
    # a ~ d * shift) do not cancel two huge numbers
    site_corr = 0.5 * np.log1p(s / d) + (mu * mu - 2 * mu * r * d - r * r * d * s) / (2 * (d + s))
    log_z_ep = (0.5 * (dim * LOG_2PI + g.log_det + g.quad)
                + np.sum(tilted.log_z + site_corr))
    return FreeEnergyReport(float(-log_z_ep), tilted.log_z, float(g.log_det), float(log_z_q))


def rho_objective(cav_mu, cav_var, rho: float, lam: float) -> float:
    """-sum_k log Z_k(rho) over the weight block at fixed cavities."""
    from .tilted import spike_slab_moments
    return float(-np.sum(spike_slab_moments(cav_mu, cav_var, rho, lam).log_z))


def eta_objective(cav_mu, cav_var, eta: float) -> float:
    from .tilted import theta_mixture_moments
    return float(-np.sum(theta_mixture_moments(cav_mu, cav_var, eta).log_z))


def grad_rho(cav_mu, cav_var, rho: float, lam: float) -> float:
    """dF/drho = sum_k (N_spike - N_slab) / Z_k with slab precision ``lam``."""
    cav_mu = np.asarray(cav_mu, dtype=float)
    cav_var = np.asarray(cav_var, dtype=float)
    one_ls = 1.0 + lam * cav_var
    log_spike = -0.5 * (LOG_2PI + np.log(cav_var)) - cav_mu ** 2 / (2 * cav_var)
    log_slab = 0.5 * (np.log(lam) - LOG_2PI - np.log(one_ls)) - lam * cav_mu ** 2 / (2 * one_ls)
    log_z = np.logaddexp(np.log1p(-rho) + log_spike, np.log(rho) + log_slab)
    return float(np.sum(np.exp(log_spike - log_z) - np.exp(log_slab - log_z)))


def grad_eta(cav_mu, cav_var, eta: float) -> float:
    """dF/deta = sum_k -2 erf(mu_k / sqrt(2 Sigma_k)) / (1 + (2 eta - 1) erf(...))."""
    e = erf(np.asarray(cav_mu, dtype=float) / np.sqrt(2 * np.asarray(cav_var, dtype=float)))
    denom = np.maximum(1.0 + (2 * eta - 1) * e, 1e-300)
    return float(np.sum(-2.0 * e / denom))


def hyper_step(hyper: HyperParams, g_rho: float = 0.0, g_eta: float = 0.0) -> HyperParams:
    """One projected gradient-descent step on (rho, eta)."""
    if not (np.isfinite(g_rho) and np.isfinite(g_eta)):
        raise FloatingPointError("non-finite hyperparameter gradient")
    rho = float(np.clip(hyper.rho - hyper.lr_rho * g_rho, *RHO_BOUNDS))
    eta = hyper.eta
    if g_eta != 0.0:
        eta = float(np.clip(hyper.eta - hyper.lr_eta * g_eta, *ETA_BOUNDS))
    return replace(hyper, rho=rho, eta=eta)


class HyperLearner:
    """EP-run hook alternating one sweep with one gradient step on the priors.

    ``trajectory`` collects (iteration, rho, eta, F) rows; F is only
    evaluated when ``track_free_energy`` is set (it costs an extra factorisation).
    """

    def __init__(self, x: DesignMatrix, learn_rho: bool = True, learn_eta: bool = False,
                 lr_rho: float = 1e-5, lr_eta: float = 1e-5, track_free_energy: bool = False,
                 record_every: int = 1, tol: float = 1e-4):
        self.x = x
        self.learn_rho = learn_rho
        self.learn_eta = learn_eta
        self.lr_rho = lr_rho
        self.lr_eta = lr_eta
        self.track_free_energy = track_free_energy
        self.record_every = record_every
        self.trajectory: list = []
        self.settled = False
        self.tol = tol

    def __call__(self, t: int, it: IterationResult, priors: PriorSet) -> Optional[PriorSet]:
        n = self.x.n
        hyper = HyperParams.from_priors(priors, self.lr_rho, self.lr_eta)
        g_rho = g_eta = 0.0
        if self.learn_rho:
            g_rho = grad_rho(it.cavity.cav_mean[:n], it.cavity.cav_var[:n], hyper.rho, hyper.lam)
        if self.learn_eta:
            g_eta = grad_eta(it.cavity.cav_mean[n:], it.cavity.cav_var[n:], hyper.eta)
        new = hyper_step(hyper, g_rho, g_eta)
        self.settled = max(abs(new.rho - hyper.rho), abs(new.eta - hyper.eta)) < self.tol
        noisy = self.learn_eta or isinstance(priors.label, ThetaMixture)
        out = new.priors(noisy)
        if t % self.record_every == 0:
            f = np.nan
            if self.track_free_energy:
                f = ep_free_energy(self.x, it.site, out).f_ep
            self.trajectory.append([t, new.rho, new.eta, f])
        return out


def ep_run_learning(x: DesignMatrix, priors: PriorSet, cfg: EPConfig = EPConfig(),
                    learn_rho: bool = True, learn_eta: bool = False, lr_rho: float = 1e-5,
                    lr_eta: float = 1e-5, track_free_energy: bool = False,
                    record_every: int = 1, state=None) -> EPResult:
    """EP with online gradient descent of the free energy in rho and/or eta."""
    if learn_eta and not isinstance(priors.label, ThetaMixture):
        raise ValueError("learning eta needs a theta-mixture label prior (give an initial eta)")
    hook = HyperLearner(x, learn_rho, learn_eta, lr_rho, lr_eta, track_free_energy, record_every,
                        tol=cfg.eps_stop)
    return ep_run(x, priors, cfg, state=state, hook=hook)
