"""Finite-temperature EP on the full (N + M)-dimensional space.

Instead of pinning y = X_sigma w, the pair (w, y) is coupled by the energy
(beta / 2) |X_sigma w - y|^2, i.e. the Gaussian precision

    beta * E^-1 + diag(1/d),   E^-1 = [[X^T X, -X^T], [-X, I]].

Every sweep factors the whole (N + M) x (N + M) matrix, so this engine is a
reference implementation for checking the zero-temperature one rather than a
fast path. As beta grows the two engines agree.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.linalg import solve_triangular

from .core import (DesignMatrix, EPConfig, EPResult, GaussianSummary, SiteParams,
                   cholesky_lower, ep_run)
from .priors import PriorSet


@dataclass(frozen=True)
class FiniteTempConfig:
    beta: float = 1e4
    base: EPConfig = field(default_factory=EPConfig)

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")


def energy_precision(x: DesignMatrix) -> np.ndarray:
    """E^-1 = [X, -I]^T [X, -I], positive semidefinite of rank M."""
    xs = x.rows
    n, m = x.n, x.m
    out = np.empty((n + m, n + m))
    out[:n, :n] = xs.T @ xs
    out[:n, n:] = -xs.T
    out[n:, :n] = -xs
    out[n:, n:] = np.eye(m)
    return out


def ft_assemble(x: DesignMatrix, site: SiteParams, cfg: FiniteTempConfig) -> GaussianSummary:
    """Gaussian summary of exp(-beta/2 h^T E^-1 h) prod_i site_i(h_i) over N + M dims."""
    a, d = site
    prec = cfg.beta * energy_precision(x)
    prec[np.diag_indices_from(prec)] += 1.0 / d
    chol = cholesky_lower(prec)
    linv = solve_triangular(chol, np.eye(prec.shape[0]), lower=True, check_finite=False)
    sigma = linv.T @ linv
    sigma = 0.5 * (sigma + sigma.T)
    b = a / d
    mean = sigma @ b
    n = x.n
    return GaussianSummary(sigma[:n, :n], mean[:n], mean, np.diag(sigma).copy(), chol,
                           -2.0 * float(np.sum(np.log(np.diag(chol)))), float(mean @ b))


def ft_run(x: DesignMatrix, priors: PriorSet, cfg: FiniteTempConfig = FiniteTempConfig(),
           state=None, hook=None) -> EPResult:
    """EP sweeps with the finite-temperature Gaussian; site updates as at zero temperature."""
    return ep_run(x, priors, cfg.base, state=state, hook=hook,
                  assemble=partial(ft_assemble, cfg=cfg))
