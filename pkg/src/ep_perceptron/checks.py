"""Oracle suites: the EP machinery checked against independent references.

Each suite returns a :class:`CheckResult` holding the worst observed error,
the tolerance it was held to and a pass flag. The suites back the
``oracle-check`` command and the first five acceptance criteria.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .core import (DesignMatrix, EPConfig, SiteParams, assemble_weight_precision,
                   cavity_from_marginal, ep_run)
from .datagen import make_instance
from .free_energy import eta_objective, grad_eta, grad_rho, rho_objective
from .oracle import fd_gradient, mc_posterior, quad_moments
from .priors import PriorSet, SpikeSlab, Theta, ThetaMixture
from .tilted import tilted_moments


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tol: float
    elapsed: float
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: worst={self.worst:.3e} tol={self.tol:.1e} "
                f"({self.elapsed:.1f}s)")


MU_GRID = np.linspace(-8.0, 8.0, 5)
SIGMA_GRID = np.array([1e-4, 1e-2, 1.0, 1e2, 1e4])
RHO_GRID = (0.0, 0.1, 0.25, 0.5, 1.0)
LAM_GRID = (1e-2, 1.0, 1e4)
ETA_GRID = (0.5, 0.8, 0.95, 1.0)


def moment_grid() -> list:
    """(prior, mu, sigma) triples: 375 spike-and-slab, 25 theta, 100 theta-mixture points."""
    priors = [SpikeSlab(r, lam) for r, lam in product(RHO_GRID, LAM_GRID)]
    priors.append(Theta())
    priors += [ThetaMixture(e) for e in ETA_GRID]
    return [(p, float(mu), float(s)) for p in priors for mu in MU_GRID for s in SIGMA_GRID]


def check_moments(rel: float = 1e-8, floor: float = 1e-10) -> CheckResult:
    """Closed-form kernels against adaptive quadrature on the grid (mean and variance)."""
    t0 = time.perf_counter()
    worst = 0.0
    worst_at = None
    grid = moment_grid()
    for prior, mu, s in grid:
        got = tilted_moments(prior, mu, s)
        ref = quad_moments(prior, mu, s)
        for key in ("mean", "var"):
            g, r = float(getattr(got, key)), float(getattr(ref, key))
            err = abs(g - r) / (rel * abs(r) + floor)
            if err > worst:
                worst, worst_at = err, (repr(prior), mu, s, key, g, r)
    # ``worst`` is reported in units of the allowed error, so the pass line is 1
    return CheckResult("tilted moments vs quadrature", worst <= 1.0, worst * rel, rel,
                       time.perf_counter() - t0, {"points": len(grid), "worst_at": worst_at})


def random_sites(rng, n: int, m: int) -> SiteParams:
    a = rng.normal(0.0, 1.0, n + m)
    d = np.exp(rng.uniform(np.log(0.1), np.log(10.0), n + m))
    return SiteParams(a, d)


def leave_one_out_cavities(x: DesignMatrix, site: SiteParams):
    """Cavity moments by re-inverting the precision with each site deleted."""
    n, m = x.n, x.m
    a, d = site
    xs = x.rows
    prec = xs.T @ (xs / d[n:, None]) + np.diag(1.0 / d[:n])
    b = a[:n] / d[:n] + xs.T @ (a[n:] / d[n:])
    mu = np.empty(n + m)
    var = np.empty(n + m)
    for i in range(n + m):
        v = np.zeros(n)
        if i < n:
            v[i] = 1.0
        else:
            v = xs[i - n].copy()
        p_i = prec - np.outer(v, v) / d[i]
        b_i = b - v * a[i] / d[i]
        cov = np.linalg.inv(p_i)
        var[i] = v @ cov @ v
        mu[i] = v @ cov @ b_i
    return mu, var


def check_cavities(n_instances: int = 50, n: int = 16, m: int = 32, tol: float = 1e-10,
                   seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        x = DesignMatrix(rng.standard_normal((m, n)))
        site = random_sites(rng, n, m)
        cav = cavity_from_marginal(assemble_weight_precision(x, site), site)
        mu, var = leave_one_out_cavities(x, site)
        worst = max(worst, float(np.max(np.abs(cav.cav_mean - mu))),
                    float(np.max(np.abs(cav.cav_var - var))))
    return CheckResult("low-rank cavities vs leave-one-out", worst <= tol, worst, tol,
                       time.perf_counter() - t0, {"instances": n_instances})


def moment_mismatch(x: DesignMatrix, res):
    """Per-site |first| and |second| moment gaps between tilted laws and Gaussian marginals."""
    g = assemble_weight_precision(x, res.site)
    first = np.abs(g.marg_mean - res.tilted_mean)
    second = np.abs(g.marg_var + g.marg_mean ** 2 - res.tilted_var - res.tilted_mean ** 2)
    return first, second


def check_fixed_point(n_instances: int = 20, n: int = 32, m: int = 64, rho: float = 0.25,
                      cfg: EPConfig = EPConfig(damping=0.9, eps_stop=1e-4),
                      seed: int = 0) -> CheckResult:
    """Moment matching at converged fixed points, all sites, tolerance 10 * eps_stop.

    The detail block separates sites whose site precision sits at the d_max
    clamp: there the tilted variance exceeds the cavity variance and no
    positive-precision site can reproduce it.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    tol = 10 * cfg.eps_stop
    worst = worst_free = 0.0
    n_conv = n_with_clamp = 0
    attempts = 0
    while n_conv < n_instances and attempts < 5 * n_instances:
        attempts += 1
        inst = make_instance(n, m, rho, rng)
        x = inst.design
        res = ep_run(x, PriorSet(SpikeSlab(rho, 1.0)), cfg)
        if not res.converged:
            continue
        n_conv += 1
        first, second = moment_mismatch(x, res)
        gap = np.maximum(first, second)
        clamped = res.site.d >= 0.5 * cfg.d_max
        n_with_clamp += int(clamped.any())
        worst = max(worst, float(gap.max()))
        if (~clamped).any():
            worst_free = max(worst_free, float(gap[~clamped].max()))
    return CheckResult("fixed-point moment matching", worst <= tol and n_conv == n_instances,
                       worst, tol, time.perf_counter() - t0,
                       {"converged": n_conv, "attempts": attempts,
                        "instances_with_clamped_sites": n_with_clamp,
                        "worst_unclamped": worst_free})


def check_gradients(n_configs: int = 100, sites: int = 12, h: float = 1e-6, rel: float = 1e-6,
                    seed: int = 0) -> CheckResult:
    """dF/drho and dF/deta against central differences of the site-term sums."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        mu = rng.normal(0.0, 2.0, sites)
        var = np.exp(rng.uniform(np.log(1e-2), np.log(1e2), sites))
        rho = float(rng.uniform(0.05, 0.95))
        lam = float(rng.choice([1e-2, 1.0, 1e2]))
        eta = float(rng.uniform(0.55, 0.99))
        fd_r = fd_gradient(lambda r: rho_objective(mu, var, float(r[0]), lam), rho, h)[0]
        fd_e = fd_gradient(lambda e: eta_objective(mu, var, float(e[0])), eta, h)[0]
        for got, ref in ((grad_rho(mu, var, rho, lam), fd_r), (grad_eta(mu, var, eta), fd_e)):
            worst = max(worst, abs(got - ref) / max(abs(ref), 1e-12))
    return CheckResult("hyperparameter gradients vs finite differences", worst <= rel, worst,
                       rel, time.perf_counter() - t0, {"configs": n_configs})


def check_posterior(n_instances: int = 20, rho: float = 0.5, n_samples: int = 400_000,
                    cfg: EPConfig = EPConfig(damping=0.5, eps_stop=1e-8, max_iter=20000),
                    abs_tol: float = 0.05, n_se: float = 3.0, seed: int = 0) -> CheckResult:
    """EP weight means against importance sampling on N, M <= 8 (half noiseless, half eta = 0.9).

    ``worst`` is the largest |EP - MC| minus the allowed 3 SE, so it passes at <= abs_tol.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = -np.inf
    rows = []
    for k in range(n_instances):
        eta = 1.0 if k < n_instances // 2 else 0.9
        n = int(rng.integers(3, 9))
        m = int(rng.integers(3, 9))
        inst = make_instance(n, m, rho, rng, eta=eta)
        label = Theta() if eta == 1.0 else ThetaMixture(eta)
        priors = PriorSet(SpikeSlab(rho, 1.0), label)
        res = ep_run(inst.design, priors, cfg)
        mc = mc_posterior(inst.design.rows, priors, n_samples, rng, labels=inst.labels)
        excess = float(np.max(np.abs(res.weights - mc.mean) - n_se * mc.se))
        worst = max(worst, excess)
        rows.append((n, m, eta, res.converged, excess))
    return CheckResult("EP means vs Monte Carlo posterior", worst <= abs_tol, worst, abs_tol,
                       time.perf_counter() - t0, {"instances": rows})


SUITES = {
    "moments": check_moments,
    "cavity": check_cavities,
    "fixed-point": check_fixed_point,
    "gradients": check_gradients,
    "posterior": check_posterior,
}
