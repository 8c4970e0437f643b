"""Zero-temperature expectation propagation on the constraint subspace y = X_sigma w.

The joint vector h = (w_1..w_N, y_1..y_M) carries one Gaussian site
exp(-(h_i - a_i)^2 / (2 d_i)) per coordinate. Because y is pinned to X_sigma w
only the N x N weight precision has to be factored, once per sweep; every
cavity then follows from a rank-one downdate of the marginals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dpotrf

from .priors import PriorSet
from .tilted import MomentTriple, tilted_moments


class CholeskyError(np.linalg.LinAlgError):
    """Precision matrix is not numerically positive definite."""

    def __init__(self, pivot: int, dim: int):
        super().__init__(f"Cholesky factorisation failed at pivot {pivot} of {dim}; "
                         "the precision is singular or indefinite (try a larger var_floor)")
        self.pivot = pivot
        self.dim = dim


@dataclass(frozen=True)
class DesignMatrix:
    """Rows sigma_tau * x_tau of the label-signed pattern matrix."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if rows.shape[1] < 1:
            raise ValueError("design matrix needs at least one weight column")
        if rows.shape[0] and np.any(~np.any(rows != 0, axis=1)):
            raise ValueError("every pattern must have at least one nonzero entry")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_patterns(cls, patterns, labels) -> "DesignMatrix":
        patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
        labels = np.asarray(labels, dtype=float)
        return cls(patterns * labels[:, None])

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    @property
    def m(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class EPConfig:
    """Engine settings.

    ``init_label_var`` is the starting variance of the example sites. The
    default (d_max) starts them flat, so the first Gaussian is the weight
    prior alone; a value of 1 pins y near zero at the start, which under
    natural-parameter damping leaves a very small initial scale to grow out of.
    """

    damping: float = 0.99
    eps_stop: float = 1e-4
    max_iter: int = 50000
    d_max: float = 1e12
    var_floor: float = 1e-12
    init_label_var: float = 1e12

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise ValueError(f"damping must lie in [0, 1), got {self.damping}")
        if not self.eps_stop > 0:
            raise ValueError("eps_stop must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be a positive count")
        if not 0 < self.init_label_var <= self.d_max:
            raise ValueError("init_label_var must lie in (0, d_max]")
        if not 0 < self.var_floor < self.d_max:
            raise ValueError("need 0 < var_floor < d_max")


class SiteParams(NamedTuple):
    a: np.ndarray
    d: np.ndarray

    @classmethod
    def initial(cls, n: int, m: int, label_var: float = 1.0) -> "SiteParams":
        """a = 0 everywhere, d = 1 on the weights and ``label_var`` on the examples."""
        return cls(np.zeros(n + m), np.r_[np.ones(n), np.full(m, float(label_var))])

    def copy(self) -> "SiteParams":
        return SiteParams(self.a.copy(), self.d.copy())


@dataclass
class GaussianSummary:
    """Moments of the fully Gaussian approximation Q.

    ``chol`` is the lower Cholesky factor of the precision that was inverted,
    ``log_det`` the log-determinant of the corresponding covariance and
    ``quad`` the quadratic form mean^T precision mean (used by the free energy).
    """

    sigma_w: np.ndarray
    w_bar: np.ndarray
    marg_mean: np.ndarray
    marg_var: np.ndarray
    chol: np.ndarray
    log_det: float
    quad: float


class CavitySummary(NamedTuple):
    cav_mean: np.ndarray
    cav_var: np.ndarray
    n_clamped: int


class IterationResult(NamedTuple):
    site: SiteParams
    eps: float
    tilted: MomentTriple
    cavity: CavitySummary
    gaussian: GaussianSummary
    n_clamped: int


@dataclass
class EPResult:
    converged: bool
    iterations: int
    tilted_mean: np.ndarray
    tilted_var: np.ndarray
    site: SiteParams
    eps_final: float
    n: int
    cav_mean: np.ndarray
    cav_var: np.ndarray
    priors: PriorSet
    trajectory: list = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        """Posterior-mean estimate of the weights (tilted means of the weight block)."""
        return self.tilted_mean[: self.n]

    @property
    def weights_std(self) -> np.ndarray:
        return np.sqrt(self.tilted_var[: self.n])

    @property
    def collapsed(self) -> bool:
        """True when every weight marginal has shrunk onto w = 0."""
        return weights_collapsed(self.tilted_mean[: self.n], self.tilted_var[: self.n],
                                 self.priors)

    def to_dict(self) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "eps_final": float(self.eps_final),
            "n": int(self.n),
            "tilted_mean": self.tilted_mean.tolist(),
            "tilted_var": self.tilted_var.tolist(),
            "cav_mean": self.cav_mean.tolist(),
            "cav_var": self.cav_var.tolist(),
            "site_a": self.site.a.tolist(),
            "site_d": self.site.d.tolist(),
            "priors": self.priors.to_dict(),
            "trajectory": self.trajectory,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EPResult":
        arr = np.asarray
        return cls(d["converged"], d["iterations"], arr(d["tilted_mean"]), arr(d["tilted_var"]),
                   SiteParams(arr(d["site_a"]), arr(d["site_d"])), d["eps_final"], d["n"],
                   arr(d["cav_mean"]), arr(d["cav_var"]), PriorSet.from_dict(d["priors"]),
                   d.get("trajectory", []))


def cholesky_lower(p: np.ndarray) -> np.ndarray:
    c, info = dpotrf(p, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise CholeskyError(info - 1, p.shape[0])
    if info < 0:
        raise ValueError(f"invalid argument {-info} to dpotrf")
    return c


def assemble_weight_precision(x: DesignMatrix, site: SiteParams) -> GaussianSummary:
    """Factor Sigma_W^-1 = diag(1/d_W) + X^T diag(1/d_Y) X and read off all marginals."""
    n = x.n
    xs = x.rows
    a, d = site
    inv_dw = 1.0 / d[:n]
    inv_dy = 1.0 / d[n:]
    prec = xs.T @ (xs * inv_dy[:, None])
    prec[np.diag_indices(n)] += inv_dw
    chol = cholesky_lower(prec)
    linv = solve_triangular(chol, np.eye(n), lower=True, check_finite=False)
    sigma_w = linv.T @ linv
    sigma_w = 0.5 * (sigma_w + sigma_w.T)
    b = a[:n] * inv_dw + xs.T @ (a[n:] * inv_dy)
    w_bar = sigma_w @ b
    proj = linv @ xs.T  # column tau is L^-1 x_tau
    marg_var = np.concatenate([np.sum(linv * linv, axis=0), np.sum(proj * proj, axis=0)])
    marg_mean = np.concatenate([w_bar, xs @ w_bar])
    log_det = -2.0 * np.sum(np.log(np.diag(chol)))
    return GaussianSummary(sigma_w, w_bar, marg_mean, marg_var, chol, log_det, float(w_bar @ b))


def cavity_from_marginal(g: GaussianSummary, site: SiteParams,
                         var_floor: float = 1e-12) -> CavitySummary:
    """Remove each site from its own marginal (rank-one downdate)."""
    ratio = g.marg_var / site.d
    bad = ratio > 1.0 - 1e-12
    denom = 1.0 - np.where(bad, 1.0 - 1e-12, ratio)
    cav_var = g.marg_var / denom
    cav_mean = (g.marg_mean - g.marg_var * site.a / site.d) / denom
    low = cav_var < var_floor
    cav_var = np.where(low, var_floor, cav_var)
    return CavitySummary(cav_mean, cav_var, int(np.count_nonzero(bad) + np.count_nonzero(low)))


def _site_proposal(cav_mean, cav_var, t_mean, t_var, cfg: EPConfig):
    """Moment-matched site natural parameters (precision, shift) and clamp mask.

    A clamped site keeps d = d_max and the mean rule
    a = mean + (d / cav_var)(mean - cav_mean), so its shift a / d stays
    continuous across the clamp boundary (and a = mean when the tilted law
    equals the cavity).
    """
    v = np.maximum(t_var, cfg.var_floor)
    prec = 1.0 / v - 1.0 / cav_var
    clamp = prec <= 1.0 / cfg.d_max
    prec = np.where(clamp, 1.0 / cfg.d_max, prec)
    shift = np.where(clamp, t_mean / cfg.d_max + (t_mean - cav_mean) / cav_var,
                     t_mean / v - cav_mean / cav_var)
    return prec, shift, clamp


def site_update(i, cav: CavitySummary, tilted: MomentTriple, cfg: EPConfig,
                site: SiteParams) -> SiteParams:
    """Damped moment-matching update of site(s) ``i`` (int, slice or index array).

    Damping is a convex combination of natural parameters (1/d, a/d) in
    which the old values keep weight ``cfg.damping``. A proposal
    with non-positive or vanishing precision is clamped to the nearly flat
    site d = d_max.
    """
    new_a = site.a.copy()
    new_d = site.d.copy()
    prec, shift, _ = _site_proposal(np.asarray(cav.cav_mean)[i], np.asarray(cav.cav_var)[i],
                                    np.asarray(tilted.mean)[i], np.asarray(tilted.var)[i], cfg)
    g = cfg.damping
    old_prec = 1.0 / site.d[i]
    old_shift = site.a[i] * old_prec
    p = g * old_prec + (1.0 - g) * prec
    s = g * old_shift + (1.0 - g) * shift
    new_d[i] = 1.0 / p
    new_a[i] = s / p
    return SiteParams(new_a, new_d)


def site_tilted_moments(priors: PriorSet, n: int, cav_mean, cav_var) -> MomentTriple:
    """Tilted moments for all N + M sites, block by block."""
    tw = tilted_moments(priors.weight, cav_mean[:n], cav_var[:n])
    if len(cav_mean) == n:
        return tw
    ty = tilted_moments(priors.label, cav_mean[n:], cav_var[n:])
    return MomentTriple(*(np.concatenate([u, v]) for u, v in zip(tw, ty)))


def ep_iterate(x: DesignMatrix, priors: PriorSet, cfg: EPConfig, state: SiteParams,
               prev: Optional[MomentTriple] = None,
               assemble: Callable = assemble_weight_precision) -> IterationResult:
    """One parallel EP sweep.

    All cavities are computed from a single factorisation before any site is
    touched. ``eps`` compares the new tilted moments with ``prev`` (the tilted
    moments of the previous sweep); without ``prev`` the Gaussian marginals of
    the current approximation are used as the reference.
    """
    g = assemble(x, state)
    cav = cavity_from_marginal(g, state, cfg.var_floor)
    tilted = site_tilted_moments(priors, x.n, cav.cav_mean, cav.cav_var)
    if prev is None:
        ref_mean = g.marg_mean
        ref_second = g.marg_var + g.marg_mean ** 2
    else:
        ref_mean, ref_second = prev.mean, prev.second
    eps = float(np.max(np.abs(tilted.mean - ref_mean) + np.abs(tilted.second - ref_second)))
    _, _, clamp = _site_proposal(cav.cav_mean, cav.cav_var, tilted.mean, tilted.var, cfg)
    new = site_update(slice(None), cav, tilted, cfg, state)
    return IterationResult(new, eps, tilted, cav, g, cav.n_clamped + int(np.count_nonzero(clamp)))


Hook = Callable[[int, IterationResult, PriorSet], Optional[PriorSet]]

#: weight second moments below this fraction of the prior's count as collapsed
COLLAPSE_RATIO = 1e-8


def weights_collapsed(mean: np.ndarray, var: np.ndarray, priors: PriorSet) -> bool:
    """Detect the degenerate fixed point where all weight mass sits on the spike.

    Near w = 0 the spike-and-slab update shrinks the weight marginals faster
    than they shrink the example cavities, so small instances can be drawn
    into a state where every moment, and hence the sweep change, is tiny.
    Such a state satisfies the stopping rule without being a meaningful
    fixed point.
    """
    w = priors.weight
    prior_second = w.rho / w.lam
    if prior_second == 0.0 or mean.size == 0:
        return False
    return bool(np.max(mean * mean + var) < COLLAPSE_RATIO * prior_second)


def prior_only_result(n: int, priors: PriorSet) -> EPResult:
    """EP result with no examples: the tilted laws are the weight priors themselves."""
    w = priors.weight
    var = np.full(n, w.rho / w.lam)
    return EPResult(True, 0, np.zeros(n), var, SiteParams.initial(n, 0), 0.0, n,
                    np.zeros(n), np.full(n, np.inf), priors)


def ep_run(x: DesignMatrix, priors: PriorSet, cfg: EPConfig = EPConfig(),
           state: Optional[SiteParams] = None, hook: Optional[Hook] = None,
           assemble: Callable = assemble_weight_precision) -> EPResult:
    """Iterate EP sweeps until eps < eps_stop or max_iter.

    ``hook(t, iteration, priors)`` runs after every sweep and may return
    updated priors for the next sweep (used for online hyperparameter
    learning and diagnostics). A hook exposing a false ``settled`` attribute
    holds off convergence. Non-convergence is reported, not raised; a run
    that stops on a collapsed state (see :func:`weights_collapsed`) is
    reported as not converged.
    """
    if x.m == 0:
        return prior_only_result(x.n, priors)
    state = SiteParams.initial(x.n, x.m, cfg.init_label_var) if state is None else state
    prev = None
    it = None
    t = 0
    converged = False
    for t in range(1, cfg.max_iter + 1):
        it = ep_iterate(x, priors, cfg, state, prev, assemble=assemble)
        state = it.site
        prev = it.tilted
        if hook is not None:
            new_priors = hook(t, it, priors)
            if new_priors is not None:
                priors = new_priors
        if it.eps < cfg.eps_stop and getattr(hook, "settled", True):
            converged = True
            break
    if converged and weights_collapsed(it.tilted.mean[: x.n], it.tilted.var[: x.n], priors):
        converged = False
    trajectory = getattr(hook, "trajectory", [])
    return EPResult(converged, t, it.tilted.mean, it.tilted.var, state, it.eps, x.n,
                    it.cavity.cav_mean, it.cavity.cav_var, priors, list(trajectory))
