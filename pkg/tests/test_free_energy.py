import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ep_perceptron.core import EPConfig, SiteParams, ep_run
from ep_perceptron.datagen import make_instance
from ep_perceptron.free_energy import (ETA_BOUNDS, RHO_BOUNDS, HyperParams, ep_free_energy,
                                       ep_run_learning, eta_objective, grad_eta, grad_rho,
                                       hyper_step, rho_objective)
from ep_perceptron.oracle import fd_gradient
from ep_perceptron.priors import PriorSet, SpikeSlab, ThetaMixture
from ep_perceptron.tilted import spike_slab_moments

HALF = PriorSet(SpikeSlab(0.5, 1.0))
CFG = EPConfig(damping=0.5, eps_stop=1e-12, max_iter=20000)


def test_single_site_partition_is_gaussian_convolution():
    log_z = float(spike_slab_moments(0.0, 1.0, 1.0, 1.0).log_z)
    assert log_z == pytest.approx(-0.5 * np.log(4 * np.pi), rel=1e-14)


def test_grad_rho_example_spike_dominates():
    g = grad_rho(np.zeros(3), np.ones(3), 0.5, 1.0)
    spike, slab = 1 / np.sqrt(2 * np.pi), 1 / np.sqrt(4 * np.pi)
    assert g > 0
    assert g == pytest.approx(3 * (spike - slab) / (0.5 * spike + 0.5 * slab), rel=1e-13)


def test_grad_eta_examples():
    assert grad_eta(np.zeros(4), np.ones(4), 0.9) == 0.0
    assert grad_eta([50.0], [1.0], 0.95) == pytest.approx(-2 / 1.9, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    mu = rng.normal(0.0, 2.0, 6)
    var = np.exp(rng.uniform(-3, 3, 6))
    rho, eta = float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.55, 0.99))
    lam = float(rng.choice([1e-2, 1.0, 1e2]))
    fd_r = fd_gradient(lambda r: rho_objective(mu, var, float(r[0]), lam), rho, 1e-6)[0]
    fd_e = fd_gradient(lambda e: eta_objective(mu, var, float(e[0])), eta, 1e-6)[0]
    assert grad_rho(mu, var, rho, lam) == pytest.approx(fd_r, rel=1e-6)
    assert grad_eta(mu, var, eta) == pytest.approx(fd_e, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1e-2, 1.0, 1e2]))
def test_rho_objective_convex(seed, lam):
    rng = np.random.default_rng(seed)
    mu = rng.normal(0.0, 1.0, 5)
    var = np.exp(rng.uniform(-2, 2, 5))
    grid = np.linspace(0.01, 0.99, 50)
    h = 1e-3
    for r in grid:
        second = (rho_objective(mu, var, r + h, lam) - 2 * rho_objective(mu, var, r, lam)
                  + rho_objective(mu, var, r - h, lam))
        assert second > 0


def test_hyper_step_examples():
    h = HyperParams(0.5, lr_rho=1e-5)
    assert hyper_step(h) == h
    assert hyper_step(h, g_rho=100.0).rho == pytest.approx(0.499, abs=1e-15)


def test_hyper_step_projects_into_bounds():
    h = HyperParams(0.5, eta=0.9, lr_rho=1.0, lr_eta=1.0)
    low = hyper_step(h, g_rho=10.0, g_eta=10.0)
    high = hyper_step(h, g_rho=-10.0, g_eta=-10.0)
    assert (low.rho, low.eta) == (RHO_BOUNDS[0], ETA_BOUNDS[0])
    assert (high.rho, high.eta) == (RHO_BOUNDS[1], ETA_BOUNDS[1])
    with pytest.raises(FloatingPointError):
        hyper_step(h, g_rho=np.nan)


@pytest.mark.parametrize("kwargs", [dict(rho=0.0), dict(rho=1.0), dict(rho=0.5, lam=0.0),
                                    dict(rho=0.5, eta=0.5), dict(rho=0.5, eta=1.01),
                                    dict(rho=0.5, lr_rho=0.0), dict(rho=0.5, lr_eta=-1.0)])
def test_hyperparams_validation(kwargs):
    with pytest.raises(ValueError):
        HyperParams(**kwargs)


def test_free_energy_finite_and_deterministic():
    inst = make_instance(8, 16, 0.5, np.random.default_rng(7))
    a = ep_run(inst.design, HALF, CFG)
    b = ep_run(make_instance(8, 16, 0.5, np.random.default_rng(7)).design, HALF, CFG)
    fa = ep_free_energy(inst.design, a.site, HALF)
    fb = ep_free_energy(inst.design, b.site, HALF)
    assert np.isfinite(fa.f_ep) and np.all(np.isfinite(fa.site_terms))
    assert fa.f_ep == fb.f_ep
    assert fa.site_terms.shape == (24,)


@pytest.mark.parametrize("seed", [7, 9])
def test_free_energy_stationary_at_fixed_point(seed):
    # healthy instances whose fixed point has no clamped site
    inst = make_instance(8, 16, 0.5, np.random.default_rng(seed))
    res = ep_run(inst.design, HALF, CFG)
    assert res.converged and not np.any(res.site.d >= 0.5 * CFG.d_max)
    r, p = res.site.a / res.site.d, 1.0 / res.site.d

    def f_at(which, i, t):
        q = [r.copy(), p.copy()]
        q[which][i] += t
        return ep_free_energy(inst.design, SiteParams(q[0] / q[1], 1.0 / q[1]), HALF).f_ep

    h = 1e-6
    for which in (0, 1):
        for i in range(inst.n + inst.m):
            assert abs(f_at(which, i, h) - f_at(which, i, -h)) / (2 * h) <= 1e-4


def test_learning_deterministic_and_records_trajectory():
    inst = make_instance(16, 48, 0.25, np.random.default_rng(2))
    cfg = EPConfig(damping=0.9, eps_stop=1e-5, max_iter=3000)
    pr = PriorSet(SpikeSlab(0.6, 1.0))
    a = ep_run_learning(inst.design, pr, cfg, lr_rho=1e-3, record_every=10)
    b = ep_run_learning(inst.design, pr, cfg, lr_rho=1e-3, record_every=10)
    assert a.trajectory == b.trajectory and len(a.trajectory) > 0
    assert a.priors.weight.rho == b.priors.weight.rho
    assert a.priors.weight.rho < 0.6


def test_learning_eta_requires_mixture_prior():
    inst = make_instance(4, 8, 0.5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ep_run_learning(inst.design, HALF, learn_eta=True)
    res = ep_run_learning(inst.design, PriorSet(SpikeSlab(0.5, 1.0), ThetaMixture(0.8)),
                          EPConfig(damping=0.5, max_iter=50), learn_rho=False, learn_eta=True,
                          lr_eta=1e-3)
    assert res.priors.eta > 0.8
